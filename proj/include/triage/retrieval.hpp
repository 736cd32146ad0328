/*
 * Copyright 2026 The triageflow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Flowchart retrieval: exact cosine scan over chart descriptions, then a
// selector picks one chart (or none) from the top candidates.

#pragma once

#include "triage/flowchart.hpp"
#include "triage/provider.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triage {

inline constexpr std::size_t kDefaultCandidates = 10;
inline constexpr std::size_t kShownAlternatives = 3;
inline constexpr std::string_view kNoFlowchartSentinel = "no flowchart available";

struct IndexEntry {
    std::string flowchart_id;
    std::string description_text;
    EmbeddingVector embedding;

    bool operator==(const IndexEntry&) const = default;
};

class RetrievalIndex {
  public:
    static constexpr int kFormatVersion = 1;

    RetrievalIndex() = default;
    /// Entries must share `dimension`; throws IndexMismatch otherwise.
    RetrievalIndex(std::string embedder_id, std::size_t dimension, std::vector<IndexEntry> entries);

    [[nodiscard]] const std::string& embedder_id() const noexcept { return embedder_id_; }
    [[nodiscard]] std::size_t dimension() const noexcept { return dimension_; }
    [[nodiscard]] const std::vector<IndexEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] static RetrievalIndex from_json(const nlohmann::json& j);
    /// Sidecar file; `dump(1)` so rebuilds compare byte for byte.
    void save(const std::filesystem::path& file) const;
    /// Throws IndexMismatch when the stored embedder id differs from
    /// `expected_embedder_id`, IoError when unreadable.
    [[nodiscard]] static RetrievalIndex load(const std::filesystem::path& file, std::string_view expected_embedder_id);

    bool operator==(const RetrievalIndex&) const = default;

  private:
    std::string embedder_id_;
    std::size_t dimension_ = 0;
    std::vector<IndexEntry> entries_; // ascending flowchart id
};

/// One entry per chart, embedding `retrieval_text`. Throws EmptyLibrary or
/// EmbedderFailure naming the chart.
[[nodiscard]] RetrievalIndex build_index(const FlowchartLibrary& lib, const Embedder& embedder);

/// "Sex: Male. Age: 35 years. Concern: ..."
[[nodiscard]] std::string compose_query_text(const Demographics& d, std::string_view statement);

struct RankedCandidate {
    std::string flowchart_id;
    double score = 0.0;

    bool operator==(const RankedCandidate&) const = default;
};

/// Dot product of `query` with every entry, in entry order.
[[nodiscard]] std::vector<double> score_serial(const RetrievalIndex& index, const EmbeddingVector& query);
/// Same as `score_serial`, entries split across OpenMP threads.
[[nodiscard]] std::vector<double> score_parallel(const RetrievalIndex& index, const EmbeddingVector& query);

/// Top `n` by score descending, ties by ascending id; entries with
/// `keep[i] == false` are skipped (empty `keep` keeps all).
[[nodiscard]] std::vector<RankedCandidate> rank(const RetrievalIndex& index, const std::vector<double>& scores,
                                                std::size_t n, const std::vector<bool>& keep = {});

struct SearchOptions {
    std::size_t n = kDefaultCandidates;
    /// When set, charts not applicable to these demographics are dropped
    /// before ranking.
    std::optional<Demographics> filter;
    bool parallel = false;
};

/// Embeds `query_text` and ranks the index. Throws EmbedderFailure, or
/// IndexMismatch if the embedder is not the one that built the index.
[[nodiscard]] std::vector<RankedCandidate> search(const RetrievalIndex& index, const FlowchartLibrary& lib,
                                                  const Embedder& embedder, std::string_view query_text,
                                                  const SearchOptions& options = {});

struct SelectorCandidate {
    std::string id;
    std::string name;
    std::string description; // retrieval text
    std::optional<double> score;
};

/// Picks a chart from the candidates. Returns an id, a chart name, or the
/// "no flowchart available" sentinel; implementations must be thread safe.
class Selector {
  public:
    virtual ~Selector() = default;
    [[nodiscard]] virtual std::string select(const std::vector<SelectorCandidate>& candidates,
                                             std::string_view query) const = 0;
    [[nodiscard]] virtual std::string id() const = 0;
};

/// First candidate, or the sentinel when there is none.
class ArgmaxSelector final : public Selector {
  public:
    [[nodiscard]] std::string select(const std::vector<SelectorCandidate>& candidates,
                                     std::string_view query) const override;
    [[nodiscard]] std::string id() const override { return "argmax-score"; }
};

/// Retrieval-agent prompt through a text generator.
class LlmSelector final : public Selector {
  public:
    explicit LlmSelector(std::shared_ptr<const TextGenerator> generator, double temperature = 0.0)
        : generator_(std::move(generator)), temperature_(temperature) {}

    [[nodiscard]] std::string select(const std::vector<SelectorCandidate>& candidates,
                                     std::string_view query) const override;
    [[nodiscard]] std::string id() const override { return "llm:" + generator_->id(); }

  private:
    std::shared_ptr<const TextGenerator> generator_;
    double temperature_;
};

/// Candidate block shown to the retrieval agent, one line per chart.
[[nodiscard]] std::string render_candidates(const std::vector<SelectorCandidate>& candidates);

struct Selection {
    std::optional<std::string> flowchart_id; // empty: no flowchart available
    std::vector<RankedCandidate> candidates_shown;
    std::vector<std::string> warnings;

    [[nodiscard]] bool has_chart() const noexcept { return flowchart_id.has_value(); }
    bool operator==(const Selection&) const = default;
};

/// Maps selector output onto one of `allowed` ids: exact id, or chart name
/// ignoring case, quotes, a trailing period and a trailing "flowchart".
[[nodiscard]] std::optional<std::string> resolve_selector_output(std::string_view output,
                                                                 const std::vector<std::string>& allowed,
                                                                 const FlowchartLibrary& lib);

/// Runs the selector over ranked candidates. Unknown output degrades to no
/// flowchart with a warning; selector errors become SelectorFailure.
[[nodiscard]] Selection select_flowchart(const std::vector<RankedCandidate>& candidates, const FlowchartLibrary& lib,
                                         std::string_view query_text, const Selector& selector);

/// Selector over the whole library, unranked and unscored.
[[nodiscard]] Selection select_from_library(const FlowchartLibrary& lib, std::string_view query_text,
                                            const Selector& selector);

/// Library, index, embedder and selector wired together.
struct Retriever {
    std::shared_ptr<const FlowchartLibrary> library;
    std::shared_ptr<const RetrievalIndex> index;
    std::shared_ptr<const Embedder> embedder;
    std::shared_ptr<const Selector> selector;
    std::size_t candidates = kDefaultCandidates;
    bool applicability_filter = true;

    struct Result {
        std::string query_text;
        std::vector<RankedCandidate> ranked;
        Selection selection;
    };

    [[nodiscard]] Result retrieve(const Demographics& d, std::string_view statement) const;
};

} // namespace triage
