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

// Synthetic datasets (opening statements, patterned responses), replay
// through retrieval and interpretation, and the accuracy tables.

#pragma once

#include "triage/interpretation.hpp"
#include "triage/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace triage {

// ---------------------------------------------------------------------------
// Records

enum class Style { Brief, Detailed };
enum class ResponsePattern { Brief, Descriptive, Weak, Uncertain, OffTopic };
enum class AnswerLabel { Yes, No, NotAnswered, OffTopic };

inline constexpr std::array kAllPatterns{ResponsePattern::Brief, ResponsePattern::Descriptive, ResponsePattern::Weak,
                                         ResponsePattern::Uncertain, ResponsePattern::OffTopic};

[[nodiscard]] std::string_view to_string(Style s) noexcept;
[[nodiscard]] std::string_view to_string(ResponsePattern p) noexcept;
[[nodiscard]] std::string_view to_string(AnswerLabel l) noexcept;
[[nodiscard]] Style parse_style(std::string_view s);
[[nodiscard]] ResponsePattern parse_pattern(std::string_view s);
[[nodiscard]] AnswerLabel parse_answer_label(std::string_view s);

/// Definition text handed to the generator for each pattern.
[[nodiscard]] std::string_view pattern_definition(ResponsePattern p) noexcept;

inline constexpr std::size_t kBriefMaxWords = 25;
inline constexpr std::size_t kDetailedMinWords = 50;

[[nodiscard]] bool meets_word_limit(Style style, std::string_view text) noexcept;

struct OpeningStatementRecord {
    std::string id;
    std::string label_flowchart_id;
    Sex sex = Sex::Female;
    int age_value = 0;
    AgeUnit age_unit = AgeUnit::Years;
    Style style = Style::Brief;
    std::string text;
    std::string generator;

    [[nodiscard]] Demographics demographics() const { return {sex, age_value, age_unit}; }
    bool operator==(const OpeningStatementRecord&) const = default;
};

struct PatientResponseRecord {
    std::string id;
    std::string flowchart_id;
    std::string node_id;
    std::string question_text;
    ResponsePattern pattern = ResponsePattern::Brief;
    AnswerLabel answer_label = AnswerLabel::Yes;
    std::string text;
    std::string generator;

    bool operator==(const PatientResponseRecord&) const = default;
};

/// Patterns Brief/Descriptive/Weak carry Yes or No, Uncertain carries
/// NotAnswered, OffTopic carries OffTopic.
[[nodiscard]] bool label_consistent(ResponsePattern p, AnswerLabel l) noexcept;

[[nodiscard]] nlohmann::json to_json(const OpeningStatementRecord& r);
[[nodiscard]] nlohmann::json to_json(const PatientResponseRecord& r);
[[nodiscard]] OpeningStatementRecord opening_from_json(const nlohmann::json& j);
[[nodiscard]] PatientResponseRecord response_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& file, const std::vector<OpeningStatementRecord>& records);
void write_jsonl(const std::filesystem::path& file, const std::vector<PatientResponseRecord>& records);
/// Throws IoError, UnparsableGeneration on bad lines. Word-limit
/// violations are reported in `warnings` (if given), not rejected.
[[nodiscard]] std::vector<OpeningStatementRecord> read_openings(const std::filesystem::path& file,
                                                                std::vector<std::string>* warnings = nullptr);
[[nodiscard]] std::vector<PatientResponseRecord> read_responses(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Generation

struct GenerationOptions {
    int max_regenerations = 3;
    double temperature = 0.9;
};

template <class Record>
struct GenerationResult {
    std::vector<Record> records;
    std::vector<std::string> warnings;
};

struct OpeningSet {
    std::string sex;
    std::string age;
    std::string statement;
};

/// Parses "Sex: / Age: / Opening Statement:" blocks. Throws
/// UnparsableGeneration when none is complete.
[[nodiscard]] std::vector<OpeningSet> parse_opening_sets(std::string_view text);
/// Lines of the form "1. text" / "1) text"; surrounding quotes removed.
[[nodiscard]] std::vector<std::string> parse_numbered_responses(std::string_view text);

/// Prompt for one chart (rules for applicability and caregiver voice
/// included).
[[nodiscard]] std::string opening_prompt(const Flowchart& f, Style style, std::size_t num);
[[nodiscard]] std::string response_prompt(std::string_view question, ResponsePattern p, AnswerLabel label,
                                          std::size_t num);

/// True for charts whose upper age bound is below 12 years.
[[nodiscard]] bool is_pediatric(const Flowchart& f) noexcept;

[[nodiscard]] GenerationResult<OpeningStatementRecord> generate_opening_statements(
    const FlowchartLibrary& lib, const TextGenerator& gen, std::size_t per_chart, Style style,
    const GenerationOptions& options = {});

/// Per question node: Brief/Descriptive/Weak x {Yes, No} x per_cell, then
/// Uncertain x per_cell and OffTopic x per_cell.
[[nodiscard]] GenerationResult<PatientResponseRecord> generate_responses(const FlowchartLibrary& lib,
                                                                         const TextGenerator& gen, std::size_t per_cell,
                                                                         const GenerationOptions& options = {});

/// Deterministic offline generator that answers the generation prompts
/// using the library it was given. Used for dry runs and tests.
class OfflineDatasetGenerator final : public TextGenerator {
  public:
    explicit OfflineDatasetGenerator(std::shared_ptr<const FlowchartLibrary> lib, std::string id = "offline")
        : lib_(std::move(lib)), id_(std::move(id)) {}

    [[nodiscard]] std::string generate(const GenerationRequest& request) const override;
    [[nodiscard]] std::string id() const override { return id_; }

  private:
    std::shared_ptr<const FlowchartLibrary> lib_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Metrics

/// hits / n, or nothing when n is zero.
struct Accuracy {
    std::size_t hits = 0;
    std::size_t n = 0;

    [[nodiscard]] std::optional<double> value() const noexcept {
        return n == 0 ? std::nullopt : std::optional<double>(static_cast<double>(hits) / static_cast<double>(n));
    }
    void add(bool hit) noexcept {
        ++n;
        hits += hit ? 1 : 0;
    }
    bool operator==(const Accuracy&) const = default;
};

/// Population standard deviation of per-group accuracies.
[[nodiscard]] std::optional<double> group_std(const std::map<std::string, Accuracy>& groups);

enum class RetrievalMetric { LlmOnly, SimTop1, SimTop3, SimTop5, Agent };
inline constexpr std::array kAllRetrievalMetrics{RetrievalMetric::LlmOnly, RetrievalMetric::SimTop1,
                                                 RetrievalMetric::SimTop3, RetrievalMetric::SimTop5,
                                                 RetrievalMetric::Agent};
/// "llm_only_acc", "sim_top1_acc", ...
[[nodiscard]] std::string_view to_string(RetrievalMetric m) noexcept;

struct RetrievalRow {
    std::size_t n = 0;
    std::size_t excluded = 0;
    std::map<RetrievalMetric, Accuracy> accuracy;
    std::map<RetrievalMetric, std::optional<double>> specialty_std;

    bool operator==(const RetrievalRow&) const = default;
};

struct RetrievalMetrics {
    std::map<std::string, RetrievalRow> by_generator;
    RetrievalRow pooled;
    /// Unweighted mean of per-generator accuracies.
    std::map<RetrievalMetric, std::optional<double>> generator_mean;

    bool operator==(const RetrievalMetrics&) const = default;
};

struct RetrievalModes {
    bool llm_only = true;
    bool similarity = true;
    bool agent = true;
};

struct RetrievalEvalOptions {
    RetrievalModes modes;
    bool applicability_filter = false;
    std::size_t candidates = kDefaultCandidates;
    bool parallel = false;
};

/// Per-record outcome; a metric is absent when its mode was off or the
/// record was excluded after a selector failure.
struct RetrievalOutcome {
    std::string id;
    std::string generator;
    std::string specialty;
    std::optional<bool> llm_only, top1, top3, top5, agent;
    bool excluded = false;
};

/// Throws LabelNotInLibrary.
[[nodiscard]] std::vector<RetrievalOutcome> score_retrieval(const std::vector<OpeningStatementRecord>& records,
                                                            const FlowchartLibrary& lib, const RetrievalIndex& index,
                                                            const Embedder& embedder, const Selector& selector,
                                                            const RetrievalEvalOptions& options = {});
[[nodiscard]] RetrievalMetrics aggregate_retrieval(std::vector<RetrievalOutcome> outcomes);

[[nodiscard]] RetrievalMetrics eval_retrieval(const std::vector<OpeningStatementRecord>& records,
                                              const FlowchartLibrary& lib, const RetrievalIndex& index,
                                              const Embedder& embedder, const Selector& selector,
                                              const RetrievalEvalOptions& options = {});

enum class NavCategory {
    A_CertainCorrect,
    B_UncertainCorrect,
    C_UncertainIncorrect,
    D_CertainIncorrect,
    A_CertainUnanswered,
    B_UncertainUnanswered,
    C_UncertainAnswered,
    D_CertainAnswered,
    OffTopicDetected,
    OffTopicMissed,
};

inline constexpr std::array kAllNavCategories{
    NavCategory::A_CertainCorrect,     NavCategory::B_UncertainCorrect,    NavCategory::C_UncertainIncorrect,
    NavCategory::D_CertainIncorrect,   NavCategory::A_CertainUnanswered,   NavCategory::B_UncertainUnanswered,
    NavCategory::C_UncertainAnswered,  NavCategory::D_CertainAnswered,     NavCategory::OffTopicDetected,
    NavCategory::OffTopicMissed,
};

[[nodiscard]] std::string_view to_string(NavCategory c) noexcept;
[[nodiscard]] NavCategory parse_nav_category(std::string_view s);
/// Every category except the two D cells and OffTopicMissed.
[[nodiscard]] bool is_acceptable(NavCategory c) noexcept;
/// Categories a pattern can land in.
[[nodiscard]] std::vector<NavCategory> categories_for(ResponsePattern p);

[[nodiscard]] NavCategory categorize(const AxisVerdict& v, ResponsePattern p, AnswerLabel label) noexcept;

struct NavigationCell {
    std::size_t n = 0;
    std::size_t excluded = 0;
    std::map<NavCategory, std::size_t> counts;

    [[nodiscard]] std::optional<double> share(NavCategory c) const noexcept;
    [[nodiscard]] std::optional<double> acceptable() const noexcept;
    bool operator==(const NavigationCell&) const = default;
};

struct NavigationTable {
    /// generator -> pattern -> cell
    std::map<std::string, std::map<ResponsePattern, NavigationCell>> cells;

    /// Pooled over patterns for one generator.
    [[nodiscard]] NavigationCell overall(const std::string& generator) const;
    bool operator==(const NavigationTable&) const = default;
};

struct NavigationOutcome {
    std::string id;
    std::string generator;
    ResponsePattern pattern = ResponsePattern::Brief;
    std::optional<NavCategory> category; // empty: classifier failed
};

[[nodiscard]] std::vector<NavigationOutcome> score_navigation(const std::vector<PatientResponseRecord>& records,
                                                              const Classifier& classifier, bool parallel = false);
[[nodiscard]] NavigationTable aggregate_navigation(std::vector<NavigationOutcome> outcomes);
[[nodiscard]] NavigationTable eval_navigation(const std::vector<PatientResponseRecord>& records,
                                             const Classifier& classifier, bool parallel = false);

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
    std::optional<RetrievalMetrics> retrieval;
    std::optional<NavigationTable> navigation;

    bool operator==(const EvalReport&) const = default;
};

[[nodiscard]] nlohmann::json report_to_json(const EvalReport& r);
[[nodiscard]] EvalReport report_from_json(const nlohmann::json& j);
/// Header "generator,metric,value"; null values are written as "null".
[[nodiscard]] std::string report_to_csv(const EvalReport& r);

struct EmittedFiles {
    std::filesystem::path csv;
    std::filesystem::path json;
};

/// Writes `<stem>.csv` and `<stem>.json` under `dir`. Throws IoError.
EmittedFiles emit_report(const EvalReport& r, const std::filesystem::path& dir, const std::string& stem = "report");
[[nodiscard]] EvalReport load_report(const std::filesystem::path& json_file);

} // namespace triage
