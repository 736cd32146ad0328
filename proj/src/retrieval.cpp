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

#include "triage/retrieval.hpp"

#include "triage/parallel.hpp"
#include "triage/prompts.hpp"
#include "triage/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace triage {

using nlohmann::json;

RetrievalIndex::RetrievalIndex(std::string embedder_id, std::size_t dimension, std::vector<IndexEntry> entries)
    : embedder_id_(std::move(embedder_id)), dimension_(dimension), entries_(std::move(entries)) {
    for (const auto& e : entries_)
        if (e.embedding.size() != dimension_)
            throw IndexMismatch("entry " + e.flowchart_id + " has dimension " + std::to_string(e.embedding.size()) +
                                ", index dimension is " + std::to_string(dimension_));
    std::sort(entries_.begin(), entries_.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.flowchart_id < b.flowchart_id; });
}

json RetrievalIndex::to_json() const {
    json entries = json::array();
    for (const auto& e : entries_)
        entries.push_back({{"flowchart_id", e.flowchart_id},
                           {"description_text", e.description_text},
                           {"embedding", e.embedding}});
    return {{"format_version", kFormatVersion},
            {"embedder_id", embedder_id_},
            {"dimension", dimension_},
            {"entries", std::move(entries)}};
}

RetrievalIndex RetrievalIndex::from_json(const json& j) {
    try {
        if (j.at("format_version").get<int>() != kFormatVersion)
            throw IndexMismatch("unsupported index format version " + j.at("format_version").dump());
        std::vector<IndexEntry> entries;
        for (const auto& e : j.at("entries"))
            entries.push_back({e.at("flowchart_id").get<std::string>(), e.at("description_text").get<std::string>(),
                               e.at("embedding").get<EmbeddingVector>()});
        return {j.at("embedder_id").get<std::string>(), j.at("dimension").get<std::size_t>(), std::move(entries)};
    } catch (const json::exception& e) {
        throw IndexMismatch(std::string("malformed index: ") + e.what());
    }
}

void RetrievalIndex::save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write index " + file.string());
    out << to_json().dump(1) << '\n';
    if (!out) throw IoError("failed writing index " + file.string());
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& file, std::string_view expected_embedder_id) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read index " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IndexMismatch("index " + file.string() + " is not valid JSON: " + e.what());
    }
    auto index = from_json(j);
    if (index.embedder_id() != expected_embedder_id)
        throw IndexMismatch("index was built with embedder '" + index.embedder_id() + "', current embedder is '" +
                            std::string(expected_embedder_id) + "'");
    return index;
}

RetrievalIndex build_index(const FlowchartLibrary& lib, const Embedder& embedder) {
    if (lib.empty()) throw EmptyLibrary("cannot index an empty library");
    std::vector<IndexEntry> entries;
    entries.reserve(lib.size());
    for (const auto& [id, chart] : lib.charts()) {
        auto description = retrieval_text(chart);
        std::vector<EmbeddingVector> v;
        try {
            v = embedder.embed({description});
        } catch (const Error& e) {
            throw EmbedderFailure("embedding flowchart " + id + ": " + e.what());
        }
        if (v.size() != 1) throw EmbedderFailure("embedding flowchart " + id + ": expected one vector");
        entries.push_back({id, std::move(description), std::move(v.front())});
    }
    return {embedder.id(), embedder.dimension(), std::move(entries)};
}

std::string compose_query_text(const Demographics& d, std::string_view statement) {
    std::string out = "Sex: ";
    out += to_string(d.sex);
    out += ". Age: " + std::to_string(d.age_value) + " ";
    out += to_string(d.age_unit);
    out += ". Concern: ";
    out += statement;
    return out;
}

// ---------------------------------------------------------------------------
// Scoring kernels

namespace {

double dot(const EmbeddingVector& a, const EmbeddingVector& b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_query(const RetrievalIndex& index, const EmbeddingVector& query) {
    if (query.size() != index.dimension())
        throw IndexMismatch("query has dimension " + std::to_string(query.size()) + ", index has " +
                            std::to_string(index.dimension()));
}

} // namespace

std::vector<double> score_serial(const RetrievalIndex& index, const EmbeddingVector& query) {
    check_query(index, query);
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = dot(index.entries()[i].embedding, query);
    return out;
}

std::vector<double> score_parallel(const RetrievalIndex& index, const EmbeddingVector& query) {
    check_query(index, query);
    const auto& entries = index.entries();
    const auto n = static_cast<std::ptrdiff_t>(entries.size());
    std::vector<double> out(entries.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = dot(entries[static_cast<std::size_t>(i)].embedding, query);
    return out;
}

std::vector<RankedCandidate> rank(const RetrievalIndex& index, const std::vector<double>& scores, std::size_t n,
                                  const std::vector<bool>& keep) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (keep.empty() || keep[i]) order.push_back(i);
    const auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.entries()[a].flowchart_id < index.entries()[b].flowchart_id;
    };
    const auto k = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    std::vector<RankedCandidate> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({index.entries()[order[i]].flowchart_id, scores[order[i]]});
    return out;
}

std::vector<RankedCandidate> search(const RetrievalIndex& index, const FlowchartLibrary& lib, const Embedder& embedder,
                                    std::string_view query_text, const SearchOptions& options) {
    if (options.n == 0) throw EmbedderFailure("search needs n >= 1");
    if (embedder.id() != index.embedder_id())
        throw IndexMismatch("index was built with '" + index.embedder_id() + "', searching with '" + embedder.id() + "'");
    const auto q = embedder.embed({std::string(query_text)});
    if (q.size() != 1) throw EmbedderFailure("expected one query vector");
    const auto scores = options.parallel ? score_parallel(index, q.front()) : score_serial(index, q.front());
    std::vector<bool> keep;
    if (options.filter) {
        keep.resize(index.size());
        for (std::size_t i = 0; i < index.size(); ++i) {
            const auto* chart = lib.find(index.entries()[i].flowchart_id);
            keep[i] = chart != nullptr && is_applicable(*chart, *options.filter);
        }
    }
    return rank(index, scores, options.n, keep);
}

// ---------------------------------------------------------------------------
// Selection

std::string ArgmaxSelector::select(const std::vector<SelectorCandidate>& candidates, std::string_view) const {
    return candidates.empty() ? std::string(kNoFlowchartSentinel) : candidates.front().id;
}

std::string render_candidates(const std::vector<SelectorCandidate>& candidates) {
    std::ostringstream os;
    for (const auto& c : candidates) {
        os << "- " << c.name << " [id: " << c.id << "]";
        if (c.score) os << " (similarity " << std::fixed << std::setprecision(3) << *c.score << ")";
        os << ": " << c.description << '\n';
    }
    return os.str();
}

std::string LlmSelector::select(const std::vector<SelectorCandidate>& candidates, std::string_view query) const {
    const auto prompt =
        render(PromptId::RetrievalAgent, {{"candidates", render_candidates(candidates)}, {"query", std::string(query)}});
    return generator_->generate({prompt, temperature_});
}

namespace {

std::string clean_output(std::string_view raw) {
    auto s = std::string(text::trim(text::fold_quotes(raw)));
    // First line only; models sometimes add an explanation.
    if (const auto nl = s.find('\n'); nl != std::string::npos) s.resize(nl);
    while (!s.empty() && (s.back() == '.' || s.back() == '"' || s.back() == '\'' || s.back() == '*' ||
                          std::isspace(static_cast<unsigned char>(s.back()))))
        s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && (s[b] == '"' || s[b] == '\'' || s[b] == '*' || std::isspace(static_cast<unsigned char>(s[b]))))
        ++b;
    s.erase(0, b);
    auto lower = text::to_lower(s);
    if (lower.ends_with(" flowchart")) lower.resize(lower.size() - std::string_view(" flowchart").size());
    return lower;
}

} // namespace

std::optional<std::string> resolve_selector_output(std::string_view output, const std::vector<std::string>& allowed,
                                                   const FlowchartLibrary& lib) {
    const auto s = clean_output(output);
    for (const auto& id : allowed) {
        if (text::iequals(s, id)) return id;
        const auto* chart = lib.find(id);
        if (chart == nullptr) continue;
        auto name = text::to_lower(chart->name);
        if (name.ends_with(" flowchart")) name.resize(name.size() - std::string_view(" flowchart").size());
        if (s == name) return id;
    }
    return std::nullopt;
}

namespace {

Selection run_selector(std::vector<SelectorCandidate> shown_to_selector, std::vector<RankedCandidate> shown,
                       const FlowchartLibrary& lib, std::string_view query_text, const Selector& selector) {
    Selection sel;
    sel.candidates_shown = std::move(shown);
    if (shown_to_selector.empty()) return sel;
    std::string output;
    try {
        output = selector.select(shown_to_selector, query_text);
    } catch (const Error& e) {
        throw SelectorFailure(std::string("selector ") + selector.id() + " failed: " + e.code() + ": " + e.what());
    }
    if (clean_output(output) == kNoFlowchartSentinel) return sel;
    std::vector<std::string> allowed;
    for (const auto& c : shown_to_selector) allowed.push_back(c.id);
    sel.flowchart_id = resolve_selector_output(output, allowed, lib);
    if (!sel.flowchart_id) {
        auto brief = std::string(text::trim(output)).substr(0, 80);
        sel.warnings.push_back("selector returned an unknown flowchart '" + brief + "'; treating as no flowchart");
    }
    return sel;
}

SelectorCandidate describe(const Flowchart& f, std::optional<double> score) {
    return {f.id, f.name, retrieval_text(f), score};
}

} // namespace

Selection select_flowchart(const std::vector<RankedCandidate>& candidates, const FlowchartLibrary& lib,
                           std::string_view query_text, const Selector& selector) {
    std::vector<SelectorCandidate> offered;
    for (const auto& c : candidates)
        if (const auto* f = lib.find(c.flowchart_id)) offered.push_back(describe(*f, c.score));
    std::vector<RankedCandidate> shown(candidates.begin(),
                                       candidates.begin() + static_cast<std::ptrdiff_t>(
                                                                std::min(kShownAlternatives, candidates.size())));
    return run_selector(std::move(offered), std::move(shown), lib, query_text, selector);
}

Selection select_from_library(const FlowchartLibrary& lib, std::string_view query_text, const Selector& selector) {
    std::vector<SelectorCandidate> offered;
    for (const auto& [id, f] : lib.charts()) offered.push_back(describe(f, std::nullopt));
    return run_selector(std::move(offered), {}, lib, query_text, selector);
}

Retriever::Result Retriever::retrieve(const Demographics& d, std::string_view statement) const {
    Result r;
    r.query_text = compose_query_text(d, statement);
    SearchOptions options;
    options.n = candidates;
    if (applicability_filter) options.filter = d;
    r.ranked = search(*index, *library, *embedder, r.query_text, options);
    r.selection = select_flowchart(r.ranked, *library, r.query_text, *selector);
    return r;
}

} // namespace triage
