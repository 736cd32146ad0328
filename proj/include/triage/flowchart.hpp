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

// Flowchart decision graphs: the document format, structural validation,
// path enumeration and the immutable library that holds them.

#pragma once

#include "triage/demographics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace triage {

/// Question (N), Redirect (F), Action (A), Info (I). The node id's first
/// character must be the kind's letter.
enum class NodeKind { Question, Redirect, Action, Info };
enum class Condition { Yes, No, Unconditional };
enum class Answer { Yes, No };

[[nodiscard]] std::string_view to_string(NodeKind kind) noexcept;
[[nodiscard]] std::string_view to_string(Condition condition) noexcept;
[[nodiscard]] std::string_view to_string(Answer answer) noexcept;
[[nodiscard]] char kind_prefix(NodeKind kind) noexcept;
[[nodiscard]] std::optional<NodeKind> kind_from_prefix(char prefix) noexcept;
[[nodiscard]] constexpr Condition to_condition(Answer a) noexcept {
    return a == Answer::Yes ? Condition::Yes : Condition::No;
}

struct Node {
    std::string id;
    NodeKind kind = NodeKind::Question;
    std::string text;
    /// Redirect only: id of the linked flowchart.
    std::string target;

    bool operator==(const Node&) const = default;
};

struct Edge {
    std::string from;
    std::string to;
    Condition condition = Condition::Unconditional;

    bool operator==(const Edge&) const = default;
};

/// Bounds are inclusive and in months; `age_max_months` empty means unbounded.
struct Applicability {
    bool male = true;
    bool female = true;
    int age_min_months = 0;
    std::optional<int> age_max_months;

    [[nodiscard]] bool allows(Sex sex) const noexcept { return sex == Sex::Male ? male : female; }
    bool operator==(const Applicability&) const = default;
};

/// "All ages - Male and Female", ">12 years - Female", "0-2 years - Male".
[[nodiscard]] std::string applicability_phrase(const Applicability& a);

struct Flowchart {
    std::string id;
    std::string name;
    std::string description;
    std::string specialty;
    Applicability applicability;
    std::vector<Node> nodes; // document order
    std::vector<Edge> edges;
    std::string entry;
    std::vector<std::string> external_targets;

    [[nodiscard]] const Node* find(std::string_view node_id) const noexcept;
    /// First out-edge of `node_id` carrying `condition`, or nullptr.
    [[nodiscard]] const Edge* follow(std::string_view node_id, Condition condition) const noexcept;
    [[nodiscard]] std::vector<const Edge*> out_edges(std::string_view node_id) const;
    [[nodiscard]] std::size_t count(NodeKind kind) const noexcept;

    bool operator==(const Flowchart&) const = default;
};

/// Text embedded for retrieval: name, applicability phrase, description.
[[nodiscard]] std::string retrieval_text(const Flowchart& f);

/// Parses one UTF-8 JSON flowchart document. Only syntactic shape is
/// checked here; graph invariants are `validate`'s job.
/// Throws ParseError with code "ParseError", "DuplicateNodeId",
/// "UnknownNodeKindPrefix" or "KindPrefixMismatch".
[[nodiscard]] Flowchart parse_flowchart(std::string_view document);
[[nodiscard]] Flowchart flowchart_from_json(const nlohmann::json& doc);
[[nodiscard]] nlohmann::json flowchart_to_json(const Flowchart& f);
/// Pretty-printed document; `parse_flowchart(serialize_flowchart(f)) == f`.
[[nodiscard]] std::string serialize_flowchart(const Flowchart& f);

/// Immutable id -> chart map plus the set of redirect targets that are
/// declared to live outside this library.
class FlowchartLibrary {
  public:
    FlowchartLibrary() = default;
    /// Throws InvalidFlowchart on duplicate chart ids.
    explicit FlowchartLibrary(std::vector<Flowchart> charts, std::set<std::string> externals = {});

    [[nodiscard]] const Flowchart* find(std::string_view id) const noexcept;
    [[nodiscard]] const Flowchart& at(std::string_view id) const;
    [[nodiscard]] bool contains(std::string_view id) const noexcept { return find(id) != nullptr; }
    [[nodiscard]] bool is_external(std::string_view id) const noexcept;
    [[nodiscard]] const std::map<std::string, Flowchart, std::less<>>& charts() const noexcept {
        return charts_;
    }
    [[nodiscard]] const std::set<std::string, std::less<>>& externals() const noexcept {
        return externals_;
    }
    [[nodiscard]] std::size_t size() const noexcept { return charts_.size(); }
    [[nodiscard]] bool empty() const noexcept { return charts_.empty(); }

  private:
    std::map<std::string, Flowchart, std::less<>> charts_;
    std::set<std::string, std::less<>> externals_;
};

struct ValidationIssue {
    std::string flowchart_id;
    std::string locus; // node id, "edge <from>-><to>", or "document"
    std::string code;
    std::string message;

    bool operator==(const ValidationIssue&) const = default;
};

struct ValidationReport {
    std::vector<ValidationIssue> errors;
    std::vector<ValidationIssue> warnings;

    [[nodiscard]] bool ok() const noexcept { return errors.empty(); }
    [[nodiscard]] bool has_error(std::string_view code) const noexcept;
    [[nodiscard]] std::set<std::string> error_codes() const;
    void append(const ValidationReport& other);
};

void to_json(nlohmann::json& j, const ValidationIssue& issue);
void to_json(nlohmann::json& j, const ValidationReport& report);

/// Structural rule codes reported by `validate`.
namespace rule {
inline constexpr std::string_view InvalidEntry = "InvalidEntry";
inline constexpr std::string_view UnreachableNode = "UnreachableNode";
inline constexpr std::string_view MissingBranch = "MissingBranch";
inline constexpr std::string_view ActionHasOutEdge = "ActionHasOutEdge";
inline constexpr std::string_view RedirectHasOutEdge = "RedirectHasOutEdge";
inline constexpr std::string_view InfoEdgeInvalid = "InfoEdgeInvalid";
inline constexpr std::string_view CycleDetected = "CycleDetected";
inline constexpr std::string_view DanglingEdge = "DanglingEdge";
inline constexpr std::string_view UnconditionalEdge = "UnconditionalEdge";
inline constexpr std::string_view KindPrefixMismatch = "KindPrefixMismatch";
inline constexpr std::string_view EmptyText = "EmptyText";
inline constexpr std::string_view MissingRedirectTarget = "MissingRedirectTarget";
inline constexpr std::string_view UnresolvedRedirect = "UnresolvedRedirect";
inline constexpr std::string_view InvalidApplicability = "InvalidApplicability";
inline constexpr std::string_view DuplicateFlowchartId = "DuplicateFlowchartId";
// warnings
inline constexpr std::string_view QuestionNotPolar = "QuestionNotPolar";
inline constexpr std::string_view DeclaredExternal = "DeclaredExternal";
} // namespace rule

/// Checks every structural invariant of `f` and resolves its redirects
/// against `lib` (or `f.external_targets` / `lib.externals()`). Problems are
/// report entries; this never throws.
[[nodiscard]] ValidationReport validate(const Flowchart& f, const FlowchartLibrary& lib);

struct DecisionPath {
    std::vector<std::pair<std::string, Answer>> answers;
    std::string terminal;

    bool operator==(const DecisionPath&) const = default;
};

/// Every root-to-terminal answer sequence, depth first with Yes before No.
/// Info nodes are passed through without contributing an answer. Throws
/// InvalidFlowchart if `f` fails structural validation.
[[nodiscard]] std::vector<DecisionPath> enumerate_paths(const Flowchart& f);

[[nodiscard]] bool is_applicable(const Flowchart& f, const Demographics& d) noexcept;

struct LoadResult {
    FlowchartLibrary library;
    ValidationReport report;
};

/// Loads every `*.json` under `dir` (sorted by filename). Charts with errors
/// are excluded and reported; redirects into excluded charts are
/// re-checked until the set is stable. Throws IoError / EmptyLibrary.
[[nodiscard]] LoadResult load_library(const std::filesystem::path& dir);

/// Like `load_library`, but from already-read documents (name, bytes).
[[nodiscard]] LoadResult load_library_from_documents(
    const std::vector<std::pair<std::string, std::string>>& documents);

} // namespace triage
