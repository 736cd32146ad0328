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

#include "triage/flowchart.hpp"

#include "triage/error.hpp"
#include "triage/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace triage {

using nlohmann::json;

std::string_view to_string(NodeKind kind) noexcept {
    switch (kind) {
    case NodeKind::Question: return "question";
    case NodeKind::Redirect: return "redirect";
    case NodeKind::Action: return "action";
    case NodeKind::Info: return "info";
    }
    return "question";
}

std::string_view to_string(Condition condition) noexcept {
    switch (condition) {
    case Condition::Yes: return "yes";
    case Condition::No: return "no";
    case Condition::Unconditional: return "unconditional";
    }
    return "unconditional";
}

std::string_view to_string(Answer answer) noexcept { return answer == Answer::Yes ? "Yes" : "No"; }

char kind_prefix(NodeKind kind) noexcept {
    switch (kind) {
    case NodeKind::Question: return 'N';
    case NodeKind::Redirect: return 'F';
    case NodeKind::Action: return 'A';
    case NodeKind::Info: return 'I';
    }
    return 'N';
}

std::optional<NodeKind> kind_from_prefix(char prefix) noexcept {
    switch (prefix) {
    case 'N': return NodeKind::Question;
    case 'F': return NodeKind::Redirect;
    case 'A': return NodeKind::Action;
    case 'I': return NodeKind::Info;
    default: return std::nullopt;
    }
}

namespace {

std::string age_unit_for(int lo, std::optional<int> hi) {
    const bool years = lo % 12 == 0 && (!hi || *hi % 12 == 0);
    return years ? "years" : "months";
}

} // namespace

std::string applicability_phrase(const Applicability& a) {
    std::string ages;
    if (a.age_min_months == 0 && !a.age_max_months) {
        ages = "All ages";
    } else {
        const auto unit = age_unit_for(a.age_min_months, a.age_max_months);
        const auto fmt = [&](int m) {
            return unit == "years" ? std::to_string(m / 12) : std::to_string(m);
        };
        if (!a.age_max_months) {
            ages = ">" + fmt(a.age_min_months) + " " + unit;
        } else {
            ages = fmt(a.age_min_months) + "-" + fmt(*a.age_max_months) + " " + unit;
        }
    }
    std::string sexes;
    if (a.male && a.female) sexes = "Male and Female";
    else if (a.male) sexes = "Male";
    else if (a.female) sexes = "Female";
    else sexes = "None";
    return ages + " - " + sexes;
}

const Node* Flowchart::find(std::string_view node_id) const noexcept {
    const auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == node_id; });
    return it == nodes.end() ? nullptr : &*it;
}

const Edge* Flowchart::follow(std::string_view node_id, Condition condition) const noexcept {
    const auto it = std::find_if(edges.begin(), edges.end(), [&](const Edge& e) {
        return e.from == node_id && e.condition == condition;
    });
    return it == edges.end() ? nullptr : &*it;
}

std::vector<const Edge*> Flowchart::out_edges(std::string_view node_id) const {
    std::vector<const Edge*> out;
    for (const auto& e : edges)
        if (e.from == node_id) out.push_back(&e);
    return out;
}

std::size_t Flowchart::count(NodeKind kind) const noexcept {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.kind == kind; }));
}

std::string retrieval_text(const Flowchart& f) {
    return f.name + " - " + applicability_phrase(f.applicability) + " - " + f.description;
}

// ---------------------------------------------------------------------------
// Document format

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
    throw ParseError("ParseError", where + ": " + what);
}

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            schema_error(where, "unknown key \"" + key + "\"");
    }
}

const json& require(const json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) schema_error(where, std::string("missing key \"") + key + "\"");
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_string()) schema_error(where + "/" + key, "expected a string");
    return v.get<std::string>();
}

int require_int(const json& v, const std::string& where) {
    if (!v.is_number_integer()) schema_error(where, "expected an integer");
    return v.get<int>();
}

NodeKind parse_kind(const std::string& s, const std::string& where) {
    const auto k = text::to_lower(s);
    if (k == "question") return NodeKind::Question;
    if (k == "redirect") return NodeKind::Redirect;
    if (k == "action") return NodeKind::Action;
    if (k == "info") return NodeKind::Info;
    schema_error(where, "unknown node kind \"" + s + "\"");
}

Condition parse_condition(const std::string& s, const std::string& where) {
    const auto c = text::to_lower(s);
    if (c == "yes") return Condition::Yes;
    if (c == "no") return Condition::No;
    if (c == "unconditional") return Condition::Unconditional;
    schema_error(where, "unknown edge condition \"" + s + "\"");
}

std::pair<std::size_t, std::size_t> line_column(std::string_view doc, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < byte && i < doc.size(); ++i) {
        if (doc[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

} // namespace

Flowchart flowchart_from_json(const json& doc) {
    if (!doc.is_object()) schema_error("document", "top level must be an object");
    reject_unknown_keys(doc,
                        {"id", "name", "description", "specialty", "applicability", "entry", "nodes",
                         "edges", "external_targets"},
                        "document");
    Flowchart f;
    f.id = require_string(doc, "id", "document");
    f.name = require_string(doc, "name", "document");
    f.description = require_string(doc, "description", "document");
    f.specialty = require_string(doc, "specialty", "document");
    f.entry = require_string(doc, "entry", "document");

    const auto& app = require(doc, "applicability", "document");
    if (!app.is_object()) schema_error("applicability", "expected an object");
    reject_unknown_keys(app, {"sexes", "age_min_months", "age_max_months"}, "applicability");
    const auto& sexes = require(app, "sexes", "applicability");
    if (!sexes.is_array()) schema_error("applicability/sexes", "expected an array");
    f.applicability.male = false;
    f.applicability.female = false;
    for (const auto& s : sexes) {
        if (!s.is_string()) schema_error("applicability/sexes", "expected strings");
        const auto sex = parse_sex(s.get<std::string>());
        if (!sex) schema_error("applicability/sexes", "unknown sex \"" + s.get<std::string>() + "\"");
        (*sex == Sex::Male ? f.applicability.male : f.applicability.female) = true;
    }
    f.applicability.age_min_months = require_int(require(app, "age_min_months", "applicability"),
                                                 "applicability/age_min_months");
    const auto& max = require(app, "age_max_months", "applicability");
    if (!max.is_null()) f.applicability.age_max_months = require_int(max, "applicability/age_max_months");

    const auto& nodes = require(doc, "nodes", "document");
    if (!nodes.is_array()) schema_error("nodes", "expected an array");
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto where = "nodes/" + std::to_string(i);
        const auto& n = nodes[i];
        if (!n.is_object()) schema_error(where, "expected an object");
        reject_unknown_keys(n, {"id", "kind", "text", "target"}, where);
        Node node;
        node.id = require_string(n, "id", where);
        node.kind = parse_kind(require_string(n, "kind", where), where + "/kind");
        if (node.kind == NodeKind::Redirect) {
            if (n.contains("text")) node.text = require_string(n, "text", where);
            node.target = require_string(n, "target", where);
        } else {
            node.text = require_string(n, "text", where);
            if (n.contains("target")) schema_error(where, "\"target\" is only allowed on redirect nodes");
        }
        if (node.id.empty()) schema_error(where + "/id", "node id must be non-empty");
        const auto prefix_kind = kind_from_prefix(node.id.front());
        if (!prefix_kind)
            throw ParseError("UnknownNodeKindPrefix",
                             where + ": node id \"" + node.id + "\" must start with N, F, A or I");
        if (*prefix_kind != node.kind)
            throw ParseError("KindPrefixMismatch", where + ": node id \"" + node.id +
                                                       "\" does not match kind " +
                                                       std::string(to_string(node.kind)));
        if (!seen.insert(node.id).second)
            throw ParseError("DuplicateNodeId", where + ": duplicate node id \"" + node.id + "\"");
        f.nodes.push_back(std::move(node));
    }

    const auto& edges = require(doc, "edges", "document");
    if (!edges.is_array()) schema_error("edges", "expected an array");
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const auto where = "edges/" + std::to_string(i);
        const auto& e = edges[i];
        if (!e.is_object()) schema_error(where, "expected an object");
        reject_unknown_keys(e, {"from", "to", "condition"}, where);
        f.edges.push_back(Edge{require_string(e, "from", where), require_string(e, "to", where),
                               parse_condition(require_string(e, "condition", where), where + "/condition")});
    }

    if (const auto it = doc.find("external_targets"); it != doc.end()) {
        if (!it->is_array()) schema_error("external_targets", "expected an array");
        for (const auto& t : *it) {
            if (!t.is_string()) schema_error("external_targets", "expected strings");
            f.external_targets.push_back(t.get<std::string>());
        }
    }
    return f;
}

Flowchart parse_flowchart(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document.begin(), document.end());
    } catch (const json::parse_error& e) {
        const auto byte = e.byte > 0 ? e.byte - 1 : 0;
        const auto [line, col] = line_column(document, byte);
        throw ParseError("ParseError",
                         "malformed JSON at line " + std::to_string(line) + ", column " +
                             std::to_string(col) + ": " + e.what(),
                         byte, line, col);
    }
    return flowchart_from_json(doc);
}

json flowchart_to_json(const Flowchart& f) {
    json sexes = json::array();
    if (f.applicability.male) sexes.push_back("male");
    if (f.applicability.female) sexes.push_back("female");
    json doc = {
        {"id", f.id},
        {"name", f.name},
        {"description", f.description},
        {"specialty", f.specialty},
        {"applicability",
         {{"sexes", sexes},
          {"age_min_months", f.applicability.age_min_months},
          {"age_max_months",
           f.applicability.age_max_months ? json(*f.applicability.age_max_months) : json(nullptr)}}},
        {"entry", f.entry},
    };
    json nodes = json::array();
    for (const auto& n : f.nodes) {
        json node = {{"id", n.id}, {"kind", to_string(n.kind)}};
        if (n.kind != NodeKind::Redirect || !n.text.empty()) node["text"] = n.text;
        if (n.kind == NodeKind::Redirect) node["target"] = n.target;
        nodes.push_back(std::move(node));
    }
    doc["nodes"] = std::move(nodes);
    json edges = json::array();
    for (const auto& e : f.edges)
        edges.push_back({{"from", e.from}, {"to", e.to}, {"condition", to_string(e.condition)}});
    doc["edges"] = std::move(edges);
    if (!f.external_targets.empty()) doc["external_targets"] = f.external_targets;
    return doc;
}

std::string serialize_flowchart(const Flowchart& f) { return flowchart_to_json(f).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Library

FlowchartLibrary::FlowchartLibrary(std::vector<Flowchart> charts, std::set<std::string> externals)
    : externals_(externals.begin(), externals.end()) {
    for (auto& f : charts) {
        for (const auto& t : f.external_targets) externals_.insert(t);
        auto id = f.id;
        if (!charts_.emplace(id, std::move(f)).second)
            throw InvalidFlowchart("duplicate flowchart id \"" + id + "\"");
    }
}

const Flowchart* FlowchartLibrary::find(std::string_view id) const noexcept {
    const auto it = charts_.find(id);
    return it == charts_.end() ? nullptr : &it->second;
}

const Flowchart& FlowchartLibrary::at(std::string_view id) const {
    if (const auto* f = find(id)) return *f;
    throw InvalidFlowchart("no flowchart with id \"" + std::string(id) + "\"");
}

bool FlowchartLibrary::is_external(std::string_view id) const noexcept {
    return externals_.find(id) != externals_.end();
}

bool ValidationReport::has_error(std::string_view code) const noexcept {
    return std::any_of(errors.begin(), errors.end(), [&](const ValidationIssue& i) { return i.code == code; });
}

std::set<std::string> ValidationReport::error_codes() const {
    std::set<std::string> codes;
    for (const auto& e : errors) codes.insert(e.code);
    return codes;
}

void ValidationReport::append(const ValidationReport& other) {
    errors.insert(errors.end(), other.errors.begin(), other.errors.end());
    warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
}

void to_json(json& j, const ValidationIssue& issue) {
    j = {{"flowchart_id", issue.flowchart_id},
         {"locus", issue.locus},
         {"code", issue.code},
         {"message", issue.message}};
}

void to_json(json& j, const ValidationReport& report) {
    j = {{"errors", report.errors}, {"warnings", report.warnings}};
}

// ---------------------------------------------------------------------------
// Validation

namespace {

struct Checker {
    const Flowchart& f;
    ValidationReport report;

    void error(std::string locus, std::string_view code, std::string message) {
        report.errors.push_back({f.id, std::move(locus), std::string(code), std::move(message)});
    }
    void warning(std::string locus, std::string_view code, std::string message) {
        report.warnings.push_back({f.id, std::move(locus), std::string(code), std::move(message)});
    }
};

std::string edge_locus(const Edge& e) { return "edge " + e.from + "->" + e.to; }

ValidationReport validate_structure(const Flowchart& f) {
    Checker c{f, {}};

    const auto& app = f.applicability;
    if (!app.male && !app.female) c.error("applicability", rule::InvalidApplicability, "no sex is covered");
    if (app.age_min_months < 0)
        c.error("applicability", rule::InvalidApplicability, "age_min_months is negative");
    if (app.age_max_months && *app.age_max_months < app.age_min_months)
        c.error("applicability", rule::InvalidApplicability, "age_max_months is below age_min_months");

    std::unordered_map<std::string_view, const Node*> by_id;
    for (const auto& n : f.nodes) {
        by_id.emplace(n.id, &n);
        if (n.id.empty() || kind_from_prefix(n.id.front()) != n.kind)
            c.error(n.id, rule::KindPrefixMismatch,
                    "node id does not start with '" + std::string(1, kind_prefix(n.kind)) + "'");
        if (n.kind != NodeKind::Redirect && text::trim(n.text).empty())
            c.error(n.id, rule::EmptyText, "node text is empty");
        if (n.kind == NodeKind::Question && !n.text.empty() && text::trim(n.text).back() != '?')
            c.warning(n.id, rule::QuestionNotPolar, "question text does not end with '?'");
        if (n.kind == NodeKind::Redirect && n.target.empty())
            c.error(n.id, rule::MissingRedirectTarget, "redirect has no target flowchart");
    }

    // Dangling edges are reported once and left out of the graph analysis.
    std::unordered_map<std::string_view, std::vector<const Edge*>> out;
    std::unordered_map<std::string_view, int> indegree;
    for (const auto& e : f.edges) {
        const auto from = by_id.find(e.from);
        const auto to = by_id.find(e.to);
        if (from == by_id.end() || to == by_id.end()) {
            c.error(edge_locus(e), rule::DanglingEdge,
                    "edge endpoint \"" + (from == by_id.end() ? e.from : e.to) + "\" is not a node");
            continue;
        }
        if (e.condition == Condition::Unconditional && from->second->kind != NodeKind::Info)
            c.error(edge_locus(e), rule::UnconditionalEdge, "unconditional edge from a non-info node");
        out[e.from].push_back(&e);
        ++indegree[e.to];
    }

    for (const auto& n : f.nodes) {
        const auto& edges = out[n.id];
        switch (n.kind) {
        case NodeKind::Question: {
            const auto yes = std::count_if(edges.begin(), edges.end(),
                                           [](const Edge* e) { return e->condition == Condition::Yes; });
            const auto no = std::count_if(edges.begin(), edges.end(),
                                          [](const Edge* e) { return e->condition == Condition::No; });
            if (yes != 1 || no != 1 || edges.size() != 2)
                c.error(n.id, rule::MissingBranch,
                        "question needs exactly one yes and one no edge (has " + std::to_string(yes) +
                            " yes, " + std::to_string(no) + " no, " + std::to_string(edges.size()) +
                            " total)");
            break;
        }
        case NodeKind::Action:
            if (!edges.empty()) c.error(n.id, rule::ActionHasOutEdge, "action nodes are terminal");
            break;
        case NodeKind::Redirect:
            if (!edges.empty()) c.error(n.id, rule::RedirectHasOutEdge, "redirect nodes are terminal");
            break;
        case NodeKind::Info: {
            const bool ok = edges.size() == 1 && edges.front()->condition == Condition::Unconditional &&
                            by_id.at(edges.front()->to)->kind == NodeKind::Redirect;
            if (!ok)
                c.error(n.id, rule::InfoEdgeInvalid,
                        "info nodes need exactly one unconditional edge to a redirect node");
            break;
        }
        }
    }

    if (by_id.find(f.entry) == by_id.end()) {
        c.error(f.entry, rule::InvalidEntry, "entry \"" + f.entry + "\" is not a node");
    } else {
        if (indegree[f.entry] > 0) c.error(f.entry, rule::InvalidEntry, "entry node has incoming edges");
        std::unordered_set<std::string_view> seen{f.entry};
        std::vector<std::string_view> stack{f.entry};
        while (!stack.empty()) {
            const auto id = stack.back();
            stack.pop_back();
            for (const Edge* e : out[id])
                if (seen.insert(e->to).second) stack.push_back(e->to);
        }
        for (const auto& n : f.nodes)
            if (!seen.count(n.id)) c.error(n.id, rule::UnreachableNode, "not reachable from the entry node");
    }

    // Iterative three-colour DFS; one report per chart is enough.
    enum class Mark { White, Grey, Black };
    std::unordered_map<std::string_view, Mark> mark;
    for (const auto& root : f.nodes) {
        if (mark[root.id] != Mark::White) continue;
        std::vector<std::pair<std::string_view, std::size_t>> stack{{root.id, 0}};
        mark[root.id] = Mark::Grey;
        bool found = false;
        while (!stack.empty() && !found) {
            auto& [id, next] = stack.back();
            const auto& edges = out[id];
            if (next == edges.size()) {
                mark[id] = Mark::Black;
                stack.pop_back();
                continue;
            }
            const auto to = std::string_view(edges[next++]->to);
            if (mark[to] == Mark::Grey) {
                c.error(std::string(to), rule::CycleDetected, "cycle through node " + std::string(to));
                found = true;
            } else if (mark[to] == Mark::White) {
                mark[to] = Mark::Grey;
                stack.emplace_back(to, 0);
            }
        }
        if (found) break;
    }
    return c.report;
}

} // namespace

ValidationReport validate(const Flowchart& f, const FlowchartLibrary& lib) {
    auto report = validate_structure(f);
    Checker c{f, {}};
    for (const auto& n : f.nodes) {
        if (n.kind != NodeKind::Redirect || n.target.empty()) continue;
        if (lib.contains(n.target)) continue;
        const bool declared = lib.is_external(n.target) ||
                              std::find(f.external_targets.begin(), f.external_targets.end(), n.target) !=
                                  f.external_targets.end();
        if (declared)
            c.warning(n.id, rule::DeclaredExternal, "redirect to declared-external flowchart \"" + n.target + "\"");
        else
            c.error(n.id, rule::UnresolvedRedirect, "redirect target \"" + n.target + "\" is not in the library");
    }
    report.append(c.report);
    return report;
}

std::vector<DecisionPath> enumerate_paths(const Flowchart& f) {
    if (const auto report = validate_structure(f); !report.ok()) {
        throw InvalidFlowchart("flowchart \"" + f.id + "\" is invalid: " + report.errors.front().code +
                               " at " + report.errors.front().locus);
    }
    std::vector<DecisionPath> paths;
    DecisionPath current;
    // Depth is bounded by the node count since the chart is acyclic.
    const auto walk = [&](const auto& self, const std::string& id) -> void {
        const Node& node = *f.find(id);
        switch (node.kind) {
        case NodeKind::Action:
        case NodeKind::Redirect:
            current.terminal = id;
            paths.push_back(current);
            return;
        case NodeKind::Info:
            self(self, f.follow(id, Condition::Unconditional)->to);
            return;
        case NodeKind::Question:
            for (const auto answer : {Answer::Yes, Answer::No}) {
                current.answers.emplace_back(id, answer);
                self(self, f.follow(id, to_condition(answer))->to);
                current.answers.pop_back();
            }
            return;
        }
    };
    walk(walk, f.entry);
    return paths;
}

bool is_applicable(const Flowchart& f, const Demographics& d) noexcept {
    const auto& a = f.applicability;
    const int months = d.age_months();
    return a.allows(d.sex) && months >= a.age_min_months && (!a.age_max_months || months <= *a.age_max_months);
}

// ---------------------------------------------------------------------------
// Loading

LoadResult load_library_from_documents(const std::vector<std::pair<std::string, std::string>>& documents) {
    ValidationReport report;
    std::vector<Flowchart> candidates;
    std::set<std::string> ids;
    for (const auto& [name, bytes] : documents) {
        try {
            auto f = parse_flowchart(bytes);
            if (!ids.insert(f.id).second) {
                report.errors.push_back({f.id, name, std::string(rule::DuplicateFlowchartId),
                                         "flowchart id already loaded from an earlier document"});
                continue;
            }
            candidates.push_back(std::move(f));
        } catch (const ParseError& e) {
            report.errors.push_back({name, "document", e.code(), e.what()});
        }
    }

    // Excluding a chart can orphan redirects into it, so iterate to a fixpoint.
    std::map<std::string, ValidationReport> final_reports;
    while (true) {
        const FlowchartLibrary trial(candidates);
        std::vector<Flowchart> kept;
        bool removed = false;
        for (auto& f : candidates) {
            auto r = validate(f, trial);
            if (!r.ok()) removed = true;
            final_reports[f.id] = r;
            if (r.ok()) kept.push_back(std::move(f));
        }
        candidates = std::move(kept);
        if (!removed) break;
    }
    for (const auto& [id, r] : final_reports) report.append(r);
    if (candidates.empty()) throw EmptyLibrary("no flowchart loaded cleanly");
    return {FlowchartLibrary(std::move(candidates)), std::move(report)};
}

LoadResult load_library(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("not a readable directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
    std::sort(files.begin(), files.end());
    std::vector<std::pair<std::string, std::string>> documents;
    for (const auto& p : files) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot read " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        documents.emplace_back(p.filename().string(), ss.str());
    }
    return load_library_from_documents(documents);
}

} // namespace triage
