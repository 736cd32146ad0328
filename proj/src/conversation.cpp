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

#include "triage/conversation.hpp"

#include "triage/prompts.hpp"
#include "triage/text.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <random>
#include <sstream>

namespace triage {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kPhaseNames{
    "collecting_demographics", "collecting_concern",    "navigating",
    "completed",               "no_flowchart_escalation", "stalled_escalation",
};

constexpr std::string_view kGreeting =
    "Hello, I'm an online triage assistant. I'll ask a few questions and follow a clinical protocol to "
    "suggest what to do next. I can't replace a clinician; if this is an emergency, call your local "
    "emergency number now.";
constexpr std::string_view kAskSex = "What is the patient's sex? Please answer male or female.";
constexpr std::string_view kAskAge = "How old is the patient? Please give a number and a unit, e.g. 35 years or 8 months.";
constexpr std::string_view kAskConcern = "What brings you here today? Please describe the main concern in a sentence or two.";
constexpr std::string_view kNoFlowchart =
    "I'm sorry, I'm not able to provide guidance for this concern. Please contact a healthcare provider or "
    "seek medical attention directly. If this is an emergency, call your local emergency number.";
constexpr std::string_view kStalled =
    "I haven't been able to get a clear answer to this question, so I can't safely continue the protocol. "
    "Please contact a clinician or nurse directly so they can help you.";

std::string join_parts(const std::vector<std::string>& parts) { return text::join(parts, "\n"); }

void say(Session& s, std::string text) { s.transcript.push_back({Speaker::System, std::move(text)}); }

int patient_turns(const Session& s) {
    return static_cast<int>(std::count_if(s.transcript.begin(), s.transcript.end(),
                                          [](const Message& m) { return m.speaker == Speaker::Patient; }));
}

} // namespace

std::string_view to_string(Phase p) noexcept { return kPhaseNames[static_cast<std::size_t>(p)]; }

Phase parse_phase(std::string_view s) {
    for (std::size_t i = 0; i < kPhaseNames.size(); ++i)
        if (kPhaseNames[i] == s) return static_cast<Phase>(i);
    throw MalformedStructuredOutput("unknown phase '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Serialization

json trail_entry_to_json(const TrailEntry& e) {
    json j;
    j["turn_index"] = e.turn_index;
    j["flowchart_id"] = e.flowchart_id;
    j["node_id"] = e.node_id;
    j["question_text"] = e.question_text;
    j["patient_utterance"] = e.patient_utterance;
    j["verdict"] = verdict_to_json(e.verdict);
    j["action"] = to_string(e.action);
    j["timestamp"] = e.timestamp;
    return j;
}

TrailEntry trail_entry_from_json(const json& j) {
    try {
        TrailEntry e;
        e.turn_index = j.at("turn_index").get<int>();
        e.flowchart_id = j.at("flowchart_id").get<std::string>();
        e.node_id = j.at("node_id").get<std::string>();
        e.question_text = j.at("question_text").get<std::string>();
        e.patient_utterance = j.at("patient_utterance").get<std::string>();
        e.verdict = verdict_from_json(j.at("verdict"));
        e.action = parse_action(j.at("action").get<std::string>());
        e.timestamp = j.at("timestamp").get<std::string>();
        return e;
    } catch (const json::exception& ex) {
        throw MalformedStructuredOutput(std::string("bad trail entry: ") + ex.what());
    }
}

std::string trail_to_jsonl(const std::vector<TrailEntry>& trail) {
    std::string out;
    for (const auto& e : trail) {
        out += trail_entry_to_json(e).dump();
        out += '\n';
    }
    return out;
}

std::vector<TrailEntry> trail_from_jsonl(std::string_view jsonl) {
    std::vector<TrailEntry> out;
    std::istringstream in{std::string(jsonl)};
    for (std::string line; std::getline(in, line);) {
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(trail_entry_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            throw MalformedStructuredOutput(std::string("bad trail line: ") + e.what());
        }
    }
    return out;
}

namespace {

json demographics_to_json(const Demographics& d) {
    return {{"sex", to_string(d.sex)}, {"age_value", d.age_value}, {"age_unit", to_string(d.age_unit)}};
}

Demographics demographics_from_json(const json& j) {
    const auto sex = parse_sex(j.at("sex").get<std::string>());
    const auto unit = parse_age_unit(j.at("age_unit").get<std::string>());
    if (!sex || !unit) throw InvalidDemographics("bad demographics in session document");
    return make_demographics(*sex, j.at("age_value").get<int>(), *unit);
}

} // namespace

json session_to_json(const Session& s) {
    json j;
    j["id"] = s.id;
    j["demographics"] = s.demographics ? demographics_to_json(*s.demographics) : json(nullptr);
    j["pending_sex"] = s.pending_sex ? json(to_string(*s.pending_sex)) : json(nullptr);
    j["phase"] = to_string(s.phase);
    j["flowchart_id"] = s.flowchart_id;
    j["node_id"] = s.node_id;
    j["consecutive_non_advances"] = s.consecutive_non_advances;
    j["redirect_depth"] = s.redirect_depth;
    j["opening_statement"] = s.opening_statement;
    j["recommendation"] = s.recommendation;
    j["terminal_node_id"] = s.terminal_node_id;
    auto& transcript = j["transcript"] = json::array();
    for (const auto& m : s.transcript)
        transcript.push_back({{"speaker", m.speaker == Speaker::System ? "system" : "patient"}, {"text", m.text}});
    auto& trail = j["trail"] = json::array();
    for (const auto& e : s.trail) trail.push_back(trail_entry_to_json(e));
    auto& visited = j["visited"] = json::array();
    for (const auto& v : s.visited) visited.push_back({v.flowchart_id, v.node_id});
    if (s.selection) {
        json sel;
        sel["flowchart_id"] = s.selection->flowchart_id ? json(*s.selection->flowchart_id) : json(nullptr);
        auto& shown = sel["candidates_shown"] = json::array();
        for (const auto& c : s.selection->candidates_shown)
            shown.push_back({{"flowchart_id", c.flowchart_id}, {"score", c.score}});
        sel["warnings"] = s.selection->warnings;
        j["selection"] = std::move(sel);
    } else {
        j["selection"] = nullptr;
    }
    return j;
}

Session session_from_json(const json& j) {
    try {
        Session s;
        s.id = j.at("id").get<std::string>();
        if (!j.at("demographics").is_null()) s.demographics = demographics_from_json(j.at("demographics"));
        if (!j.at("pending_sex").is_null()) s.pending_sex = parse_sex(j.at("pending_sex").get<std::string>());
        s.phase = parse_phase(j.at("phase").get<std::string>());
        s.flowchart_id = j.at("flowchart_id").get<std::string>();
        s.node_id = j.at("node_id").get<std::string>();
        s.consecutive_non_advances = j.at("consecutive_non_advances").get<int>();
        s.redirect_depth = j.at("redirect_depth").get<int>();
        s.opening_statement = j.at("opening_statement").get<std::string>();
        s.recommendation = j.at("recommendation").get<std::string>();
        s.terminal_node_id = j.at("terminal_node_id").get<std::string>();
        for (const auto& m : j.at("transcript"))
            s.transcript.push_back({m.at("speaker").get<std::string>() == "system" ? Speaker::System : Speaker::Patient,
                                    m.at("text").get<std::string>()});
        for (const auto& e : j.at("trail")) s.trail.push_back(trail_entry_from_json(e));
        for (const auto& v : j.at("visited")) s.visited.push_back({v.at(0).get<std::string>(), v.at(1).get<std::string>()});
        if (const auto& sel = j.at("selection"); !sel.is_null()) {
            Selection out;
            if (!sel.at("flowchart_id").is_null()) out.flowchart_id = sel.at("flowchart_id").get<std::string>();
            for (const auto& c : sel.at("candidates_shown"))
                out.candidates_shown.push_back({c.at("flowchart_id").get<std::string>(), c.at("score").get<double>()});
            out.warnings = sel.at("warnings").get<std::vector<std::string>>();
            s.selection = std::move(out);
        }
        return s;
    } catch (const json::exception& e) {
        throw MalformedStructuredOutput(std::string("bad session document: ") + e.what());
    }
}

std::string new_session_id() {
    std::random_device rd;
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (int i = 0; i < 4; ++i) os << std::setw(8) << static_cast<std::uint32_t>(rd());
    return os.str();
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
    return os.str();
}

// ---------------------------------------------------------------------------
// Composers

std::string TemplateComposer::compose(ComposeMode mode, std::string_view node_text, const ComposeContext&) const {
    switch (mode) {
    case ComposeMode::Convey: return std::string(node_text);
    case ComposeMode::ReAsk: return std::string(kReAskPrefix) + std::string(node_text);
    case ComposeMode::Confirm: return std::string(kConfirmPrefix) + std::string(node_text);
    }
    return std::string(node_text);
}

std::string ProviderComposer::compose(ComposeMode mode, std::string_view node_text, const ComposeContext& ctx) const {
    std::string prompt;
    if (mode == ComposeMode::Convey) {
        prompt = render(PromptId::ChatConvey, {{"node_text", std::string(node_text)}});
    } else {
        prompt = render(mode == ComposeMode::ReAsk ? PromptId::ChatReAsk : PromptId::ChatConfirm,
                        {{"node_text", std::string(node_text)}, {"patient_message", std::string(ctx.patient_message)}});
    }
    auto out = generator_->generate({prompt, temperature_});
    if (text::trim(out).empty()) throw ComposerFailure("composer returned an empty reply");
    if (!ctx.free_form && out.find(node_text) == std::string::npos)
        throw ComposerFailure("composer reply does not contain the question verbatim");
    return out;
}

std::string compose_reply(ComposeMode mode, std::string_view node_text, const ReplyComposer& composer,
                          const ComposeContext& ctx) {
    if (text::trim(node_text).empty()) throw ComposerFailure("nothing to compose: node text is empty");
    try {
        return composer.compose(mode, node_text, ctx);
    } catch (const Error&) {
        return TemplateComposer{}.compose(mode, node_text, ctx);
    }
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(Retriever retriever, std::shared_ptr<const Classifier> classifier,
               std::shared_ptr<const ReplyComposer> composer, EngineConfig config, TimestampClock clock)
    : retriever_(std::move(retriever)), classifier_(std::move(classifier)), composer_(std::move(composer)),
      config_(config), clock_(clock ? std::move(clock) : TimestampClock(utc_timestamp)) {
    if (config_.stall_limit < 1) throw ConfigError("stall_limit must be >= 1");
    if (config_.redirect_limit < 1) throw ConfigError("redirect_limit must be >= 1");
    if (!retriever_.library || !retriever_.index || !retriever_.embedder || !retriever_.selector)
        throw ConfigError("retriever is not fully configured");
    if (!classifier_ || !composer_) throw ConfigError("engine needs a classifier and a composer");
}

TurnResult Engine::start_session(std::optional<Demographics> d, std::string id) const {
    Session s;
    s.id = std::move(id);
    std::vector<std::string> parts{std::string(kGreeting)};
    if (d) {
        s.demographics = make_demographics(d->sex, d->age_value, d->age_unit);
        s.phase = Phase::CollectingConcern;
        parts.emplace_back(kAskConcern);
    } else {
        s.phase = Phase::CollectingDemographics;
        parts.emplace_back(kAskSex);
    }
    auto reply = join_parts(parts);
    say(s, reply);
    return {std::move(s), std::move(reply)};
}

TurnResult Engine::submit_message(const Session& in, std::string_view text) const {
    if (is_closed(in.phase))
        throw SessionClosed("session " + in.id + " is closed (" + std::string(to_string(in.phase)) + ")");
    Session s = in;
    s.transcript.push_back({Speaker::Patient, std::string(text)});
    std::string reply;
    switch (s.phase) {
    case Phase::CollectingDemographics: reply = on_demographics(s, text); break;
    case Phase::CollectingConcern: reply = on_concern(s, text); break;
    case Phase::Navigating: reply = on_answer(s, text); break;
    default: break;
    }
    say(s, reply);
    return {std::move(s), std::move(reply)};
}

std::string Engine::on_demographics(Session& s, std::string_view text) const {
    if (!s.pending_sex) {
        const auto sex = parse_sex(text);
        if (!sex) return "Sorry, I didn't catch that. " + std::string(kAskSex);
        s.pending_sex = sex;
        return std::string(kAskAge);
    }
    const auto age = parse_age(text);
    if (!age) return "Sorry, I didn't catch that. " + std::string(kAskAge);
    try {
        s.demographics = make_demographics(*s.pending_sex, age->first, age->second);
    } catch (const InvalidDemographics&) {
        return "That age is outside the range I can help with (1 month to 120 years). " + std::string(kAskAge);
    }
    s.pending_sex.reset();
    s.phase = Phase::CollectingConcern;
    return std::string(kAskConcern);
}

std::string Engine::on_concern(Session& s, std::string_view text) const {
    if (text::trim(text).empty()) return std::string(kAskConcern);
    s.opening_statement = std::string(text::trim(text));
    auto result = retriever_.retrieve(*s.demographics, s.opening_statement);
    s.selection = std::move(result.selection);
    if (!s.selection->has_chart()) {
        s.phase = Phase::NoFlowchartEscalation;
        return std::string(kNoFlowchart);
    }
    return enter_chart(s, *s.selection->flowchart_id);
}

std::string Engine::enter_chart(Session& s, const std::string& flowchart_id) const {
    const auto& chart = library().at(flowchart_id);
    std::vector<std::string> parts{"I'll guide you using the " + chart.name + " protocol."};
    if (s.selection && !s.selection->candidates_shown.empty()) {
        std::vector<std::string> names;
        for (const auto& c : s.selection->candidates_shown)
            if (const auto* f = library().find(c.flowchart_id)) names.push_back(f->name);
        parts.push_back("Potentially relevant: " + text::join(names, ", ") + ".");
    }
    s.phase = Phase::Navigating;
    s.flowchart_id = chart.id;
    s.node_id = chart.entry;
    s.consecutive_non_advances = 0;
    s.redirect_depth = 0;
    s.visited.clear();
    settle(s, parts);
    return join_parts(parts);
}

void Engine::settle(Session& s, std::vector<std::string>& parts) const {
    while (true) {
        const auto& chart = library().at(s.flowchart_id);
        const Node* node = chart.find(s.node_id);
        if (node == nullptr) throw InvalidFlowchart("node " + s.node_id + " missing from " + chart.id);
        s.visited.push_back({chart.id, node->id});
        switch (node->kind) {
        case NodeKind::Question:
            s.consecutive_non_advances = 0;
            parts.push_back(compose_reply(ComposeMode::Convey, node->text, *composer_));
            return;
        case NodeKind::Action:
            s.phase = Phase::Completed;
            s.recommendation = node->text;
            s.terminal_node_id = node->id;
            parts.push_back(compose_reply(ComposeMode::Convey, node->text, *composer_, {{}, true}));
            return;
        case NodeKind::Info: {
            if (!node->text.empty())
                parts.push_back(compose_reply(ComposeMode::Convey, node->text, *composer_, {{}, true}));
            const Edge* next = chart.follow(node->id, Condition::Unconditional);
            if (next == nullptr) throw InvalidFlowchart("info node " + node->id + " has no successor");
            s.node_id = next->to;
            break;
        }
        case NodeKind::Redirect: {
            if (!node->text.empty())
                parts.push_back(compose_reply(ComposeMode::Convey, node->text, *composer_, {{}, true}));
            const Flowchart* target = library().find(node->target);
            if (target == nullptr) {
                const bool external = library().is_external(node->target) ||
                                      std::find(chart.external_targets.begin(), chart.external_targets.end(),
                                                node->target) != chart.external_targets.end();
                if (!external)
                    throw UnresolvableRedirect("redirect " + chart.id + "/" + node->id + " targets unknown flowchart '" +
                                               node->target + "'");
                s.phase = Phase::NoFlowchartEscalation;
                s.terminal_node_id = node->id;
                parts.push_back("The next step uses the '" + node->target +
                                "' protocol, which is not available here. " + std::string(kNoFlowchart));
                return;
            }
            if (s.redirect_depth + 2 > config_.redirect_limit)
                throw RedirectDepthExceeded("redirect from " + chart.id + " to " + target->id + " would visit more than " +
                                            std::to_string(config_.redirect_limit) + " flowcharts");
            ++s.redirect_depth;
            parts.push_back("Let's continue with the " + target->name + " protocol.");
            s.flowchart_id = target->id;
            s.node_id = target->entry;
            break;
        }
        }
    }
}

std::string Engine::on_answer(Session& s, std::string_view text) const {
    const auto& chart = library().at(s.flowchart_id);
    const Node* node = chart.find(s.node_id);
    if (node == nullptr || node->kind != NodeKind::Question)
        throw InvalidFlowchart("session is not positioned on a question node");

    AxisVerdict verdict;
    try {
        verdict = classify_response(node->text, text, *classifier_, config_.malformed_retries);
    } catch (const MalformedStructuredOutput& e) {
        throw ClassifierFailure(std::string("classifier output stayed malformed: ") + e.what());
    }
    const auto action = derive_action(verdict);
    s.trail.push_back({patient_turns(s), chart.id, node->id, node->text, std::string(text), verdict, action, clock_()});

    if (action.kind == ActionKind::Advance) {
        const Edge* edge = chart.follow(node->id, to_condition(action.answer));
        if (edge == nullptr) throw InvalidFlowchart("question " + node->id + " lacks a branch");
        s.node_id = edge->to;
        std::vector<std::string> parts;
        settle(s, parts);
        return join_parts(parts);
    }

    ++s.consecutive_non_advances;
    if (s.consecutive_non_advances >= config_.stall_limit) {
        s.phase = Phase::StalledEscalation;
        return std::string(kStalled);
    }
    const auto mode = action.kind == ActionKind::ConfirmUncertain ? ComposeMode::Confirm : ComposeMode::ReAsk;
    return compose_reply(mode, node->text, *composer_, {text, false});
}

TurnResult Engine::choose_flowchart(const Session& in, std::string_view flowchart_id) const {
    if (is_closed(in.phase)) throw SessionClosed("session " + in.id + " is closed");
    if (in.phase != Phase::Navigating || !in.trail.empty() || in.redirect_depth != 0)
        throw InvalidChartSwitch("the flowchart can only be changed before the first answer");
    const auto& shown = in.selection->candidates_shown;
    if (std::none_of(shown.begin(), shown.end(), [&](const RankedCandidate& c) { return c.flowchart_id == flowchart_id; }))
        throw InvalidChartSwitch("'" + std::string(flowchart_id) + "' is not one of the offered alternatives");
    Session s = in;
    s.selection->flowchart_id = std::string(flowchart_id);
    auto reply = enter_chart(s, std::string(flowchart_id));
    say(s, reply);
    return {std::move(s), std::move(reply)};
}

std::optional<std::string> Engine::current_question(const Session& s) const {
    if (s.phase != Phase::Navigating) return std::nullopt;
    const auto* chart = library().find(s.flowchart_id);
    const auto* node = chart ? chart->find(s.node_id) : nullptr;
    if (node == nullptr) return std::nullopt;
    return node->text;
}

std::optional<VisitedNode> replay_trail(const std::vector<TrailEntry>& trail, const FlowchartLibrary& lib,
                                        const VisitedNode& start) {
    VisitedNode at = start;
    const auto pass_through = [&]() -> bool {
        // Follow Info edges and resolvable redirects to the next stopping node.
        for (int guard = 0; guard < 10000; ++guard) {
            const auto* chart = lib.find(at.flowchart_id);
            const auto* node = chart ? chart->find(at.node_id) : nullptr;
            if (node == nullptr) return false;
            if (node->kind == NodeKind::Info) {
                const auto* e = chart->follow(node->id, Condition::Unconditional);
                if (e == nullptr) return false;
                at.node_id = e->to;
            } else if (node->kind == NodeKind::Redirect && lib.find(node->target) != nullptr) {
                at = {node->target, lib.at(node->target).entry};
            } else {
                return true;
            }
        }
        return false;
    };
    if (!pass_through()) return std::nullopt;
    for (const auto& e : trail) {
        if (e.flowchart_id != at.flowchart_id || e.node_id != at.node_id) return std::nullopt;
        if (e.action.kind != ActionKind::Advance) continue;
        const auto* edge = lib.at(at.flowchart_id).follow(at.node_id, to_condition(e.action.answer));
        if (edge == nullptr) return std::nullopt;
        at.node_id = edge->to;
        if (!pass_through()) return std::nullopt;
    }
    return at;
}

} // namespace triage
