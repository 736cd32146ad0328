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

#include "support.hpp"

#include "triage/error.hpp"

#include <doctest/doctest.h>

#include <random>
#include <set>

using namespace triage;
using namespace triage::testing;

namespace {

const std::string kStomach = "I've been having a stomachache for a few hours now";
const std::string kFirstQuestion = "Have you had similar episodes of pain that come and go?";

class FixedClassifier final : public Classifier {
  public:
    explicit FixedClassifier(std::string raw) : raw_(std::move(raw)) {}
    std::string classify(std::string_view, std::string_view) const override { return raw_; }
    std::string id() const override { return "fixed"; }

  private:
    std::string raw_;
};

class FailingClassifier final : public Classifier {
  public:
    std::string classify(std::string_view, std::string_view) const override { throw ProviderUnavailable("down"); }
    std::string id() const override { return "down"; }
};

class SentinelSelector final : public Selector {
  public:
    std::string select(const std::vector<SelectorCandidate>&, std::string_view) const override {
        return std::string(kNoFlowchartSentinel);
    }
    std::string id() const override { return "none"; }
};

Engine engine_with(std::shared_ptr<const Classifier> c, EngineConfig config = {},
                   std::shared_ptr<const FlowchartLibrary> lib = fixture_library()) {
    return Engine(offline_retriever(lib), std::move(c), std::make_shared<TemplateComposer>(), config, counting_clock());
}

/// Two charts whose Yes branch redirects to the other one.
std::shared_ptr<const FlowchartLibrary> loop_library() {
    const auto chart = [](const std::string& id, const std::string& other) {
        return parse_flowchart(R"({"id":")" + id + R"(","name":")" + id + R"( Flowchart","description":"loop )" + id +
                               R"(","specialty":"Test","applicability":{"sexes":["male","female"],"age_min_months":0,"age_max_months":null},
            "entry":"N1","nodes":[{"id":"N1","kind":"question","text":"Go to )" + other + R"(?"},
            {"id":"F1","kind":"redirect","target":")" + other + R"("},{"id":"A1","kind":"action","text":"Stay home."}],
            "edges":[{"from":"N1","to":"F1","condition":"yes"},{"from":"N1","to":"A1","condition":"no"}]})");
    };
    return std::make_shared<const FlowchartLibrary>(std::vector<Flowchart>{chart("loop_a", "loop_b"), chart("loop_b", "loop_a")});
}

bool is_prefix(const auto& a, const auto& b) {
    return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
}

} // namespace

TEST_CASE("start_session") {
    const auto engine = offline_engine();
    const auto with = engine.start_session(Demographics{Sex::Male, 35, AgeUnit::Years});
    CHECK(with.session.phase == Phase::CollectingConcern);
    CHECK(with.session.transcript.size() == 1);
    CHECK(with.session.trail.empty());
    CHECK(engine.start_session(std::nullopt).session.phase == Phase::CollectingDemographics);
    CHECK_THROWS_AS((void)engine.start_session(Demographics{Sex::Male, 0, AgeUnit::Months}), InvalidDemographics);
    const auto id = with.session.id;
    CHECK(id.size() >= 32);
    CHECK(id.find_first_not_of("0123456789abcdef") == std::string::npos);
    std::set<std::string> ids;
    for (int i = 0; i < 200; ++i) ids.insert(new_session_id());
    CHECK(ids.size() == 200);
}

TEST_CASE("demographics are gathered one question at a time") {
    const auto engine = offline_engine();
    auto s = engine.start_session(std::nullopt).session;
    auto r = engine.submit_message(s, "banana");
    CHECK(r.session.phase == Phase::CollectingDemographics);
    CHECK_FALSE(r.session.pending_sex);
    r = engine.submit_message(r.session, "Male");
    CHECK(r.session.pending_sex == Sex::Male);
    r = engine.submit_message(r.session, "0 months");
    CHECK(r.session.phase == Phase::CollectingDemographics);
    r = engine.submit_message(r.session, "35 years");
    CHECK(r.session.phase == Phase::CollectingConcern);
    CHECK(r.session.demographics == Demographics{Sex::Male, 35, AgeUnit::Years});
    r = engine.submit_message(r.session, "   ");
    CHECK(r.session.phase == Phase::CollectingConcern);
}

TEST_CASE("the stomachache scenario") {
    const auto engine = offline_engine();
    auto r = engine.start_session(Demographics{Sex::Male, 35, AgeUnit::Years});
    r = engine.submit_message(r.session, kStomach);
    CHECK(r.session.phase == Phase::Navigating);
    CHECK(r.session.flowchart_id == "abdominal_pain_adult");
    CHECK(engine.current_question(r.session) == kFirstQuestion);
    CHECK(r.reply.find(kFirstQuestion) != std::string::npos);
    REQUIRE(r.session.selection);
    CHECK(r.session.selection->candidates_shown.size() == 3);

    const auto& chart = engine.library().at("abdominal_pain_adult");
    r = engine.submit_message(r.session, "No, this is the first time");
    REQUIRE(r.session.trail.size() == 1);
    const auto& e = r.session.trail[0];
    CHECK(e.node_id == "N1");
    CHECK(e.question_text == kFirstQuestion);
    CHECK(e.verdict == AxisVerdict{true, true, AxisAnswer::No, false});
    CHECK(e.action == NavigationAction::advance(Answer::No));
    CHECK(e.timestamp == "2026-01-01T00:00:00.000Z");
    CHECK(r.session.node_id == chart.follow("N1", Condition::No)->to);
    CHECK(r.session.phase == Phase::Navigating);
}

TEST_CASE("uncertain and off-topic replies, then stall escalation") {
    const auto engine = offline_engine();
    auto s = navigating(engine, "abdominal_pain_adult");
    REQUIRE(s.node_id == "N1");
    auto r = engine.submit_message(s, "I'm not sure");
    CHECK(r.session.node_id == "N1");
    CHECK(r.session.consecutive_non_advances == 1);
    CHECK(r.reply == std::string(kConfirmPrefix) + kFirstQuestion);
    CHECK(r.session.trail.back().action.kind == ActionKind::ConfirmUncertain);

    r = engine.submit_message(r.session, "My cat chases her tail all day.");
    CHECK(r.reply == std::string(kReAskPrefix) + kFirstQuestion);
    CHECK(r.session.consecutive_non_advances == 2);
    CHECK(r.session.phase == Phase::Navigating);
    r = engine.submit_message(r.session, "Did you see the game last night?");
    CHECK(r.session.phase == Phase::StalledEscalation);
    CHECK(r.session.trail.size() == 3);
    CHECK_THROWS_AS((void)engine.submit_message(r.session, "yes"), SessionClosed);

    // A definite answer resets the counter.
    r = engine.submit_message(s, "maybe");
    r = engine.submit_message(r.session, "no");
    CHECK(r.session.consecutive_non_advances == 0);
}

TEST_CASE("the engine advances only on Advance verdicts") {
    for (const auto& v : all_verdicts()) {
        if (!is_well_formed(v)) continue;
        const auto engine = engine_with(std::make_shared<FixedClassifier>(verdict_to_wire(v).dump()));
        const auto s = navigating(offline_engine(), "headache");
        REQUIRE(s.phase == Phase::Navigating);
        const auto r = engine.submit_message(s, "anything");
        const auto action = derive_action(v);
        CAPTURE(to_string(action));
        CHECK(r.session.trail.back().action == action);
        if (action.kind == ActionKind::Advance) {
            CHECK(r.session.node_id != s.node_id);
        } else {
            CHECK(r.session.node_id == s.node_id);
            CHECK(r.session.phase == Phase::Navigating);
        }
    }
}

TEST_CASE("malformed classifier output and provider errors") {
    const auto s = navigating(offline_engine(), "headache");
    const auto bad = engine_with(std::make_shared<FixedClassifier>("not json"));
    CHECK_THROWS_AS((void)bad.submit_message(s, "yes"), ClassifierFailure);
    const auto down = engine_with(std::make_shared<FailingClassifier>());
    CHECK_THROWS_AS((void)down.submit_message(s, "yes"), ProviderUnavailable);
}

TEST_CASE("every decision path of every chart is reproduced by scripted answers") {
    const auto engine = offline_engine();
    const auto& lib = engine.library();
    std::size_t paths = 0;
    for (const auto& [id, chart] : lib.charts()) {
        for (const auto& path : enumerate_paths(chart)) {
            CAPTURE(id);
            CAPTURE(path.terminal);
            auto s = navigating(engine, id);
            REQUIRE(s.flowchart_id == id);
            for (const auto& [node, answer] : path.answers) {
                REQUIRE(s.phase == Phase::Navigating);
                REQUIRE(s.flowchart_id == id);
                CHECK(s.node_id == node);
                s = engine.submit_message(s, answer == Answer::Yes ? "yes" : "no").session;
            }
            REQUIRE(s.trail.size() == path.answers.size());
            for (std::size_t i = 0; i < s.trail.size(); ++i) {
                CHECK(s.trail[i].node_id == path.answers[i].first);
                CHECK(s.trail[i].action == NavigationAction::advance(path.answers[i].second));
            }
            const Node* terminal = chart.find(path.terminal);
            REQUIRE(terminal != nullptr);
            CHECK(std::count(s.visited.begin(), s.visited.end(), VisitedNode{id, path.terminal}) == 1);
            if (terminal->kind == NodeKind::Action) {
                CHECK(s.phase == Phase::Completed);
                CHECK(s.terminal_node_id == path.terminal);
                CHECK(s.recommendation == terminal->text);
            } else if (lib.contains(terminal->target)) {
                CHECK(s.flowchart_id == terminal->target);
                CHECK(s.redirect_depth == 1);
                CHECK(s.visited[s.visited.size() - 1 - 0].flowchart_id == terminal->target);
            } else {
                CHECK(s.phase == Phase::NoFlowchartEscalation);
                CHECK(s.terminal_node_id == path.terminal);
            }
            const auto end = replay_trail(s.trail, lib, {id, chart.entry});
            REQUIRE(end);
            if (terminal->kind == NodeKind::Action || !lib.contains(terminal->target))
                CHECK(end->node_id == path.terminal);
            else
                CHECK(*end == VisitedNode{s.flowchart_id, s.node_id});
            ++paths;
        }
    }
    CHECK(paths >= 80);
}

TEST_CASE("redirect chains stop at the limit") {
    for (const int limit : {1, 2, 3, 5}) {
        CAPTURE(limit);
        const auto engine = engine_with(std::make_shared<RuleBasedClassifier>(), {3, limit, 2}, loop_library());
        auto s = engine.start_session(Demographics{Sex::Female, 30, AgeUnit::Years}).session;
        s = engine.submit_message(s, "loop loop_a").session;
        REQUIRE(s.phase == Phase::Navigating);
        int charts_visited = 1;
        bool stopped = false;
        for (int i = 0; i < 10 && !stopped; ++i) {
            try {
                const auto next = engine.submit_message(s, "yes").session;
                CHECK(next.redirect_depth == s.redirect_depth + 1);
                s = next;
                ++charts_visited;
            } catch (const RedirectDepthExceeded&) {
                stopped = true;
            }
        }
        CHECK(stopped);
        CHECK(charts_visited == limit);
        CHECK(s.phase == Phase::Navigating);
    }
}

TEST_CASE("a redirect to an unknown chart is an error unless declared external") {
    auto chart = engine_with(std::make_shared<RuleBasedClassifier>(), {}, loop_library()).library().at("loop_a");
    chart.id = "lonely";
    chart.nodes[1].target = "nowhere";
    const auto lib = std::make_shared<const FlowchartLibrary>(std::vector<Flowchart>{chart});
    const auto engine = engine_with(std::make_shared<RuleBasedClassifier>(), {}, lib);
    auto s = engine.submit_message(engine.start_session(Demographics{Sex::Male, 40, AgeUnit::Years}).session, "loop").session;
    REQUIRE(s.phase == Phase::Navigating);
    CHECK_THROWS_AS((void)engine.submit_message(s, "yes"), UnresolvableRedirect);

    const auto ext = std::make_shared<const FlowchartLibrary>(std::vector<Flowchart>{chart}, std::set<std::string>{"nowhere"});
    const auto engine2 = engine_with(std::make_shared<RuleBasedClassifier>(), {}, ext);
    s = engine2.submit_message(engine2.start_session(Demographics{Sex::Male, 40, AgeUnit::Years}).session, "loop").session;
    s = engine2.submit_message(s, "yes").session;
    CHECK(s.phase == Phase::NoFlowchartEscalation);
    CHECK(s.terminal_node_id == "F1");
}

TEST_CASE("no flowchart available escalates") {
    auto r = offline_retriever();
    r.selector = std::make_shared<SentinelSelector>();
    const Engine engine(r, std::make_shared<RuleBasedClassifier>(), std::make_shared<TemplateComposer>());
    auto s = engine.start_session(Demographics{Sex::Male, 35, AgeUnit::Years}).session;
    s = engine.submit_message(s, kStomach).session;
    CHECK(s.phase == Phase::NoFlowchartEscalation);
    CHECK(s.trail.empty());
    CHECK_THROWS_AS((void)engine.submit_message(s, "hello"), SessionClosed);
}

TEST_CASE("switching to an alternative chart") {
    const auto engine = offline_engine();
    auto s = engine.submit_message(engine.start_session(Demographics{Sex::Male, 35, AgeUnit::Years}).session, kStomach).session;
    REQUIRE(s.selection);
    const auto alt = s.selection->candidates_shown.at(1).flowchart_id;
    const auto switched = engine.choose_flowchart(s, alt);
    CHECK(switched.session.flowchart_id == alt);
    CHECK(switched.session.node_id == engine.library().at(alt).entry);
    CHECK(switched.session.trail.empty());
    CHECK(switched.session.transcript.size() == s.transcript.size() + 1);
    CHECK_THROWS_AS((void)engine.choose_flowchart(s, "testicle_pain_not_offered"), InvalidChartSwitch);
    const auto answered = engine.submit_message(s, "no").session;
    CHECK_THROWS_AS((void)engine.choose_flowchart(answered, alt), InvalidChartSwitch);
    const auto early = engine.start_session(std::nullopt).session;
    CHECK_THROWS_AS((void)engine.choose_flowchart(early, alt), InvalidChartSwitch);
}

TEST_CASE("sessions and trails round-trip through JSON") {
    const auto engine = offline_engine();
    auto s = navigating(engine, "abdominal_pain_adult");
    for (const auto* msg : {"maybe", "no", "no", "no", "no"}) {
        s = engine.submit_message(s, msg).session;
        CHECK(session_from_json(session_to_json(s)) == s);
        if (is_closed(s.phase)) break;
    }
    CHECK(s.phase == Phase::Completed);
    const auto jsonl = trail_to_jsonl(s.trail);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == static_cast<long>(s.trail.size()));
    CHECK(trail_from_jsonl(jsonl) == s.trail);
    for (std::size_t i = 1; i < s.trail.size(); ++i) CHECK(s.trail[i].turn_index > s.trail[i - 1].turn_index);
    const auto end = replay_trail(s.trail, engine.library(), {"abdominal_pain_adult", "N1"});
    REQUIRE(end);
    CHECK(end->node_id == s.terminal_node_id);
}

TEST_CASE("transcript and trail only grow under random operations") {
    const auto engine = offline_engine();
    const std::vector<std::string> pool{"yes", "no", "maybe", "I like turtles", "Yep.", "Nope", "I'm not sure",
                                        "female", "30 years", "headache", ""};
    std::mt19937 rng(1234);
    for (int run = 0; run < 60; ++run) {
        auto s = engine.start_session(rng() % 2 ? std::optional(Demographics{Sex::Female, 30, AgeUnit::Years})
                                                : std::nullopt)
                     .session;
        for (int step = 0; step < 25 && !is_closed(s.phase); ++step) {
            Session next;
            try {
                if (s.phase == Phase::Navigating && s.trail.empty() && rng() % 4 == 0 && s.selection &&
                    s.selection->candidates_shown.size() > 1)
                    next = engine.choose_flowchart(s, s.selection->candidates_shown[1].flowchart_id).session;
                else
                    next = engine.submit_message(s, pool[rng() % pool.size()]).session;
            } catch (const Error&) {
                continue;
            }
            CHECK(is_prefix(s.transcript, next.transcript));
            CHECK(is_prefix(s.trail, next.trail));
            CHECK(next.transcript.size() > s.transcript.size());
            s = std::move(next);
        }
    }
}

TEST_CASE("reply composition") {
    const std::string q = "Do you have a fever?";
    const TemplateComposer t;
    CHECK(compose_reply(ComposeMode::Convey, "See your doctor today.", t) == "See your doctor today.");
    CHECK(compose_reply(ComposeMode::ReAsk, q, t) == "Let's get back to the question: " + q);
    CHECK(compose_reply(ComposeMode::Confirm, q, t) == std::string(kConfirmPrefix) + q);

    const ProviderComposer chatty(std::make_shared<StubGenerator>("g", [](const GenerationRequest&) {
        return std::string("Let's talk about something else.");
    }));
    CHECK_THROWS_AS((void)chatty.compose(ComposeMode::ReAsk, q, {}), ComposerFailure);
    CHECK(compose_reply(ComposeMode::ReAsk, q, chatty) == std::string(kReAskPrefix) + q);
    const ProviderComposer faithful(std::make_shared<StubGenerator>("g", [q](const GenerationRequest& r) {
        return r.prompt.find("ask this again") != std::string::npos ? "I understand. " + q : q;
    }));
    CHECK(compose_reply(ComposeMode::ReAsk, q, faithful) == "I understand. " + q);
    const ProviderComposer broken(std::make_shared<StubGenerator>("none"));
    CHECK(compose_reply(ComposeMode::Confirm, q, broken) == std::string(kConfirmPrefix) + q);
    CHECK_THROWS_AS((void)compose_reply(ComposeMode::Convey, "  ", t), ComposerFailure);
}

TEST_CASE("phase names") {
    for (const auto p : {Phase::CollectingDemographics, Phase::CollectingConcern, Phase::Navigating, Phase::Completed,
                         Phase::NoFlowchartEscalation, Phase::StalledEscalation})
        CHECK(parse_phase(to_string(p)) == p);
    CHECK(to_string(Phase::StalledEscalation) == "stalled_escalation");
}
