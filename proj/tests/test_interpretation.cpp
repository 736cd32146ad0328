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
#include "triage/interpretation.hpp"

#include <doctest/doctest.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace triage;
using nlohmann::json;

namespace {

/// Independent restatement of the decision table as an explicit case split.
std::string expected_action(bool on_topic, bool answered, AxisAnswer a, bool uncertain) {
    if (!on_topic) return "RestateOffTopic";
    if (uncertain) return "ConfirmUncertain";
    if (!answered) return "Clarify";
    switch (a) {
    case AxisAnswer::Yes: return "Advance(Yes)";
    case AxisAnswer::No: return "Advance(No)";
    case AxisAnswer::Absent: break;
    }
    return "malformed";
}

class CannedClassifier final : public Classifier {
  public:
    explicit CannedClassifier(std::vector<std::string> outputs) : outputs_(std::move(outputs)) {}
    std::string classify(std::string_view, std::string_view) const override {
        ++calls;
        return outputs_.at(std::min(calls - 1, outputs_.size() - 1));
    }
    std::string id() const override { return "canned"; }
    mutable std::size_t calls = 0;

  private:
    std::vector<std::string> outputs_;
};

const std::string kWire = R"({"isOnTopic":"Yes","isAnswered":"Yes","actualAnswer":"No","isUncertain":"No"})";

} // namespace

TEST_CASE("derive_action matches the decision table on every well-formed verdict") {
    const auto all = all_verdicts();
    CHECK(all.size() == 24);
    int well_formed = 0, advances = 0;
    for (const bool on : {false, true})
        for (const bool ans : {false, true})
            for (const auto a : {AxisAnswer::Yes, AxisAnswer::No, AxisAnswer::Absent})
                for (const bool unc : {false, true}) {
                    const AxisVerdict v{on, ans, a, unc};
                    CHECK(std::count(all.begin(), all.end(), v) == 1);
                    if (!is_well_formed(v)) continue;
                    ++well_formed;
                    const auto got = derive_action(v);
                    CHECK(to_string(got) == expected_action(on, ans, a, unc));
                    if (got.kind == ActionKind::Advance) {
                        ++advances;
                        CHECK((on && ans && !unc && a != AxisAnswer::Absent));
                    }
                }
    CHECK(well_formed == 20);
    CHECK(advances == 2);
}

TEST_CASE("decision examples") {
    CHECK(derive_action({true, true, AxisAnswer::No, false}) == NavigationAction::advance(Answer::No));
    CHECK(derive_action({true, true, AxisAnswer::Yes, true}).kind == ActionKind::ConfirmUncertain);
    for (const bool ans : {false, true})
        for (const auto a : {AxisAnswer::Yes, AxisAnswer::No})
            for (const bool unc : {false, true})
                CHECK(derive_action({false, ans, a, unc}).kind == ActionKind::RestateOffTopic);
    for (const auto* s : {"Advance(Yes)", "Advance(No)", "ConfirmUncertain", "Clarify", "RestateOffTopic"})
        CHECK(to_string(parse_action(s)) == s);
}

TEST_CASE("structured output parsing") {
    const AxisVerdict no{true, true, AxisAnswer::No, false};
    CHECK(parse_structured_output(kWire) == no);
    CHECK(parse_structured_output("```json\n" + kWire + "\n```") == no);
    CHECK(parse_structured_output(R"(Here you go: {"ISONTOPIC":"yes","isanswered":"YES","actualanswer":"no","isUncertain":"no"} done)") == no);
    CHECK(parse_structured_output(R"({"isOnTopic":"No","isAnswered":"No","actualAnswer":null,"isUncertain":"No"})") ==
          AxisVerdict{false, false, AxisAnswer::Absent, false});
    for (const auto& v : all_verdicts()) {
        if (!is_well_formed(v)) continue;
        CHECK(parse_structured_output(verdict_to_wire(v).dump()) == v);
        CHECK(verdict_from_json(verdict_to_json(v)) == v);
    }
    const char* bad[] = {
        "no json here",
        R"({"isOnTopic":"Yes","isAnswered":"Yes","actualAnswer":"No"})",
        R"({"isOnTopic":"Yes","isAnswered":"Yes","actualAnswer":"No","isUncertain":"No","extra":"No"})",
        R"({"isOnTopic":"Perhaps","isAnswered":"Yes","actualAnswer":"No","isUncertain":"No"})",
        R"({"isOnTopic":"Yes","isAnswered":"Yes","actualAnswer":null,"isUncertain":"No"})",
        R"({"isOnTopic":"Yes","isAnswered":"Yes","actualAnswer":"No","isUncertain":"No")",
    };
    for (const auto* raw : bad) {
        CAPTURE(raw);
        CHECK_THROWS_AS((void)parse_structured_output(raw), MalformedStructuredOutput);
    }
}

TEST_CASE("classify_response retries malformed output, then gives up") {
    CannedClassifier flaky({"garbage", kWire});
    CHECK(classify_response("Q?", "No", flaky).actual_answer == AxisAnswer::No);
    CHECK(flaky.calls == 2);
    CannedClassifier broken({"garbage"});
    CHECK_THROWS_AS((void)classify_response("Q?", "No", broken, 2), MalformedStructuredOutput);
    CHECK(broken.calls == 3);
    CHECK_THROWS_AS((void)classify_response("  ", "No", broken), ClassifierFailure);
}

TEST_CASE("rule-based classifier examples") {
    const RuleBasedClassifier rules;
    const auto verdict = [&](std::string_view q, std::string_view r) { return classify_response(q, r, rules); };

    CHECK(verdict("Have you had similar episodes of pain that come and go?", "No, this is the first time") ==
          AxisVerdict{true, true, AxisAnswer::No, false});
    CHECK(verdict("Are you over age 50?", "") == AxisVerdict{false, false, AxisAnswer::Absent, false});
    CHECK(verdict("Have you checked your temperature?", "I'm not sure. I haven't checked yet.") ==
          AxisVerdict{true, false, AxisAnswer::Absent, true});
    CHECK(verdict("Are you over age 50?", "Yep.") == AxisVerdict{true, true, AxisAnswer::Yes, false});
    CHECK(verdict("Do you have a rash?", "Oh, I've been organizing my closet lately.") ==
          AxisVerdict{false, false, AxisAnswer::Absent, false});
    const auto weak = verdict("Could you be pregnant?", "I doubt it, but I guess it's possible");
    CHECK(weak.is_on_topic);
    CHECK(weak.is_uncertain);
    CHECK(derive_action(weak).kind == ActionKind::ConfirmUncertain);
    // Earliest polarity phrase wins.
    CHECK(verdict("Do you smoke?", "Nope, yes was never my answer").actual_answer == AxisAnswer::No);
    // Content-word overlap alone is on topic but not an answer.
    const auto overlap = verdict("Do you have a headache?", "The headache comes and goes");
    CHECK(overlap.is_on_topic);
    CHECK_FALSE(overlap.is_answered);
    CHECK(rule_based_classify("Q?", "yes") == rule_based_classify("Q?", "yes"));
}

TEST_CASE("lexicon file extends the defaults") {
    const auto file = std::filesystem::temp_directory_path() / "triage_lexicon_test.json";
    std::ofstream(file) << R"({"yes":["affirmative"],"hedge":["who knows"]})";
    const auto lex = Lexicon::load(file);
    CHECK(lex.yes.size() == Lexicon::defaults().yes.size() + 1);
    CHECK(rule_based_classify("Q?", "affirmative", lex).actual_answer == AxisAnswer::Yes);
    CHECK(rule_based_classify("Q?", "who knows", lex).is_uncertain);
    std::ofstream(file) << R"({"yes":"affirmative"})";
    CHECK_THROWS_AS((void)Lexicon::load(file), ConfigError);
    std::filesystem::remove(file);
}

// Regression golden over the transcribed sample utterances. The expected
// verdicts were recorded from this classifier; set TRIAGE_UPDATE_GOLDEN=1
// to rewrite the file after an intentional lexicon change.
TEST_CASE("rule-based verdicts on the sample utterances match the golden file") {
    const auto samples = testing::data_dir() / "sample_responses.jsonl";
    const auto golden = testing::data_dir() / "sample_verdicts.golden.jsonl";
    std::istringstream in(testing::read_file(samples));
    std::vector<std::pair<std::string, AxisVerdict>> got;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        got.emplace_back(j.at("id").get<std::string>(),
                         rule_based_classify(j.at("question").get<std::string>(), j.at("text").get<std::string>()));
    }
    REQUIRE(got.size() >= 60);
    if (const char* u = std::getenv("TRIAGE_UPDATE_GOLDEN"); u && std::string(u) == "1") {
        std::ofstream out(golden);
        for (const auto& [id, v] : got) out << json{{"id", id}, {"verdict", verdict_to_json(v)}}.dump() << '\n';
    }
    std::istringstream gin(testing::read_file(golden));
    std::size_t i = 0;
    for (std::string line; std::getline(gin, line);) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        REQUIRE(i < got.size());
        CHECK(j.at("id") == got[i].first);
        CHECK(verdict_from_json(j.at("verdict")) == got[i].second);
        ++i;
    }
    CHECK(i == got.size());
}
