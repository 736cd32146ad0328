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

#include "triage/error.hpp"
#include "triage/prompts.hpp"

#include <doctest/doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

using namespace triage;

namespace {

/// Every combination of two fixture values per placeholder.
std::vector<PromptValues> assignments(const std::set<std::string>& names) {
    std::vector<PromptValues> out{{}};
    for (const auto& name : names) {
        std::vector<PromptValues> next;
        for (const auto& base : out)
            for (const std::string v : {"alpha", "beta gamma"}) {
                auto copy = base;
                copy[name] = v + " " + name;
                next.push_back(std::move(copy));
            }
        out = std::move(next);
    }
    return out;
}

} // namespace

TEST_CASE("placeholder sets per template") {
    CHECK(placeholders(prompt_template(PromptId::RetrievalAgent).text) == std::set<std::string>{"candidates", "query"});
    CHECK(placeholders(prompt_template(PromptId::DecisionAgent).text) ==
          std::set<std::string>{"axes", "question", "response"});
    CHECK(placeholders(prompt_template(PromptId::ChatConvey).text) == std::set<std::string>{"node_text"});
    CHECK(placeholders(prompt_template(PromptId::ChatReAsk).text) ==
          std::set<std::string>{"node_text", "patient_message"});
    CHECK(placeholders(prompt_template(PromptId::GenBriefOpening).text) ==
          std::set<std::string>{"extra_rules", "flowchart", "num"});
    CHECK(placeholders(prompt_template(PromptId::GenPatientResponse).text) ==
          std::set<std::string>{"answer", "num", "pattern", "pattern_definition", "question"});
    for (const auto id : kAllPromptIds) {
        CHECK(prompt_template(id).id == id);
        CHECK_FALSE(to_string(id).empty());
    }
}

TEST_CASE("render substitutes every placeholder") {
    const auto p = render(PromptId::RetrievalAgent, {{"candidates", "Fever: high temperature"}, {"query", "I feel hot"}});
    CHECK(p.find("Fever: high temperature") != std::string::npos);
    CHECK(p.find("Patient input: I feel hot") != std::string::npos);
    CHECK(p.find("no flowchart available") != std::string::npos);
    CHECK(p.find('{') == std::string::npos);

    const auto c = render(PromptId::ChatConfirm, {{"node_text", "Do you have a fever?"}, {"patient_message", "maybe"}});
    CHECK(c.find("no additional information is allowed") != std::string::npos);
    CHECK(c.find("Do you have a fever?") != std::string::npos);
}

TEST_CASE("missing or unknown values throw") {
    CHECK_THROWS_AS((void)render(PromptId::ChatConvey, {}), TemplateError);
    CHECK_THROWS_AS((void)render(PromptId::ChatConvey, {{"node_text", "x"}, {"extra", "y"}}), TemplateError);
    CHECK_THROWS_AS((void)render(PromptId::RetrievalAgent, {{"query", "x"}}), TemplateError);
}

TEST_CASE("rendering is injective over fixture assignments") {
    for (const auto id : kAllPromptIds) {
        CAPTURE(to_string(id));
        const auto all = assignments(placeholders(prompt_template(id).text));
        std::set<std::string> rendered;
        for (const auto& values : all) rendered.insert(render(id, values));
        CHECK(rendered.size() == all.size());
    }
}

TEST_CASE("axes text names the four axes") {
    const std::string axes(decision_axes_text());
    for (const auto* key : {"isOnTopic", "isAnswered", "actualAnswer", "isUncertain"})
        CHECK(axes.find(key) != std::string::npos);
    CHECK(std::count(axes.begin(), axes.end(), '\n') == 3);
}
