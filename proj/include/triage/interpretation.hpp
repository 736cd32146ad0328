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

// Decision agent: four-axis verdicts on a patient utterance and the
// navigation action they imply.

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

enum class AxisAnswer { Yes, No, Absent };

[[nodiscard]] std::string_view to_string(AxisAnswer a) noexcept;

struct AxisVerdict {
    bool is_on_topic = false;
    bool is_answered = false;
    AxisAnswer actual_answer = AxisAnswer::Absent;
    bool is_uncertain = false;

    bool operator==(const AxisVerdict&) const = default;
};

/// False only for is_answered with no actual answer.
[[nodiscard]] constexpr bool is_well_formed(const AxisVerdict& v) noexcept {
    return !(v.is_answered && v.actual_answer == AxisAnswer::Absent);
}

/// All 24 raw combinations, malformed ones included, in a fixed order.
[[nodiscard]] std::vector<AxisVerdict> all_verdicts();

enum class ActionKind { Advance, ConfirmUncertain, Clarify, RestateOffTopic };

struct NavigationAction {
    ActionKind kind = ActionKind::Clarify;
    Answer answer = Answer::Yes; // meaningful for Advance only

    [[nodiscard]] static NavigationAction advance(Answer a) noexcept { return {ActionKind::Advance, a}; }
    bool operator==(const NavigationAction& o) const noexcept {
        return kind == o.kind && (kind != ActionKind::Advance || answer == o.answer);
    }
};

/// "Advance(Yes)", "Advance(No)", "ConfirmUncertain", "Clarify", "RestateOffTopic".
[[nodiscard]] std::string to_string(const NavigationAction& a);
[[nodiscard]] NavigationAction parse_action(std::string_view s);

/// Priority: off-topic, then uncertain, then a definite answer, else clarify.
[[nodiscard]] NavigationAction derive_action(const AxisVerdict& v) noexcept;

/// Wire form {"isOnTopic":"Yes"|"No", "isAnswered":..., "actualAnswer":"Yes"|"No"|null, "isUncertain":...}.
[[nodiscard]] nlohmann::json verdict_to_wire(const AxisVerdict& v);
/// Strict parse of the wire form. Keys and Yes/No values are matched
/// case-insensitively; a JSON object embedded in surrounding prose or a
/// code fence is accepted. Throws MalformedStructuredOutput.
[[nodiscard]] AxisVerdict parse_structured_output(std::string_view raw);

/// Trail form with snake_case keys and JSON booleans.
[[nodiscard]] nlohmann::json verdict_to_json(const AxisVerdict& v);
[[nodiscard]] AxisVerdict verdict_from_json(const nlohmann::json& j);

/// Phrase lists for the rule-based classifier. Phrases are matched as whole
/// token sequences after lowercasing and quote folding.
struct Lexicon {
    std::vector<std::string> hedge;
    std::vector<std::string> yes;
    std::vector<std::string> no;

    [[nodiscard]] static const Lexicon& defaults();
    /// Defaults extended by a JSON file {"hedge":[...],"yes":[...],"no":[...]}.
    /// Throws ConfigError.
    [[nodiscard]] static Lexicon load(const std::filesystem::path& file);
};

[[nodiscard]] AxisVerdict rule_based_classify(std::string_view question, std::string_view response,
                                              const Lexicon& lexicon = Lexicon::defaults());

/// Returns raw structured output; callers parse it with `classify_response`.
class Classifier {
  public:
    virtual ~Classifier() = default;
    [[nodiscard]] virtual std::string classify(std::string_view question, std::string_view response) const = 0;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual bool reachable() const { return true; }
};

class RuleBasedClassifier final : public Classifier {
  public:
    explicit RuleBasedClassifier(Lexicon lexicon = Lexicon::defaults()) : lexicon_(std::move(lexicon)) {}

    [[nodiscard]] std::string classify(std::string_view question, std::string_view response) const override;
    [[nodiscard]] std::string id() const override { return "rule-based"; }

  private:
    Lexicon lexicon_;
};

/// Decision-agent prompt sent through a text generator at temperature 0.
class ProviderClassifier final : public Classifier {
  public:
    explicit ProviderClassifier(std::shared_ptr<const TextGenerator> generator, double temperature = 0.0)
        : generator_(std::move(generator)), temperature_(temperature) {}

    [[nodiscard]] std::string classify(std::string_view question, std::string_view response) const override;
    [[nodiscard]] std::string id() const override { return "provider:" + generator_->id(); }
    [[nodiscard]] bool reachable() const override { return generator_->reachable(); }

  private:
    std::shared_ptr<const TextGenerator> generator_;
    double temperature_;
};

/// Asks `c` and parses its answer. Malformed output is re-requested up to
/// `malformed_retries` times before MalformedStructuredOutput escapes;
/// provider errors propagate unchanged.
[[nodiscard]] AxisVerdict classify_response(std::string_view question, std::string_view response,
                                            const Classifier& c, int malformed_retries = 2);

} // namespace triage
