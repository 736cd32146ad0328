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

// Session state machine: intake, retrieval, turn-by-turn navigation and
// the append-only decision trail.

#pragma once

#include "triage/interpretation.hpp"
#include "triage/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triage {

enum class Phase {
    CollectingDemographics,
    CollectingConcern,
    Navigating,
    Completed,
    NoFlowchartEscalation,
    StalledEscalation,
};

/// "collecting_demographics", "navigating", "stalled_escalation", ...
[[nodiscard]] std::string_view to_string(Phase p) noexcept;
[[nodiscard]] Phase parse_phase(std::string_view s);
[[nodiscard]] constexpr bool is_closed(Phase p) noexcept {
    return p == Phase::Completed || p == Phase::NoFlowchartEscalation || p == Phase::StalledEscalation;
}

enum class Speaker { System, Patient };

struct Message {
    Speaker speaker = Speaker::System;
    std::string text;

    bool operator==(const Message&) const = default;
};

struct TrailEntry {
    int turn_index = 0;
    std::string flowchart_id;
    std::string node_id;
    std::string question_text;
    std::string patient_utterance;
    AxisVerdict verdict;
    NavigationAction action;
    std::string timestamp;

    bool operator==(const TrailEntry&) const = default;
};

[[nodiscard]] nlohmann::json trail_entry_to_json(const TrailEntry& e);
[[nodiscard]] TrailEntry trail_entry_from_json(const nlohmann::json& j);
/// One compact JSON object per line, each terminated by '\n'.
[[nodiscard]] std::string trail_to_jsonl(const std::vector<TrailEntry>& trail);
[[nodiscard]] std::vector<TrailEntry> trail_from_jsonl(std::string_view jsonl);

struct VisitedNode {
    std::string flowchart_id;
    std::string node_id;

    bool operator==(const VisitedNode&) const = default;
};

struct Session {
    std::string id;
    std::optional<Demographics> demographics;
    std::optional<Sex> pending_sex; // first half of the demographics exchange
    Phase phase = Phase::CollectingDemographics;

    // Navigation position; after completion it still names the terminal.
    std::string flowchart_id;
    std::string node_id;
    int consecutive_non_advances = 0;
    int redirect_depth = 0;

    std::string opening_statement;
    std::string recommendation;
    std::string terminal_node_id;

    std::vector<Message> transcript;
    std::vector<TrailEntry> trail;
    std::vector<VisitedNode> visited;
    std::optional<Selection> selection;

    bool operator==(const Session&) const = default;
};

[[nodiscard]] nlohmann::json session_to_json(const Session& s);
[[nodiscard]] Session session_from_json(const nlohmann::json& j);

/// ≥128 bits from std::random_device, lowercase hex.
[[nodiscard]] std::string new_session_id();

// ---------------------------------------------------------------------------
// Reply composition

enum class ComposeMode { Convey, ReAsk, Confirm };

struct ComposeContext {
    std::string_view patient_message;
    /// Conveying an Action or Info node; its text need not appear verbatim.
    bool free_form = false;
};

class ReplyComposer {
  public:
    virtual ~ReplyComposer() = default;
    /// Throws ComposerFailure (or any gateway error) when it cannot phrase.
    [[nodiscard]] virtual std::string compose(ComposeMode mode, std::string_view node_text,
                                              const ComposeContext& ctx) const = 0;
    [[nodiscard]] virtual std::string id() const = 0;
};

inline constexpr std::string_view kReAskPrefix = "Let's get back to the question: ";
inline constexpr std::string_view kConfirmPrefix = "Just to confirm — ";

class TemplateComposer final : public ReplyComposer {
  public:
    [[nodiscard]] std::string compose(ComposeMode mode, std::string_view node_text,
                                      const ComposeContext& ctx) const override;
    [[nodiscard]] std::string id() const override { return "template"; }
};

/// Chat-agent prompts through a generator. Output that drops the node's
/// question text is rejected with ComposerFailure.
class ProviderComposer final : public ReplyComposer {
  public:
    explicit ProviderComposer(std::shared_ptr<const TextGenerator> generator, double temperature = 0.0)
        : generator_(std::move(generator)), temperature_(temperature) {}

    [[nodiscard]] std::string compose(ComposeMode mode, std::string_view node_text,
                                      const ComposeContext& ctx) const override;
    [[nodiscard]] std::string id() const override { return "provider:" + generator_->id(); }

  private:
    std::shared_ptr<const TextGenerator> generator_;
    double temperature_;
};

/// Composer output, or the template when the composer fails.
[[nodiscard]] std::string compose_reply(ComposeMode mode, std::string_view node_text, const ReplyComposer& composer,
                                        const ComposeContext& ctx = {});

// ---------------------------------------------------------------------------
// Engine

struct EngineConfig {
    int stall_limit = 3;
    /// Most charts one session may visit, counting the first.
    int redirect_limit = 5;
    int malformed_retries = 2;
};

using TimestampClock = std::function<std::string()>;

/// UTC "YYYY-MM-DDTHH:MM:SS.mmmZ".
[[nodiscard]] std::string utc_timestamp();

struct TurnResult {
    Session session;
    std::string reply;
};

/// Stateless driver; every call takes a session value and returns the next
/// one, so a failed turn leaves the caller's session untouched. Safe to
/// share across threads.
class Engine {
  public:
    Engine(Retriever retriever, std::shared_ptr<const Classifier> classifier,
           std::shared_ptr<const ReplyComposer> composer, EngineConfig config = {},
           TimestampClock clock = utc_timestamp);

    /// Throws InvalidDemographics.
    [[nodiscard]] TurnResult start_session(std::optional<Demographics> d, std::string id = new_session_id()) const;

    /// Throws SessionClosed, UnresolvableRedirect, RedirectDepthExceeded,
    /// ClassifierFailure, SelectorFailure, EmbedderFailure or a gateway error.
    [[nodiscard]] TurnResult submit_message(const Session& s, std::string_view text) const;

    /// Restarts navigation on one of the top alternatives; allowed only
    /// before the first navigating turn. Throws InvalidChartSwitch.
    [[nodiscard]] TurnResult choose_flowchart(const Session& s, std::string_view flowchart_id) const;

    [[nodiscard]] const FlowchartLibrary& library() const noexcept { return *retriever_.library; }
    [[nodiscard]] const Retriever& retriever() const noexcept { return retriever_; }
    [[nodiscard]] const Classifier& classifier() const noexcept { return *classifier_; }
    [[nodiscard]] const EngineConfig& config() const noexcept { return config_; }

    /// Question text of the current node, when navigating.
    [[nodiscard]] std::optional<std::string> current_question(const Session& s) const;

  private:
    std::string on_demographics(Session& s, std::string_view text) const;
    std::string on_concern(Session& s, std::string_view text) const;
    std::string on_answer(Session& s, std::string_view text) const;
    /// Walks from `node_id` through Info/Redirect nodes until a Question or
    /// Action, appending conveyed texts to `parts`.
    void settle(Session& s, std::vector<std::string>& parts) const;
    std::string enter_chart(Session& s, const std::string& flowchart_id) const;

    Retriever retriever_;
    std::shared_ptr<const Classifier> classifier_;
    std::shared_ptr<const ReplyComposer> composer_;
    EngineConfig config_;
    TimestampClock clock_;
};

/// Replays trail actions over the charts from `start`; returns the last
/// node reached, or nullopt if an action does not fit the graph.
[[nodiscard]] std::optional<VisitedNode> replay_trail(const std::vector<TrailEntry>& trail,
                                                      const FlowchartLibrary& lib, const VisitedNode& start);

} // namespace triage
