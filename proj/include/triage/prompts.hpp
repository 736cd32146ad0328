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

// Prompt templates for every provider-backed agent and generator.
// Placeholders are written {name}; each template has a fixed set.

#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace triage {

enum class PromptId {
    RetrievalAgent,
    DecisionAgent,
    ChatConvey,
    ChatReAsk,
    ChatConfirm,
    GenBriefOpening,
    GenDetailedOpening,
    GenPatientResponse,
};

inline constexpr std::array kAllPromptIds{
    PromptId::RetrievalAgent,  PromptId::DecisionAgent,      PromptId::ChatConvey,
    PromptId::ChatReAsk,       PromptId::ChatConfirm,        PromptId::GenBriefOpening,
    PromptId::GenDetailedOpening, PromptId::GenPatientResponse,
};

/// "retrieval_agent", "decision_agent", "chat_convey", ...
[[nodiscard]] std::string_view to_string(PromptId id) noexcept;

struct PromptTemplate {
    PromptId id;
    std::string_view text;
};

[[nodiscard]] const PromptTemplate& prompt_template(PromptId id) noexcept;

/// Placeholder names appearing in `text` (the part between braces).
[[nodiscard]] std::set<std::string> placeholders(std::string_view text);

using PromptValues = std::map<std::string, std::string, std::less<>>;

/// Substitutes every placeholder. Throws TemplateError if a placeholder has
/// no value or a value names no placeholder.
[[nodiscard]] std::string render(PromptId id, const PromptValues& values);

/// The four decision axes as shown to the decision agent, one per line.
[[nodiscard]] std::string_view decision_axes_text() noexcept;

} // namespace triage
