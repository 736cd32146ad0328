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

#include "triage/prompts.hpp"

#include "triage/error.hpp"

namespace triage {

namespace {

constexpr std::string_view kAxes =
    "isOnTopic: Return \"Yes\" if the response is relevant to the question, otherwise return \"No\".\n"
    "isAnswered: Return \"Yes\" if the response provides a yes or no answer to the question, otherwise "
    "return \"No\".\n"
    "actualAnswer: Return \"Yes\" if the patient answers the question affirmatively, \"No\" if the patient "
    "answers negatively.\n"
    "isUncertain: Return \"Yes\" if the response expresses uncertainty (e.g., 'maybe', 'not sure', "
    "'probably'), otherwise return \"No\".";

constexpr std::string_view kChatRules =
    "Rules: 1. Your response must fully adhere to the provided context, no additional information is allowed.\n"
    "2. Be concise and empathetic, avoid excessive repetition.";

const std::array<PromptTemplate, 8> kTemplates{{
    {PromptId::RetrievalAgent,
     "Your role: You are an assistant supporting an Emergency Department nurse in patient triage.\n"
     "Your task: Based on the patient's input, identify and return only the name of the appropriate "
     "flowchart to use from the provided context.\n"
     "If there is no relevant flowchart, return: \"no flowchart available\".\n"
     "Context:\n{candidates}\n"
     "Patient input: {query}"},
    {PromptId::DecisionAgent,
     "Your role: You are a decision making assistant supporting an Emergency Department nurse in patient "
     "triage.\n"
     "Your task: Based on the patient input, decide whether the patient provided an answer to the question "
     "from the triage protocol below.\n"
     "{axes}\n"
     "Respond with a single JSON object with exactly the keys isOnTopic, isAnswered, actualAnswer and "
     "isUncertain. Use \"Yes\" or \"No\" for each value; actualAnswer is null when there is no answer.\n"
     "Triage protocol: {question}\n"
     "Patient input: {response}"},
    {PromptId::ChatConvey,
     "Your role: You are a nurse responsible for online triage in the Emergency Department.\n"
     "Your task: Convey this to the patient:\n{node_text}\n"},
    {PromptId::ChatReAsk,
     "Your role: You are a nurse responsible for online triage in the Emergency Department.\n"
     "Your task: Patient's response is off-topic, ask this again:\n{node_text}\n"
     "Patient's response: {patient_message}\n"},
    {PromptId::ChatConfirm,
     "Your role: You are a nurse responsible for online triage in the Emergency Department.\n"
     "Your task: Patient's response indicates uncertainty, try confirming this:\n{node_text}\n"
     "Patient's response: {patient_message}\n"},
    {PromptId::GenBriefOpening,
     "Task: Generate {num} distinct sets of patient demographics and BRIEF opening statements according to "
     "the following flowchart.\n"
     "Flowchart: {flowchart}\n"
     "Template for each set:\n"
     "Sex: Male/Female\n"
     "Age: A number followed by a unit (e.g., 25 years, 1 month)\n"
     "Opening Statement: A conversational statement (in quotes) that the patient would use to raise their "
     "concern via online triage.\n"
     "Rules: 1. Ensure diversity in age, sex, and opening statements across the sets. 2. Each opening "
     "statement should be no more than 25 words in length.{extra_rules}"},
    {PromptId::GenDetailedOpening,
     "Task: Generate {num} distinct sets of patient demographics and DESCRIPTIVE opening statements "
     "according to the following flowchart.\n"
     "Flowchart: {flowchart}\n"
     "Template for each set:\n"
     "Sex: Male/Female\n"
     "Age: A number followed by a unit (e.g., 25 years, 1 month)\n"
     "Opening Statement: A conversational statement (in quotes) that the patient would use to raise their "
     "concern via online triage.\n"
     "Rules: 1. Ensure diversity in age, sex, and opening statements across the sets. 2. Include relevant "
     "context, details, or accompanying symptoms in the opening statements. 3. Each opening statement "
     "should be at least 50 words in length.{extra_rules}"},
    {PromptId::GenPatientResponse,
     "Task: Provide {num} distinct ways to respond{answer} to the following question.\n"
     "Question: {question}\n"
     "Rules: 1. Responses should reflect natural and everyday language, as patients would phrase their "
     "answers conversationally with a triage nurse online.\n"
     "2. Responses should be {pattern}: {pattern_definition}\n"
     "Write one numbered response per line."},
}};

} // namespace

std::string_view to_string(PromptId id) noexcept {
    switch (id) {
    case PromptId::RetrievalAgent: return "retrieval_agent";
    case PromptId::DecisionAgent: return "decision_agent";
    case PromptId::ChatConvey: return "chat_convey";
    case PromptId::ChatReAsk: return "chat_reask";
    case PromptId::ChatConfirm: return "chat_confirm";
    case PromptId::GenBriefOpening: return "gen_brief_opening";
    case PromptId::GenDetailedOpening: return "gen_detailed_opening";
    case PromptId::GenPatientResponse: return "gen_patient_response";
    }
    return "unknown";
}

const PromptTemplate& prompt_template(PromptId id) noexcept {
    return kTemplates[static_cast<std::size_t>(id)];
}

std::set<std::string> placeholders(std::string_view text) {
    std::set<std::string> out;
    for (std::size_t i = text.find('{'); i != std::string_view::npos; i = text.find('{', i + 1)) {
        const auto close = text.find('}', i);
        if (close == std::string_view::npos) break;
        out.emplace(text.substr(i + 1, close - i - 1));
    }
    return out;
}

std::string render(PromptId id, const PromptValues& values) {
    const auto text = prompt_template(id).text;
    const auto names = placeholders(text);
    for (const auto& [k, v] : values)
        if (!names.contains(k))
            throw TemplateError(std::string(to_string(id)) + " has no placeholder {" + k + "}");
    std::string out;
    out.reserve(text.size() + 256);
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find('{', pos);
        if (open == std::string_view::npos) {
            out.append(text.substr(pos));
            break;
        }
        const auto close = text.find('}', open);
        out.append(text.substr(pos, open - pos));
        const auto name = text.substr(open + 1, close - open - 1);
        const auto it = values.find(name);
        if (it == values.end())
            throw TemplateError(std::string(to_string(id)) + " is missing a value for {" + std::string(name) + "}");
        out.append(it->second);
        pos = close + 1;
    }
    // Chat templates share the same rules block.
    if (id == PromptId::ChatConvey || id == PromptId::ChatReAsk || id == PromptId::ChatConfirm)
        out.append(kChatRules);
    return out;
}

std::string_view decision_axes_text() noexcept { return kAxes; }

} // namespace triage
