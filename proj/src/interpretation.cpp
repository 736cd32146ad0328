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

#include "triage/interpretation.hpp"

#include "triage/prompts.hpp"
#include "triage/text.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace triage {

using nlohmann::json;

std::string_view to_string(AxisAnswer a) noexcept {
    switch (a) {
    case AxisAnswer::Yes: return "Yes";
    case AxisAnswer::No: return "No";
    case AxisAnswer::Absent: return "Absent";
    }
    return "Absent";
}

std::vector<AxisVerdict> all_verdicts() {
    std::vector<AxisVerdict> out;
    for (bool on : {false, true})
        for (bool answered : {false, true})
            for (auto a : {AxisAnswer::Yes, AxisAnswer::No, AxisAnswer::Absent})
                for (bool unc : {false, true}) out.push_back({on, answered, a, unc});
    return out;
}

std::string to_string(const NavigationAction& a) {
    switch (a.kind) {
    case ActionKind::Advance: return a.answer == Answer::Yes ? "Advance(Yes)" : "Advance(No)";
    case ActionKind::ConfirmUncertain: return "ConfirmUncertain";
    case ActionKind::Clarify: return "Clarify";
    case ActionKind::RestateOffTopic: return "RestateOffTopic";
    }
    return "Clarify";
}

NavigationAction parse_action(std::string_view s) {
    if (s == "Advance(Yes)") return NavigationAction::advance(Answer::Yes);
    if (s == "Advance(No)") return NavigationAction::advance(Answer::No);
    if (s == "ConfirmUncertain") return {ActionKind::ConfirmUncertain};
    if (s == "Clarify") return {ActionKind::Clarify};
    if (s == "RestateOffTopic") return {ActionKind::RestateOffTopic};
    throw MalformedStructuredOutput("unknown navigation action '" + std::string(s) + "'");
}

NavigationAction derive_action(const AxisVerdict& v) noexcept {
    if (!v.is_on_topic) return {ActionKind::RestateOffTopic};
    if (v.is_uncertain) return {ActionKind::ConfirmUncertain};
    if (v.is_answered && v.actual_answer != AxisAnswer::Absent)
        return NavigationAction::advance(v.actual_answer == AxisAnswer::Yes ? Answer::Yes : Answer::No);
    return {ActionKind::Clarify};
}

// ---------------------------------------------------------------------------
// Structured output

namespace {

constexpr std::array<std::string_view, 4> kWireKeys{"isOnTopic", "isAnswered", "actualAnswer", "isUncertain"};

const char* yes_no(bool b) { return b ? "Yes" : "No"; }

bool parse_flag(const json& v, std::string_view key) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        const auto s = text::to_lower(text::trim(v.get<std::string>()));
        if (s == "yes" || s == "true") return true;
        if (s == "no" || s == "false") return false;
    }
    throw MalformedStructuredOutput(std::string(key) + " must be \"Yes\" or \"No\", got " + v.dump());
}

AxisAnswer parse_answer(const json& v) {
    if (v.is_null()) return AxisAnswer::Absent;
    if (v.is_string()) {
        const auto s = text::to_lower(text::trim(v.get<std::string>()));
        if (s == "yes") return AxisAnswer::Yes;
        if (s == "no") return AxisAnswer::No;
        if (s == "null" || s == "n/a" || s == "none") return AxisAnswer::Absent;
    }
    throw MalformedStructuredOutput("actualAnswer must be \"Yes\", \"No\" or null, got " + v.dump());
}

} // namespace

json verdict_to_wire(const AxisVerdict& v) {
    json j;
    j["isOnTopic"] = yes_no(v.is_on_topic);
    j["isAnswered"] = yes_no(v.is_answered);
    j["actualAnswer"] = v.actual_answer == AxisAnswer::Absent ? json(nullptr) : json(to_string(v.actual_answer));
    j["isUncertain"] = yes_no(v.is_uncertain);
    return j;
}

AxisVerdict parse_structured_output(std::string_view raw) {
    const auto open = raw.find('{');
    const auto close = raw.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        throw MalformedStructuredOutput("no JSON object in classifier output");
    json j;
    try {
        j = json::parse(raw.substr(open, close - open + 1));
    } catch (const json::exception&) {
        throw MalformedStructuredOutput("classifier output is not valid JSON");
    }
    std::array<const json*, 4> fields{};
    for (const auto& [key, value] : j.items()) {
        const auto it = std::find_if(kWireKeys.begin(), kWireKeys.end(),
                                     [&](std::string_view k) { return text::iequals(k, key); });
        if (it == kWireKeys.end()) throw MalformedStructuredOutput("unexpected field '" + key + "'");
        auto& slot = fields[static_cast<std::size_t>(it - kWireKeys.begin())];
        if (slot != nullptr) throw MalformedStructuredOutput("field '" + key + "' given twice");
        slot = &value;
    }
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i] == nullptr) throw MalformedStructuredOutput("missing field '" + std::string(kWireKeys[i]) + "'");
    AxisVerdict v{parse_flag(*fields[0], kWireKeys[0]), parse_flag(*fields[1], kWireKeys[1]),
                  parse_answer(*fields[2]), parse_flag(*fields[3], kWireKeys[3])};
    if (!is_well_formed(v)) throw MalformedStructuredOutput("isAnswered is Yes but actualAnswer is null");
    return v;
}

json verdict_to_json(const AxisVerdict& v) {
    json j;
    j["is_on_topic"] = v.is_on_topic;
    j["is_answered"] = v.is_answered;
    j["actual_answer"] = v.actual_answer == AxisAnswer::Absent ? json(nullptr) : json(to_string(v.actual_answer));
    j["is_uncertain"] = v.is_uncertain;
    return j;
}

AxisVerdict verdict_from_json(const json& j) {
    try {
        AxisVerdict v;
        v.is_on_topic = j.at("is_on_topic").get<bool>();
        v.is_answered = j.at("is_answered").get<bool>();
        v.actual_answer = parse_answer(j.at("actual_answer"));
        v.is_uncertain = j.at("is_uncertain").get<bool>();
        return v;
    } catch (const json::exception& e) {
        throw MalformedStructuredOutput(std::string("bad verdict: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Rule-based classifier

const Lexicon& Lexicon::defaults() {
    static const Lexicon lex{
        {"not sure", "maybe", "i guess", "possibly", "i doubt", "kind of", "i don't know", "probably",
         "it depends", "i suppose", "not really", "i think", "hard to say", "hard to tell", "not entirely sure",
         "can't say for sure", "can't say for certain", "couldn't say", "might", "could be", "sort of",
         "not certain", "unsure", "kinda"},
        {"yes", "yeah", "yep", "yup", "uh-huh", "absolutely", "definitely", "that's right", "for sure",
         "of course", "correct", "that's correct"},
        {"no", "nope", "not at all", "never", "negative", "nah", "definitely not", "none"},
    };
    return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read lexicon " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("lexicon " + file.string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("lexicon must be a JSON object");
    Lexicon lex = defaults();
    for (const auto& [key, value] : j.items()) {
        std::vector<std::string>* list = key == "hedge" ? &lex.hedge
                                         : key == "yes" ? &lex.yes
                                         : key == "no"  ? &lex.no
                                                        : nullptr;
        if (list == nullptr) throw ConfigError("lexicon has unknown key '" + key + "'");
        if (!value.is_array()) throw ConfigError("lexicon '" + key + "' must be an array of strings");
        for (const auto& p : value) {
            if (!p.is_string() || text::word_tokens(p.get<std::string>()).empty())
                throw ConfigError("lexicon '" + key + "' entries must be non-empty strings");
            list->push_back(p.get<std::string>());
        }
    }
    return lex;
}

namespace {

const std::set<std::string, std::less<>>& stopwords() {
    static const std::set<std::string, std::less<>> s{
        "a", "about", "above", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be",
        "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did",
        "do", "does", "doing", "don't", "down", "during", "each", "either", "ever", "few", "for", "from",
        "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how", "i",
        "i'm", "i've", "if", "in", "into", "is", "it", "it's", "its", "just", "lately", "like", "me", "more",
        "most", "my", "myself", "now", "of", "off", "oh", "on", "once", "one", "only", "or", "other", "our",
        "out", "over", "own", "really", "recently", "same", "she", "should", "so", "some", "such", "than",
        "that", "that's", "the", "their", "them", "then", "there", "these", "they", "this", "those",
        "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where",
        "which", "while", "who", "why", "will", "with", "would", "you", "your", "yours", "well", "also",
        "any", "anything", "something", "thing", "things", "get", "got", "feel", "feeling", "think", "know",
    };
    return s;
}

std::string stem(std::string t) {
    if (t.size() > 2 && t.ends_with("'s")) t.resize(t.size() - 2);
    if (t.size() > 3 && t.back() == 's' && t[t.size() - 2] != 's') t.pop_back();
    return t;
}

std::set<std::string> content_tokens(const std::vector<std::string>& tokens) {
    std::set<std::string> out;
    for (const auto& t : tokens)
        if (!stopwords().contains(t) && t.size() > 1) out.insert(stem(t));
    return out;
}

struct Span {
    std::size_t begin;
    std::size_t end;
};

/// Every occurrence of each phrase as a token sequence.
template <class OnMatch>
void find_phrases(const std::vector<std::string>& tokens, const std::vector<std::string>& phrases, OnMatch on_match) {
    for (const auto& phrase : phrases) {
        const auto pt = text::word_tokens(text::fold_quotes(phrase));
        if (pt.empty() || pt.size() > tokens.size()) continue;
        for (std::size_t i = 0; i + pt.size() <= tokens.size(); ++i)
            if (std::equal(pt.begin(), pt.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i)))
                on_match(Span{i, i + pt.size()});
    }
}

} // namespace

AxisVerdict rule_based_classify(std::string_view question, std::string_view response, const Lexicon& lexicon) {
    const auto tokens = text::word_tokens(text::fold_quotes(response));
    if (tokens.empty()) return {};

    std::vector<Span> hedges;
    find_phrases(tokens, lexicon.hedge, [&](Span s) { hedges.push_back(s); });
    const auto inside_hedge = [&](Span s) {
        return std::any_of(hedges.begin(), hedges.end(), [&](Span h) { return s.begin < h.end && h.begin < s.end; });
    };

    // Earliest polarity match outside any hedge; a longer phrase wins at the
    // same position ("definitely not" over "definitely").
    std::optional<Span> best;
    AxisAnswer polarity = AxisAnswer::Absent;
    const auto consider = [&](AxisAnswer a) {
        return [&, a](Span s) {
            if (inside_hedge(s)) return;
            if (!best || s.begin < best->begin || (s.begin == best->begin && s.end > best->end)) {
                best = s;
                polarity = a;
            }
        };
    };
    find_phrases(tokens, lexicon.yes, consider(AxisAnswer::Yes));
    find_phrases(tokens, lexicon.no, consider(AxisAnswer::No));

    AxisVerdict v;
    v.is_uncertain = !hedges.empty();
    v.is_answered = polarity != AxisAnswer::Absent;
    v.actual_answer = polarity;
    if (v.is_answered || v.is_uncertain) {
        v.is_on_topic = true;
    } else {
        const auto q = content_tokens(text::word_tokens(text::fold_quotes(question)));
        const auto r = content_tokens(tokens);
        v.is_on_topic = std::any_of(r.begin(), r.end(), [&](const std::string& t) { return q.contains(t); });
    }
    return v;
}

std::string RuleBasedClassifier::classify(std::string_view question, std::string_view response) const {
    return verdict_to_wire(rule_based_classify(question, response, lexicon_)).dump();
}

std::string ProviderClassifier::classify(std::string_view question, std::string_view response) const {
    const auto prompt = render(PromptId::DecisionAgent, {{"axes", std::string(decision_axes_text())},
                                                         {"question", std::string(question)},
                                                         {"response", std::string(response)}});
    return generator_->generate({prompt, temperature_});
}

AxisVerdict classify_response(std::string_view question, std::string_view response, const Classifier& c,
                              int malformed_retries) {
    if (text::trim(question).empty()) throw ClassifierFailure("question text is empty");
    for (int attempt = 0;; ++attempt) {
        try {
            return parse_structured_output(c.classify(question, response));
        } catch (const MalformedStructuredOutput&) {
            if (attempt >= malformed_retries) throw;
        }
    }
}

} // namespace triage
