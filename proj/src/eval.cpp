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

#include "triage/eval.hpp"

#include "triage/parallel.hpp"
#include "triage/prompts.hpp"
#include "triage/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace triage {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enumerations

std::string_view to_string(Style s) noexcept { return s == Style::Brief ? "Brief" : "Detailed"; }

std::string_view to_string(ResponsePattern p) noexcept {
    switch (p) {
    case ResponsePattern::Brief: return "Brief";
    case ResponsePattern::Descriptive: return "Descriptive";
    case ResponsePattern::Weak: return "Weak";
    case ResponsePattern::Uncertain: return "Uncertain";
    case ResponsePattern::OffTopic: return "OffTopic";
    }
    return "Brief";
}

std::string_view to_string(AnswerLabel l) noexcept {
    switch (l) {
    case AnswerLabel::Yes: return "Yes";
    case AnswerLabel::No: return "No";
    case AnswerLabel::NotAnswered: return "NotAnswered";
    case AnswerLabel::OffTopic: return "OffTopic";
    }
    return "Yes";
}

Style parse_style(std::string_view s) {
    if (text::iequals(s, "brief")) return Style::Brief;
    if (text::iequals(s, "detailed") || text::iequals(s, "descriptive")) return Style::Detailed;
    throw UnparsableGeneration("unknown style '" + std::string(s) + "'");
}

ResponsePattern parse_pattern(std::string_view s) {
    for (auto p : kAllPatterns)
        if (text::iequals(s, to_string(p))) return p;
    if (text::iequals(s, "off-topic")) return ResponsePattern::OffTopic;
    throw UnparsableGeneration("unknown pattern '" + std::string(s) + "'");
}

AnswerLabel parse_answer_label(std::string_view s) {
    for (auto l : {AnswerLabel::Yes, AnswerLabel::No, AnswerLabel::NotAnswered, AnswerLabel::OffTopic})
        if (text::iequals(s, to_string(l))) return l;
    if (text::iequals(s, "not answered")) return AnswerLabel::NotAnswered;
    if (text::iequals(s, "off-topic")) return AnswerLabel::OffTopic;
    throw UnparsableGeneration("unknown answer label '" + std::string(s) + "'");
}

std::string_view pattern_definition(ResponsePattern p) noexcept {
    switch (p) {
    case ResponsePattern::Brief:
        return "Conclusive and minimalistic: Responses that clearly answer the question without additional "
               "reasoning, details, or repetition of the question.";
    case ResponsePattern::Descriptive:
        return "Conclusive and descriptive: Responses that clearly answer the question and provide additional "
               "details, context, or elaboration to support the answer.";
    case ResponsePattern::Weak:
        return "Vague or partially conclusive: Responses that lean towards an answer but include uncertainty or "
               "hedge the statement with ambiguous language.";
    case ResponsePattern::Uncertain:
        return "Inconclusive: Responses that remain uncertain due to a lack of sufficient information, neither "
               "confirming nor denying the question.";
    case ResponsePattern::OffTopic:
        return "Irrelevant: Responses that are completely unrelated to the question but still make basic "
               "conversational sense.";
    }
    return "";
}

bool meets_word_limit(Style style, std::string_view t) noexcept {
    const auto n = text::word_count(t);
    return style == Style::Brief ? n <= kBriefMaxWords : n >= kDetailedMinWords;
}

bool label_consistent(ResponsePattern p, AnswerLabel l) noexcept {
    switch (p) {
    case ResponsePattern::Uncertain: return l == AnswerLabel::NotAnswered;
    case ResponsePattern::OffTopic: return l == AnswerLabel::OffTopic;
    default: return l == AnswerLabel::Yes || l == AnswerLabel::No;
    }
}

// ---------------------------------------------------------------------------
// Records on disk

json to_json(const OpeningStatementRecord& r) {
    return {{"id", r.id},
            {"label_flowchart_id", r.label_flowchart_id},
            {"sex", to_string(r.sex)},
            {"age_value", r.age_value},
            {"age_unit", to_string(r.age_unit)},
            {"style", to_string(r.style)},
            {"text", r.text},
            {"generator", r.generator}};
}

json to_json(const PatientResponseRecord& r) {
    return {{"id", r.id},
            {"flowchart_id", r.flowchart_id},
            {"node_id", r.node_id},
            {"question_text", r.question_text},
            {"pattern", to_string(r.pattern)},
            {"answer_label", to_string(r.answer_label)},
            {"text", r.text},
            {"generator", r.generator}};
}

OpeningStatementRecord opening_from_json(const json& j) {
    try {
        OpeningStatementRecord r;
        r.id = j.at("id").get<std::string>();
        r.label_flowchart_id = j.at("label_flowchart_id").get<std::string>();
        const auto sex = parse_sex(j.at("sex").get<std::string>());
        const auto unit = parse_age_unit(j.at("age_unit").get<std::string>());
        if (!sex || !unit) throw UnparsableGeneration("record " + r.id + " has bad demographics");
        r.sex = *sex;
        r.age_unit = *unit;
        r.age_value = j.at("age_value").get<int>();
        r.style = parse_style(j.at("style").get<std::string>());
        r.text = j.at("text").get<std::string>();
        r.generator = j.at("generator").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw UnparsableGeneration(std::string("bad opening statement record: ") + e.what());
    }
}

PatientResponseRecord response_from_json(const json& j) {
    try {
        PatientResponseRecord r;
        r.id = j.at("id").get<std::string>();
        r.flowchart_id = j.at("flowchart_id").get<std::string>();
        r.node_id = j.at("node_id").get<std::string>();
        r.question_text = j.at("question_text").get<std::string>();
        r.pattern = parse_pattern(j.at("pattern").get<std::string>());
        r.answer_label = parse_answer_label(j.at("answer_label").get<std::string>());
        r.text = j.at("text").get<std::string>();
        r.generator = j.at("generator").get<std::string>();
        if (!label_consistent(r.pattern, r.answer_label))
            throw UnparsableGeneration("record " + r.id + " pairs pattern " + std::string(to_string(r.pattern)) +
                                       " with label " + std::string(to_string(r.answer_label)));
        return r;
    } catch (const json::exception& e) {
        throw UnparsableGeneration(std::string("bad patient response record: ") + e.what());
    }
}

namespace {

template <class Record>
void write_records(const std::filesystem::path& file, const std::vector<Record>& records) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw IoError("failed writing " + file.string());
}

template <class F>
void for_each_line(const std::filesystem::path& file, F f) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read " + file.string());
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            f(json::parse(line));
        } catch (const json::parse_error& e) {
            throw UnparsableGeneration(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

} // namespace

void write_jsonl(const std::filesystem::path& file, const std::vector<OpeningStatementRecord>& records) {
    write_records(file, records);
}

void write_jsonl(const std::filesystem::path& file, const std::vector<PatientResponseRecord>& records) {
    write_records(file, records);
}

std::vector<OpeningStatementRecord> read_openings(const std::filesystem::path& file, std::vector<std::string>* warnings) {
    std::vector<OpeningStatementRecord> out;
    for_each_line(file, [&](const json& j) {
        out.push_back(opening_from_json(j));
        if (warnings && !meets_word_limit(out.back().style, out.back().text))
            warnings->push_back("record " + out.back().id + " violates the " +
                                std::string(to_string(out.back().style)) + " word limit");
    });
    return out;
}

std::vector<PatientResponseRecord> read_responses(const std::filesystem::path& file) {
    std::vector<PatientResponseRecord> out;
    for_each_line(file, [&](const json& j) { out.push_back(response_from_json(j)); });
    return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::string strip_quotes(std::string_view s) {
    auto t = std::string(text::trim(text::fold_quotes(s)));
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
    return std::string(text::trim(t));
}

std::optional<std::string_view> field_value(std::string_view line, std::string_view key) {
    auto t = text::trim(line);
    while (!t.empty() && (t.front() == '*' || t.front() == '-')) t.remove_prefix(1);
    t = text::trim(t);
    if (!text::starts_with_icase(t, key)) return std::nullopt;
    t.remove_prefix(key.size());
    while (!t.empty() && (t.front() == '*' || t.front() == ':')) t.remove_prefix(1);
    return text::trim(t);
}

} // namespace

std::vector<OpeningSet> parse_opening_sets(std::string_view t) {
    std::vector<OpeningSet> out;
    OpeningSet cur;
    std::istringstream in{std::string(t)};
    for (std::string line; std::getline(in, line);) {
        if (auto v = field_value(line, "Sex")) {
            cur = {};
            cur.sex = std::string(*v);
        } else if (auto a = field_value(line, "Age")) {
            cur.age = std::string(*a);
        } else if (auto s = field_value(line, "Opening Statement")) {
            cur.statement = strip_quotes(*s);
            if (!cur.sex.empty() && !cur.age.empty() && !cur.statement.empty()) out.push_back(cur);
            cur = {};
        }
    }
    if (out.empty()) throw UnparsableGeneration("no complete Sex/Age/Opening Statement set in generator output");
    return out;
}

std::vector<std::string> parse_numbered_responses(std::string_view t) {
    std::vector<std::string> out;
    std::istringstream in{std::string(t)};
    for (std::string line; std::getline(in, line);) {
        auto s = text::trim(line);
        std::size_t i = 0;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i == 0 || i >= s.size() || (s[i] != '.' && s[i] != ')')) continue;
        auto body = strip_quotes(s.substr(i + 1));
        if (!body.empty()) out.push_back(std::move(body));
    }
    return out;
}

bool is_pediatric(const Flowchart& f) noexcept {
    return f.applicability.age_max_months && *f.applicability.age_max_months < 144;
}

std::string opening_prompt(const Flowchart& f, Style style, std::size_t num) {
    int rule = style == Style::Brief ? 3 : 4;
    std::string extra = " " + std::to_string(rule++) +
                        ". Only use sexes and ages within the flowchart's target group: " +
                        applicability_phrase(f.applicability) + ".";
    if (is_pediatric(f))
        extra += " " + std::to_string(rule) +
                 ". The patient is a child, so write each opening statement from the perspective of a parent or "
                 "caregiver.";
    return render(style == Style::Brief ? PromptId::GenBriefOpening : PromptId::GenDetailedOpening,
                  {{"num", std::to_string(num)}, {"flowchart", f.name + ": " + f.description}, {"extra_rules", extra}});
}

std::string response_prompt(std::string_view question, ResponsePattern p, AnswerLabel label, std::size_t num) {
    std::string answer;
    if (label == AnswerLabel::Yes) answer = " Yes";
    if (label == AnswerLabel::No) answer = " No";
    auto name = text::to_lower(to_string(p));
    if (p == ResponsePattern::OffTopic) name = "off-topic";
    return render(PromptId::GenPatientResponse, {{"num", std::to_string(num)},
                                                 {"answer", answer},
                                                 {"question", std::string(question)},
                                                 {"pattern", name},
                                                 {"pattern_definition", std::string(pattern_definition(p))}});
}

namespace {

std::string pad2(std::size_t k) {
    std::ostringstream os;
    os << std::setw(3) << std::setfill('0') << k;
    return os.str();
}

} // namespace

GenerationResult<OpeningStatementRecord> generate_opening_statements(const FlowchartLibrary& lib,
                                                                     const TextGenerator& gen, std::size_t per_chart,
                                                                     Style style, const GenerationOptions& options) {
    GenerationResult<OpeningStatementRecord> result;
    for (const auto& [id, chart] : lib.charts()) {
        std::size_t have = 0;
        for (int attempt = 0; have < per_chart && attempt <= options.max_regenerations; ++attempt) {
            const auto prompt = opening_prompt(chart, style, per_chart - have);
            std::vector<OpeningSet> sets;
            try {
                sets = parse_opening_sets(gen.generate({prompt, options.temperature}));
            } catch (const UnparsableGeneration& e) {
                result.warnings.push_back(id + ": " + e.what());
                continue;
            }
            for (const auto& set : sets) {
                if (have == per_chart) break;
                const auto sex = parse_sex(set.sex);
                const auto age = parse_age(set.age);
                if (!sex || !age) {
                    result.warnings.push_back(id + ": unparsable demographics '" + set.sex + "', '" + set.age + "'");
                    continue;
                }
                Demographics d{*sex, age->first, age->second};
                if (age->first <= 0 || d.age_months() > kMaxAgeMonths || !is_applicable(chart, d)) {
                    result.warnings.push_back(id + ": demographics outside the chart's target group");
                    continue;
                }
                if (!meets_word_limit(style, set.statement)) {
                    result.warnings.push_back(id + ": statement of " + std::to_string(text::word_count(set.statement)) +
                                              " words violates the " + std::string(to_string(style)) + " limit");
                    continue;
                }
                ++have;
                result.records.push_back({gen.id() + "-" + id + "-" + text::to_lower(to_string(style)) + "-" + pad2(have),
                                          id, d.sex, d.age_value, d.age_unit, style, set.statement, gen.id()});
            }
        }
        if (have < per_chart)
            result.warnings.push_back(id + ": dropped " + std::to_string(per_chart - have) +
                                      " opening statements after regeneration limit");
    }
    return result;
}

GenerationResult<PatientResponseRecord> generate_responses(const FlowchartLibrary& lib, const TextGenerator& gen,
                                                           std::size_t per_cell, const GenerationOptions& options) {
    struct Cell {
        ResponsePattern pattern;
        AnswerLabel label;
    };
    static constexpr std::array<Cell, 8> kCells{{
        {ResponsePattern::Brief, AnswerLabel::Yes},
        {ResponsePattern::Brief, AnswerLabel::No},
        {ResponsePattern::Descriptive, AnswerLabel::Yes},
        {ResponsePattern::Descriptive, AnswerLabel::No},
        {ResponsePattern::Weak, AnswerLabel::Yes},
        {ResponsePattern::Weak, AnswerLabel::No},
        {ResponsePattern::Uncertain, AnswerLabel::NotAnswered},
        {ResponsePattern::OffTopic, AnswerLabel::OffTopic},
    }};
    GenerationResult<PatientResponseRecord> result;
    for (const auto& [id, chart] : lib.charts()) {
        for (const auto& node : chart.nodes) {
            if (node.kind != NodeKind::Question) continue;
            for (const auto& cell : kCells) {
                std::size_t have = 0;
                const auto tag = text::to_lower(to_string(cell.pattern)) + "-" + text::to_lower(to_string(cell.label));
                for (int attempt = 0; have < per_cell && attempt <= options.max_regenerations; ++attempt) {
                    const auto prompt = response_prompt(node.text, cell.pattern, cell.label, per_cell - have);
                    for (auto& r : parse_numbered_responses(gen.generate({prompt, options.temperature}))) {
                        if (have == per_cell) break;
                        ++have;
                        result.records.push_back({gen.id() + "-" + id + "-" + node.id + "-" + tag + "-" + pad2(have), id,
                                                  node.id, node.text, cell.pattern, cell.label, std::move(r), gen.id()});
                    }
                }
                if (have < per_cell)
                    result.warnings.push_back(id + "/" + node.id + " " + tag + ": dropped " +
                                              std::to_string(per_cell - have) + " responses");
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Offline generator

namespace {

std::string topic_of(const Flowchart& f) {
    auto t = text::to_lower(f.name);
    if (t.ends_with(" flowchart")) t.resize(t.size() - 10);
    return t;
}

std::string first_words(std::string_view s, std::size_t n) {
    std::istringstream in{std::string(s)};
    std::vector<std::string> words;
    for (std::string w; words.size() < n && in >> w;) words.push_back(w);
    auto out = text::join(words, " ");
    while (!out.empty() && (out.back() == ',' || out.back() == '.' || out.back() == ';')) out.pop_back();
    return out;
}

std::size_t number_after(std::string_view prompt, std::string_view marker) {
    const auto at = prompt.find(marker);
    if (at == std::string_view::npos) return 1;
    std::size_t n = 0;
    for (std::size_t i = at + marker.size(); i < prompt.size() && std::isdigit(static_cast<unsigned char>(prompt[i])); ++i)
        n = n * 10 + static_cast<std::size_t>(prompt[i] - '0');
    return std::max<std::size_t>(n, 1);
}

std::string line_after(std::string_view prompt, std::string_view marker) {
    const auto at = prompt.find(marker);
    if (at == std::string_view::npos) return {};
    const auto start = at + marker.size();
    const auto end = prompt.find('\n', start);
    return std::string(prompt.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
}

/// The k-th demographic in a sweep over the chart's sexes and age range.
Demographics sample_demographics(const Flowchart& f, std::size_t k) {
    std::vector<Sex> sexes;
    if (f.applicability.male) sexes.push_back(Sex::Male);
    if (f.applicability.female) sexes.push_back(Sex::Female);
    const int lo = std::max(1, f.applicability.age_min_months);
    const int hi = f.applicability.age_max_months.value_or(960);
    const int span = std::max(0, hi - lo);
    const int months = lo + static_cast<int>((span * static_cast<int>((k * 37) % 101)) / 100);
    const Sex sex = sexes[k % sexes.size()];
    if (months >= 24 && (months / 12) * 12 >= lo) return {sex, months / 12, AgeUnit::Years};
    return {sex, months, AgeUnit::Months};
}

const std::array<std::string_view, 5> kBriefOpeners{"I need some advice about", "I'm worried about",
                                                    "Can you help me with", "I've been dealing with",
                                                    "I'd like to ask about"};
const std::array<std::string_view, 5> kFiller{
    "It started a few days ago and seems to be getting a little worse each day.",
    "I have tried resting and drinking plenty of water but it has not really helped so far.",
    "Nobody else at home has anything similar, and I have no major medical history that I know of.",
    "I am not sure whether this needs a doctor or whether I can manage it myself at home.",
    "It is affecting my sleep and my work, so I would like to understand what I should do next."};

std::string offline_openings(const Flowchart& f, Style style, std::size_t num) {
    std::ostringstream os;
    const bool caregiver = is_pediatric(f);
    for (std::size_t k = 0; k < num; ++k) {
        const auto d = sample_demographics(f, k);
        std::string statement;
        const std::string who = caregiver ? "my child's " : "";
        if (style == Style::Brief) {
            statement = std::string(kBriefOpeners[k % kBriefOpeners.size()]) + " " + who + topic_of(f) + ". " +
                        first_words(f.description, 12) + ".";
        } else {
            statement = "Hello, " + std::string(kBriefOpeners[k % kBriefOpeners.size()]) + " " + who + topic_of(f) +
                        ". " + f.description;
            for (std::size_t i = 0; text::word_count(statement) < kDetailedMinWords + 5; ++i)
                statement += " " + std::string(kFiller[(k + i) % kFiller.size()]);
        }
        os << "Set " << (k + 1) << ":\nSex: " << to_string(d.sex) << "\nAge: " << d.age_value << ' '
           << to_string(d.age_unit) << "\nOpening Statement: \"" << statement << "\"\n\n";
    }
    return os.str();
}

const std::map<std::string, std::array<std::string_view, 5>>& response_bank() {
    static const std::map<std::string, std::array<std::string_view, 5>> bank{
        {"brief Yes", {"Yes.", "Yep.", "Yeah.", "Absolutely.", "For sure, yes."}},
        {"brief No", {"No.", "Nope.", "Not at all.", "Never.", "No, I don't."}},
        {"descriptive Yes",
         {"Yes, that started a couple of days ago and it has been getting worse since then.",
          "Yeah, definitely, I noticed it this morning when I woke up and it is still there.",
          "Absolutely, it has happened several times this week and my partner noticed it too.",
          "Yes, it does, and it has been bothering me enough that I stayed home from work today.",
          "Yep, that is exactly what has been going on, it began right after the weekend."}},
        {"descriptive No",
         {"No, nothing like that has happened, I would definitely have noticed it.",
          "Nope, I have been paying close attention and there has been nothing of the sort.",
          "No, not at all, everything in that respect has been completely normal for me.",
          "Never, I have not had anything like that before and I have not had it now either.",
          "No, I checked this morning and everything seemed fine in that regard."}},
        {"weak Yes",
         {"I guess so, maybe a little.", "Probably, but I haven't really paid close attention.",
          "I think so, it kind of feels that way.", "Maybe, it seems possible from what I've noticed.",
          "Possibly, it sort of seems like it."}},
        {"weak No",
         {"I doubt it, but I guess it's possible.", "Probably not, though I could have missed something.",
          "I don't think so, but maybe I wasn't paying attention.", "Not really, at least I don't think so.",
          "I guess not, it doesn't seem like it."}},
        {"uncertain ",
         {"I'm not sure. I haven't checked yet.", "I don't know, honestly.", "It's hard to say right now.",
          "I'm not sure, it might depend on the day.", "I don't know, I haven't been keeping track."}},
        {"off-topic ",
         {"Oh, I've been organizing my closet lately. It's such a mess!",
          "My cat has been acting so funny lately, chasing her tail all around the house.",
          "I'm trying to decide what to make for dinner tonight. Maybe something with pasta?",
          "I forgot to charge my phone last night, and now the battery's almost dead.",
          "Did you see the game last night? What a finish!"}},
    };
    return bank;
}

std::string offline_responses(std::string_view prompt) {
    const auto num = number_after(prompt, "Provide ");
    const auto answer = line_after(prompt, "distinct ways to respond");
    auto answer_word = std::string(text::trim(answer.substr(0, answer.find(" to the following"))));
    auto pattern = line_after(prompt, "Responses should be ");
    pattern = pattern.substr(0, pattern.find(':'));
    const auto key = pattern + " " + answer_word;
    const auto it = response_bank().find(key);
    if (it == response_bank().end()) throw ProviderError("offline generator has no responses for '" + key + "'");
    std::ostringstream os;
    for (std::size_t k = 0; k < num; ++k) os << (k + 1) << ". " << it->second[k % it->second.size()] << '\n';
    return os.str();
}

} // namespace

std::string OfflineDatasetGenerator::generate(const GenerationRequest& request) const {
    const auto& p = request.prompt;
    if (p.find("distinct ways to respond") != std::string::npos) return offline_responses(p);
    if (p.find("opening statements according to") != std::string::npos) {
        const auto flow = line_after(p, "Flowchart: ");
        for (const auto& [id, f] : lib_->charts())
            if (flow.rfind(f.name + ": ", 0) == 0)
                return offline_openings(f, p.find("BRIEF") != std::string::npos ? Style::Brief : Style::Detailed,
                                        number_after(p, "Generate "));
        throw ProviderError("offline generator does not know the flowchart in this prompt");
    }
    throw ProviderError("offline generator only answers dataset generation prompts");
}

// ---------------------------------------------------------------------------
// Retrieval evaluation

std::optional<double> group_std(const std::map<std::string, Accuracy>& groups) {
    std::vector<double> v;
    for (const auto& [k, a] : groups)
        if (auto x = a.value()) v.push_back(*x);
    if (v.empty()) return std::nullopt;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(v.size()));
}

std::string_view to_string(RetrievalMetric m) noexcept {
    switch (m) {
    case RetrievalMetric::LlmOnly: return "llm_only_acc";
    case RetrievalMetric::SimTop1: return "sim_top1_acc";
    case RetrievalMetric::SimTop3: return "sim_top3_acc";
    case RetrievalMetric::SimTop5: return "sim_top5_acc";
    case RetrievalMetric::Agent: return "agent_acc";
    }
    return "";
}

std::vector<RetrievalOutcome> score_retrieval(const std::vector<OpeningStatementRecord>& records,
                                              const FlowchartLibrary& lib, const RetrievalIndex& index,
                                              const Embedder& embedder, const Selector& selector,
                                              const RetrievalEvalOptions& options) {
    for (const auto& r : records)
        if (!lib.contains(r.label_flowchart_id))
            throw LabelNotInLibrary("record " + r.id + " is labelled '" + r.label_flowchart_id +
                                    "', which is not in the library");

    std::vector<RetrievalOutcome> out(records.size());
    std::vector<std::string> errors(records.size());
    const auto evaluate = [&](std::size_t i) {
        const auto& r = records[i];
        auto& o = out[i];
        o.id = r.id;
        o.generator = r.generator;
        o.specialty = lib.at(r.label_flowchart_id).specialty;
        try {
            const auto query = compose_query_text(r.demographics(), r.text);
            if (options.modes.similarity || options.modes.agent) {
                SearchOptions so;
                so.n = std::max<std::size_t>(options.candidates, 5);
                if (options.applicability_filter) so.filter = r.demographics();
                const auto ranked = search(index, lib, embedder, query, so);
                const auto pos = std::find_if(ranked.begin(), ranked.end(), [&](const RankedCandidate& c) {
                                     return c.flowchart_id == r.label_flowchart_id;
                                 }) - ranked.begin();
                if (options.modes.similarity) {
                    o.top1 = pos < 1;
                    o.top3 = pos < 3;
                    o.top5 = pos < 5;
                }
                if (options.modes.agent) {
                    std::vector<RankedCandidate> top(ranked.begin(),
                                                     ranked.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                                          options.candidates, ranked.size())));
                    o.agent = select_flowchart(top, lib, query, selector).flowchart_id == r.label_flowchart_id;
                }
            }
            if (options.modes.llm_only)
                o.llm_only = select_from_library(lib, query, selector).flowchart_id == r.label_flowchart_id;
        } catch (const SelectorFailure&) {
            o.excluded = true;
            o.llm_only = o.top1 = o.top3 = o.top5 = o.agent = std::nullopt;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    };

    const auto n = static_cast<std::ptrdiff_t>(records.size());
    if (options.parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < n; ++i) evaluate(static_cast<std::size_t>(i));
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) evaluate(static_cast<std::size_t>(i));
    }
    for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors[i].empty()) throw EmbedderFailure("record " + records[i].id + ": " + errors[i]);
    return out;
}

namespace {

struct RowBuilder {
    RetrievalRow row;
    std::map<RetrievalMetric, std::map<std::string, Accuracy>> by_specialty;

    RowBuilder() {
        for (auto m : kAllRetrievalMetrics) row.accuracy[m] = {};
    }

    void add(const RetrievalOutcome& o) {
        ++row.n;
        if (o.excluded) {
            ++row.excluded;
            return;
        }
        const std::array<std::pair<RetrievalMetric, const std::optional<bool>*>, 5> cells{{
            {RetrievalMetric::LlmOnly, &o.llm_only},
            {RetrievalMetric::SimTop1, &o.top1},
            {RetrievalMetric::SimTop3, &o.top3},
            {RetrievalMetric::SimTop5, &o.top5},
            {RetrievalMetric::Agent, &o.agent},
        }};
        for (const auto& [m, v] : cells) {
            if (!v->has_value()) continue;
            row.accuracy[m].add(**v);
            by_specialty[m][o.specialty].add(**v);
        }
    }

    RetrievalRow finish() {
        for (auto m : kAllRetrievalMetrics) row.specialty_std[m] = group_std(by_specialty[m]);
        return row;
    }
};

} // namespace

RetrievalMetrics aggregate_retrieval(std::vector<RetrievalOutcome> outcomes) {
    std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::map<std::string, RowBuilder> per_gen;
    RowBuilder pooled;
    for (const auto& o : outcomes) {
        per_gen[o.generator].add(o);
        pooled.add(o);
    }
    RetrievalMetrics m;
    for (auto& [g, b] : per_gen) m.by_generator[g] = b.finish();
    m.pooled = pooled.finish();
    for (auto metric : kAllRetrievalMetrics) {
        double sum = 0.0;
        std::size_t k = 0;
        for (const auto& [g, row] : m.by_generator)
            if (auto v = row.accuracy.at(metric).value()) {
                sum += *v;
                ++k;
            }
        m.generator_mean[metric] = k == 0 ? std::nullopt : std::optional<double>(sum / static_cast<double>(k));
    }
    return m;
}

RetrievalMetrics eval_retrieval(const std::vector<OpeningStatementRecord>& records, const FlowchartLibrary& lib,
                                const RetrievalIndex& index, const Embedder& embedder, const Selector& selector,
                                const RetrievalEvalOptions& options) {
    return aggregate_retrieval(score_retrieval(records, lib, index, embedder, selector, options));
}

// ---------------------------------------------------------------------------
// Navigation evaluation

std::string_view to_string(NavCategory c) noexcept {
    switch (c) {
    case NavCategory::A_CertainCorrect: return "A_CertainCorrect";
    case NavCategory::B_UncertainCorrect: return "B_UncertainCorrect";
    case NavCategory::C_UncertainIncorrect: return "C_UncertainIncorrect";
    case NavCategory::D_CertainIncorrect: return "D_CertainIncorrect";
    case NavCategory::A_CertainUnanswered: return "A_CertainUnanswered";
    case NavCategory::B_UncertainUnanswered: return "B_UncertainUnanswered";
    case NavCategory::C_UncertainAnswered: return "C_UncertainAnswered";
    case NavCategory::D_CertainAnswered: return "D_CertainAnswered";
    case NavCategory::OffTopicDetected: return "OffTopicDetected";
    case NavCategory::OffTopicMissed: return "OffTopicMissed";
    }
    return "";
}

NavCategory parse_nav_category(std::string_view s) {
    for (auto c : kAllNavCategories)
        if (to_string(c) == s) return c;
    throw UnparsableGeneration("unknown navigation category '" + std::string(s) + "'");
}

bool is_acceptable(NavCategory c) noexcept {
    return c != NavCategory::D_CertainIncorrect && c != NavCategory::D_CertainAnswered &&
           c != NavCategory::OffTopicMissed;
}

std::vector<NavCategory> categories_for(ResponsePattern p) {
    switch (p) {
    case ResponsePattern::Uncertain:
        return {NavCategory::A_CertainUnanswered, NavCategory::B_UncertainUnanswered, NavCategory::C_UncertainAnswered,
                NavCategory::D_CertainAnswered};
    case ResponsePattern::OffTopic: return {NavCategory::OffTopicDetected, NavCategory::OffTopicMissed};
    default:
        return {NavCategory::A_CertainCorrect, NavCategory::B_UncertainCorrect, NavCategory::C_UncertainIncorrect,
                NavCategory::D_CertainIncorrect};
    }
}

NavCategory categorize(const AxisVerdict& v, ResponsePattern p, AnswerLabel label) noexcept {
    switch (p) {
    case ResponsePattern::OffTopic:
        return v.is_on_topic ? NavCategory::OffTopicMissed : NavCategory::OffTopicDetected;
    case ResponsePattern::Uncertain:
        if (v.is_answered)
            return v.is_uncertain ? NavCategory::C_UncertainAnswered : NavCategory::D_CertainAnswered;
        return v.is_uncertain ? NavCategory::B_UncertainUnanswered : NavCategory::A_CertainUnanswered;
    default: {
        const bool correct = v.is_answered && ((label == AnswerLabel::Yes && v.actual_answer == AxisAnswer::Yes) ||
                                               (label == AnswerLabel::No && v.actual_answer == AxisAnswer::No));
        if (correct) return v.is_uncertain ? NavCategory::B_UncertainCorrect : NavCategory::A_CertainCorrect;
        return v.is_uncertain ? NavCategory::C_UncertainIncorrect : NavCategory::D_CertainIncorrect;
    }
    }
}

std::optional<double> NavigationCell::share(NavCategory c) const noexcept {
    if (n == excluded) return std::nullopt;
    const auto it = counts.find(c);
    const auto k = it == counts.end() ? 0 : it->second;
    return static_cast<double>(k) / static_cast<double>(n - excluded);
}

std::optional<double> NavigationCell::acceptable() const noexcept {
    if (n == excluded) return std::nullopt;
    std::size_t ok = 0;
    for (const auto& [c, k] : counts)
        if (is_acceptable(c)) ok += k;
    return static_cast<double>(ok) / static_cast<double>(n - excluded);
}

NavigationCell NavigationTable::overall(const std::string& generator) const {
    NavigationCell total;
    const auto it = cells.find(generator);
    if (it == cells.end()) return total;
    for (const auto& [p, cell] : it->second) {
        total.n += cell.n;
        total.excluded += cell.excluded;
        for (const auto& [c, k] : cell.counts) total.counts[c] += k;
    }
    return total;
}

std::vector<NavigationOutcome> score_navigation(const std::vector<PatientResponseRecord>& records,
                                                const Classifier& classifier, bool parallel) {
    std::vector<NavigationOutcome> out(records.size());
    const auto evaluate = [&](std::size_t i) {
        const auto& r = records[i];
        out[i] = {r.id, r.generator, r.pattern, std::nullopt};
        try {
            out[i].category = categorize(classify_response(r.question_text, r.text, classifier), r.pattern,
                                         r.answer_label);
        } catch (const Error&) {
            // Counted as excluded by the aggregation.
        }
    };
    const auto n = static_cast<std::ptrdiff_t>(records.size());
    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < n; ++i) evaluate(static_cast<std::size_t>(i));
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) evaluate(static_cast<std::size_t>(i));
    }
    return out;
}

NavigationTable aggregate_navigation(std::vector<NavigationOutcome> outcomes) {
    std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    NavigationTable t;
    for (const auto& o : outcomes) {
        auto& cell = t.cells[o.generator][o.pattern];
        ++cell.n;
        if (o.category) {
            ++cell.counts[*o.category];
        } else {
            ++cell.excluded;
        }
    }
    return t;
}

NavigationTable eval_navigation(const std::vector<PatientResponseRecord>& records, const Classifier& classifier,
                                bool parallel) {
    return aggregate_navigation(score_navigation(records, classifier, parallel));
}

// ---------------------------------------------------------------------------
// Report

namespace {

json opt(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

json row_to_json(const RetrievalRow& row) {
    json acc = json::object(), sd = json::object();
    for (const auto& [m, a] : row.accuracy)
        acc[std::string(to_string(m))] = {{"hits", a.hits}, {"n", a.n}, {"value", opt(a.value())}};
    for (const auto& [m, v] : row.specialty_std) sd[std::string(to_string(m))] = opt(v);
    return {{"n", row.n}, {"excluded", row.excluded}, {"accuracy", acc}, {"specialty_std", sd}};
}

RetrievalMetric parse_metric(std::string_view s) {
    for (auto m : kAllRetrievalMetrics)
        if (to_string(m) == s) return m;
    throw UnparsableGeneration("unknown retrieval metric '" + std::string(s) + "'");
}

RetrievalRow row_from_json(const json& j) {
    RetrievalRow row;
    row.n = j.at("n").get<std::size_t>();
    row.excluded = j.at("excluded").get<std::size_t>();
    for (const auto& [k, v] : j.at("accuracy").items())
        row.accuracy[parse_metric(k)] = {v.at("hits").get<std::size_t>(), v.at("n").get<std::size_t>()};
    for (const auto& [k, v] : j.at("specialty_std").items()) row.specialty_std[parse_metric(k)] = opt_from(v);
    return row;
}

json cell_to_json(const NavigationCell& c) {
    json counts = json::object(), shares = json::object();
    for (const auto& [cat, k] : c.counts) counts[std::string(to_string(cat))] = k;
    return {{"n", c.n}, {"excluded", c.excluded}, {"counts", counts}, {"acceptable", opt(c.acceptable())}};
}

NavigationCell cell_from_json(const json& j) {
    NavigationCell c;
    c.n = j.at("n").get<std::size_t>();
    c.excluded = j.at("excluded").get<std::size_t>();
    for (const auto& [k, v] : j.at("counts").items()) c.counts[parse_nav_category(k)] = v.get<std::size_t>();
    return c;
}

std::string csv_value(const json& v) { return v.is_null() ? "null" : v.dump(); }

std::string pattern_key(ResponsePattern p) { return text::to_lower(to_string(p)); }

} // namespace

json report_to_json(const EvalReport& r) {
    json j = json::object();
    if (r.retrieval) {
        json gens = json::object(), mean = json::object();
        for (const auto& [g, row] : r.retrieval->by_generator) gens[g] = row_to_json(row);
        for (const auto& [m, v] : r.retrieval->generator_mean) mean[std::string(to_string(m))] = opt(v);
        j["retrieval"] = {{"generators", gens}, {"pooled", row_to_json(r.retrieval->pooled)}, {"generator_mean", mean}};
    }
    if (r.navigation) {
        json gens = json::object();
        for (const auto& [g, patterns] : r.navigation->cells) {
            json pj = json::object();
            for (const auto& [p, cell] : patterns) pj[std::string(to_string(p))] = cell_to_json(cell);
            gens[g] = std::move(pj);
        }
        j["navigation"] = {{"generators", gens}};
    }
    return j;
}

EvalReport report_from_json(const json& j) {
    try {
        EvalReport r;
        if (j.contains("retrieval")) {
            RetrievalMetrics m;
            const auto& rj = j.at("retrieval");
            for (const auto& [g, row] : rj.at("generators").items()) m.by_generator[g] = row_from_json(row);
            m.pooled = row_from_json(rj.at("pooled"));
            for (const auto& [k, v] : rj.at("generator_mean").items()) m.generator_mean[parse_metric(k)] = opt_from(v);
            r.retrieval = std::move(m);
        }
        if (j.contains("navigation")) {
            NavigationTable t;
            for (const auto& [g, pj] : j.at("navigation").at("generators").items())
                for (const auto& [p, cell] : pj.items()) t.cells[g][parse_pattern(p)] = cell_from_json(cell);
            r.navigation = std::move(t);
        }
        return r;
    } catch (const json::exception& e) {
        throw UnparsableGeneration(std::string("malformed report: ") + e.what());
    }
}

std::string report_to_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "generator,metric,value\n";
    const auto emit = [&](const std::string& g, const std::string& metric, const json& v) {
        os << g << ',' << metric << ',' << csv_value(v) << '\n';
    };
    if (r.retrieval) {
        const auto rows = [&](const std::string& g, const RetrievalRow& row) {
            emit(g, "n", row.n);
            emit(g, "excluded", row.excluded);
            for (auto m : kAllRetrievalMetrics) emit(g, std::string(to_string(m)), opt(row.accuracy.at(m).value()));
            for (auto m : kAllRetrievalMetrics)
                emit(g, std::string(to_string(m)) + "_specialty_std", opt(row.specialty_std.at(m)));
        };
        for (const auto& [g, row] : r.retrieval->by_generator) rows(g, row);
        rows("pooled", r.retrieval->pooled);
        for (auto m : kAllRetrievalMetrics) emit("mean", std::string(to_string(m)), opt(r.retrieval->generator_mean.at(m)));
    }
    if (r.navigation) {
        std::vector<double> per_gen;
        NavigationCell pooled;
        for (const auto& [g, patterns] : r.navigation->cells) {
            for (const auto& [p, cell] : patterns) {
                const auto key = "nav_" + pattern_key(p);
                emit(g, key + "_n", cell.n);
                emit(g, key + "_excluded", cell.excluded);
                for (auto c : categories_for(p)) emit(g, key + "_" + std::string(to_string(c)), opt(cell.share(c)));
                emit(g, key + "_acceptable", opt(cell.acceptable()));
            }
            const auto all = r.navigation->overall(g);
            emit(g, "nav_overall_n", all.n);
            emit(g, "nav_overall_excluded", all.excluded);
            emit(g, "nav_overall_acceptable", opt(all.acceptable()));
            if (auto v = all.acceptable()) per_gen.push_back(*v);
            pooled.n += all.n;
            pooled.excluded += all.excluded;
            for (const auto& [c, k] : all.counts) pooled.counts[c] += k;
        }
        emit("pooled", "nav_overall_n", pooled.n);
        emit("pooled", "nav_overall_acceptable", opt(pooled.acceptable()));
        std::optional<double> mean;
        if (!per_gen.empty()) {
            double s = 0.0;
            for (double v : per_gen) s += v;
            mean = s / static_cast<double>(per_gen.size());
        }
        emit("mean", "nav_overall_acceptable", opt(mean));
    }
    return os.str();
}

EmittedFiles emit_report(const EvalReport& r, const std::filesystem::path& dir, const std::string& stem) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    EmittedFiles files{dir / (stem + ".csv"), dir / (stem + ".json")};
    {
        std::ofstream out(files.csv, std::ios::binary);
        if (!out) throw IoError("cannot write " + files.csv.string());
        out << report_to_csv(r);
    }
    {
        std::ofstream out(files.json, std::ios::binary);
        if (!out) throw IoError("cannot write " + files.json.string());
        out << report_to_json(r).dump(2) << '\n';
    }
    return files;
}

EvalReport load_report(const std::filesystem::path& json_file) {
    std::ifstream in(json_file, std::ios::binary);
    if (!in) throw IoError("cannot read " + json_file.string());
    try {
        return report_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw UnparsableGeneration(std::string("report is not valid JSON: ") + e.what());
    }
}

} // namespace triage
