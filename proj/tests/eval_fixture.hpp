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

// Hand-built evaluation fixtures shared by the unit and acceptance tests.

#pragma once

#include "support.hpp"

#include "triage/error.hpp"
#include "triage/eval.hpp"

#include <algorithm>
#include <sstream>

namespace triage::testing {

/// One axis per chart. A chart's own retrieval text maps to its axis;
/// any other text is read as "kw:<chart>:<weight>" tokens.
class KeywordEmbedder final : public Embedder {
  public:
    explicit KeywordEmbedder(const FlowchartLibrary& lib) : lib_(lib) {
        for (const auto& [id, f] : lib.charts()) ids_.push_back(id);
    }
    std::string id() const override { return "keyword-test"; }
    std::size_t dimension() const override { return ids_.size(); }
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const override {
        std::vector<EmbeddingVector> out;
        for (const auto& t : texts) {
            EmbeddingVector v(ids_.size(), 0.0);
            for (std::size_t i = 0; i < ids_.size(); ++i)
                if (t == retrieval_text(lib_.at(ids_[i]))) v[i] = 1.0;
            std::istringstream words(t);
            for (std::string w; words >> w;) {
                if (!w.starts_with("kw:")) continue;
                const auto colon = w.rfind(':');
                const auto id = w.substr(3, colon - 3);
                const auto it = std::find(ids_.begin(), ids_.end(), id);
                if (it != ids_.end()) v[static_cast<std::size_t>(it - ids_.begin())] += std::stod(w.substr(colon + 1));
            }
            normalize(v);
            out.push_back(std::move(v));
        }
        return out;
    }

  private:
    const FlowchartLibrary& lib_;
    std::vector<std::string> ids_;
};

/// Scored candidates mean the agent stage ("agent:<id>"); unscored means
/// the whole-library stage ("llm:<id>"). "fail" throws.
class TokenSelector final : public Selector {
  public:
    std::string select(const std::vector<SelectorCandidate>& c, std::string_view query) const override {
        const std::string prefix = !c.empty() && c.front().score ? "agent:" : "llm:";
        std::istringstream words{std::string(query)};
        for (std::string w; words >> w;) {
            if (w == "fail") throw Timeout("selector timed out");
            if (w.starts_with(prefix)) return w.substr(prefix.size());
        }
        return std::string(kNoFlowchartSentinel);
    }
    std::string id() const override { return "token"; }
};

/// The response text is the classifier's raw output.
class EchoClassifier final : public Classifier {
  public:
    std::string classify(std::string_view, std::string_view response) const override { return std::string(response); }
    std::string id() const override { return "echo"; }
};

struct FixtureRow {
    const char* id;
    const char* generator;
    const char* label;
    const char* text;
};

// Label ranks: r01-r17 first, r18 third, r19 fifth, r20 seventh.
// Agent hits: all but r17, r19, r20. Whole-library hits: 15.
inline constexpr FixtureRow kRetrievalFixture[] = {
    {"r01", "g1", "abdominal_pain_adult", "kw:abdominal_pain_adult:1 agent:abdominal_pain_adult llm:abdominal_pain_adult"},
    {"r02", "g1", "anxiety", "kw:anxiety:1 agent:anxiety llm:anxiety"},
    {"r03", "g1", "cough_children", "kw:cough_children:1 agent:cough_children llm:cough_children"},
    {"r04", "g1", "crying_infants", "kw:crying_infants:1 agent:crying_infants llm:crying_infants"},
    {"r05", "g1", "difficulty_breathing", "kw:difficulty_breathing:1 agent:difficulty_breathing llm:difficulty_breathing"},
    {"r06", "g1", "dizziness", "kw:dizziness:1 agent:dizziness llm:dizziness"},
    {"r07", "g1", "earache", "kw:earache:1 agent:earache llm:earache"},
    {"r08", "g1", "feeling_generally_ill", "kw:feeling_generally_ill:1 agent:feeling_generally_ill llm:feeling_generally_ill"},
    {"r09", "g1", "fever", "kw:fever:1 agent:fever llm:fever"},
    {"r10", "g1", "headache", "kw:headache:1 agent:headache llm:headache"},
    {"r11", "g2", "painful_periods", "kw:painful_periods:1 agent:painful_periods llm:painful_periods"},
    {"r12", "g2", "rash_with_fever", "kw:rash_with_fever:1 agent:rash_with_fever llm:rash_with_fever"},
    {"r13", "g2", "testicle_pain", "kw:testicle_pain:1 agent:testicle_pain llm:testicle_pain"},
    {"r14", "g2", "fever", "kw:fever:1 agent:fever llm:fever"},
    {"r15", "g2", "headache", "kw:headache:1 agent:headache llm:dizziness"},
    {"r16", "g2", "dizziness", "kw:dizziness:1 agent:dizziness"},
    {"r17", "g2", "anxiety", "kw:anxiety:1 agent:headache llm:fever"},
    {"r18", "g2", "abdominal_pain_adult",
     "kw:abdominal_pain_adult:1 kw:fever:2 kw:feeling_generally_ill:3 agent:abdominal_pain_adult llm:fever"},
    {"r19", "g2", "earache", "kw:earache:1 kw:fever:2 kw:headache:3 kw:dizziness:4 kw:anxiety:5 agent:fever llm:headache"},
    {"r20", "g2", "rash_with_fever",
     "kw:rash_with_fever:1 kw:fever:2 kw:headache:3 kw:dizziness:4 kw:anxiety:5 kw:earache:6 kw:cough_children:7 "
     "llm:rash_with_fever"},
};

inline std::vector<OpeningStatementRecord> retrieval_fixture() {
    std::vector<OpeningStatementRecord> out;
    for (const auto& r : kRetrievalFixture)
        out.push_back({r.id, r.label, Sex::Female, 40, AgeUnit::Years, Style::Brief, r.text, r.generator});
    return out;
}

inline PatientResponseRecord nav_record(std::string id, const AxisVerdict& v, ResponsePattern p, AnswerLabel l,
                                 std::string generator = "g1") {
    return {std::move(id), "fever", "N1", "Do you have a fever?", p, l, verdict_to_wire(v).dump(), std::move(generator)};
}

inline std::vector<PatientResponseRecord> navigation_fixture() {
    std::vector<PatientResponseRecord> out;
    const auto add = [&](int n, const AxisVerdict& v) {
        for (int i = 0; i < n; ++i) out.push_back(nav_record("n" + std::to_string(out.size() + 10), v, ResponsePattern::Brief, AnswerLabel::Yes));
    };
    add(12, {true, true, AxisAnswer::Yes, false}); // A
    add(5, {true, true, AxisAnswer::Yes, true});   // B
    add(2, {true, true, AxisAnswer::No, true});    // C
    add(1, {true, true, AxisAnswer::No, false});   // D
    return out;
}

inline const RetrievalIndex& keyword_index() {
    static const auto index = build_index(*fixture_library(), KeywordEmbedder(*fixture_library()));
    return index;
}

} // namespace triage::testing
