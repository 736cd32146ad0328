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
#include "triage/retrieval.hpp"
#include "triage/text.hpp"

#include <doctest/doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace triage;
using namespace triage::testing;

namespace {

const RetrievalIndex& fixture_index() {
    static const auto index = build_index(*fixture_library(), HashEmbedder());
    return index;
}

/// Plain loop dot product, independent of the scoring kernels.
double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
    return static_cast<double>(s);
}

class FixedSelector final : public Selector {
  public:
    explicit FixedSelector(std::string out) : out_(std::move(out)) {}
    std::string select(const std::vector<SelectorCandidate>& c, std::string_view) const override {
        seen = c.size();
        return out_;
    }
    std::string id() const override { return "fixed"; }
    mutable std::size_t seen = 0;

  private:
    std::string out_;
};

class ThrowingSelector final : public Selector {
  public:
    std::string select(const std::vector<SelectorCandidate>&, std::string_view) const override {
        throw Timeout("slow");
    }
    std::string id() const override { return "throws"; }
};

SearchOptions top_n(std::size_t n, std::optional<Demographics> filter = std::nullopt) {
    SearchOptions o;
    o.n = n;
    o.filter = filter;
    return o;
}

/// Random queries assembled from one chart's description tokens.
std::vector<std::pair<std::string, std::string>> random_queries(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::vector<const Flowchart*> charts;
    for (const auto& [id, f] : fixture_library()->charts()) charts.push_back(&f);
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto* f = charts[rng() % charts.size()];
        const auto tokens = text::alnum_tokens(f->description + " " + f->name);
        std::vector<std::string> words;
        const std::size_t len = 1 + rng() % 6;
        for (std::size_t k = 0; k < len; ++k) words.push_back(tokens[rng() % tokens.size()]);
        out.emplace_back(f->id, text::join(words, " "));
    }
    return out;
}

} // namespace

TEST_CASE("index has one unit-norm entry per chart and rebuilds identically") {
    const auto& index = fixture_index();
    CHECK(index.size() == fixture_library()->size());
    CHECK(index.dimension() == kHashEmbeddingDimension);
    for (const auto& e : index.entries()) CHECK(std::sqrt(dot(e.embedding, e.embedding)) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::is_sorted(index.entries().begin(), index.entries().end(),
                         [](const auto& a, const auto& b) { return a.flowchart_id < b.flowchart_id; }));
    const auto again = build_index(*fixture_library(), HashEmbedder());
    CHECK(again.to_json().dump(1) == index.to_json().dump(1));
    CHECK_THROWS_AS((void)build_index(FlowchartLibrary{}, HashEmbedder()), EmptyLibrary);
}

TEST_CASE("a chart's own retrieval text ranks it first with cosine one") {
    const auto& lib = *fixture_library();
    for (const auto& [id, f] : lib.charts()) {
        const auto top = search(fixture_index(), lib, HashEmbedder(), retrieval_text(f), top_n(1));
        REQUIRE(top.size() == 1);
        CHECK(top[0].flowchart_id == id);
        CHECK(top[0].score == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("kernel scores equal an independent dot product; serial equals parallel") {
    const HashEmbedder h;
    for (const auto& [label, q] : random_queries(200, 7)) {
        const auto v = h.embed({q})[0];
        const auto s = score_serial(fixture_index(), v);
        const auto p = score_parallel(fixture_index(), v);
        REQUIRE(s.size() == fixture_index().size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(s[i] == doctest::Approx(dot(v, fixture_index().entries()[i].embedding)).epsilon(1e-6));
            CHECK(std::abs(s[i] - p[i]) <= 1e-12);
        }
    }
}

TEST_CASE("top-k lists nest and hit rates are monotone over 1000 random queries") {
    const auto& lib = *fixture_library();
    const HashEmbedder h;
    int hit1 = 0, hit3 = 0, hit5 = 0;
    for (const auto& [label, q] : random_queries(1000, 42)) {
        const auto all = search(fixture_index(), lib, h, q, top_n(lib.size()));
        for (const std::size_t k : {1u, 3u, 5u}) {
            const auto top = search(fixture_index(), lib, h, q, top_n(k));
            REQUIRE(top.size() == k);
            CHECK(std::equal(top.begin(), top.end(), all.begin()));
        }
        // Independent rescoring of the label's rank.
        const auto qv = h.embed({q})[0];
        double label_score = 0;
        for (const auto& e : fixture_index().entries())
            if (e.flowchart_id == label) label_score = dot(qv, e.embedding);
        std::size_t rank = 1;
        for (const auto& e : fixture_index().entries()) {
            const double s = dot(qv, e.embedding);
            if (e.flowchart_id != label && (s > label_score + 1e-12 || (std::abs(s - label_score) <= 1e-12 && e.flowchart_id < label)))
                ++rank;
        }
        const auto pos = std::find_if(all.begin(), all.end(), [&](const auto& c) { return c.flowchart_id == label; });
        CHECK(static_cast<std::size_t>(pos - all.begin()) + 1 == rank);
        hit1 += rank <= 1;
        hit3 += rank <= 3;
        hit5 += rank <= 5;
    }
    CHECK(hit1 <= hit3);
    CHECK(hit3 <= hit5);
    CHECK(hit1 > 0);
}

TEST_CASE("ranking breaks ties by ascending id and honours the keep mask") {
    RetrievalIndex index("t", 1, {{"b", "", {1.0}}, {"a", "", {1.0}}, {"c", "", {1.0}}});
    const auto r = rank(index, {0.5, 0.5, 0.9}, 3);
    REQUIRE(r.size() == 3);
    CHECK(r[0].flowchart_id == "c");
    CHECK(r[1].flowchart_id == "a");
    CHECK(r[2].flowchart_id == "b");
    const auto kept = rank(index, {0.5, 0.5, 0.9}, 3, {true, false, false});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].flowchart_id == "a"); // rows are stored sorted by id
    CHECK_THROWS_AS(RetrievalIndex("t", 2, {{"a", "", {1.0}}}), IndexMismatch);
}

TEST_CASE("the applicability filter never returns an inapplicable chart") {
    const auto& lib = *fixture_library();
    const HashEmbedder h;
    for (const Sex sex : {Sex::Male, Sex::Female})
        for (int months = 1; months <= 1200; months += 7) {
            const Demographics d{sex, months, AgeUnit::Months};
            const auto got = search(fixture_index(), lib, h, compose_query_text(d, "pain and fever"), top_n(lib.size(), d));
            std::size_t applicable = 0;
            for (const auto& [id, f] : lib.charts()) applicable += is_applicable(f, d);
            CHECK(got.size() == applicable);
            for (const auto& c : got) CHECK(is_applicable(lib.at(c.flowchart_id), d));
        }
}

TEST_CASE("query text template") {
    CHECK(compose_query_text({Sex::Male, 35, AgeUnit::Years}, "I've been having a stomachache for a few hours now") ==
          "Sex: Male. Age: 35 years. Concern: I've been having a stomachache for a few hours now");
    CHECK(compose_query_text({Sex::Female, 3, AgeUnit::Months}, "x") == "Sex: Female. Age: 3 months. Concern: x");
}

TEST_CASE("index persistence round-trips and rejects another embedder") {
    const auto file = std::filesystem::temp_directory_path() / "triage_index_test.json";
    fixture_index().save(file);
    CHECK(RetrievalIndex::load(file, HashEmbedder().id()) == fixture_index());
    CHECK_THROWS_AS((void)RetrievalIndex::load(file, "http:other"), IndexMismatch);
    CHECK_THROWS_AS((void)search(fixture_index(), *fixture_library(), HashEmbedder(64), "x"), IndexMismatch);
    std::filesystem::remove(file);
    CHECK_THROWS_AS((void)RetrievalIndex::load(file, HashEmbedder().id()), IoError);
}

TEST_CASE("selector output resolution") {
    const auto& lib = *fixture_library();
    const std::vector<std::string> allowed{"abdominal_pain_adult", "fever"};
    CHECK(resolve_selector_output("fever", allowed, lib) == "fever");
    CHECK(resolve_selector_output("Abdominal Pain In Adults Flowchart", allowed, lib) == "abdominal_pain_adult");
    CHECK(resolve_selector_output("\"abdominal pain in adults.\"", allowed, lib) == "abdominal_pain_adult");
    CHECK_FALSE(resolve_selector_output("Headache Flowchart", allowed, lib));
    CHECK_FALSE(resolve_selector_output(kNoFlowchartSentinel, allowed, lib));
}

TEST_CASE("select_flowchart outcomes") {
    const auto& lib = *fixture_library();
    const auto ranked = search(fixture_index(), lib, HashEmbedder(), "fever and chills", top_n(10));
    SUBCASE("argmax picks rank one and shows three") {
        const auto sel = select_flowchart(ranked, lib, "q", ArgmaxSelector());
        CHECK(sel.flowchart_id == ranked[0].flowchart_id);
        CHECK(sel.candidates_shown.size() == kShownAlternatives);
        const auto one = search(fixture_index(), lib, HashEmbedder(), "fever and chills", top_n(1));
        CHECK(sel.flowchart_id == one[0].flowchart_id);
    }
    SUBCASE("empty candidates") {
        FixedSelector s("fever");
        CHECK_FALSE(select_flowchart({}, lib, "q", s).has_chart());
        CHECK(s.seen == 0);
    }
    SUBCASE("sentinel and unknown output") {
        FixedSelector none{std::string(kNoFlowchartSentinel)};
        const auto a = select_flowchart(ranked, lib, "q", none);
        CHECK_FALSE(a.has_chart());
        CHECK(none.seen == ranked.size());
        FixedSelector stray("Toothache Flowchart");
        const auto b = select_flowchart(ranked, lib, "q", stray);
        CHECK_FALSE(b.has_chart());
        CHECK(b.warnings.size() == 1);
    }
    SUBCASE("selector errors become SelectorFailure") {
        CHECK_THROWS_AS((void)select_flowchart(ranked, lib, "q", ThrowingSelector()), SelectorFailure);
    }
    SUBCASE("llm selector sees the candidate block") {
        auto gen = std::make_shared<StubGenerator>("s", [](const GenerationRequest& r) {
            return r.prompt.find("[id: fever]") != std::string::npos ? "Fever Flowchart" : "none";
        });
        const auto sel = select_flowchart(ranked, lib, "q", LlmSelector(gen));
        CHECK(sel.flowchart_id == "fever");
    }
}

TEST_CASE("the worked stomachache example retrieves the adult abdominal pain chart") {
    const auto r = offline_retriever().retrieve({Sex::Male, 35, AgeUnit::Years},
                                                "I've been having a stomachache for a few hours now");
    CHECK(r.selection.flowchart_id == "abdominal_pain_adult");
    CHECK(r.query_text == "Sex: Male. Age: 35 years. Concern: I've been having a stomachache for a few hours now");
    CHECK(r.ranked.size() <= kDefaultCandidates);
    // Pure function of inputs.
    const auto again = offline_retriever().retrieve({Sex::Male, 35, AgeUnit::Years},
                                                    "I've been having a stomachache for a few hours now");
    CHECK(again.ranked == r.ranked);
}
