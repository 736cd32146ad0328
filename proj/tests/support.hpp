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

// Shared fixtures for the test binaries.

#pragma once

#include "triage/conversation.hpp"
#include "triage/flowchart.hpp"
#include "triage/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace triage::testing {

inline std::filesystem::path source_dir() { return TRIAGE_SOURCE_DIR; }
inline std::filesystem::path charts_dir() { return source_dir() / "charts"; }
inline std::filesystem::path data_dir() { return source_dir() / "tests" / "data"; }

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Flowchart fig1_chart() { return parse_flowchart(read_file(data_dir() / "feeling_generally_ill.json")); }

inline std::shared_ptr<const FlowchartLibrary> fixture_library() {
    static const auto lib = std::make_shared<const FlowchartLibrary>(load_library(charts_dir()).library);
    return lib;
}

/// Monotone fake clock so trails are reproducible byte for byte.
inline TimestampClock counting_clock() {
    auto n = std::make_shared<int>(0);
    return [n] {
        char buf[32];
        std::snprintf(buf, sizeof buf, "2026-01-01T00:00:%02d.000Z", (*n)++ % 60);
        return std::string(buf);
    };
}

inline Retriever offline_retriever(std::shared_ptr<const FlowchartLibrary> lib = fixture_library()) {
    auto embedder = std::make_shared<HashEmbedder>();
    auto index = std::make_shared<RetrievalIndex>(build_index(*lib, *embedder));
    return Retriever{lib, index, embedder, std::make_shared<ArgmaxSelector>()};
}

inline Engine offline_engine(EngineConfig config = {}, std::shared_ptr<const FlowchartLibrary> lib = fixture_library()) {
    return Engine(offline_retriever(lib), std::make_shared<RuleBasedClassifier>(), std::make_shared<TemplateComposer>(),
                  config, counting_clock());
}

/// Demographics inside the chart's target group.
inline Demographics applicable_demographics(const Flowchart& f) {
    const Sex sex = f.applicability.male ? Sex::Male : Sex::Female;
    const int lo = std::max(1, f.applicability.age_min_months);
    const int hi = f.applicability.age_max_months.value_or(480);
    const int months = (lo + hi) / 2;
    return months % 12 == 0 ? Demographics{sex, months / 12, AgeUnit::Years} : Demographics{sex, months, AgeUnit::Months};
}

/// Session navigating `chart_id` from its entry, reached by stating the
/// chart's description and switching to it if it was only an alternative.
inline Session navigating(const Engine& engine, const std::string& chart_id) {
    const auto& f = engine.library().at(chart_id);
    auto s = engine.start_session(applicable_demographics(f)).session;
    s = engine.submit_message(s, f.description).session;
    if (s.phase == Phase::Navigating && s.flowchart_id != chart_id) s = engine.choose_flowchart(s, chart_id).session;
    return s;
}

} // namespace triage::testing
