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

#include "triage/demographics.hpp"

#include "triage/error.hpp"
#include "triage/text.hpp"

#include <charconv>

namespace triage {

Demographics make_demographics(Sex sex, int age_value, AgeUnit unit) {
    Demographics d{sex, age_value, unit};
    if (age_value <= 0 || d.age_months() > kMaxAgeMonths) {
        throw InvalidDemographics("age must be between 1 month and 120 years, got " +
                                  std::to_string(age_value) + " " + std::string(to_string(unit)));
    }
    return d;
}

std::string_view to_string(Sex sex) noexcept { return sex == Sex::Male ? "Male" : "Female"; }

std::string_view to_string(AgeUnit unit) noexcept {
    return unit == AgeUnit::Months ? "months" : "years";
}

std::optional<Sex> parse_sex(std::string_view text) {
    const auto t = text::to_lower(text::trim(text));
    if (t == "male" || t == "m" || t == "man" || t == "boy") return Sex::Male;
    if (t == "female" || t == "f" || t == "woman" || t == "girl") return Sex::Female;
    return std::nullopt;
}

std::optional<AgeUnit> parse_age_unit(std::string_view text) {
    const auto t = text::to_lower(text::trim(text));
    if (t == "month" || t == "months" || t == "mo" || t == "mos") return AgeUnit::Months;
    if (t == "year" || t == "years" || t == "yr" || t == "yrs" || t == "y") return AgeUnit::Years;
    return std::nullopt;
}

std::optional<std::pair<int, AgeUnit>> parse_age(std::string_view input) {
    const auto tokens = text::alnum_tokens(input);
    if (tokens.empty() || tokens.size() > 3) return std::nullopt;
    int value = 0;
    const auto& num = tokens.front();
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
    if (ec != std::errc{} || ptr != num.data() + num.size()) return std::nullopt;
    if (tokens.size() == 1) return std::pair{value, AgeUnit::Years};
    const auto unit = parse_age_unit(tokens[1]);
    if (!unit) return std::nullopt;
    // "35 years old"
    if (tokens.size() == 3 && tokens[2] != "old") return std::nullopt;
    return std::pair{value, *unit};
}

} // namespace triage
