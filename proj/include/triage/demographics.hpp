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

#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace triage {

enum class Sex { Male, Female };
enum class AgeUnit { Months, Years };

inline constexpr int kMaxAgeMonths = 1440;

/// Patient sex and age. Age is kept as entered (value + unit) so it can be
/// echoed back; range checks always go through `age_months()`.
struct Demographics {
    Sex sex = Sex::Female;
    int age_value = 0;
    AgeUnit age_unit = AgeUnit::Years;

    [[nodiscard]] int age_months() const noexcept {
        return age_unit == AgeUnit::Years ? age_value * 12 : age_value;
    }

    bool operator==(const Demographics&) const = default;
};

/// Throws InvalidDemographics unless 0 < months <= 1440.
Demographics make_demographics(Sex sex, int age_value, AgeUnit unit);

[[nodiscard]] std::string_view to_string(Sex sex) noexcept;
[[nodiscard]] std::string_view to_string(AgeUnit unit) noexcept;

// Case-insensitive; accept "male"/"m", "female"/"f", "month(s)"/"year(s)".
[[nodiscard]] std::optional<Sex> parse_sex(std::string_view text);
[[nodiscard]] std::optional<AgeUnit> parse_age_unit(std::string_view text);

/// Parses "35 years", "3 months", "18-month", "1 month". A bare number is
/// taken as years.
[[nodiscard]] std::optional<std::pair<int, AgeUnit>> parse_age(std::string_view text);

} // namespace triage
