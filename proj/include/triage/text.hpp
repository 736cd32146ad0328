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

// Small ASCII text helpers shared by the lexicon classifier, the hash
// embedder and the dataset parsers.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace triage::text {

[[nodiscard]] std::string to_lower(std::string_view s);
[[nodiscard]] std::string_view trim(std::string_view s);
[[nodiscard]] bool iequals(std::string_view a, std::string_view b);
[[nodiscard]] bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Replaces typographic apostrophes/quotes (UTF-8 U+2018/U+2019/U+201C/U+201D)
/// with their ASCII counterparts.
[[nodiscard]] std::string fold_quotes(std::string_view s);

/// Lowercased runs of [a-z0-9']; apostrophes are kept inside words only
/// ("don't" stays one token, "'quoted'" loses its quotes).
[[nodiscard]] std::vector<std::string> word_tokens(std::string_view s);

/// Lowercased runs of [a-z0-9]; everything else separates.
[[nodiscard]] std::vector<std::string> alnum_tokens(std::string_view s);

/// Whitespace-separated word count.
[[nodiscard]] std::size_t word_count(std::string_view s);

/// 64-bit FNV-1a.
[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

[[nodiscard]] std::string join(const std::vector<std::string>& parts, std::string_view sep);

} // namespace triage::text
