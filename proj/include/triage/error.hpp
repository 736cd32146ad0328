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

#include <stdexcept>
#include <string>

namespace triage {

/// Base of every exception thrown by the engine. `code()` is a stable,
/// machine-readable identifier (e.g. "DuplicateNodeId", "SessionClosed").
class Error : public std::runtime_error {
  public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    [[nodiscard]] const std::string& code() const noexcept { return code_; }

  private:
    std::string code_;
};

#define TRIAGE_DEFINE_ERROR(Name)                                                                  \
    class Name : public Error {                                                                    \
      public:                                                                                      \
        explicit Name(const std::string& message) : Error(#Name, message) {}                       \
    }

TRIAGE_DEFINE_ERROR(IoError);
TRIAGE_DEFINE_ERROR(EmptyLibrary);
TRIAGE_DEFINE_ERROR(InvalidFlowchart);
TRIAGE_DEFINE_ERROR(InvalidDemographics);
TRIAGE_DEFINE_ERROR(EmbedderFailure);
TRIAGE_DEFINE_ERROR(SelectorFailure);
TRIAGE_DEFINE_ERROR(MalformedStructuredOutput);
TRIAGE_DEFINE_ERROR(ClassifierFailure);
TRIAGE_DEFINE_ERROR(ComposerFailure);
TRIAGE_DEFINE_ERROR(SessionClosed);
TRIAGE_DEFINE_ERROR(UnresolvableRedirect);
TRIAGE_DEFINE_ERROR(RedirectDepthExceeded);
TRIAGE_DEFINE_ERROR(InvalidChartSwitch);
TRIAGE_DEFINE_ERROR(TemplateError);
TRIAGE_DEFINE_ERROR(IndexMismatch);
TRIAGE_DEFINE_ERROR(LabelNotInLibrary);
TRIAGE_DEFINE_ERROR(UnparsableGeneration);
TRIAGE_DEFINE_ERROR(ConfigError);

// Provider gateway failures. Transient ones are retried by the gateway.
TRIAGE_DEFINE_ERROR(AuthError);
TRIAGE_DEFINE_ERROR(RateLimited);
TRIAGE_DEFINE_ERROR(Timeout);
TRIAGE_DEFINE_ERROR(ProviderUnavailable);
TRIAGE_DEFINE_ERROR(ProviderError);
TRIAGE_DEFINE_ERROR(MalformedProviderResponse);

#undef TRIAGE_DEFINE_ERROR

/// Malformed flowchart document. `line`/`column` are 1-based; zero when the
/// problem has no single source position (e.g. a schema violation).
class ParseError : public Error {
  public:
    ParseError(std::string code, const std::string& message, std::size_t byte = 0,
               std::size_t line = 0, std::size_t column = 0)
        : Error(std::move(code), message), byte_(byte), line_(line), column_(column) {}

    [[nodiscard]] std::size_t byte() const noexcept { return byte_; }
    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }

  private:
    std::size_t byte_;
    std::size_t line_;
    std::size_t column_;
};

} // namespace triage
