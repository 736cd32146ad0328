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

// Provider gateway: text generation and embedding behind small interfaces,
// with HTTP (chat-completions shaped) and deterministic offline backends.

#pragma once

#include "triage/error.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triage {

/// Connection settings for an OpenAI-compatible endpoint. The api key is
/// never written to logs, error messages or reports.
struct ProviderConfig {
    std::string base_url;   // e.g. "https://api.openai.com/v1"; empty = offline
    std::string model;      // chat model
    std::string embed_model; // empty = use the offline hash embedder
    std::string api_key;
    double timeout_seconds = 30.0;
    int max_retries = 3;
    double temperature = 0.0;            // decision / retrieval calls
    double generation_temperature = 0.9; // synthetic data generation
    double requests_per_second = 0.0;    // 0 = no client-side limit
    int backoff_initial_ms = 500;
    int backoff_max_ms = 8000;

    [[nodiscard]] bool configured() const noexcept { return !base_url.empty(); }
    /// Human-readable summary with the key redacted.
    [[nodiscard]] std::string describe() const;
};

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

/// Process environment lookup (std::getenv).
[[nodiscard]] std::optional<std::string> process_env(const char* name);

/// Reads an optional JSON config file then applies TRIAGE_PROVIDER_BASE_URL,
/// TRIAGE_PROVIDER_MODEL, TRIAGE_PROVIDER_KEY and TRIAGE_EMBED_MODEL on top
/// (environment wins). Throws ConfigError.
[[nodiscard]] ProviderConfig load_provider_config(const std::optional<std::filesystem::path>& file,
                                                  const EnvLookup& env = process_env);

// ---------------------------------------------------------------------------
// Retry and rate limiting

using Sleeper = std::function<void(std::chrono::milliseconds)>;
using AttemptLogger = std::function<void(const std::string&)>;

[[nodiscard]] Sleeper real_sleeper();

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::milliseconds max_backoff{8000};

    /// Delay before retry number `retry` (1-based): initial * 2^(retry-1), capped.
    [[nodiscard]] std::chrono::milliseconds backoff(int retry) const noexcept;
};

[[nodiscard]] RetryPolicy retry_policy(const ProviderConfig& config);

/// Timeout, RateLimited and ProviderUnavailable are transient.
[[nodiscard]] bool is_transient(const Error& e) noexcept;

/// Runs `call` until it succeeds, a non-transient error escapes, or
/// 1 + max_retries attempts have been made.
template <class Call>
auto with_retries(const RetryPolicy& policy, Call&& call, const Sleeper& sleep, const AttemptLogger& log)
    -> decltype(call()) {
    for (int attempt = 1;; ++attempt) {
        try {
            auto result = call();
            if (log) log("attempt " + std::to_string(attempt) + ": ok");
            return result;
        } catch (const Error& e) {
            const bool retry = is_transient(e) && attempt <= policy.max_retries;
            if (log)
                log("attempt " + std::to_string(attempt) + ": " + e.code() + (retry ? " (retrying)" : ""));
            if (!retry) throw;
            if (sleep) sleep(policy.backoff(attempt));
        }
    }
}

/// Token bucket shared by every caller of one provider. `acquire` blocks
/// (via the sleeper) until a token is available.
class TokenBucket {
  public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    TokenBucket(double tokens_per_second, double burst, Clock clock = {}, Sleeper sleep = {});

    void acquire();
    [[nodiscard]] bool try_acquire();

  private:
    void refill_locked();

    double rate_;
    double burst_;
    double tokens_;
    Clock clock_;
    Sleeper sleep_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Transport

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Minimal JSON-over-HTTP transport. Implementations throw Timeout when the
/// request times out and ProviderUnavailable when no connection is possible.
class HttpTransport {
  public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post_json(const std::string& path, const std::string& body,
                                   const std::string& bearer_token) const = 0;
    virtual HttpResponse get(const std::string& path, const std::string& bearer_token) const = 0;
};

/// cpp-httplib backed transport for `base_url` ("http(s)://host[:port][/prefix]").
[[nodiscard]] std::shared_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                                 double timeout_seconds);

/// Maps a non-2xx status to the gateway error taxonomy and throws it.
[[noreturn]] void throw_for_status(int status, std::string_view what);

// ---------------------------------------------------------------------------
// Text generation

struct GenerationRequest {
    std::string prompt;
    double temperature = 0.0;
};

/// Implementations must tolerate concurrent calls.
class TextGenerator {
  public:
    virtual ~TextGenerator() = default;
    [[nodiscard]] virtual std::string generate(const GenerationRequest& request) const = 0;
    [[nodiscard]] virtual std::string id() const = 0;
    /// Cheap liveness check used by the health endpoint.
    [[nodiscard]] virtual bool reachable() const { return true; }
};

/// Canned responses keyed by FNV-1a hash of the prompt, with an optional
/// fallback function for prompts that are not in the map.
class StubGenerator final : public TextGenerator {
  public:
    using Fallback = std::function<std::string(const GenerationRequest&)>;

    explicit StubGenerator(std::string id = "stub", Fallback fallback = {});

    void add(std::string_view prompt, std::string response);
    [[nodiscard]] std::string generate(const GenerationRequest& request) const override;
    [[nodiscard]] std::string id() const override { return id_; }

  private:
    std::string id_;
    std::map<std::uint64_t, std::string> canned_;
    Fallback fallback_;
};

/// POST {base_url}/chat/completions with a single user message.
class ChatCompletionsGenerator final : public TextGenerator {
  public:
    ChatCompletionsGenerator(ProviderConfig config, std::shared_ptr<HttpTransport> transport,
                             std::shared_ptr<TokenBucket> limiter = {}, Sleeper sleep = real_sleeper(),
                             AttemptLogger log = {});

    [[nodiscard]] std::string generate(const GenerationRequest& request) const override;
    [[nodiscard]] std::string id() const override { return config_.model; }
    [[nodiscard]] bool reachable() const override;

  private:
    ProviderConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<TokenBucket> limiter_;
    Sleeper sleep_;
    AttemptLogger log_;
};

// ---------------------------------------------------------------------------
// Embeddings

using EmbeddingVector = std::vector<double>;

inline constexpr std::size_t kHashEmbeddingDimension = 256;

/// Bag-of-tokens embedding: lowercase, split on non-alphanumerics, each
/// token's FNV-1a 64 hash mod `dimension` selects a bucket, counts are
/// L2-normalised. Text without tokens maps to the unit vector on bucket 0.
[[nodiscard]] EmbeddingVector hash_embed(std::string_view text,
                                         std::size_t dimension = kHashEmbeddingDimension);

/// In-place L2 normalisation; the zero vector becomes e_0.
void normalize(EmbeddingVector& v);

/// Implementations must tolerate concurrent calls.
class Embedder {
  public:
    virtual ~Embedder() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    [[nodiscard]] virtual std::size_t dimension() const = 0;
    /// One unit-norm vector per input. Throws on empty input list.
    [[nodiscard]] virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const = 0;
};

class HashEmbedder final : public Embedder {
  public:
    explicit HashEmbedder(std::size_t dimension = kHashEmbeddingDimension) : dimension_(dimension) {}

    [[nodiscard]] std::string id() const override;
    [[nodiscard]] std::size_t dimension() const override { return dimension_; }
    [[nodiscard]] std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const override;

  private:
    std::size_t dimension_;
};

/// POST {base_url}/embeddings; outputs are re-normalised.
class HttpEmbedder final : public Embedder {
  public:
    HttpEmbedder(ProviderConfig config, std::shared_ptr<HttpTransport> transport, std::size_t dimension,
                 std::shared_ptr<TokenBucket> limiter = {}, Sleeper sleep = real_sleeper(),
                 AttemptLogger log = {});

    [[nodiscard]] std::string id() const override { return "http:" + config_.embed_model; }
    [[nodiscard]] std::size_t dimension() const override { return dimension_; }
    [[nodiscard]] std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) const override;

  private:
    ProviderConfig config_;
    std::shared_ptr<HttpTransport> transport_;
    std::size_t dimension_;
    std::shared_ptr<TokenBucket> limiter_;
    Sleeper sleep_;
    AttemptLogger log_;
};

} // namespace triage
