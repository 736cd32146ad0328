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

#include "triage/provider.hpp"

#include "triage/text.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace triage {

using nlohmann::json;

std::string ProviderConfig::describe() const {
    if (!configured()) return "offline (no provider configured)";
    return "base_url=" + base_url + " model=" + model +
           " embed_model=" + (embed_model.empty() ? std::string("<hash>") : embed_model) +
           " api_key=" + (api_key.empty() ? "<unset>" : "<redacted>") +
           " max_retries=" + std::to_string(max_retries);
}

std::optional<std::string> process_env(const char* name) {
    if (const char* v = std::getenv(name); v != nullptr && *v != '\0') return std::string(v);
    return std::nullopt;
}

ProviderConfig load_provider_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env) {
    ProviderConfig c;
    if (file) {
        std::ifstream in(*file);
        if (!in) throw ConfigError("cannot read provider config " + file->string());
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("provider config " + file->string() + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw ConfigError("provider config must be a JSON object");
        try {
            c.base_url = j.value("base_url", c.base_url);
            c.model = j.value("model", c.model);
            c.embed_model = j.value("embed_model", c.embed_model);
            c.api_key = j.value("api_key", c.api_key);
            c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
            c.max_retries = j.value("max_retries", c.max_retries);
            c.temperature = j.value("temperature", c.temperature);
            c.generation_temperature = j.value("generation_temperature", c.generation_temperature);
            c.requests_per_second = j.value("requests_per_second", c.requests_per_second);
            c.backoff_initial_ms = j.value("backoff_initial_ms", c.backoff_initial_ms);
            c.backoff_max_ms = j.value("backoff_max_ms", c.backoff_max_ms);
        } catch (const json::exception&) {
            // Deliberately no e.what(): it may echo the offending value.
            throw ConfigError("provider config has a field of the wrong type");
        }
    }
    if (auto v = env("TRIAGE_PROVIDER_BASE_URL")) c.base_url = *v;
    if (auto v = env("TRIAGE_PROVIDER_MODEL")) c.model = *v;
    if (auto v = env("TRIAGE_PROVIDER_KEY")) c.api_key = *v;
    if (auto v = env("TRIAGE_EMBED_MODEL")) c.embed_model = *v;
    if (c.max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (c.timeout_seconds <= 0) throw ConfigError("timeout_seconds must be > 0");
    while (!c.base_url.empty() && c.base_url.back() == '/') c.base_url.pop_back();
    return c;
}

// ---------------------------------------------------------------------------

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::chrono::milliseconds RetryPolicy::backoff(int retry) const noexcept {
    auto d = initial_backoff;
    for (int i = 1; i < retry && d < max_backoff; ++i) d *= 2;
    return std::min(d, max_backoff);
}

RetryPolicy retry_policy(const ProviderConfig& config) {
    return {config.max_retries, std::chrono::milliseconds(config.backoff_initial_ms),
            std::chrono::milliseconds(config.backoff_max_ms)};
}

bool is_transient(const Error& e) noexcept {
    return e.code() == "Timeout" || e.code() == "RateLimited" || e.code() == "ProviderUnavailable";
}

TokenBucket::TokenBucket(double tokens_per_second, double burst, Clock clock, Sleeper sleep)
    : rate_(tokens_per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })),
      sleep_(sleep ? std::move(sleep) : real_sleeper()), last_(clock_()) {}

void TokenBucket::refill_locked() {
    const auto now = clock_();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
}

bool TokenBucket::try_acquire() {
    std::lock_guard lock(mutex_);
    if (rate_ <= 0) return true;
    refill_locked();
    if (tokens_ < 1.0) return false;
    tokens_ -= 1.0;
    return true;
}

void TokenBucket::acquire() {
    while (true) {
        std::chrono::milliseconds wait{0};
        {
            std::lock_guard lock(mutex_);
            if (rate_ <= 0) return;
            refill_locked();
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            wait = std::chrono::milliseconds(
                static_cast<long long>(std::ceil((1.0 - tokens_) / rate_ * 1000.0)));
        }
        sleep_(std::max(wait, std::chrono::milliseconds(1)));
    }
}

// ---------------------------------------------------------------------------

void throw_for_status(int status, std::string_view what) {
    const std::string msg = std::string(what) + " returned HTTP " + std::to_string(status);
    if (status == 401 || status == 403) throw AuthError(msg);
    if (status == 408) throw Timeout(msg);
    if (status == 429) throw RateLimited(msg);
    if (status >= 500) throw ProviderUnavailable(msg);
    throw ProviderError(msg);
}

namespace {

class HttplibTransport final : public HttpTransport {
  public:
    HttplibTransport(const std::string& base_url, double timeout_seconds) : timeout_(timeout_seconds) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos) throw ConfigError("base_url must start with http:// or https://");
        const auto path_start = base_url.find('/', scheme_end + 3);
        origin_ = base_url.substr(0, path_start);
        prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
        if (text::starts_with_icase(base_url, "https://"))
            throw ConfigError("this build has no TLS support; use an http:// base_url");
#endif
    }

    HttpResponse post_json(const std::string& path, const std::string& body,
                           const std::string& bearer_token) const override {
        auto client = make_client(bearer_token);
        auto res = client.Post(prefix_ + path, body, "application/json");
        return unwrap(res, path);
    }

    HttpResponse get(const std::string& path, const std::string& bearer_token) const override {
        auto client = make_client(bearer_token);
        auto res = client.Get(prefix_ + path);
        return unwrap(res, path);
    }

  private:
    httplib::Client make_client(const std::string& bearer_token) const {
        httplib::Client client(origin_);
        const auto secs = static_cast<time_t>(timeout_);
        const auto usecs = static_cast<time_t>((timeout_ - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        if (!bearer_token.empty()) client.set_bearer_token_auth(bearer_token);
        return client;
    }

    static HttpResponse unwrap(const httplib::Result& res, const std::string& path) {
        if (!res) {
            const auto err = res.error();
            const auto msg = "request to " + path + " failed: " + httplib::to_string(err);
            if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                err == httplib::Error::Write)
                throw Timeout(msg);
            throw ProviderUnavailable(msg);
        }
        return {res->status, res->body};
    }

    std::string origin_;
    std::string prefix_;
    double timeout_;
};

} // namespace

std::shared_ptr<HttpTransport> make_http_transport(const std::string& base_url, double timeout_seconds) {
    return std::make_shared<HttplibTransport>(base_url, timeout_seconds);
}

// ---------------------------------------------------------------------------

StubGenerator::StubGenerator(std::string id, Fallback fallback)
    : id_(std::move(id)), fallback_(std::move(fallback)) {}

void StubGenerator::add(std::string_view prompt, std::string response) {
    canned_[text::fnv1a64(prompt)] = std::move(response);
}

std::string StubGenerator::generate(const GenerationRequest& request) const {
    if (const auto it = canned_.find(text::fnv1a64(request.prompt)); it != canned_.end()) return it->second;
    if (fallback_) return fallback_(request);
    throw ProviderError("stub generator has no canned response for this prompt");
}

ChatCompletionsGenerator::ChatCompletionsGenerator(ProviderConfig config, std::shared_ptr<HttpTransport> transport,
                                                   std::shared_ptr<TokenBucket> limiter, Sleeper sleep,
                                                   AttemptLogger log)
    : config_(std::move(config)), transport_(std::move(transport)), limiter_(std::move(limiter)),
      sleep_(std::move(sleep)), log_(std::move(log)) {}

std::string ChatCompletionsGenerator::generate(const GenerationRequest& request) const {
    if (request.prompt.empty()) throw ProviderError("empty prompt");
    const json body = {{"model", config_.model},
                       {"temperature", request.temperature},
                       {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})}};
    const auto payload = body.dump();
    return with_retries(
        retry_policy(config_),
        [&] {
            if (limiter_) limiter_->acquire();
            const auto res = transport_->post_json("/chat/completions", payload, config_.api_key);
            if (res.status < 200 || res.status >= 300) throw_for_status(res.status, "chat completion");
            try {
                const auto j = json::parse(res.body);
                return j.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception&) {
                throw MalformedProviderResponse("chat completion response has no choices[0].message.content");
            }
        },
        sleep_, log_);
}

bool ChatCompletionsGenerator::reachable() const {
    try {
        const auto res = transport_->get("/models", config_.api_key);
        return res.status > 0 && res.status < 500;
    } catch (const Error&) {
        return false;
    }
}

// ---------------------------------------------------------------------------

void normalize(EmbeddingVector& v) {
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 == 0.0) {
        if (!v.empty()) v[0] = 1.0;
        return;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
}

EmbeddingVector hash_embed(std::string_view text, std::size_t dimension) {
    EmbeddingVector v(dimension, 0.0);
    for (const auto& token : text::alnum_tokens(text)) v[text::fnv1a64(token) % dimension] += 1.0;
    normalize(v);
    return v;
}

std::string HashEmbedder::id() const { return "hash-fnv1a64-" + std::to_string(dimension_); }

std::vector<EmbeddingVector> HashEmbedder::embed(const std::vector<std::string>& texts) const {
    if (texts.empty()) throw EmbedderFailure("embed called with no texts");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(hash_embed(t, dimension_));
    return out;
}

HttpEmbedder::HttpEmbedder(ProviderConfig config, std::shared_ptr<HttpTransport> transport, std::size_t dimension,
                           std::shared_ptr<TokenBucket> limiter, Sleeper sleep, AttemptLogger log)
    : config_(std::move(config)), transport_(std::move(transport)), dimension_(dimension),
      limiter_(std::move(limiter)), sleep_(std::move(sleep)), log_(std::move(log)) {}

std::vector<EmbeddingVector> HttpEmbedder::embed(const std::vector<std::string>& texts) const {
    if (texts.empty()) throw EmbedderFailure("embed called with no texts");
    const json body = {{"model", config_.embed_model}, {"input", texts}};
    const auto payload = body.dump();
    return with_retries(
        retry_policy(config_),
        [&] {
            if (limiter_) limiter_->acquire();
            const auto res = transport_->post_json("/embeddings", payload, config_.api_key);
            if (res.status < 200 || res.status >= 300) throw_for_status(res.status, "embedding");
            std::vector<EmbeddingVector> out(texts.size());
            try {
                const auto j = json::parse(res.body);
                const auto& data = j.at("data");
                if (data.size() != texts.size()) throw MalformedProviderResponse("embedding count mismatch");
                for (std::size_t i = 0; i < data.size(); ++i) {
                    const auto index = data[i].value("index", i);
                    if (index >= out.size()) throw MalformedProviderResponse("embedding index out of range");
                    out[index] = data[i].at("embedding").get<EmbeddingVector>();
                }
            } catch (const json::exception&) {
                throw MalformedProviderResponse("embedding response is not in the expected shape");
            }
            for (auto& v : out) {
                if (v.size() != dimension_)
                    throw MalformedProviderResponse("embedding has dimension " + std::to_string(v.size()) +
                                                    ", expected " + std::to_string(dimension_));
                normalize(v);
            }
            return out;
        },
        sleep_, log_);
}

} // namespace triage
