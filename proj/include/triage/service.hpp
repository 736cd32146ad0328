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

// HTTP JSON service over the conversation engine, plus the wiring that
// assembles an engine from a library and provider settings.

#pragma once

#include "triage/conversation.hpp"
#include "triage/provider.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace triage {

// ---------------------------------------------------------------------------
// Engine wiring

struct StackOptions {
    /// Empty base_url selects the offline stack: hash embedder, top-score
    /// selector, rule-based classifier and template composer.
    ProviderConfig provider;
    std::size_t embed_dimension = 1536; // provider embeddings only
    std::optional<std::filesystem::path> index_file;
    bool applicability_filter = true;
    std::size_t candidates = kDefaultCandidates;
    EngineConfig engine;
};

struct Stack {
    std::shared_ptr<const FlowchartLibrary> library;
    std::shared_ptr<const Engine> engine;
    std::shared_ptr<const TextGenerator> generator; // null when offline
    std::shared_ptr<const Embedder> embedder;
    std::shared_ptr<const Selector> selector;
    std::shared_ptr<const Classifier> classifier;

    [[nodiscard]] bool offline() const noexcept { return generator == nullptr; }
};

/// Loads the index from `index_file` when given (IndexMismatch if it was
/// built by another embedder), otherwise builds it in memory.
[[nodiscard]] Stack build_stack(std::shared_ptr<const FlowchartLibrary> library, const StackOptions& options);

// ---------------------------------------------------------------------------
// Service

enum class StoreMode { Memory, FileSnapshot };

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path library_dir = "charts";
    std::optional<std::filesystem::path> provider_config_file;
    bool applicability_filter = true;
    int stall_limit = 3;
    int redirect_limit = 5;
    StoreMode store = StoreMode::Memory;
    std::filesystem::path snapshot_dir = "sessions";
    std::chrono::seconds idle_expiry{30 * 60};
};

/// Applies TRIAGE_LISTEN_ADDR ("host:port") and TRIAGE_LIBRARY_DIR, then
/// checks the limits. Throws ConfigError.
[[nodiscard]] ServiceConfig load_service_config(ServiceConfig base, const EnvLookup& env = process_env);

/// Client-facing projection of a session.
[[nodiscard]] nlohmann::json session_view(const Session& s, const Engine& engine);

/// {"id","name","specialty","applicability"} per chart.
[[nodiscard]] nlohmann::json flowchart_summaries(const FlowchartLibrary& lib);

/// HTTP status for an engine or gateway error code.
[[nodiscard]] int http_status_for(std::string_view error_code) noexcept;

class Service {
  public:
    Service(std::shared_ptr<const Engine> engine, ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds `config.host`; port 0 picks a free one. Returns the bound port.
    int bind();
    /// Blocks serving requests until `stop`.
    void listen();
    void stop();
    void wait_until_ready() const;

    [[nodiscard]] std::size_t session_count() const;
    /// Drops sessions idle for longer than the configured expiry.
    std::size_t expire_idle();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace triage
