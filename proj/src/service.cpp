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

#include "triage/service.hpp"

#include "triage/text.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <map>
#include <mutex>

namespace triage {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Engine wiring

Stack build_stack(std::shared_ptr<const FlowchartLibrary> library, const StackOptions& options) {
    if (!library || library->empty()) throw EmptyLibrary("cannot build an engine over an empty library");
    Stack st;
    st.library = library;
    std::shared_ptr<const ReplyComposer> composer;
    if (options.provider.configured()) {
        const auto& cfg = options.provider;
        auto transport = make_http_transport(cfg.base_url, cfg.timeout_seconds);
        auto limiter = std::make_shared<TokenBucket>(cfg.requests_per_second, std::max(1.0, cfg.requests_per_second));
        AttemptLogger log = [](const std::string& m) { spdlog::warn("provider: {}", m); };
        st.generator = std::make_shared<ChatCompletionsGenerator>(cfg, transport, limiter, real_sleeper(), log);
        if (!cfg.embed_model.empty())
            st.embedder =
                std::make_shared<HttpEmbedder>(cfg, transport, options.embed_dimension, limiter, real_sleeper(), log);
        st.selector = std::make_shared<LlmSelector>(st.generator, cfg.temperature);
        st.classifier = std::make_shared<ProviderClassifier>(st.generator, cfg.temperature);
        composer = std::make_shared<ProviderComposer>(st.generator, cfg.temperature);
    } else {
        st.selector = std::make_shared<ArgmaxSelector>();
        st.classifier = std::make_shared<RuleBasedClassifier>();
        composer = std::make_shared<TemplateComposer>();
    }
    if (!st.embedder) st.embedder = std::make_shared<HashEmbedder>();

    std::shared_ptr<const RetrievalIndex> index;
    if (options.index_file)
        index = std::make_shared<RetrievalIndex>(RetrievalIndex::load(*options.index_file, st.embedder->id()));
    else
        index = std::make_shared<RetrievalIndex>(build_index(*library, *st.embedder));

    Retriever r{library, index, st.embedder, st.selector, options.candidates, options.applicability_filter};
    st.engine = std::make_shared<Engine>(std::move(r), st.classifier, composer, options.engine);
    return st;
}

// ---------------------------------------------------------------------------
// Projections

ServiceConfig load_service_config(ServiceConfig c, const EnvLookup& env) {
    if (auto addr = env("TRIAGE_LISTEN_ADDR"); addr && !addr->empty()) {
        const auto colon = addr->rfind(':');
        if (colon == std::string::npos) throw ConfigError("TRIAGE_LISTEN_ADDR must be host:port");
        c.host = addr->substr(0, colon);
        try {
            std::size_t used = 0;
            c.port = std::stoi(addr->substr(colon + 1), &used);
            if (used != addr->size() - colon - 1) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError("TRIAGE_LISTEN_ADDR has an invalid port");
        }
    }
    if (auto dir = env("TRIAGE_LIBRARY_DIR"); dir && !dir->empty()) c.library_dir = *dir;
    if (c.port < 0 || c.port > 65535) throw ConfigError("listen port out of range");
    if (c.stall_limit < 1) throw ConfigError("stall_limit must be >= 1");
    if (c.redirect_limit < 1) throw ConfigError("redirect_limit must be >= 1");
    if (c.idle_expiry.count() <= 0) throw ConfigError("idle expiry must be positive");
    return c;
}

json flowchart_summaries(const FlowchartLibrary& lib) {
    json out = json::array();
    for (const auto& [id, f] : lib.charts()) {
        auto doc = flowchart_to_json(f);
        out.push_back({{"id", id}, {"name", f.name}, {"specialty", f.specialty}, {"applicability", doc["applicability"]}});
    }
    return out;
}

json session_view(const Session& s, const Engine& engine) {
    const auto& lib = engine.library();
    json v = {{"id", s.id}, {"phase", to_string(s.phase)}};
    v["demographics"] = s.demographics ? json{{"sex", to_string(s.demographics->sex)},
                                              {"age_value", s.demographics->age_value},
                                              {"age_unit", to_string(s.demographics->age_unit)}}
                                       : json(nullptr);
    const auto* chart = s.flowchart_id.empty() ? nullptr : lib.find(s.flowchart_id);
    v["flowchart"] = chart ? json{{"id", chart->id}, {"name", chart->name}} : json(nullptr);
    v["node_id"] = s.node_id.empty() ? json(nullptr) : json(s.node_id);
    const auto q = engine.current_question(s);
    v["current_question"] = q ? json(*q) : json(nullptr);

    json alternatives = json::array();
    if (s.selection)
        for (const auto& c : s.selection->candidates_shown) {
            const auto* f = lib.find(c.flowchart_id);
            alternatives.push_back({{"id", c.flowchart_id},
                                    {"name", f ? f->name : c.flowchart_id},
                                    {"specialty", f ? f->specialty : ""},
                                    {"score", c.score}});
        }
    v["alternatives"] = std::move(alternatives);
    v["can_switch"] = s.phase == Phase::Navigating && s.trail.empty() && s.redirect_depth == 0 && s.selection &&
                      !s.selection->candidates_shown.empty();
    v["recommendation"] = s.recommendation.empty() ? json(nullptr) : json(s.recommendation);
    v["terminal_node_id"] = s.terminal_node_id.empty() ? json(nullptr) : json(s.terminal_node_id);
    json transcript = json::array();
    for (const auto& m : s.transcript)
        transcript.push_back({{"speaker", m.speaker == Speaker::System ? "system" : "patient"}, {"text", m.text}});
    v["transcript"] = std::move(transcript);
    v["trail_length"] = s.trail.size();
    return v;
}

int http_status_for(std::string_view code) noexcept {
    static const std::map<std::string_view, int> table{
        {"InvalidDemographics", 400},
        {"SessionClosed", 409},
        {"InvalidChartSwitch", 409},
        {"UnresolvableRedirect", 422},
        {"RedirectDepthExceeded", 422},
        {"Timeout", 503},
        {"ProviderUnavailable", 503},
        {"RateLimited", 503},
        {"AuthError", 503},
        {"ProviderError", 503},
        {"MalformedProviderResponse", 503},
        {"ClassifierFailure", 503},
        {"SelectorFailure", 503},
        {"EmbedderFailure", 503},
        {"ComposerFailure", 503},
    };
    const auto it = table.find(code);
    return it == table.end() ? 500 : it->second;
}

// ---------------------------------------------------------------------------
// Service

namespace {

using SteadyClock = std::chrono::steady_clock;

/// Thrown inside handlers to produce a specific status.
struct HttpError {
    int status;
    std::string code;
    std::string message;
};

json error_body(std::string_view code, std::string_view message) {
    return {{"error", {{"code", code}, {"message", message}}}};
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req, bool allow_empty) {
    if (text::trim(req.body).empty()) {
        if (allow_empty) return json::object();
        throw HttpError{400, "MalformedBody", "request body is required"};
    }
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) throw HttpError{400, "MalformedBody", "request body must be a JSON object"};
        return j;
    } catch (const json::parse_error&) {
        throw HttpError{400, "MalformedBody", "request body is not valid JSON"};
    }
}

std::string string_field(const json& body, const char* key) {
    const auto it = body.find(key);
    if (it == body.end() || !it->is_string())
        throw HttpError{400, "MalformedBody", std::string("field \"") + key + "\" must be a string"};
    return it->get<std::string>();
}

void only_keys(const json& body, std::initializer_list<std::string_view> keys) {
    for (const auto& [k, v] : body.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw HttpError{400, "MalformedBody", "unknown field \"" + k + "\""};
}

std::optional<Demographics> demographics_from_body(const json& body) {
    only_keys(body, {"sex", "age_value", "age_unit"});
    const bool has_sex = body.contains("sex"), has_age = body.contains("age_value");
    if (!has_sex && !has_age) {
        if (body.contains("age_unit")) throw HttpError{400, "MalformedBody", "age_unit without age_value"};
        return std::nullopt;
    }
    if (has_sex != has_age) throw HttpError{400, "MalformedBody", "sex and age_value must be given together"};
    const auto sex = parse_sex(string_field(body, "sex"));
    if (!sex) throw HttpError{400, "MalformedBody", "sex must be male or female"};
    if (!body["age_value"].is_number_integer())
        throw HttpError{400, "MalformedBody", "age_value must be an integer"};
    auto unit = AgeUnit::Years;
    if (body.contains("age_unit")) {
        const auto u = parse_age_unit(string_field(body, "age_unit"));
        if (!u) throw HttpError{400, "MalformedBody", "age_unit must be months or years"};
        unit = *u;
    }
    return make_demographics(*sex, body["age_value"].get<int>(), unit);
}

} // namespace

struct Service::Impl {
    struct Slot {
        std::mutex turn; // at most one in-flight request per session
        Session session;
        SteadyClock::time_point last_used;
    };

    std::shared_ptr<const Engine> engine;
    ServiceConfig config;
    httplib::Server server;
    mutable std::mutex store_mutex;
    std::map<std::string, std::shared_ptr<Slot>> slots;

    Impl(std::shared_ptr<const Engine> e, ServiceConfig c) : engine(std::move(e)), config(std::move(c)) {
        if (!engine) throw ConfigError("service needs an engine");
        if (config.store == StoreMode::FileSnapshot) {
            std::error_code ec;
            std::filesystem::create_directories(config.snapshot_dir, ec);
            if (ec) throw ConfigError("cannot create snapshot directory " + config.snapshot_dir.string());
        }
        routes();
    }

    [[nodiscard]] std::filesystem::path snapshot_path(const std::string& id) const {
        return config.snapshot_dir / (id + ".json");
    }

    void snapshot(const Session& s) const {
        if (config.store != StoreMode::FileSnapshot) return;
        const auto tmp = snapshot_path(s.id).string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            out << session_to_json(s).dump();
            if (!out) throw IoError("cannot write session snapshot");
        }
        std::filesystem::rename(tmp, snapshot_path(s.id));
    }

    static bool valid_id(const std::string& id) {
        return !id.empty() && id.size() <= 64 &&
               std::all_of(id.begin(), id.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
    }

    std::shared_ptr<Slot> find(const std::string& id) {
        std::lock_guard lock(store_mutex);
        if (auto it = slots.find(id); it != slots.end()) return it->second;
        if (config.store == StoreMode::FileSnapshot && valid_id(id)) {
            std::ifstream in(snapshot_path(id), std::ios::binary);
            if (in) {
                auto slot = std::make_shared<Slot>();
                slot->session = session_from_json(json::parse(in));
                slot->last_used = SteadyClock::now();
                slots[id] = slot;
                return slot;
            }
        }
        throw HttpError{404, "UnknownSession", "no session with this id"};
    }

    std::size_t expire() {
        const auto now = SteadyClock::now();
        std::lock_guard lock(store_mutex);
        std::size_t dropped = 0;
        for (auto it = slots.begin(); it != slots.end();) {
            std::unique_lock turn(it->second->turn, std::try_to_lock);
            if (turn.owns_lock() && now - it->second->last_used > config.idle_expiry) {
                if (config.store == StoreMode::FileSnapshot) {
                    std::error_code ec;
                    std::filesystem::remove(snapshot_path(it->first), ec);
                }
                turn.unlock();
                it = slots.erase(it);
                ++dropped;
            } else {
                ++it;
            }
        }
        return dropped;
    }

    template <class F>
    void guard(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const HttpError& e) {
            send_json(res, e.status, error_body(e.code, e.message));
        } catch (const Error& e) {
            const auto status = http_status_for(e.code());
            if (status >= 500) spdlog::error("{}: {}", e.code(), e.what());
            send_json(res, status, error_body(e.code(), e.what()));
        } catch (const std::exception& e) {
            spdlog::error("internal error: {}", e.what());
            send_json(res, 500, error_body("InternalError", "internal error"));
        }
    }

    /// Runs one engine turn under the session's lock and stores the result.
    template <class Turn>
    void turn(const std::string& id, httplib::Response& res, Turn&& step) {
        const auto slot = find(id);
        std::lock_guard lock(slot->turn);
        auto result = step(slot->session);
        snapshot(result.session);
        slot->session = std::move(result.session);
        slot->last_used = SteadyClock::now();
        send_json(res, 200, {{"reply", result.reply}, {"session", session_view(slot->session, *engine)}});
    }

    void routes() {
        server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                expire();
                auto d = demographics_from_body(parse_body(req, true));
                auto result = engine->start_session(d);
                auto slot = std::make_shared<Slot>();
                slot->session = std::move(result.session);
                slot->last_used = SteadyClock::now();
                snapshot(slot->session);
                {
                    std::lock_guard lock(store_mutex);
                    slots[slot->session.id] = slot;
                }
                spdlog::info("session {} started", slot->session.id);
                send_json(res, 201, session_view(slot->session, *engine));
            });
        });

        server.Post(R"(/sessions/([0-9A-Za-z]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                const auto body = parse_body(req, false);
                only_keys(body, {"text"});
                const auto text = string_field(body, "text");
                turn(req.matches[1], res, [&](const Session& s) { return engine->submit_message(s, text); });
            });
        });

        server.Post(R"(/sessions/([0-9A-Za-z]+)/switch)", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                const auto body = parse_body(req, false);
                only_keys(body, {"flowchart_id"});
                const auto target = string_field(body, "flowchart_id");
                turn(req.matches[1], res, [&](const Session& s) { return engine->choose_flowchart(s, target); });
            });
        });

        server.Get(R"(/sessions/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                const auto slot = find(req.matches[1]);
                std::lock_guard lock(slot->turn);
                send_json(res, 200, session_view(slot->session, *engine));
            });
        });

        server.Get(R"(/sessions/([0-9A-Za-z]+)/trail)", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                const auto slot = find(req.matches[1]);
                std::lock_guard lock(slot->turn);
                res.status = 200;
                res.set_content(trail_to_jsonl(slot->session.trail), "application/x-ndjson");
            });
        });

        server.Get("/flowcharts", [this](const httplib::Request&, httplib::Response& res) {
            guard(res, [&] { send_json(res, 200, flowchart_summaries(engine->library())); });
        });

        server.Get(R"(/flowcharts/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                const auto* f = engine->library().find(req.matches[1].str());
                if (!f) throw HttpError{404, "UnknownFlowchart", "no flowchart with this id"};
                send_json(res, 200, flowchart_to_json(*f));
            });
        });

        server.Post("/flowcharts:validate", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                Flowchart f;
                try {
                    f = parse_flowchart(req.body);
                } catch (const ParseError& e) {
                    json err = error_body(e.code(), e.what());
                    err["error"]["line"] = e.line();
                    err["error"]["column"] = e.column();
                    send_json(res, 400, err);
                    return;
                }
                send_json(res, 200, json(validate(f, engine->library())));
            });
        });

        server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            guard(res, [&] {
                const bool loaded = !engine->library().empty();
                const bool provider = engine->classifier().reachable();
                send_json(res, loaded && provider ? 200 : 503,
                          {{"status", loaded && provider ? "ok" : "unavailable"},
                           {"flowcharts", engine->library().size()},
                           {"classifier", engine->classifier().id()},
                           {"provider_reachable", provider}});
            });
        });

        server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
            spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
        });
    }
};

Service::Service(std::shared_ptr<const Engine> engine, ServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(engine), std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
    auto& c = impl_->config;
    if (c.port == 0) {
        const int port = impl_->server.bind_to_any_port(c.host);
        if (port < 0) throw ConfigError("cannot bind " + c.host);
        c.port = port;
    } else if (!impl_->server.bind_to_port(c.host, c.port)) {
        throw ConfigError("cannot bind " + c.host + ":" + std::to_string(c.port));
    }
    return c.port;
}

void Service::listen() {
    spdlog::info("serving {} flowcharts on {}:{}", impl_->engine->library().size(), impl_->config.host,
                 impl_->config.port);
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (impl_) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::size_t Service::session_count() const {
    std::lock_guard lock(impl_->store_mutex);
    return impl_->slots.size();
}

std::size_t Service::expire_idle() { return impl_->expire(); }

} // namespace triage
