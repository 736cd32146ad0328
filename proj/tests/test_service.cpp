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
#include "triage/service.hpp"
#include "triage/text.hpp"

#include <doctest/doctest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace triage;
using namespace triage::testing;
using nlohmann::json;

namespace {

/// Service on an ephemeral port, served from a background thread.
class Running {
  public:
    explicit Running(std::shared_ptr<const Engine> engine, ServiceConfig config = {}) {
        config.port = 0;
        service_ = std::make_unique<Service>(std::move(engine), std::move(config));
        port_ = service_->bind();
        thread_ = std::thread([this] { service_->listen(); });
        service_->wait_until_ready();
    }
    ~Running() {
        service_->stop();
        thread_.join();
    }
    Service& service() { return *service_; }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(10, 0);
        return c;
    }
    httplib::Result post(const std::string& path, const json& body) const {
        return client().Post(path, body.dump(), "application/json");
    }
    httplib::Result post_raw(const std::string& path, const std::string& body) const {
        return client().Post(path, body, "application/json");
    }
    httplib::Result get(const std::string& path) const { return client().Get(path); }

  private:
    std::unique_ptr<Service> service_;
    std::thread thread_;
    int port_ = 0;
};

std::shared_ptr<const Engine> shared_engine(EngineConfig config = {}) {
    return std::make_shared<const Engine>(offline_engine(config));
}

class UnreachableClassifier final : public Classifier {
  public:
    std::string classify(std::string_view, std::string_view) const override { throw ProviderUnavailable("offline"); }
    std::string id() const override { return "unreachable"; }
    bool reachable() const override { return false; }
};

std::uint64_t library_fingerprint() {
    std::uint64_t h = 0;
    for (const auto& e : std::filesystem::directory_iterator(charts_dir()))
        h ^= text::fnv1a64(e.path().filename().string() + read_file(e.path()));
    return h;
}

const std::vector<std::string> kScript{"I've been having a stomachache for a few hours now", "maybe",
                                       "No, this is the first time", "No", "No", "No"};

} // namespace

TEST_CASE("HTTP sessions behave exactly like the in-process engine") {
    const auto before = library_fingerprint();
    const Running srv(shared_engine());
    const auto direct = offline_engine();

    auto res = srv.post("/sessions", {{"sex", "male"}, {"age_value", 35}, {"age_unit", "years"}});
    REQUIRE(res);
    REQUIRE(res->status == 201);
    const auto view = json::parse(res->body);
    const auto id = view["id"].get<std::string>();
    CHECK(id.size() >= 32);
    CHECK(id.find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(view["phase"] == "collecting_concern");

    auto local = direct.start_session(Demographics{Sex::Male, 35, AgeUnit::Years}, id).session;
    CHECK(view["transcript"][0]["text"] == local.transcript[0].text);
    for (const auto& msg : kScript) {
        CAPTURE(msg);
        res = srv.post("/sessions/" + id + "/messages", {{"text", msg}});
        REQUIRE(res);
        REQUIRE(res->status == 200);
        const auto body = json::parse(res->body);
        const auto turn = direct.submit_message(local, msg);
        local = turn.session;
        CHECK(body["reply"] == turn.reply);
        CHECK(body["session"]["phase"] == std::string(to_string(local.phase)));
        CHECK(body["session"]["trail_length"] == local.trail.size());
    }
    CHECK(local.phase == Phase::Completed);

    res = srv.get("/sessions/" + id + "/trail");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "application/x-ndjson");
    CHECK(res->body == trail_to_jsonl(local.trail));

    res = srv.get("/sessions/" + id);
    const auto final_view = json::parse(res->body);
    CHECK(final_view["recommendation"] == local.recommendation);
    CHECK(final_view["terminal_node_id"] == local.terminal_node_id);
    CHECK(final_view["flowchart"]["id"] == "abdominal_pain_adult");
    CHECK(final_view.dump().find("api_key") == std::string::npos);

    res = srv.post("/sessions/" + id + "/messages", {{"text", "hello?"}});
    CHECK(res->status == 409);
    CHECK(json::parse(res->body)["error"]["code"] == "SessionClosed");

    const auto other = json::parse(srv.post("/sessions", json::object())->body)["id"].get<std::string>();
    CHECK(other != id);
    CHECK(library_fingerprint() == before);
}

TEST_CASE("error statuses") {
    const Running srv(shared_engine());
    CHECK(srv.post_raw("/sessions", "{not json")->status == 400);
    CHECK(srv.post("/sessions", {{"sex", "male"}})->status == 400);
    CHECK(srv.post("/sessions", {{"sex", "male"}, {"age_value", 35}, {"shoe_size", 9}})->status == 400);
    const auto bad_age = srv.post("/sessions", {{"sex", "male"}, {"age_value", 0}, {"age_unit", "months"}});
    CHECK(bad_age->status == 400);
    CHECK(json::parse(bad_age->body)["error"]["code"] == "InvalidDemographics");
    CHECK(srv.get("/sessions/0123456789abcdef0123456789abcdef")->status == 404);
    CHECK(srv.post("/sessions/0123456789abcdef0123456789abcdef/messages", {{"text", "x"}})->status == 404);
    CHECK(srv.get("/flowcharts/no_such_chart")->status == 404);

    const auto id = json::parse(srv.post("/sessions", {{"sex", "male"}, {"age_value", 35}})->body)["id"].get<std::string>();
    CHECK(srv.post("/sessions/" + id + "/messages", {{"txt", "x"}})->status == 400);
    const auto started = json::parse(srv.post("/sessions/" + id + "/messages", {{"text", kScript[0]}})->body);
    const auto alt = started["session"]["alternatives"][1]["id"].get<std::string>();
    const auto sw = srv.post("/sessions/" + id + "/switch", {{"flowchart_id", alt}});
    CHECK(sw->status == 200);
    CHECK(json::parse(sw->body)["session"]["flowchart"]["id"] == alt);
    CHECK(srv.post("/sessions/" + id + "/messages", {{"text", "no"}})->status == 200);
    const auto late = srv.post("/sessions/" + id + "/switch", {{"flowchart_id", "abdominal_pain_adult"}});
    CHECK(late->status == 409);
    CHECK(json::parse(late->body)["error"]["code"] == "InvalidChartSwitch");

    CHECK(http_status_for("RedirectDepthExceeded") == 422);
    CHECK(http_status_for("UnresolvableRedirect") == 422);
    CHECK(http_status_for("Timeout") == 503);
    CHECK(http_status_for("ClassifierFailure") == 503);
    CHECK(http_status_for("Whatever") == 500);
}

TEST_CASE("flowchart endpoints") {
    const Running srv(shared_engine());
    const auto list = json::parse(srv.get("/flowcharts")->body);
    CHECK(list.size() == fixture_library()->size());
    const auto one = json::parse(srv.get("/flowcharts/fever")->body);
    CHECK(one["id"] == "fever");
    CHECK(parse_flowchart(one.dump()) == fixture_library()->at("fever"));

    auto doc = flowchart_to_json(fig1_chart());
    for (auto& e : doc["edges"])
        if (e["from"] == "N1" && e["to"] == "F1") e["condition"] = "no";
    const auto res = srv.post_raw("/flowcharts:validate", doc.dump());
    REQUIRE(res->status == 200);
    const auto report = json::parse(res->body);
    REQUIRE(report["errors"].size() == 1);
    CHECK(report["errors"][0]["code"] == "MissingBranch");

    CHECK(json::parse(srv.post_raw("/flowcharts:validate", flowchart_to_json(fig1_chart()).dump())->body)["errors"].empty());
    const auto broken = srv.post_raw("/flowcharts:validate", "{\n  \"id\": \"x\",\n  \"name\": ,\n}");
    CHECK(broken->status == 400);
    CHECK(json::parse(broken->body)["error"]["line"] == 3);
}

TEST_CASE("health reflects the classifier") {
    {
        const Running srv(shared_engine());
        const auto res = srv.get("/healthz");
        CHECK(res->status == 200);
        const auto body = json::parse(res->body);
        CHECK(body["flowcharts"] == fixture_library()->size());
        CHECK(body["classifier"] == "rule-based");
    }
    const auto down = std::make_shared<const Engine>(offline_retriever(), std::make_shared<UnreachableClassifier>(),
                                                     std::make_shared<TemplateComposer>());
    const Running srv(down);
    CHECK(srv.get("/healthz")->status == 503);
    const auto id = json::parse(srv.post("/sessions", {{"sex", "male"}, {"age_value", 35}})->body)["id"].get<std::string>();
    CHECK(srv.post("/sessions/" + id + "/messages", {{"text", kScript[0]}})->status == 200);
    const auto res = srv.post("/sessions/" + id + "/messages", {{"text", "no"}});
    CHECK(res->status == 503);
    CHECK(json::parse(res->body)["error"]["code"] == "ProviderUnavailable");
    // The failed turn left the session where it was.
    CHECK(json::parse(srv.get("/sessions/" + id)->body)["trail_length"] == 0);
}

TEST_CASE("concurrent posts to one session are serialized") {
    const Running srv(shared_engine({1000, 5, 2}));
    const auto id = json::parse(srv.post("/sessions", {{"sex", "male"}, {"age_value", 35}})->body)["id"].get<std::string>();
    REQUIRE(srv.post("/sessions/" + id + "/messages", {{"text", kScript[0]}})->status == 200);
    constexpr int kThreads = 6, kPosts = 5;
    std::atomic<int> ok{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < kThreads; ++t)
        threads.emplace_back([&] {
            for (int i = 0; i < kPosts; ++i) {
                const auto r = srv.post("/sessions/" + id + "/messages", {{"text", "I'm not sure"}});
                if (r && r->status == 200) ++ok;
            }
        });
    for (auto& t : threads) t.join();
    CHECK(ok == kThreads * kPosts);
    const auto trail = trail_from_jsonl(srv.get("/sessions/" + id + "/trail")->body);
    REQUIRE(trail.size() == static_cast<std::size_t>(kThreads * kPosts));
    for (std::size_t i = 1; i < trail.size(); ++i) CHECK(trail[i].turn_index == trail[i - 1].turn_index + 1);
}

TEST_CASE("idle sessions expire") {
    ServiceConfig config;
    config.idle_expiry = std::chrono::seconds(0);
    Running srv(shared_engine(), config);
    const auto id = json::parse(srv.post("/sessions", json::object())->body)["id"].get<std::string>();
    CHECK(srv.service().session_count() == 1);
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    CHECK(srv.service().expire_idle() == 1);
    CHECK(srv.get("/sessions/" + id)->status == 404);
}

TEST_CASE("file snapshots survive a restart") {
    const auto dir = std::filesystem::temp_directory_path() / "triage_snapshot_test";
    std::filesystem::remove_all(dir);
    ServiceConfig config;
    config.store = StoreMode::FileSnapshot;
    config.snapshot_dir = dir;
    std::string id;
    json view;
    {
        const Running srv(shared_engine(), config);
        id = json::parse(srv.post("/sessions", {{"sex", "male"}, {"age_value", 35}})->body)["id"].get<std::string>();
        srv.post("/sessions/" + id + "/messages", {{"text", kScript[0]}});
        view = json::parse(srv.get("/sessions/" + id)->body);
        CHECK(std::filesystem::exists(dir / (id + ".json")));
    }
    const Running again(shared_engine(), config);
    const auto res = again.get("/sessions/" + id);
    REQUIRE(res->status == 200);
    CHECK(json::parse(res->body) == view);
    CHECK(again.post("/sessions/" + id + "/messages", {{"text", "no"}})->status == 200);
    std::filesystem::remove_all(dir);
}

TEST_CASE("service configuration") {
    const std::map<std::string, std::string> env{{"TRIAGE_LISTEN_ADDR", "0.0.0.0:9001"}, {"TRIAGE_LIBRARY_DIR", "/srv/charts"}};
    const auto lookup = [&](const char* k) -> std::optional<std::string> {
        const auto it = env.find(k);
        return it == env.end() ? std::nullopt : std::optional(it->second);
    };
    const auto c = load_service_config({}, lookup);
    CHECK(c.host == "0.0.0.0");
    CHECK(c.port == 9001);
    CHECK(c.library_dir == "/srv/charts");
    ServiceConfig bad;
    bad.stall_limit = 0;
    CHECK_THROWS_AS((void)load_service_config(bad, lookup), ConfigError);
    const auto offline = build_stack(fixture_library(), {});
    CHECK(offline.offline());
    CHECK(offline.classifier->id() == "rule-based");
}
