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

// triage: command line entry point for validation, retrieval, terminal
// chat, the evaluation harness and the HTTP service.

#include "triage/eval.hpp"
#include "triage/service.hpp"
#include "triage/text.hpp"

#include <CLI/CLI.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iomanip>
#include <iostream>

namespace {

using namespace triage;

constexpr int kOperationalFailure = 1;
constexpr int kUsageError = 2;

struct Common {
    std::string library = "charts";
    std::string provider_config;
    std::string index_file;
    bool offline = false;
    bool no_filter = false;
    std::string log_level = "warn";
};

std::shared_ptr<const FlowchartLibrary> load_checked(const std::string& dir) {
    auto loaded = load_library(dir);
    for (const auto& e : loaded.report.errors)
        spdlog::warn("{} {} {}: {}", e.flowchart_id, e.locus, e.code, e.message);
    if (loaded.library.empty()) throw EmptyLibrary("no valid flowcharts in " + dir);
    return std::make_shared<const FlowchartLibrary>(std::move(loaded.library));
}

ProviderConfig provider_config(const Common& c) {
    if (c.offline) return {};
    std::optional<std::filesystem::path> file;
    if (!c.provider_config.empty()) file = c.provider_config;
    return load_provider_config(file);
}

Stack make_stack(const Common& c, std::shared_ptr<const FlowchartLibrary> lib) {
    StackOptions o;
    o.provider = provider_config(c);
    o.applicability_filter = !c.no_filter;
    if (!c.index_file.empty()) o.index_file = c.index_file;
    spdlog::info("provider: {}", o.provider.configured() ? o.provider.describe() : "offline");
    return build_stack(std::move(lib), o);
}

void print_report(const ValidationReport& r) {
    for (const auto& e : r.errors)
        std::cout << "error   " << e.flowchart_id << ' ' << e.locus << ' ' << e.code << ": " << e.message << '\n';
    for (const auto& w : r.warnings)
        std::cout << "warning " << w.flowchart_id << ' ' << w.locus << ' ' << w.code << ": " << w.message << '\n';
    std::cout << r.errors.size() << " error(s), " << r.warnings.size() << " warning(s)\n";
}

int cmd_validate(const std::string& dir) {
    auto loaded = load_library(dir);
    print_report(loaded.report);
    std::cout << loaded.library.size() << " flowchart(s) loaded\n";
    return loaded.report.ok() ? 0 : kOperationalFailure;
}

int cmd_paths(const Common& c, const std::string& chart_id, const std::string& file) {
    Flowchart f;
    if (!file.empty()) {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw IoError("cannot read " + file);
        f = parse_flowchart(std::string(std::istreambuf_iterator<char>(in), {}));
        if (!chart_id.empty() && f.id != chart_id) throw InvalidFlowchart(file + " holds chart '" + f.id + "'");
    } else {
        const auto lib = load_checked(c.library);
        f = lib->at(chart_id);
    }
    for (const auto& p : enumerate_paths(f)) {
        for (const auto& [node, answer] : p.answers) std::cout << node << '=' << to_string(answer) << ' ';
        std::cout << "-> " << p.terminal << '\n';
    }
    return 0;
}

int cmd_index(const Common& c, const std::string& dir, const std::string& out) {
    Common copy = c;
    copy.library = dir;
    copy.index_file.clear();
    const auto stack = make_stack(copy, load_checked(dir));
    const auto index = build_index(*stack.library, *stack.embedder);
    index.save(out);
    std::cout << "indexed " << index.size() << " flowchart(s) with " << index.embedder_id() << " into " << out << '\n';
    return 0;
}

Demographics demographics_from(const std::string& sex, const std::string& age) {
    const auto s = parse_sex(sex);
    const auto a = parse_age(age);
    if (!s || !a) throw CLI::ValidationError("--sex/--age", "expected e.g. --sex male --age \"35 years\"");
    return make_demographics(*s, a->first, a->second);
}

int cmd_retrieve(const Common& c, const std::string& sex, const std::string& age, const std::string& statement) {
    const auto d = demographics_from(sex, age);
    const auto stack = make_stack(c, load_checked(c.library));
    const auto r = stack.engine->retriever().retrieve(d, statement);
    std::cout << "query: " << r.query_text << '\n';
    std::cout << "selected: " << (r.selection.flowchart_id ? *r.selection.flowchart_id : std::string(kNoFlowchartSentinel))
              << '\n';
    std::cout << "alternatives:";
    for (const auto& a : r.selection.candidates_shown) std::cout << ' ' << a.flowchart_id;
    std::cout << '\n';
    for (const auto& w : r.selection.warnings) std::cout << "warning: " << w << '\n';
    std::cout << std::fixed << std::setprecision(6);
    for (std::size_t i = 0; i < r.ranked.size(); ++i)
        std::cout << std::setw(3) << (i + 1) << "  " << r.ranked[i].score << "  " << r.ranked[i].flowchart_id << '\n';
    return 0;
}

int cmd_chat(const Common& c, const std::string& sex, const std::string& age) {
    const auto stack = make_stack(c, load_checked(c.library));
    std::optional<Demographics> d;
    if (!sex.empty() || !age.empty()) d = demographics_from(sex, age);
    auto turn = stack.engine->start_session(d);
    std::cout << turn.reply << "\n> " << std::flush;
    for (std::string line; std::getline(std::cin, line);) {
        if (text::trim(line).empty()) {
            std::cout << "> " << std::flush;
            continue;
        }
        try {
            turn = stack.engine->submit_message(turn.session, line);
        } catch (const Error& e) {
            std::cout << "[" << e.code() << "] " << e.what() << '\n';
            return kOperationalFailure;
        }
        std::cout << turn.reply << '\n';
        if (is_closed(turn.session.phase)) {
            std::cout << "[" << to_string(turn.session.phase) << "]\n";
            return 0;
        }
        std::cout << "> " << std::flush;
    }
    return 0;
}

struct GenerateArgs {
    std::string kind = "openings";
    std::string out;
    std::string style = "brief";
    std::size_t per_chart = 5;
    std::size_t per_cell = 5;
    std::string generator_id;
};

int cmd_eval_generate(const Common& c, const GenerateArgs& g) {
    const auto lib = load_checked(c.library);
    const auto cfg = provider_config(c);
    std::shared_ptr<const TextGenerator> gen;
    GenerationOptions opts;
    if (cfg.configured()) {
        auto transport = make_http_transport(cfg.base_url, cfg.timeout_seconds);
        gen = std::make_shared<ChatCompletionsGenerator>(cfg, transport);
        opts.temperature = cfg.generation_temperature;
    } else {
        gen = std::make_shared<OfflineDatasetGenerator>(lib, g.generator_id.empty() ? "offline" : g.generator_id);
    }
    std::vector<std::string> warnings;
    std::size_t n = 0;
    if (g.kind == "openings") {
        auto r = generate_opening_statements(*lib, *gen, g.per_chart, parse_style(g.style), opts);
        write_jsonl(g.out, r.records);
        warnings = std::move(r.warnings);
        n = r.records.size();
    } else {
        auto r = generate_responses(*lib, *gen, g.per_cell, opts);
        write_jsonl(g.out, r.records);
        warnings = std::move(r.warnings);
        n = r.records.size();
    }
    for (const auto& w : warnings) spdlog::warn("{}", w);
    std::cout << "wrote " << n << " record(s) to " << g.out << " (" << warnings.size() << " warning(s))\n";
    return 0;
}

struct RunArgs {
    std::string openings;
    std::string responses;
    std::string out_dir = "report";
    std::string stem = "report";
    bool serial = false;
};

int cmd_eval_run(const Common& c, const RunArgs& a) {
    if (a.openings.empty() && a.responses.empty())
        throw CLI::ValidationError("eval-run", "give --openings and/or --responses");
    const auto stack = make_stack(c, load_checked(c.library));
    EvalReport report;
    if (!a.openings.empty()) {
        std::vector<std::string> warnings;
        const auto records = read_openings(a.openings, &warnings);
        for (const auto& w : warnings) spdlog::warn("{}", w);
        RetrievalEvalOptions o;
        o.applicability_filter = !c.no_filter;
        o.parallel = !a.serial;
        report.retrieval = eval_retrieval(records, *stack.library, *stack.engine->retriever().index,
                                          *stack.embedder, *stack.selector, o);
    }
    if (!a.responses.empty())
        report.navigation = eval_navigation(read_responses(a.responses), *stack.classifier, !a.serial);
    const auto files = emit_report(report, a.out_dir, a.stem);
    std::cout << report_to_csv(report);
    std::cout << "wrote " << files.csv.string() << " and " << files.json.string() << '\n';
    return 0;
}

struct ServeArgs {
    std::string host;
    int port = -1;
    std::string snapshot_dir;
    int idle_minutes = 30;
    int stall_limit = 3;
    int redirect_limit = 5;
};

triage::Service* g_service = nullptr;

extern "C" void on_signal(int) {
    if (g_service) g_service->stop();
}

int cmd_serve(const Common& c, const ServeArgs& a) {
    ServiceConfig cfg;
    cfg.library_dir = c.library;
    cfg = load_service_config(cfg);
    if (!a.host.empty()) cfg.host = a.host;
    if (a.port >= 0) cfg.port = a.port;
    if (!a.snapshot_dir.empty()) {
        cfg.store = StoreMode::FileSnapshot;
        cfg.snapshot_dir = a.snapshot_dir;
    }
    cfg.idle_expiry = std::chrono::minutes(a.idle_minutes);
    cfg.stall_limit = a.stall_limit;
    cfg.redirect_limit = a.redirect_limit;
    cfg.applicability_filter = !c.no_filter;
    cfg = load_service_config(cfg, [](const char*) { return std::optional<std::string>{}; });

    auto loaded = load_library(cfg.library_dir);
    if (!loaded.report.ok()) {
        print_report(loaded.report);
        throw InvalidFlowchart("the library must load without errors before serving");
    }
    StackOptions so;
    so.provider = provider_config(c);
    so.applicability_filter = cfg.applicability_filter;
    so.engine.stall_limit = cfg.stall_limit;
    so.engine.redirect_limit = cfg.redirect_limit;
    if (!c.index_file.empty()) so.index_file = c.index_file;
    const auto stack = build_stack(std::make_shared<const FlowchartLibrary>(std::move(loaded.library)), so);

    Service service(stack.engine, cfg);
    const int port = service.bind();
    std::cout << "listening on http://" << cfg.host << ':' << port << std::endl;
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    service.listen();
    g_service = nullptr;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flowchart-guided conversational self-triage"};
    app.require_subcommand(1);
    Common common;
    if (const auto dir = process_env("TRIAGE_LIBRARY_DIR")) common.library = *dir;
    app.add_option("--library", common.library, "Directory of flowchart JSON documents");
    app.add_option("--provider-config", common.provider_config, "Provider JSON config file");
    app.add_option("--index", common.index_file, "Persisted retrieval index");
    app.add_flag("--offline", common.offline, "Ignore any provider configuration");
    app.add_flag("--no-applicability-filter", common.no_filter, "Rank inapplicable charts too");
    app.add_option("--log-level", common.log_level, "trace, debug, info, warn, error")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    std::string dir, out, chart_id, chart_file, sex, age, statement;
    auto* validate_cmd = app.add_subcommand("validate", "Validate every chart in a directory");
    validate_cmd->add_option("dir", dir)->required();

    auto* paths_cmd = app.add_subcommand("paths", "List root-to-terminal answer paths of a chart");
    paths_cmd->add_option("chart-id", chart_id);
    paths_cmd->add_option("--file", chart_file, "Read the chart from this document instead of the library");

    auto* index_cmd = app.add_subcommand("index", "Build and save the retrieval index");
    index_cmd->add_option("dir", dir)->required();
    index_cmd->add_option("out", out)->required();

    auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank charts for an opening statement");
    retrieve_cmd->add_option("--sex", sex)->required();
    retrieve_cmd->add_option("--age", age)->required();
    retrieve_cmd->add_option("--text", statement)->required();

    auto* chat_cmd = app.add_subcommand("chat", "Interactive terminal session");
    chat_cmd->add_option("--sex", sex);
    chat_cmd->add_option("--age", age);

    GenerateArgs gen;
    auto* gen_cmd = app.add_subcommand("eval-generate", "Generate a synthetic evaluation dataset");
    gen_cmd->add_option("--kind", gen.kind)->check(CLI::IsMember({"openings", "responses"}));
    gen_cmd->add_option("--out", gen.out)->required();
    gen_cmd->add_option("--style", gen.style)->check(CLI::IsMember({"brief", "detailed"}));
    gen_cmd->add_option("--per-chart", gen.per_chart)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--per-cell", gen.per_cell)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--generator-id", gen.generator_id, "Generator name recorded offline");

    RunArgs run;
    auto* run_cmd = app.add_subcommand("eval-run", "Score datasets and write CSV/JSON reports");
    run_cmd->add_option("--openings", run.openings);
    run_cmd->add_option("--responses", run.responses);
    run_cmd->add_option("--out", run.out_dir);
    run_cmd->add_option("--stem", run.stem);
    run_cmd->add_flag("--serial", run.serial, "Disable the parallel kernels");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP service");
    serve_cmd->add_option("--host", serve.host);
    serve_cmd->add_option("--port", serve.port)->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--snapshot-dir", serve.snapshot_dir, "Keep file snapshots of sessions here");
    serve_cmd->add_option("--idle-minutes", serve.idle_minutes)->check(CLI::PositiveNumber);
    serve_cmd->add_option("--stall-limit", serve.stall_limit)->check(CLI::PositiveNumber);
    serve_cmd->add_option("--redirect-limit", serve.redirect_limit)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("triage"));
    spdlog::set_level(spdlog::level::from_str(common.log_level));

    try {
        if (*validate_cmd) return cmd_validate(dir);
        if (*paths_cmd) {
            if (chart_id.empty() && chart_file.empty())
                throw CLI::ValidationError("paths", "give a chart id or --file");
            return cmd_paths(common, chart_id, chart_file);
        }
        if (*index_cmd) return cmd_index(common, dir, out);
        if (*retrieve_cmd) return cmd_retrieve(common, sex, age, statement);
        if (*chat_cmd) return cmd_chat(common, sex, age);
        if (*gen_cmd) return cmd_eval_generate(common, gen);
        if (*run_cmd) return cmd_eval_run(common, run);
        if (*serve_cmd) return cmd_serve(common, serve);
    } catch (const CLI::Error& e) {
        std::cerr << e.what() << '\n';
        return kUsageError;
    } catch (const Error& e) {
        std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
        return kOperationalFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOperationalFailure;
    }
    return kUsageError;
}
