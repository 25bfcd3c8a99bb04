// Operator entry point: serve, run-bot, analyze, replay, plan.

#include <csignal>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vrfb/live_session.hpp"
#include "vrfb/metrics.hpp"
#include "vrfb/runner.hpp"
#include "vrfb/server.hpp"
#include "vrfb/settings.hpp"

namespace fs = std::filesystem;
using namespace vrfb;

namespace {

struct Common {
    std::string config;
    std::string kind = "both";
    std::uint64_t seed = 0;
    int trials = 5;
    std::string mode = "both";
    std::string participant = "P01";
    std::string out = "runs";
};

Settings settings_from(const Common& c) { return c.config.empty() ? Settings{} : load_settings(c.config); }

std::optional<TaskKind> kind_from(const std::string& s) {
    if (s == "both") return std::nullopt;
    return parse_task_kind(s);
}

std::vector<ControllerMode> modes_from(const std::string& s) {
    if (s == "both") return {ControllerMode::two_button, ControllerMode::one_handed};
    return {*parse_controller_mode(s)};
}

SessionMeta meta_from(const Common& c, const Settings& s) {
    SessionMeta m;
    m.participant_id = c.participant;
    m.plan_seed = c.seed;
    m.environment = s.env;
    m.sim_config = s.sim;
    m.adapter = s.adapter;
    m.validate();
    return m;
}

TrialPlan plan_from(const Common& c, IdFormulation f = IdFormulation::welford_2d_over_w) {
    if (!valid_participant_id(c.participant)) {
        throw Error(ErrorKind::config, "participant id must match P[0-9]+: " + c.participant);
    }
    TrialPlan plan = study_plan(kind_from(c.kind), c.trials, c.seed, c.participant, f);
    const auto modes = modes_from(c.mode);
    std::erase_if(plan.entries, [&](const PlanEntry& e) {
        return std::find(modes.begin(), modes.end(), e.mode) == modes.end();
    });
    return plan;
}

void add_design_flags(CLI::App* cmd, Common& c) {
    cmd->add_option("--kind", c.kind, "task kind")->check(CLI::IsMember({"pointing", "crossing", "both"}));
    cmd->add_option("--seed", c.seed, "plan seed");
    cmd->add_option("--trials", c.trials, "repetitions per condition")->check(CLI::PositiveNumber);
    cmd->add_option("--mode", c.mode, "controller mode")->check(CLI::IsMember({"two_button", "one_handed", "both"}));
    cmd->add_option("--participant", c.participant, "participant pseudonym, P followed by digits");
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    ::gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// --- serve -------------------------------------------------------------------

int cmd_serve(const Common& c, std::uint16_t udp, std::uint16_t ws, std::uint16_t http, const std::string& web,
              int tick_ms) {
    const Settings s = settings_from(c);
    ServerOptions opt;
    opt.udp_port = udp;
    opt.ws_port = ws;
    opt.http_port = http;
    opt.static_dir = web;
    opt.tick_period = std::chrono::milliseconds(tick_ms);
    opt.session.meta = meta_from(c, s);
    opt.session.meta.input_source = "cockpit";
    opt.session.run.out_root = c.out;
    opt.session.kind = kind_from(c.kind);
    opt.session.repetitions = c.trials;
    opt.session.clock = utc_now;

    // Signals are taken synchronously by a watcher thread so stop() runs
    // outside a handler.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    Server server(opt);
    std::cout << "session: http://localhost:" << server.http_port() << "/  ws://localhost:" << server.ws_port()
              << "/  udp " << server.udp_port() << "\n"
              << std::flush;
    std::thread([&server, set] {
        int sig = 0;
        sigwait(&set, &sig);
        spdlog::info("signal {}, shutting down", sig);
        server.stop();
    }).detach();
    server.run();

    std::size_t complete = 0;
    for (const auto& r : server.session().results()) complete += r.outcome == TrialOutcome::complete;
    std::cout << "session closed: " << server.session().results().size() << " trials, " << complete
              << " complete\n";
    return 0;
}

// --- run-bot ------------------------------------------------------------------

int cmd_run_bot(const Common& c, double jitter) {
    const Settings s = settings_from(c);
    const SessionMeta meta = meta_from(c, s);
    const TrialPlan plan = plan_from(c);
    RunOptions opt;
    opt.out_root = c.out;
    const SessionResult res = run_session(plan, meta, bot_source_factory(meta, s.bot, jitter, c.seed), opt);

    struct Tally {
        std::size_t trials = 0, complete = 0, failed = 0, aborted = 0, unresolved = 0;
    };
    std::map<ControllerMode, Tally> tally;
    for (auto m : modes_from(c.mode)) tally[m];
    for (const auto& r : res.trials) {
        Tally& t = tally[r.mode];
        ++t.trials;
        t.complete += r.outcome == TrialOutcome::complete;
        t.failed += r.outcome == TrialOutcome::failed_collision;
        t.aborted += r.outcome == TrialOutcome::aborted;
    }
    for (std::size_t i : res.unresolved) ++tally[plan.entries[i].mode].unresolved;
    Tally total;
    auto print = [](const std::string& label, const Tally& t) {
        std::cout << label << ": " << t.trials << " trials, " << t.complete << " complete, " << t.failed
                  << " failed, " << t.aborted << " aborted, " << t.unresolved << " unresolved\n";
    };
    for (const auto& [mode, t] : tally) {
        print(to_string(mode), t);
        total.trials += t.trials;
        total.complete += t.complete;
        total.failed += t.failed;
        total.aborted += t.aborted;
        total.unresolved += t.unresolved;
    }
    print("total", total);
    std::cout << "logs: " << fs::path(c.out).string() << "\n";
    return res.unresolved.empty() ? 0 : 1;
}

// --- analyze -----------------------------------------------------------------

int cmd_analyze(const std::string& logs, const std::string& out, bool include_failed, const std::string& formulation) {
    AnalysisOptions opt;
    opt.include_failed = include_failed;
    opt.formulation = *parse_id_formulation(formulation);
    const AnalysisReport rep = summarize(fs::path(logs), opt);
    write_report(rep, out);
    for (const auto& w : rep.warnings) spdlog::warn("{}", w);
    std::cout << rep.trials.size() << " trials read\n";
    for (const auto& k : rep.kinds) {
        for (const auto& f : k.fits) {
            std::cout << to_string(k.kind) << " " << to_string(f.mode) << ": MT = " << format_sig9(f.fit.intercept)
                      << " + " << format_sig9(f.fit.slope) << " * ID, r^2 = " << format_sig9(f.fit.r_squared) << "\n";
        }
    }
    std::cout << "report: " << (fs::path(out) / "report.json").string() << "\n";
    return 0;
}

// --- replay --------------------------------------------------------------------

std::vector<fs::path> collect_logs(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(in)) {
                if (e.is_regular_file() && e.path().extension() == ".log") found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(in)) {
            out.emplace_back(in);
        } else {
            throw Error(ErrorKind::io, "no such log: " + in);
        }
    }
    if (out.empty()) throw Error(ErrorKind::io, "no logs found");
    return out;
}

int cmd_replay(const std::vector<std::string>& inputs, bool verify) {
    int status = 0;
    for (const auto& p : collect_logs(inputs)) {
        const TrialLog log = TrialLog::read(p);
        if (verify) {
            const VerifyResult v = verify_replay(log);
            if (v.ok) {
                std::cout << "ok " << p.string() << "\n";
            } else {
                status = 1;
                std::cout << "MISMATCH " << p.string() << ": first divergent tick " << *v.first_divergent_tick << " ("
                          << v.detail << ")\n";
            }
            continue;
        }
        const auto samples = regenerate_samples(log);
        std::cout << "# " << p.string() << "\ntick,x,y,z,vx,vy,vz\n";
        for (const auto& s : samples) {
            std::cout << s.tick << "," << format_shortest(s.pos.x) << "," << format_shortest(s.pos.y) << ","
                      << format_shortest(s.pos.z) << "," << format_shortest(s.vel.x) << ","
                      << format_shortest(s.vel.y) << "," << format_shortest(s.vel.z) << "\n";
        }
    }
    return status;
}

// --- plan ----------------------------------------------------------------------

int cmd_plan(const Common& c, const std::string& formulation) {
    const IdFormulation f = *parse_id_formulation(formulation);
    const TrialPlan plan = plan_from(c, f);
    std::cout << "participant " << plan.participant_id << " seed " << plan.seed << " entries " << plan.entries.size()
              << "\nindex,mode,kind,D,W,ID,trial\n";
    for (std::size_t i = 0; i < plan.entries.size(); ++i) {
        const auto& e = plan.entries[i];
        std::cout << i << "," << to_string(e.mode) << "," << to_string(e.condition.kind) << ","
                  << format_shortest(e.condition.distance) << "," << format_shortest(e.condition.width) << ","
                  << format_sig9(e.condition.id_value) << "," << e.trial_index << "\n";
    }
    return 0;
}

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("vrfb");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    const char* env = std::getenv("VRFB_LOG_LEVEL");
    const std::string level = env ? env : "info";
    static const std::map<std::string, spdlog::level::level_enum> levels{
        {"error", spdlog::level::err}, {"warn", spdlog::level::warn}, {"info", spdlog::level::info},
        {"debug", spdlog::level::debug}};
    const auto it = levels.find(level);
    if (it == levels.end()) throw Error(ErrorKind::config, "VRFB_LOG_LEVEL must be error, warn, info or debug");
    spdlog::set_level(it->second);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Drone flight-controller study harness"};
    app.require_subcommand(1);

    Common c;
    std::uint16_t udp_port = kDefaultUdpPort, ws_port = kDefaultWsPort, http_port = kDefaultHttpPort;
    std::string web = "web";
    int tick_ms = 10;
    double jitter = 0.1;
    std::string logs = "runs";
    std::string analysis_out = "analysis";
    bool include_failed = false;
    std::string formulation = "welford";
    std::vector<std::string> replay_inputs;
    bool verify = false;

    auto* serve = app.add_subcommand("serve", "run the live simulator for one session");
    serve->add_option("--udp-port", udp_port, "datagram port");
    serve->add_option("--ws-port", ws_port, "websocket port");
    serve->add_option("--http-port", http_port, "static asset port");
    serve->add_option("--static-dir", web, "cockpit asset directory");
    serve->add_option("--tick-ms", tick_ms, "wall-clock tick period")->check(CLI::Range(1, 1000));
    serve->add_option("--out", c.out, "log root");
    serve->add_option("--config", c.config, "settings file")->check(CLI::ExistingFile);
    add_design_flags(serve, c);

    auto* bot = app.add_subcommand("run-bot", "run the full factorial headless with the scripted pilot");
    bot->add_option("--out", c.out, "log root");
    bot->add_option("--config", c.config, "settings file")->check(CLI::ExistingFile);
    bot->add_option("--jitter", jitter, "relative per-attempt gain perturbation")->check(CLI::Range(0.0, 0.9));
    add_design_flags(bot, c);

    auto* analyze = app.add_subcommand("analyze", "compute metrics, regressions and ANOVA from logs");
    analyze->add_option("--logs", logs, "log root")->check(CLI::ExistingDirectory);
    analyze->add_option("--out", analysis_out, "report directory");
    analyze->add_flag("--include-failed", include_failed, "keep failed and aborted trials in motion metrics");
    analyze->add_option("--id-formulation", formulation, "index of difficulty")
        ->check(CLI::IsMember({"welford", "shannon"}));

    auto* replay_cmd = app.add_subcommand("replay", "re-simulate logs from their command streams");
    replay_cmd->add_option("logs", replay_inputs, "log files or directories")->required();
    replay_cmd->add_flag("--verify", verify, "compare against the logged samples bit for bit");

    auto* plan = app.add_subcommand("plan", "print the randomized trial plan");
    add_design_flags(plan, c);
    plan->add_option("--id-formulation", formulation, "index of difficulty")->check(CLI::IsMember({"welford", "shannon"}));

    CLI11_PARSE(app, argc, argv);

    try {
        configure_logging();
        if (*serve) return cmd_serve(c, udp_port, ws_port, http_port, web, tick_ms);
        if (*bot) return cmd_run_bot(c, jitter);
        if (*analyze) return cmd_analyze(logs, analysis_out, include_failed, formulation);
        if (*replay_cmd) return cmd_replay(replay_inputs, verify);
        if (*plan) return cmd_plan(c, formulation);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
