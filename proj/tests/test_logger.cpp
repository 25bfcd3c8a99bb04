#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "vrfb/logger.hpp"

using namespace vrfb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vrfb_logger_" + name);
    fs::remove_all(p);
    return p;
}

LogHeader crossing_header() {
    LogHeader h;
    h.task = instantiate_task(make_condition(TaskKind::crossing, 2.5, 0.5));
    return h;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes a log whose samples come from the simulator under a fixed command schedule.
fs::path write_simulated(const fs::path& dir, const LogHeader& h, const std::vector<LogCmd>& cmds, std::uint64_t ticks) {
    TrialLogWriter w(dir / "trial.log");
    w.append(h);
    const auto& cfg = h.meta.sim_config;
    DroneState s = initial_state(h.task);
    w.append(to_sample(0, s));
    std::size_t ci = 0;
    Vec3 current{};
    for (std::uint64_t k = 0; k < ticks; ++k) {
        while (ci < cmds.size() && cmds[ci].tick == k) {
            w.append(cmds[ci]);
            current = cmds[ci].velocity();
            ++ci;
        }
        DroneState next = step(s, clamp_command(current, cfg), h.meta.environment, cfg);
        next.collided = evaluate_tick(s, next, h.task, cfg).outcome == TickOutcome::collided;
        w.append(to_sample(k + 1, next));
        s = next;
    }
    return w.finalize();
}

}  // namespace

TEST(LogFormat, HeaderRoundTrip) {
    LogHeader h = crossing_header();
    h.meta.participant_id = "P07";
    h.meta.controller_mode = ControllerMode::one_handed;
    h.meta.plan_seed = 1234567890123ull;
    h.meta.sim_config.tau = 0.2;
    h.meta.environment = {{0.1, -0.2, 0.0}, Weather::fog};
    h.meta.adapter.deadzone = 0.15;
    h.plan_entry = 17;
    h.attempt = 2;
    h.trial_index = 4;
    const std::string line = logfmt::serialize(h);
    EXPECT_EQ(line.rfind(R"({"type":"header","v":1,"participant_id":"P07")", 0), 0u) << line;
    EXPECT_EQ(std::get<LogHeader>(logfmt::parse_line(line)), h);
}

TEST(LogFormat, ShortestRoundTripIsBitExact) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int i = 0; i < 5000; ++i) {
        const LogSample s{static_cast<std::uint64_t>(i), {u(rng), u(rng), u(rng)}, {u(rng), u(rng) * 1e-7, 0.1},
                          {u(rng) * 1e12, -0.0, 5e-324}, i % 3 == 0};
        const auto back = std::get<LogSample>(logfmt::parse_line(logfmt::serialize(s)));
        EXPECT_TRUE(detail::bits_equal(back, s)) << logfmt::serialize(s);
    }
}

TEST(LogFormat, CommandAndEventRoundTrip) {
    const LogCmd c{3, 9, 0.25, -1.0 / 3.0, 0.0, 0.5};
    EXPECT_EQ(std::get<LogCmd>(logfmt::parse_line(logfmt::serialize(c))), c);
    const LogEvent e{40, EventKind::collision, "4.5 0.2 1.5"};
    EXPECT_EQ(std::get<LogEvent>(logfmt::parse_line(logfmt::serialize(e))), e);
    EXPECT_THROW(logfmt::parse_line(R"({"type":"bogus","tick":1})"), Error);
}

TEST(LogWriter, HeaderAndHundredSamplesReadBack) {
    const auto dir = scratch("hundred");
    {
        TrialLogWriter w(dir / "a.log");
        w.append(crossing_header());
        for (std::uint64_t k = 0; k < 100; ++k) w.append(LogSample{k, {double(k), 0, 1}, {}, {}, false});
        w.finalize();
    }
    const auto rr = read_records(dir / "a.log");
    EXPECT_FALSE(rr.truncated);
    ASSERT_EQ(rr.records.size(), 101u);
    EXPECT_TRUE(std::holds_alternative<LogHeader>(rr.records[0]));
    EXPECT_EQ(std::get<LogSample>(rr.records[100]).tick, 99u);
}

TEST(LogWriter, TornFinalLineIsDropped) {
    const auto dir = scratch("torn");
    {
        TrialLogWriter w(dir / "a.log");
        w.append(crossing_header());
        for (std::uint64_t k = 0; k < 5; ++k) w.append(LogSample{k, {}, {}, {}, false});
    }
    std::string bytes = slurp(dir / "a.log");
    std::ofstream(dir / "a.log", std::ios::binary | std::ios::app) << R"({"type":"state","tick":5,"px":1.2)";
    const auto rr = read_records(dir / "a.log");
    EXPECT_TRUE(rr.truncated);
    EXPECT_EQ(rr.records.size(), 6u);

    // A terminated but garbled final line is treated the same way.
    std::ofstream(dir / "b.log", std::ios::binary) << bytes << "{\"type\":\"sta\n";
    const auto rb = read_records(dir / "b.log");
    EXPECT_TRUE(rb.truncated);
    EXPECT_EQ(rb.records.size(), 6u);

    // Garbage in the middle is an error, not truncation.
    std::ofstream(dir / "c.log", std::ios::binary) << "garbage\n" << bytes;
    EXPECT_THROW(read_records(dir / "c.log"), Error);
}

TEST(LogWriter, TickRegressionRejected) {
    const auto dir = scratch("regress");
    TrialLogWriter w(dir / "a.log");
    w.append(crossing_header());
    for (std::uint64_t k = 0; k <= 7; ++k) w.append(LogSample{k, {}, {}, {}, false});
    try {
        w.append(LogCmd{5, 1, 0, 0, 0, 0});
        FAIL() << "expected a log invariant error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::log_invariant);
    }
}

TEST(LogWriter, OrderingRules) {
    const auto dir = scratch("order");
    TrialLogWriter w(dir / "a.log");
    EXPECT_THROW(w.append(LogSample{}), Error);
    w.append(crossing_header());
    EXPECT_THROW(w.append(crossing_header()), Error);
    EXPECT_THROW(w.append(LogSample{1, {}, {}, {}, false}), Error);
    w.append(LogSample{0, {}, {}, {}, false});
    w.append(LogCmd{0, 1, 1, 0, 0, 0});
    w.append(LogEvent{0, EventKind::trial_start, ""});
    EXPECT_THROW(w.append(LogSample{2, {}, {}, {}, false}), Error);
}

TEST(LogPath, NamingScheme) {
    LogHeader h = crossing_header();
    h.meta.participant_id = "P03";
    h.trial_index = 2;
    EXPECT_EQ(trial_log_path(h), fs::path("P03") / "crossing-two_button-D2.5-W0.5-t2.log");
    h.attempt = 1;
    EXPECT_EQ(trial_log_path(h).filename(), "crossing-two_button-D2.5-W0.5-t2-r1.log");
}

TEST(Replay, NoCommandsMeansHover) {
    const auto dir = scratch("hover");
    const LogHeader h = crossing_header();
    const auto log = TrialLog::read(write_simulated(dir, h, {}, 50));
    const auto in = replay(log);
    ASSERT_EQ(in.commands.size(), 50u);
    for (const auto& c : in.commands) EXPECT_EQ(c, (Vec3{}));
    const auto regen = regenerate_samples(log);
    ASSERT_EQ(regen.size(), 51u);
    EXPECT_EQ(regen.back().pos, h.task.start_pos);
    EXPECT_TRUE(verify_replay(log).ok);
}

TEST(Replay, SingleCommandHeldFromItsTick) {
    const auto dir = scratch("single");
    const auto log = TrialLog::read(write_simulated(dir, crossing_header(), {LogCmd{10, 1, 1.0, 0, 0, 0}}, 40));
    const auto in = replay(log);
    ASSERT_EQ(in.commands.size(), 40u);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(in.commands[k], (Vec3{})) << k;
    for (std::size_t k = 10; k < 40; ++k) EXPECT_EQ(in.commands[k], (Vec3{1.0, 0, 0})) << k;
    EXPECT_EQ(log.samples[10].vel, (Vec3{}));
    EXPECT_GT(log.samples[11].vel.x, 0.0);
    EXPECT_TRUE(verify_replay(log).ok);
}

TEST(Replay, OverspeedCommandsAreClampedIdentically) {
    const auto dir = scratch("clamp");
    const auto log = TrialLog::read(
        write_simulated(dir, crossing_header(), {LogCmd{0, 1, 9.0, 9.0, 0, 0}, LogCmd{30, 2, -1, 0, 3, 0}}, 80));
    EXPECT_TRUE(verify_replay(log).ok);
}

TEST(Replay, EditedSampleNamesTheTick) {
    const auto dir = scratch("edited");
    const fs::path p = write_simulated(dir, crossing_header(), {LogCmd{0, 1, 1.0, 0.2, 0, 0}}, 60);
    auto log = TrialLog::read(p);
    log.samples[37].pos.y += 1e-15;
    const auto v = verify_replay(log);
    EXPECT_FALSE(v.ok);
    EXPECT_EQ(v.first_divergent_tick, 37u);
    EXPECT_NE(v.detail.find("37"), std::string::npos);
}
