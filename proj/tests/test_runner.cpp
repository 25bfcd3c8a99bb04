#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "vrfb/runner.hpp"

using namespace vrfb;
namespace fs = std::filesystem;

namespace {

RunOptions options(const std::string& name) {
    RunOptions opt;
    opt.out_root = fs::temp_directory_path() / ("vrfb_runner_" + name);
    fs::remove_all(opt.out_root);
    return opt;
}

CommandSource constant_source(const Vec3& v) {
    auto sent = std::make_shared<bool>(false);
    return [=](const DroneState&, std::uint64_t tick) {
        SourceTick t;
        if (!*sent) {
            t.commands.push_back(RcCommand{1, tick * 10, v.x, v.y, v.z, 0.0});
            *sent = true;
        }
        return t;
    };
}

CommandSource stop_source() {
    return [](const DroneState&, std::uint64_t) { return SourceTick{{}, true, false}; };
}

void expect_log_invariants(const TrialResult& r) {
    const auto log = TrialLog::read(r.log_path);
    ASSERT_FALSE(log.truncated);
    ASSERT_FALSE(log.events.empty());
    EXPECT_EQ(log.events.front().kind, EventKind::trial_start);
    const EventKind last = log.events.back().kind;
    switch (r.outcome) {
        case TrialOutcome::complete: EXPECT_EQ(last, EventKind::trial_complete); break;
        case TrialOutcome::failed_collision: EXPECT_EQ(last, EventKind::trial_failed); break;
        case TrialOutcome::aborted: EXPECT_EQ(last, EventKind::trial_aborted); break;
    }
    int terminal = 0;
    for (const auto& e : log.events) {
        terminal += e.kind == EventKind::trial_complete || e.kind == EventKind::trial_failed ||
                    e.kind == EventKind::trial_aborted;
    }
    EXPECT_EQ(terminal, 1);
    for (std::size_t k = 0; k < log.samples.size(); ++k) EXPECT_EQ(log.samples[k].tick, k);
    const std::uint64_t duration_ticks = log.events.back().tick - log.events.front().tick;
    EXPECT_EQ(log.samples.size(), duration_ticks + 1);
    EXPECT_EQ(r.completion_time.has_value(), r.outcome == TrialOutcome::complete);
    if (r.completion_time) {
        EXPECT_GT(*r.completion_time, 0.0);
        EXPECT_EQ(*r.completion_time, static_cast<double>(duration_ticks) * log.header.meta.sim_config.dt);
    }
    EXPECT_TRUE(verify_replay(log).ok);
}

}  // namespace

TEST(RunTrial, BotCrossingCompletesAboveKinematicBound) {
    const auto opt = options("bot_crossing");
    const auto task = instantiate_task(make_condition(TaskKind::crossing, 2.5, 0.5));
    const SessionMeta meta;
    const auto r = run_trial(task, make_bot_source(task, ControllerMode::two_button, meta.adapter, {}, meta.sim_config),
                             meta, opt);
    ASSERT_EQ(r.outcome, TrialOutcome::complete);
    EXPECT_GT(*r.completion_time, 2.5 / meta.sim_config.v_max);
    expect_log_invariants(r);
}

TEST(RunTrial, ImmediateStopAborts) {
    const auto opt = options("stop");
    const auto task = instantiate_task(make_condition(TaskKind::pointing, 2.0, 0.4));
    const auto r = run_trial(task, stop_source(), SessionMeta{}, opt);
    EXPECT_EQ(r.outcome, TrialOutcome::aborted);
    EXPECT_FALSE(r.completion_time);
    expect_log_invariants(r);
}

TEST(RunTrial, ClosedSourceAborts) {
    const auto opt = options("closed");
    const auto task = instantiate_task(make_condition(TaskKind::pointing, 2.0, 0.4));
    auto src = [](const DroneState&, std::uint64_t tick) {
        SourceTick t;
        if (tick == 0) t.commands.push_back(RcCommand{1, 0, 1, 0, 0, 0});
        t.closed = tick == 20;
        return t;
    };
    const auto r = run_trial(task, src, SessionMeta{}, opt);
    EXPECT_EQ(r.outcome, TrialOutcome::aborted);
    const auto log = TrialLog::read(r.log_path);
    EXPECT_EQ(log.samples.size(), 21u);
    EXPECT_EQ(log.events.back().payload, "source_closed");
}

TEST(RunTrial, TimeoutAborts) {
    auto opt = options("timeout");
    opt.max_trial_seconds = 0.5;
    const auto task = instantiate_task(make_condition(TaskKind::pointing, 2.0, 0.4));
    const auto r = run_trial(task, constant_source({}), SessionMeta{}, opt);
    EXPECT_EQ(r.outcome, TrialOutcome::aborted);
    EXPECT_EQ(TrialLog::read(r.log_path).samples.size(), 51u);
    expect_log_invariants(r);
}

TEST(RunTrial, RammingTheBorderFailsWithContact) {
    const auto opt = options("ram");
    const auto task = instantiate_task(make_condition(TaskKind::crossing, 2.5, 0.5));
    const SessionMeta meta;
    // Straight line from the spawn through a point on the right bar.
    const Vec3 aim = task.target_center + Vec3{0.0, 0.28, 0.0};
    const Vec3 dir = aim - task.start_pos;
    const auto r = run_trial(task, constant_source(dir * (1.0 / dir.norm())), meta, opt);
    ASSERT_EQ(r.outcome, TrialOutcome::failed_collision);
    ASSERT_TRUE(r.contact);

    const auto log = TrialLog::read(r.log_path);
    ASSERT_GE(log.samples.size(), 2u);
    const auto& last = log.samples.back();
    EXPECT_TRUE(last.collided);
    DroneState prev;
    prev.pos = log.samples[log.samples.size() - 2].pos;
    DroneState curr;
    curr.pos = last.pos;
    const auto oracle = detect_collision(prev, curr, task, meta.sim_config);
    ASSERT_TRUE(oracle);
    EXPECT_EQ(*oracle, *r.contact);
    const auto& collision = log.events.at(log.events.size() - 2);
    EXPECT_EQ(collision.kind, EventKind::collision);
    EXPECT_EQ(collision.payload, format_point(*r.contact));
    for (std::size_t k = 0; k + 1 < log.samples.size(); ++k) EXPECT_FALSE(log.samples[k].collided);
    expect_log_invariants(r);
}

TEST(RunSession, AllSuccessPointingSession) {
    const auto opt = options("pointing_session");
    const SessionMeta meta;
    const auto plan = study_plan(TaskKind::pointing, 5, 42, "P01");
    const auto res = run_session(plan, meta, bot_source_factory(meta, {}, 0.1, 42), opt);
    ASSERT_EQ(res.trials.size(), 60u);
    EXPECT_TRUE(res.unresolved.empty());
    std::set<fs::path> paths;
    for (const auto& t : res.trials) {
        EXPECT_EQ(t.outcome, TrialOutcome::complete);
        EXPECT_TRUE(paths.insert(t.log_path).second) << t.log_path;
    }
    for (std::size_t i = 0; i < res.trials.size(); i += 7) expect_log_invariants(res.trials[i]);
}

namespace {
SourceFactory failing_on(const SessionMeta& meta, std::size_t entry, int failures) {
    const auto bots = bot_source_factory(meta, {}, 0.0, 0);
    return [=](const PlanEntry& e, const TaskInstance& task, std::size_t index, int attempt) -> CommandSource {
        if (index == entry && attempt < failures) return stop_source();
        return bots(e, task, index, attempt);
    };
}
}  // namespace

TEST(RunSession, OneInjectedFailureIsRerunOnce) {
    const auto opt = options("one_failure");
    const SessionMeta meta;
    const auto plan = study_plan(TaskKind::pointing, 5, 7, "P01");
    const std::size_t k = 13;
    const auto res = run_session(plan, meta, failing_on(meta, k, 1), opt);
    ASSERT_EQ(res.trials.size(), 61u);
    std::size_t complete = 0;
    for (const auto& t : res.trials) complete += t.outcome == TrialOutcome::complete;
    EXPECT_EQ(complete, 60u);
    EXPECT_EQ(res.trials[k].plan_entry, k);
    EXPECT_EQ(res.trials[k].outcome, TrialOutcome::aborted);
    EXPECT_EQ(res.trials[k + 1].plan_entry, k);
    EXPECT_EQ(res.trials[k + 1].attempt, 1);
    EXPECT_EQ(res.trials[k + 1].outcome, TrialOutcome::complete);
    EXPECT_NE(res.trials[k].log_path, res.trials[k + 1].log_path);
    EXPECT_TRUE(res.unresolved.empty());
}

TEST(RunSession, ThreeFailuresLeaveEntryUnresolved) {
    const auto opt = options("three_failures");
    const SessionMeta meta;
    const auto plan = study_plan(TaskKind::pointing, 5, 7, "P01");
    const std::size_t k = 4;
    const auto res = run_session(plan, meta, failing_on(meta, k, 3), opt);
    ASSERT_EQ(res.unresolved, std::vector<std::size_t>{k});
    ASSERT_EQ(res.trials.size(), 62u);
    for (int a = 0; a < 3; ++a) {
        EXPECT_EQ(res.trials[k + a].plan_entry, k);
        EXPECT_EQ(res.trials[k + a].outcome, TrialOutcome::aborted);
    }
    std::size_t complete = 0;
    for (const auto& t : res.trials) complete += t.outcome == TrialOutcome::complete;
    EXPECT_EQ(complete, 59u);
    EXPECT_EQ(res.trials.back().plan_entry, plan.entries.size() - 1);
}

TEST(RunSession, InvalidParticipantRejected) {
    const auto opt = options("bad_pid");
    SessionMeta meta;
    meta.participant_id = "alice";
    const auto task = instantiate_task(make_condition(TaskKind::pointing, 2.0, 0.4));
    EXPECT_THROW(run_trial(task, stop_source(), meta, opt), Error);
    EXPECT_FALSE(fs::exists(opt.out_root / "alice"));
}
