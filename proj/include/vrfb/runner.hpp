#pragma once

// Trial and session orchestration: arms a trial, feeds commands into the
// simulator one tick at a time, evaluates completion or failure, logs every
// tick, and applies the rerun rule across a trial plan.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "controllers.hpp"
#include "logger.hpp"
#include "protocol.hpp"
#include "session.hpp"
#include "sim.hpp"
#include "task.hpp"

namespace vrfb {

enum class TrialOutcome { complete, failed_collision, aborted };

inline const char* to_string(TrialOutcome o) {
    switch (o) {
        case TrialOutcome::complete: return "complete";
        case TrialOutcome::failed_collision: return "failed_collision";
        case TrialOutcome::aborted: return "aborted";
    }
    return "";
}

struct TrialResult {
    TaskCondition condition;
    int trial_index = 1;
    ControllerMode mode = ControllerMode::two_button;
    std::size_t plan_entry = 0;
    int attempt = 0;
    TrialOutcome outcome = TrialOutcome::aborted;
    std::optional<double> completion_time;  // set iff outcome == complete
    std::optional<Vec3> contact;
    std::filesystem::path log_path;
};

/// One trial in progress. Tick 0 is the start message; the initial state is
/// logged as sample 0 together with the trial_start event.
class TrialRun {
public:
    TrialRun(LogHeader header, const std::filesystem::path& out_root, std::uint64_t max_ticks)
        : header_(validated(std::move(header))),
          writer_(out_root / trial_log_path(header_)),
          max_ticks_(max_ticks),
          state_(initial_state(header_.task)) {
        writer_.append(header_);
        writer_.append(to_sample(0, state_));
        writer_.append(LogEvent{0, EventKind::trial_start, ""});
    }

    const LogHeader& header() const { return header_; }
    const DroneState& state() const { return state_; }
    std::uint64_t tick() const { return tick_; }
    bool finished() const { return outcome_.has_value(); }
    std::optional<TrialOutcome> outcome() const { return outcome_; }

    /// Records a client command; it takes effect on the next advance().
    void command(const RcCommand& cmd) {
        if (finished()) return;
        writer_.append(LogCmd{tick_, cmd.seq, cmd.vx, cmd.vy, cmd.vz, cmd.yaw_rate});
        setpoint_ = cmd.velocity();
    }

    /// Steps the simulator one tick and evaluates the task.
    TickEvaluation advance() {
        if (finished()) return {};
        const auto& cfg = header_.meta.sim_config;
        DroneState next = step(state_, clamp_command(setpoint_, cfg), header_.meta.environment, cfg);
        const TickEvaluation eval = evaluate_tick(state_, next, header_.task, cfg);
        next.collided = eval.outcome == TickOutcome::collided;
        ++tick_;
        state_ = next;
        writer_.append(to_sample(tick_, state_));
        if (eval.outcome == TickOutcome::completed) {
            writer_.append(LogEvent{tick_, EventKind::trial_complete, ""});
            outcome_ = TrialOutcome::complete;
        } else if (eval.outcome == TickOutcome::collided) {
            contact_ = eval.contact;
            writer_.append(LogEvent{tick_, EventKind::collision, format_point(*eval.contact)});
            writer_.append(LogEvent{tick_, EventKind::trial_failed, "collision"});
            outcome_ = TrialOutcome::failed_collision;
        } else if (tick_ >= max_ticks_) {
            abort("timeout");
        }
        return eval;
    }

    void abort(const std::string& reason) {
        if (finished()) return;
        writer_.append(LogEvent{tick_, EventKind::trial_aborted, reason});
        outcome_ = TrialOutcome::aborted;
    }

    /// Closes the log. An unfinished trial is recorded as aborted.
    TrialResult finish(const std::string& reason = "stop") {
        abort(reason);
        TrialResult r;
        r.condition = header_.task.condition;
        r.trial_index = header_.trial_index;
        r.mode = header_.meta.controller_mode;
        r.plan_entry = header_.plan_entry;
        r.attempt = header_.attempt;
        r.outcome = *outcome_;
        if (r.outcome == TrialOutcome::complete) {
            r.completion_time = static_cast<double>(tick_) * header_.meta.sim_config.dt;
        }
        r.contact = contact_;
        r.log_path = writer_.finalize();
        return r;
    }

private:
    static LogHeader validated(LogHeader h) {
        h.meta.validate();
        return h;
    }

    LogHeader header_;
    TrialLogWriter writer_;
    std::uint64_t max_ticks_;
    DroneState state_;
    std::uint64_t tick_ = 0;
    Vec3 setpoint_{};
    std::optional<TrialOutcome> outcome_;
    std::optional<Vec3> contact_;
};

/// What a command source delivers before one tick.
struct SourceTick {
    std::vector<RcCommand> commands;
    bool stop = false;
    bool closed = false;
};

using CommandSource = std::function<SourceTick(const DroneState&, std::uint64_t tick)>;

struct RunOptions {
    std::filesystem::path out_root = "runs";
    double max_trial_seconds = 120.0;
    int max_attempts = 3;
    TaskLayout layout{};
};

inline std::uint64_t max_ticks_for(const RunOptions& opt, const SimConfig& cfg) {
    return static_cast<std::uint64_t>(std::llround(opt.max_trial_seconds / cfg.dt));
}

/// Runs one trial to completion, collision, stop, or source exhaustion.
inline TrialResult run_trial(const LogHeader& header, const CommandSource& source, const RunOptions& opt) {
    TrialRun run(header, opt.out_root, max_ticks_for(opt, header.meta.sim_config));
    while (!run.finished()) {
        SourceTick in = source(run.state(), run.tick());
        if (in.closed) return run.finish("source_closed");
        for (const auto& cmd : in.commands) run.command(cmd);
        if (in.stop) return run.finish("stop");
        run.advance();
    }
    return run.finish();
}

/// Convenience form taking the task and session metadata directly.
inline TrialResult run_trial(const TaskInstance& task, const CommandSource& source, const SessionMeta& meta,
                             const RunOptions& opt, int trial_index = 1) {
    LogHeader h;
    h.meta = meta;
    h.task = task;
    h.trial_index = trial_index;
    return run_trial(h, source, opt);
}

/// Scripted pilot routed through the controller mapping of `mode`.
inline CommandSource make_bot_source(const TaskInstance& task, ControllerMode mode, const AdapterConfig& adapter,
                                     const BotGains& gains, const SimConfig& cfg) {
    auto pilot = std::make_shared<BotPilot>(gains, std::min(adapter.s_max, cfg.v_max));
    auto seq = std::make_shared<std::uint64_t>(0);
    return [=](const DroneState& state, std::uint64_t tick) {
        const VelocityCommand vc = through_controller(pilot->step(state, task), mode, adapter);
        RcCommand cmd;
        cmd.seq = ++*seq;
        cmd.t_ms = static_cast<std::uint64_t>(std::llround(static_cast<double>(tick) * cfg.dt * 1000.0));
        cmd.vx = vc.vel.x;
        cmd.vy = vc.vel.y;
        cmd.vz = vc.vel.z;
        cmd.yaw_rate = vc.yaw_rate;
        return SourceTick{{cmd}, false, false};
    };
}

struct SessionResult {
    std::vector<TrialResult> trials;       // every attempt, in execution order
    std::vector<std::size_t> unresolved;   // plan entries that never completed
};

/// Produces the command source for one attempt of one plan entry.
using SourceFactory =
    std::function<CommandSource(const PlanEntry&, const TaskInstance&, std::size_t entry, int attempt)>;

/// Executes the plan in order. A failed or aborted attempt is re-queued
/// immediately; after `max_attempts` failures the entry is left unresolved.
inline SessionResult run_session(const TrialPlan& plan, const SessionMeta& meta_template,
                                 const SourceFactory& make_source, const RunOptions& opt) {
    SessionResult out;
    for (std::size_t i = 0; i < plan.entries.size(); ++i) {
        const PlanEntry& entry = plan.entries[i];
        const TaskInstance task = instantiate_task(entry.condition, opt.layout);
        bool resolved = false;
        for (int attempt = 0; attempt < opt.max_attempts && !resolved; ++attempt) {
            LogHeader h;
            h.meta = meta_template;
            h.meta.participant_id = plan.participant_id.empty() ? meta_template.participant_id : plan.participant_id;
            h.meta.plan_seed = plan.seed;
            h.meta.controller_mode = entry.mode;
            h.plan_entry = i;
            h.attempt = attempt;
            h.trial_index = entry.trial_index;
            h.task = task;
            TrialResult r = run_trial(h, make_source(entry, task, i, attempt), opt);
            resolved = r.outcome == TrialOutcome::complete;
            out.trials.push_back(std::move(r));
        }
        if (!resolved) out.unresolved.push_back(i);
    }
    return out;
}

/// Bot factory with a seeded per-attempt gain perturbation, so that
/// replicates of one condition are not identical. jitter = 0 disables it.
inline SourceFactory bot_source_factory(const SessionMeta& meta, BotGains gains, double jitter, std::uint64_t seed) {
    return [=](const PlanEntry& entry, const TaskInstance& task, std::size_t index, int attempt) {
        BotGains g = gains;
        if (jitter > 0.0) {
            const std::uint64_t h = detail::mix_seed(seed, index * 16 + static_cast<std::uint64_t>(attempt));
            const double unit = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
            g.kp *= 1.0 + jitter * (2.0 * unit - 1.0);
        }
        return make_bot_source(task, entry.mode, meta.adapter, g, meta.sim_config);
    };
}

}  // namespace vrfb
