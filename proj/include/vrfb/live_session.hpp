#pragma once

// Transport-independent live session: decodes client messages, drives the
// session state machine, runs plan entries as trials and produces the
// outbound messages for the transports to deliver.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "logger.hpp"
#include "protocol.hpp"
#include "runner.hpp"
#include "session.hpp"
#include "task.hpp"

namespace vrfb {

struct Outgoing {
    std::string to;          // client key; empty for a broadcast
    std::string bytes;
    bool state = false;      // state broadcasts may be thinned for remote clients
};

struct LiveSessionOptions {
    SessionMeta meta{};                 // template; config messages fill in pid, mode, seed
    RunOptions run{};
    std::optional<TaskKind> kind;       // empty: both kinds
    int repetitions = 5;
    std::function<std::string()> clock;  // stamps created_at when set
};

/// Payload of a trial_start event: space-separated key=value tokens.
inline std::string trial_start_payload(const LogHeader& h) {
    const auto& c = h.task.condition;
    const auto& t = h.task.target_center;
    return "kind=" + std::string(to_string(c.kind)) + " D=" + format_shortest(c.distance) +
           " W=" + format_shortest(c.width) + " trial=" + std::to_string(h.trial_index) +
           " attempt=" + std::to_string(h.attempt) + " target=" + format_shortest(t.x) + "," +
           format_shortest(t.y) + "," + format_shortest(t.z);
}

class LiveSession {
public:
    explicit LiveSession(LiveSessionOptions opt) : opt_(std::move(opt)) { opt_.meta.validate(); }

    SessionPhase phase() const { return state_.phase; }
    const SessionState& state() const { return state_; }
    const TrialPlan& plan() const { return plan_; }
    std::size_t cursor() const { return cursor_; }
    const std::vector<TrialResult>& results() const { return results_; }
    const std::vector<std::size_t>& unresolved() const { return unresolved_; }
    const TrialRun* current() const { return run_.get(); }

    /// One inbound datagram or websocket text frame from `from`.
    std::vector<Outgoing> handle(std::string_view bytes, const std::string& from) {
        std::vector<Outgoing> out;
        const DecodeResult r = decode(bytes);
        if (!r) {
            reply(out, from, to_string(r.error().code), r.error().detail);
            return out;
        }
        const Message& msg = r.message();
        if (const auto* cfg = std::get_if<ConfigUpdate>(&msg)) {
            if (!valid_participant_id(cfg->participant_id)) {
                reply(out, from, "invalid_config", "participant id must match P[0-9]+");
                return out;
            }
        }
        if (const auto* ctl = std::get_if<SessionControl>(&msg)) {
            const bool can_start = state_.phase == SessionPhase::configured || state_.phase == SessionPhase::trial_done;
            if (ctl->action == SessionAction::start && can_start && cursor_ >= plan_.entries.size()) {
                reply(out, from, "plan_complete", "every plan entry has been run");
                return out;
            }
        }
        apply(transition(state_, msg), from, out);
        return out;
    }

    /// Advances a running trial by one tick.
    std::vector<Outgoing> tick() {
        std::vector<Outgoing> out;
        if (state_.phase != SessionPhase::trial_running || !run_) return out;
        const TickEvaluation eval = run_->advance();
        const DroneState& s = run_->state();
        out.push_back({"", encode(StateUpdate{t_ms(), s.pos, s.vel, s.acc, s.collided}), true});
        if (eval.outcome == TickOutcome::completed) {
            apply(transition(state_, RunnerNotice::target_reached), "", out);
        } else if (eval.outcome == TickOutcome::collided) {
            out.push_back({"", encode(EventNotice{EventKind::collision, t_ms(), format_point(*eval.contact)})});
            apply(transition(state_, RunnerNotice::trial_failed), "", out);
        } else if (run_->finished()) {
            apply(transition(state_, RunnerNotice::trial_aborted), "", out);
        }
        return out;
    }

    /// Closes a running trial as if a stop had arrived; used when the server exits.
    std::vector<Outgoing> shutdown() {
        std::vector<Outgoing> out;
        if (state_.phase == SessionPhase::trial_running) {
            apply(transition(state_, SessionControl{SessionAction::stop}), "", out);
        }
        return out;
    }

private:
    std::uint64_t t_ms() const {
        const double dt = opt_.meta.sim_config.dt;
        return run_ ? static_cast<std::uint64_t>(std::llround(static_cast<double>(run_->tick()) * dt * 1000.0)) : 0;
    }

    static void reply(std::vector<Outgoing>& out, const std::string& to, const std::string& code,
                      const std::string& text) {
        out.push_back({to, encode(ErrorMessage{code, text.substr(0, 400)})});
    }

    void apply(const Transition& t, const std::string& from, std::vector<Outgoing>& out) {
        state_ = t.state;
        for (const auto& a : t.actions) {
            std::visit([&](const auto& act) { perform(act, from, out); }, a);
        }
    }

    void perform(const action::ReplyError& a, const std::string& from, std::vector<Outgoing>& out) {
        if (!from.empty()) out.push_back({from, encode(a.error)});
    }

    void perform(const action::ApplyConfig& a, const std::string&, std::vector<Outgoing>&) {
        meta_ = opt_.meta;
        meta_.participant_id = a.config.participant_id;
        meta_.controller_mode = a.config.controller_mode;
        meta_.plan_seed = a.config.plan_seed;
        if (opt_.clock) meta_.created_at = opt_.clock();
        const TrialPlan full = study_plan(opt_.kind, opt_.repetitions, a.config.plan_seed, a.config.participant_id);
        plan_ = {full.participant_id, full.seed, {}};
        for (const auto& e : full.entries) {
            if (e.mode == a.config.controller_mode) plan_.entries.push_back(e);
        }
        entry_indices_.clear();
        for (std::size_t i = 0; i < full.entries.size(); ++i) {
            if (full.entries[i].mode == a.config.controller_mode) entry_indices_.push_back(i);
        }
        cursor_ = 0;
        attempt_ = 0;
    }

    void perform(const action::ArmTrial&, const std::string&, std::vector<Outgoing>&) {
        const PlanEntry& e = plan_.entries.at(cursor_);
        LogHeader h;
        h.meta = meta_;
        h.plan_entry = entry_indices_.at(cursor_);
        h.attempt = attempt_;
        h.trial_index = e.trial_index;
        h.task = instantiate_task(e.condition, opt_.run.layout);
        run_ = std::make_unique<TrialRun>(h, opt_.run.out_root,
                                          max_ticks_for(opt_.run, meta_.sim_config));
    }

    void perform(const action::EmitEvent& a, const std::string&, std::vector<Outgoing>& out) {
        std::string payload;
        if (a.kind == EventKind::trial_start && run_) payload = trial_start_payload(run_->header());
        if (a.kind == EventKind::trial_failed) payload = "collision";
        if (a.kind == EventKind::trial_aborted) payload = "timeout";
        out.push_back({"", encode(EventNotice{a.kind, t_ms(), payload})});
    }

    void perform(const action::ForwardToSim& a, const std::string&, std::vector<Outgoing>&) {
        if (run_) run_->command(a.command);
    }

    void perform(const action::CloseTrialLog&, const std::string&, std::vector<Outgoing>& out) {
        if (!run_) return;
        if (!run_->finished()) {
            out.push_back({"", encode(EventNotice{EventKind::trial_aborted, t_ms(), "stop"})});
        }
        TrialResult r = run_->finish("stop");
        run_.reset();
        if (r.outcome == TrialOutcome::complete) {
            ++cursor_;
            attempt_ = 0;
        } else if (++attempt_ >= opt_.run.max_attempts) {
            unresolved_.push_back(entry_indices_.at(cursor_));
            ++cursor_;
            attempt_ = 0;
        }
        results_.push_back(std::move(r));
    }

    LiveSessionOptions opt_;
    SessionMeta meta_;
    SessionState state_;
    TrialPlan plan_;
    std::vector<std::size_t> entry_indices_;  // position of each mode entry in the full plan
    std::size_t cursor_ = 0;
    int attempt_ = 0;
    std::unique_ptr<TrialRun> run_;
    std::vector<TrialResult> results_;
    std::vector<std::size_t> unresolved_;
};

}  // namespace vrfb
