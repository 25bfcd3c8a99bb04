#pragma once

// Wire messages between controller clients and the simulator, their canonical
// text encoding, and the per-session state machine.
//
// Every message is one JSON object with fixed key order, `"v":1` first and
// `"type"` second. The same bytes travel over datagrams and websocket frames.

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "numfmt.hpp"
#include "task.hpp"
#include "vec3.hpp"

namespace vrfb {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxMessageBytes = 1200;
inline constexpr std::uint16_t kDefaultUdpPort = 47800;
inline constexpr std::uint16_t kDefaultWsPort = 47801;
inline constexpr std::uint16_t kDefaultHttpPort = 47802;

struct RcCommand {
    std::uint64_t seq = 0;
    std::uint64_t t_ms = 0;
    double vx = 0.0;
    double vy = 0.0;
    double vz = 0.0;
    double yaw_rate = 0.0;

    Vec3 velocity() const { return {vx, vy, vz}; }
    friend bool operator==(const RcCommand&, const RcCommand&) = default;
};

enum class SessionAction { start, stop };

struct SessionControl {
    SessionAction action = SessionAction::start;
    friend bool operator==(const SessionControl&, const SessionControl&) = default;
};

struct ConfigUpdate {
    std::string participant_id;
    ControllerMode controller_mode = ControllerMode::two_button;
    std::uint64_t plan_seed = 0;
    friend bool operator==(const ConfigUpdate&, const ConfigUpdate&) = default;
};

struct StateUpdate {
    std::uint64_t t_ms = 0;
    Vec3 pos{};
    Vec3 vel{};
    Vec3 acc{};
    bool collided = false;
    friend bool operator==(const StateUpdate&, const StateUpdate&) = default;
};

enum class EventKind { trial_start, trial_complete, trial_failed, trial_aborted, collision, checkpoint };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::trial_start: return "trial_start";
        case EventKind::trial_complete: return "trial_complete";
        case EventKind::trial_failed: return "trial_failed";
        case EventKind::trial_aborted: return "trial_aborted";
        case EventKind::collision: return "collision";
        case EventKind::checkpoint: return "checkpoint";
    }
    return "";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
    for (EventKind k : {EventKind::trial_start, EventKind::trial_complete, EventKind::trial_failed,
                        EventKind::trial_aborted, EventKind::collision, EventKind::checkpoint}) {
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

struct EventNotice {
    EventKind kind = EventKind::trial_start;
    std::uint64_t t_ms = 0;
    std::string payload;
    friend bool operator==(const EventNotice&, const EventNotice&) = default;
};

struct ErrorMessage {
    std::string code;
    std::string text;
    friend bool operator==(const ErrorMessage&, const ErrorMessage&) = default;
};

using Message = std::variant<RcCommand, SessionControl, ConfigUpdate, StateUpdate, EventNotice, ErrorMessage>;

enum class DecodeErrorCode { malformed_payload, unknown_type, version_mismatch };

inline const char* to_string(DecodeErrorCode c) {
    switch (c) {
        case DecodeErrorCode::malformed_payload: return "malformed_payload";
        case DecodeErrorCode::unknown_type: return "unknown_type";
        case DecodeErrorCode::version_mismatch: return "version_mismatch";
    }
    return "";
}

struct DecodeError {
    DecodeErrorCode code;
    std::string detail;
};

namespace wire {

class Writer {
public:
    explicit Writer(std::string_view type) {
        out_ = "{\"v\":1,\"type\":\"";
        out_ += type;
        out_ += '"';
    }

    Writer& num(std::string_view key, double v) {
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::encoding, "non-finite value for field " + std::string(key));
        }
        return raw(key, format_sig9(v));
    }
    Writer& u64(std::string_view key, std::uint64_t v) { return raw(key, std::to_string(v)); }
    Writer& boolean(std::string_view key, bool v) { return raw(key, v ? "true" : "false"); }
    Writer& str(std::string_view key, const std::string& v) {
        try {
            return raw(key, nlohmann::json(v).dump());
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorKind::encoding, "field " + std::string(key) + " is not valid UTF-8");
        }
    }

    std::string finish() {
        out_ += '}';
        if (out_.size() > kMaxMessageBytes) {
            throw Error(ErrorKind::encoding, "encoded message exceeds " + std::to_string(kMaxMessageBytes) + " bytes");
        }
        return std::move(out_);
    }

private:
    Writer& raw(std::string_view key, std::string_view value) {
        out_ += ",\"";
        out_ += key;
        out_ += "\":";
        out_ += value;
        return *this;
    }

    std::string out_;
};

}  // namespace wire

/// Canonical encoding; throws Error(encoding) on non-finite numbers or oversize output.
inline std::string encode(const Message& msg) {
    struct Visitor {
        std::string operator()(const RcCommand& m) const {
            return wire::Writer("rc").u64("seq", m.seq).u64("t_ms", m.t_ms).num("vx", m.vx).num("vy", m.vy)
                .num("vz", m.vz).num("yaw_rate", m.yaw_rate).finish();
        }
        std::string operator()(const SessionControl& m) const {
            return wire::Writer(m.action == SessionAction::start ? "start" : "stop").finish();
        }
        std::string operator()(const ConfigUpdate& m) const {
            return wire::Writer("config").str("participant_id", m.participant_id)
                .str("controller_mode", to_string(m.controller_mode)).u64("plan_seed", m.plan_seed).finish();
        }
        std::string operator()(const StateUpdate& m) const {
            return wire::Writer("state").u64("t_ms", m.t_ms)
                .num("px", m.pos.x).num("py", m.pos.y).num("pz", m.pos.z)
                .num("vx", m.vel.x).num("vy", m.vel.y).num("vz", m.vel.z)
                .num("ax", m.acc.x).num("ay", m.acc.y).num("az", m.acc.z)
                .boolean("collided", m.collided).finish();
        }
        std::string operator()(const EventNotice& m) const {
            return wire::Writer("event").str("kind", to_string(m.kind)).u64("t_ms", m.t_ms)
                .str("payload", m.payload).finish();
        }
        std::string operator()(const ErrorMessage& m) const {
            return wire::Writer("error").str("code", m.code).str("text", m.text).finish();
        }
    };
    return std::visit(Visitor{}, msg);
}

class DecodeResult {
public:
    DecodeResult(Message m) : value_(std::move(m)) {}
    DecodeResult(DecodeError e) : value_(std::move(e)) {}

    bool ok() const { return std::holds_alternative<Message>(value_); }
    explicit operator bool() const { return ok(); }
    const Message& message() const { return std::get<Message>(value_); }
    const DecodeError& error() const { return std::get<DecodeError>(value_); }

private:
    std::variant<Message, DecodeError> value_;
};

namespace wire {

struct FieldError {
    std::string detail;
};

class Reader {
public:
    explicit Reader(const nlohmann::json& obj) : obj_(obj) {}

    const nlohmann::json& at(const char* key) {
        auto it = obj_.find(key);
        if (it == obj_.end()) {
            throw FieldError{std::string("missing field ") + key};
        }
        used_.insert(key);
        return *it;
    }

    double num(const char* key) {
        const auto& j = at(key);
        if (!j.is_number()) throw FieldError{std::string("field ") + key + " is not a number"};
        const double v = j.get<double>();
        if (!std::isfinite(v)) throw FieldError{std::string("field ") + key + " is not finite"};
        return v;
    }

    std::uint64_t u64(const char* key) {
        const auto& j = at(key);
        if (!j.is_number_unsigned()) throw FieldError{std::string("field ") + key + " is not an unsigned integer"};
        return j.get<std::uint64_t>();
    }

    bool boolean(const char* key) {
        const auto& j = at(key);
        if (!j.is_boolean()) throw FieldError{std::string("field ") + key + " is not a boolean"};
        return j.get<bool>();
    }

    std::string str(const char* key) {
        const auto& j = at(key);
        if (!j.is_string()) throw FieldError{std::string("field ") + key + " is not a string"};
        return j.get<std::string>();
    }

    // Unknown keys are rejected.
    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!used_.count(it.key())) {
                throw FieldError{"unexpected field " + it.key()};
            }
        }
    }

private:
    const nlohmann::json& obj_;
    std::set<std::string> used_{"v", "type"};
};

}  // namespace wire

/// Strict parse. Never throws; every failure is reported as a DecodeError.
inline DecodeResult decode(std::string_view bytes) noexcept {
    auto fail = [](DecodeErrorCode c, std::string d) { return DecodeResult(DecodeError{c, std::move(d)}); };
    try {
        if (bytes.size() > kMaxMessageBytes) {
            return fail(DecodeErrorCode::malformed_payload, "message too large");
        }
        const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            return fail(DecodeErrorCode::malformed_payload, "not a JSON object");
        }
        auto v = j.find("v");
        if (v == j.end() || !(v->is_number_integer())) {
            return fail(DecodeErrorCode::malformed_payload, "missing or non-integer version");
        }
        if (!v->is_number_unsigned() || v->get<std::uint64_t>() != kProtocolVersion) {
            return fail(DecodeErrorCode::version_mismatch, "unsupported version");
        }
        auto t = j.find("type");
        if (t == j.end() || !t->is_string()) {
            return fail(DecodeErrorCode::malformed_payload, "missing type");
        }
        const std::string type = t->get<std::string>();
        wire::Reader r(j);
        Message msg;
        if (type == "rc") {
            RcCommand m;
            m.seq = r.u64("seq");
            m.t_ms = r.u64("t_ms");
            m.vx = r.num("vx");
            m.vy = r.num("vy");
            m.vz = r.num("vz");
            m.yaw_rate = r.num("yaw_rate");
            msg = m;
        } else if (type == "start" || type == "stop") {
            msg = SessionControl{type == "start" ? SessionAction::start : SessionAction::stop};
        } else if (type == "config") {
            ConfigUpdate m;
            m.participant_id = r.str("participant_id");
            auto mode = parse_controller_mode(r.str("controller_mode"));
            if (!mode) throw wire::FieldError{"unknown controller_mode"};
            m.controller_mode = *mode;
            m.plan_seed = r.u64("plan_seed");
            msg = m;
        } else if (type == "state") {
            StateUpdate m;
            m.t_ms = r.u64("t_ms");
            m.pos = {r.num("px"), r.num("py"), r.num("pz")};
            m.vel = {r.num("vx"), r.num("vy"), r.num("vz")};
            m.acc = {r.num("ax"), r.num("ay"), r.num("az")};
            m.collided = r.boolean("collided");
            msg = m;
        } else if (type == "event") {
            EventNotice m;
            auto kind = parse_event_kind(r.str("kind"));
            if (!kind) throw wire::FieldError{"unknown event kind"};
            m.kind = *kind;
            m.t_ms = r.u64("t_ms");
            m.payload = r.str("payload");
            msg = m;
        } else if (type == "error") {
            msg = ErrorMessage{r.str("code"), r.str("text")};
        } else {
            return fail(DecodeErrorCode::unknown_type, "unknown type " + type);
        }
        r.finish();
        return DecodeResult(std::move(msg));
    } catch (const wire::FieldError& e) {
        return fail(DecodeErrorCode::malformed_payload, e.detail);
    } catch (const std::exception& e) {
        return fail(DecodeErrorCode::malformed_payload, e.what());
    } catch (...) {
        return fail(DecodeErrorCode::malformed_payload, "unreadable payload");
    }
}

// ---------------------------------------------------------------------------
// Session state machine

enum class SessionPhase { idle, configured, trial_running, trial_done };

inline const char* to_string(SessionPhase p) {
    switch (p) {
        case SessionPhase::idle: return "idle";
        case SessionPhase::configured: return "configured";
        case SessionPhase::trial_running: return "trial_running";
        case SessionPhase::trial_done: return "trial_done";
    }
    return "";
}

/// Sequence numbers start at 1; `last_seq == 0` means none accepted yet.
struct SessionState {
    SessionPhase phase = SessionPhase::idle;
    std::uint64_t last_seq = 0;
    friend bool operator==(const SessionState&, const SessionState&) = default;
};

namespace action {
struct ReplyError { ErrorMessage error; };
struct ApplyConfig { ConfigUpdate config; };
struct ArmTrial {};
struct EmitEvent { EventKind kind; };
struct ForwardToSim { RcCommand command; };
struct CloseTrialLog {};
}  // namespace action

using Action = std::variant<action::ReplyError, action::ApplyConfig, action::ArmTrial, action::EmitEvent,
                                    action::ForwardToSim, action::CloseTrialLog>;

struct Transition {
    SessionState state;
    std::vector<Action> actions;
};

/// Notifications raised by the trial runner rather than by a client.
enum class RunnerNotice { target_reached, trial_failed, trial_aborted };

namespace detail {
inline Transition bad_phase(const SessionState& s, std::string_view what) {
    return {s, {action::ReplyError{{"bad_phase", std::string(what) + " not allowed in phase " + to_string(s.phase)}}}};
}
}  // namespace detail

inline Transition transition(const SessionState& state, const Message& msg) {
    using P = SessionPhase;
    if (const auto* rc = std::get_if<RcCommand>(&msg)) {
        if (state.phase != P::trial_running) {
            return detail::bad_phase(state, "rc");
        }
        if (rc->seq <= state.last_seq) {
            return {state, {}};
        }
        SessionState next = state;
        next.last_seq = rc->seq;
        return {next, {action::ForwardToSim{*rc}}};
    }
    if (const auto* ctl = std::get_if<SessionControl>(&msg)) {
        SessionState next = state;
        if (ctl->action == SessionAction::start) {
            if (state.phase != P::configured && state.phase != P::trial_done) {
                return detail::bad_phase(state, "start");
            }
            next.phase = P::trial_running;
            return {next, {action::ArmTrial{}, action::EmitEvent{EventKind::trial_start}}};
        }
        if (state.phase != P::trial_running) {
            return detail::bad_phase(state, "stop");
        }
        next.phase = P::trial_done;
        return {next, {action::CloseTrialLog{}}};
    }
    if (const auto* cfg = std::get_if<ConfigUpdate>(&msg)) {
        if (state.phase == P::trial_running) {
            return detail::bad_phase(state, "config");
        }
        SessionState next = state;
        next.phase = P::configured;
        return {next, {action::ApplyConfig{*cfg}}};
    }
    return {state, {action::ReplyError{{"unexpected_type", "server-to-client message received from client"}}}};
}

/// A trial ended by the runner leaves the session in trial_done, so the next
/// start is accepted.
inline Transition transition(const SessionState& state, RunnerNotice notice) {
    if (state.phase != SessionPhase::trial_running) {
        return detail::bad_phase(state, "runner notice");
    }
    const EventKind kind = notice == RunnerNotice::target_reached ? EventKind::trial_complete
                           : notice == RunnerNotice::trial_failed ? EventKind::trial_failed
                                                                  : EventKind::trial_aborted;
    SessionState next = state;
    next.phase = SessionPhase::trial_done;
    return {next, {action::EmitEvent{kind}, action::CloseTrialLog{}}};
}

}  // namespace vrfb
