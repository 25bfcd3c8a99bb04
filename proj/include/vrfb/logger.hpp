#pragma once

// Append-only per-trial experiment log and exact replay.
//
// One JSON object per line. Vocabulary follows the wire protocol plus a
// `tick` field; floats are written as the shortest decimal that parses back
// to the identical double, so a log replays bit-exactly.

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "numfmt.hpp"
#include "protocol.hpp"
#include "session.hpp"
#include "sim.hpp"
#include "task.hpp"

namespace vrfb {

struct LogHeader {
    SessionMeta meta;
    std::size_t plan_entry = 0;  // index into the session's TrialPlan
    int attempt = 0;             // 0 for the first run, n for the n-th rerun
    int trial_index = 1;
    TaskInstance task;

    friend bool operator==(const LogHeader& a, const LogHeader& b) {
        return a.meta == b.meta && a.plan_entry == b.plan_entry && a.attempt == b.attempt &&
               a.trial_index == b.trial_index && a.task.condition == b.task.condition &&
               a.task.start_pos == b.task.start_pos && a.task.target_center == b.task.target_center &&
               a.task.width == b.task.width;
    }
};

struct LogCmd {
    std::uint64_t tick = 0;
    std::uint64_t seq = 0;
    double vx = 0.0;
    double vy = 0.0;
    double vz = 0.0;
    double yaw_rate = 0.0;

    Vec3 velocity() const { return {vx, vy, vz}; }
    friend bool operator==(const LogCmd&, const LogCmd&) = default;
};

struct LogSample {
    std::uint64_t tick = 0;
    Vec3 pos{};
    Vec3 vel{};
    Vec3 acc{};
    bool collided = false;

    friend bool operator==(const LogSample&, const LogSample&) = default;
};

struct LogEvent {
    std::uint64_t tick = 0;
    EventKind kind = EventKind::trial_start;
    std::string payload;

    friend bool operator==(const LogEvent&, const LogEvent&) = default;
};

using LogRecord = std::variant<LogHeader, LogCmd, LogSample, LogEvent>;

inline LogSample to_sample(std::uint64_t tick, const DroneState& s) { return {tick, s.pos, s.vel, s.acc, s.collided}; }

inline std::string format_point(const Vec3& p) {
    return format_shortest(p.x) + " " + format_shortest(p.y) + " " + format_shortest(p.z);
}

// ---------------------------------------------------------------------------
// Serialization

namespace logfmt {

class Line {
public:
    explicit Line(std::string_view type) {
        out_ = "{\"type\":\"";
        out_ += type;
        out_ += '"';
    }

    Line& num(std::string_view k, double v) { return raw(k, format_shortest(v)); }
    Line& u64(std::string_view k, std::uint64_t v) { return raw(k, std::to_string(v)); }
    Line& boolean(std::string_view k, bool v) { return raw(k, v ? "true" : "false"); }
    Line& str(std::string_view k, const std::string& v) { return raw(k, nlohmann::json(v).dump()); }
    Line& vec(std::string_view k, const Vec3& v) {
        return raw(k, "[" + format_shortest(v.x) + "," + format_shortest(v.y) + "," + format_shortest(v.z) + "]");
    }
    Line& raw(std::string_view k, std::string_view v) {
        out_ += ",\"";
        out_ += k;
        out_ += "\":";
        out_ += v;
        return *this;
    }

    std::string finish() {
        out_ += '}';
        return std::move(out_);
    }

private:
    std::string out_;
};

inline std::string sim_config_json(const SimConfig& c) {
    std::string s = Line("sim").num("dt", c.dt).num("tau", c.tau).num("v_max", c.v_max)
        .num("landing_alt", c.landing_alt).num("landing_speed", c.landing_speed)
        .num("drone_half_extent", c.drone_half_extent).num("drone_half_height", c.drone_half_height)
        .num("frame_border", c.frame_border).finish();
    // Strip the leading "type" member; nested objects carry none.
    return "{" + s.substr(s.find(',') + 1);
}

inline std::string adapter_json(const AdapterConfig& a) {
    std::string s = Line("adapter").num("s_max", a.s_max).num("deadzone", a.deadzone)
        .num("yaw_rate_max", a.yaw_rate_max).finish();
    return "{" + s.substr(s.find(',') + 1);
}

inline std::string env_json(const EnvironmentParams& e) {
    std::string s = Line("env").vec("wind", e.wind).str("weather", to_string(e.weather)).finish();
    return "{" + s.substr(s.find(',') + 1);
}

inline std::string serialize(const LogRecord& rec) {
    struct Visitor {
        std::string operator()(const LogHeader& h) const {
            const auto& m = h.meta;
            const auto& c = h.task.condition;
            return Line("header").u64("v", kProtocolVersion).str("participant_id", m.participant_id)
                .str("controller_mode", to_string(m.controller_mode)).u64("plan_seed", m.plan_seed)
                .u64("plan_entry", h.plan_entry).u64("attempt", static_cast<std::uint64_t>(h.attempt))
                .u64("trial_index", static_cast<std::uint64_t>(h.trial_index))
                .str("created_at", m.created_at).str("input_source", m.input_source)
                .str("kind", to_string(c.kind)).num("D", c.distance).num("W", c.width).num("id", c.id_value)
                .str("id_formulation", to_string(c.id_formulation))
                .vec("start", h.task.start_pos).vec("target", h.task.target_center)
                .raw("sim", sim_config_json(m.sim_config)).raw("env", env_json(m.environment))
                .raw("adapter", adapter_json(m.adapter)).finish();
        }
        std::string operator()(const LogCmd& c) const {
            return Line("rc").u64("tick", c.tick).u64("seq", c.seq).num("vx", c.vx).num("vy", c.vy)
                .num("vz", c.vz).num("yaw_rate", c.yaw_rate).finish();
        }
        std::string operator()(const LogSample& s) const {
            return Line("state").u64("tick", s.tick)
                .num("px", s.pos.x).num("py", s.pos.y).num("pz", s.pos.z)
                .num("vx", s.vel.x).num("vy", s.vel.y).num("vz", s.vel.z)
                .num("ax", s.acc.x).num("ay", s.acc.y).num("az", s.acc.z)
                .boolean("collided", s.collided).finish();
        }
        std::string operator()(const LogEvent& e) const {
            return Line("event").u64("tick", e.tick).str("kind", to_string(e.kind)).str("payload", e.payload).finish();
        }
    };
    return std::visit(Visitor{}, rec);
}

inline double get_num(const nlohmann::json& j, const char* k) {
    const auto& v = j.at(k);
    if (!v.is_number()) throw Error(ErrorKind::log_format, std::string("field ") + k + " is not a number");
    return v.get<double>();
}

inline std::uint64_t get_u64(const nlohmann::json& j, const char* k) {
    const auto& v = j.at(k);
    if (!v.is_number_unsigned()) throw Error(ErrorKind::log_format, std::string("field ") + k + " is not unsigned");
    return v.get<std::uint64_t>();
}

inline Vec3 get_vec(const nlohmann::json& j, const char* k) {
    const auto& v = j.at(k);
    if (!v.is_array() || v.size() != 3) throw Error(ErrorKind::log_format, std::string("field ") + k + " is not a 3-vector");
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

template <typename T, typename Parse>
T parse_enum(const nlohmann::json& j, const char* k, Parse parse) {
    auto v = parse(j.at(k).get<std::string>());
    if (!v) throw Error(ErrorKind::log_format, std::string("bad value for ") + k);
    return *v;
}

inline LogRecord parse_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::log_format, std::string("unparsable record: ") + e.what());
    }
    try {
        const std::string type = j.at("type").get<std::string>();
        if (type == "header") {
            LogHeader h;
            if (get_u64(j, "v") != kProtocolVersion) throw Error(ErrorKind::log_format, "unsupported log version");
            auto& m = h.meta;
            m.participant_id = j.at("participant_id").get<std::string>();
            m.controller_mode = parse_enum<ControllerMode>(j, "controller_mode", parse_controller_mode);
            m.plan_seed = get_u64(j, "plan_seed");
            h.plan_entry = get_u64(j, "plan_entry");
            h.attempt = static_cast<int>(get_u64(j, "attempt"));
            h.trial_index = static_cast<int>(get_u64(j, "trial_index"));
            m.created_at = j.at("created_at").get<std::string>();
            m.input_source = j.at("input_source").get<std::string>();
            auto& c = h.task.condition;
            c.kind = parse_enum<TaskKind>(j, "kind", parse_task_kind);
            c.distance = get_num(j, "D");
            c.width = get_num(j, "W");
            c.id_value = get_num(j, "id");
            c.id_formulation = parse_enum<IdFormulation>(j, "id_formulation", parse_id_formulation);
            h.task.width = c.width;
            h.task.start_pos = get_vec(j, "start");
            h.task.target_center = get_vec(j, "target");
            const auto& s = j.at("sim");
            m.sim_config = {get_num(s, "dt"), get_num(s, "tau"), get_num(s, "v_max"), get_num(s, "landing_alt"),
                            get_num(s, "landing_speed"), get_num(s, "drone_half_extent"),
                            get_num(s, "drone_half_height"), get_num(s, "frame_border")};
            const auto& e = j.at("env");
            m.environment.wind = get_vec(e, "wind");
            m.environment.weather = parse_enum<Weather>(e, "weather", parse_weather);
            const auto& a = j.at("adapter");
            m.adapter = {get_num(a, "s_max"), get_num(a, "deadzone"), get_num(a, "yaw_rate_max")};
            return h;
        }
        if (type == "rc") {
            return LogCmd{get_u64(j, "tick"), get_u64(j, "seq"), get_num(j, "vx"), get_num(j, "vy"),
                          get_num(j, "vz"), get_num(j, "yaw_rate")};
        }
        if (type == "state") {
            return LogSample{get_u64(j, "tick"),
                             {get_num(j, "px"), get_num(j, "py"), get_num(j, "pz")},
                             {get_num(j, "vx"), get_num(j, "vy"), get_num(j, "vz")},
                             {get_num(j, "ax"), get_num(j, "ay"), get_num(j, "az")},
                             j.at("collided").get<bool>()};
        }
        if (type == "event") {
            return LogEvent{get_u64(j, "tick"), parse_enum<EventKind>(j, "kind", parse_event_kind),
                            j.at("payload").get<std::string>()};
        }
        throw Error(ErrorKind::log_format, "unknown record type " + type);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::log_format, std::string("malformed record: ") + e.what());
    }
}

}  // namespace logfmt

inline std::uint64_t record_tick(const LogRecord& r) {
    return std::visit([](const auto& x) -> std::uint64_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, LogHeader>) {
            return 0;
        } else {
            return x.tick;
        }
    }, r);
}

// ---------------------------------------------------------------------------
// Writing

/// Enforces record ordering: header first, ticks non-decreasing, sample ticks
/// consecutive from 0.
class RecordSequenceChecker {
public:
    void check(const LogRecord& rec) {
        if (std::holds_alternative<LogHeader>(rec)) {
            if (seen_header_) throw Error(ErrorKind::log_invariant, "duplicate header");
            seen_header_ = true;
            return;
        }
        if (!seen_header_) throw Error(ErrorKind::log_invariant, "first record must be the header");
        const std::uint64_t tick = record_tick(rec);
        if (tick < last_tick_) {
            throw Error(ErrorKind::log_invariant,
                        "tick regression: " + std::to_string(tick) + " after " + std::to_string(last_tick_));
        }
        if (std::holds_alternative<LogSample>(rec)) {
            const std::uint64_t expected = next_sample_tick_;
            if (tick != expected) {
                throw Error(ErrorKind::log_invariant,
                            "sample tick " + std::to_string(tick) + " where " + std::to_string(expected) + " expected");
            }
            ++next_sample_tick_;
        }
        last_tick_ = tick;
    }

private:
    bool seen_header_ = false;
    std::uint64_t last_tick_ = 0;
    std::uint64_t next_sample_tick_ = 0;
};

/// Single-writer trial log. Every record is flushed as it is appended, so a
/// crash loses at most the line being written.
class TrialLogWriter {
public:
    explicit TrialLogWriter(std::filesystem::path path) : path_(std::move(path)) {
        std::error_code ec;
        if (path_.has_parent_path()) {
            std::filesystem::create_directories(path_.parent_path(), ec);
        }
        file_.reset(std::fopen(path_.c_str(), "wb"));
        if (!file_) {
            throw Error(ErrorKind::io, "cannot open log file " + path_.string());
        }
    }

    const std::filesystem::path& path() const { return path_; }

    void append(const LogRecord& rec) {
        if (!file_) throw Error(ErrorKind::log_invariant, "append after finalize");
        checker_.check(rec);
        const std::string line = logfmt::serialize(rec) + "\n";
        if (std::fwrite(line.data(), 1, line.size(), file_.get()) != line.size() || std::fflush(file_.get()) != 0) {
            throw Error(ErrorKind::io, "write failed: " + path_.string());
        }
    }

    std::filesystem::path finalize() {
        file_.reset();
        return path_;
    }

private:
    struct Closer {
        void operator()(std::FILE* f) const { std::fclose(f); }
    };

    std::filesystem::path path_;
    std::unique_ptr<std::FILE, Closer> file_;
    RecordSequenceChecker checker_;
};

// ---------------------------------------------------------------------------
// Reading

struct ReadResult {
    std::vector<LogRecord> records;
    bool truncated = false;  // a torn final line was dropped
};

/// Parses a log. A malformed or unterminated final line is treated as a torn
/// write: preceding records are returned and `truncated` is set. Malformed
/// lines elsewhere are errors.
inline ReadResult read_records(std::istream& in) {
    ReadResult out;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    RecordSequenceChecker checker;
    while (pos < content.size()) {
        const std::size_t nl = content.find('\n', pos);
        const bool last = nl == std::string::npos || nl + 1 >= content.size();
        const std::string_view line(content.data() + pos, (nl == std::string::npos ? content.size() : nl) - pos);
        if (nl == std::string::npos) {
            // No terminating newline: the writer died mid-line.
            out.truncated = true;
            break;
        }
        try {
            LogRecord rec = logfmt::parse_line(line);
            checker.check(rec);
            out.records.push_back(std::move(rec));
        } catch (const Error&) {
            if (!last) throw;
            out.truncated = true;
            break;
        }
        pos = nl + 1;
    }
    return out;
}

inline ReadResult read_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    return read_records(in);
}

/// A parsed trial log split by record type.
struct TrialLog {
    LogHeader header;
    std::vector<LogCmd> commands;
    std::vector<LogSample> samples;
    std::vector<LogEvent> events;
    bool truncated = false;

    static TrialLog from_records(const ReadResult& rr) {
        if (rr.records.empty() || !std::holds_alternative<LogHeader>(rr.records.front())) {
            throw Error(ErrorKind::log_format, "log has no header");
        }
        TrialLog log;
        log.truncated = rr.truncated;
        for (const auto& rec : rr.records) {
            std::visit([&](const auto& r) {
                using T = std::decay_t<decltype(r)>;
                if constexpr (std::is_same_v<T, LogHeader>) log.header = r;
                else if constexpr (std::is_same_v<T, LogCmd>) log.commands.push_back(r);
                else if constexpr (std::is_same_v<T, LogSample>) log.samples.push_back(r);
                else log.events.push_back(r);
            }, rec);
        }
        return log;
    }

    static TrialLog read(const std::filesystem::path& path) { return from_records(read_records(path)); }
};

/// Log path relative to the output root: {participant}/{kind}-{mode}-D{D}-W{W}-t{trial}.log,
/// with an -r{n} suffix for the n-th rerun.
inline std::filesystem::path trial_log_path(const LogHeader& h) {
    const auto& c = h.task.condition;
    std::string name = std::string(to_string(c.kind)) + "-" + to_string(h.meta.controller_mode) + "-D" +
                       format_shortest(c.distance) + "-W" + format_shortest(c.width) + "-t" +
                       std::to_string(h.trial_index);
    if (h.attempt > 0) name += "-r" + std::to_string(h.attempt);
    return std::filesystem::path(h.meta.participant_id) / (name + ".log");
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayInput {
    DroneState initial;
    std::vector<Vec3> commands;  // commands[k] drives the transition from tick k to k+1
};

/// Commanded velocity at each tick: the last Cmd at or before the tick, zero
/// before the first one.
inline ReplayInput replay(const TrialLog& log) {
    ReplayInput in;
    in.initial = initial_state(log.header.task);
    const std::uint64_t ticks = log.samples.empty() ? 0 : log.samples.back().tick;
    in.commands.assign(ticks, Vec3{});
    std::size_t ci = 0;
    Vec3 current{};
    for (std::uint64_t k = 0; k < ticks; ++k) {
        while (ci < log.commands.size() && log.commands[ci].tick <= k) {
            current = log.commands[ci].velocity();
            ++ci;
        }
        in.commands[k] = current;
    }
    return in;
}

/// Re-simulates the trial from its header and command stream.
inline std::vector<LogSample> regenerate_samples(const TrialLog& log) {
    const ReplayInput in = replay(log);
    const auto& cfg = log.header.meta.sim_config;
    const auto& env = log.header.meta.environment;
    std::vector<LogSample> out;
    out.reserve(in.commands.size() + 1);
    DroneState state = in.initial;
    out.push_back(to_sample(0, state));
    for (std::size_t k = 0; k < in.commands.size(); ++k) {
        DroneState next = step(state, clamp_command(in.commands[k], cfg), env, cfg);
        next.collided = evaluate_tick(state, next, log.header.task, cfg).outcome == TickOutcome::collided;
        out.push_back(to_sample(k + 1, next));
        state = next;
    }
    return out;
}

namespace detail {
inline bool bits_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }
inline bool bits_equal(const Vec3& a, const Vec3& b) {
    return bits_equal(a.x, b.x) && bits_equal(a.y, b.y) && bits_equal(a.z, b.z);
}
inline bool bits_equal(const LogSample& a, const LogSample& b) {
    return a.tick == b.tick && a.collided == b.collided && bits_equal(a.pos, b.pos) && bits_equal(a.vel, b.vel) &&
           bits_equal(a.acc, b.acc);
}
}  // namespace detail

struct VerifyResult {
    bool ok = true;
    std::optional<std::uint64_t> first_divergent_tick;
    std::string detail;
};

/// Bitwise comparison of logged samples against a fresh re-simulation.
inline VerifyResult verify_replay(const TrialLog& log) {
    const auto regenerated = regenerate_samples(log);
    const std::size_t n = std::min(regenerated.size(), log.samples.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!detail::bits_equal(regenerated[i], log.samples[i])) {
            return {false, log.samples[i].tick, "sample mismatch at tick " + std::to_string(log.samples[i].tick)};
        }
    }
    if (regenerated.size() != log.samples.size()) {
        return {false, static_cast<std::uint64_t>(n), "sample count mismatch"};
    }
    return {};
}

}  // namespace vrfb
