#pragma once

// Fixed-timestep quadcopter kinematics and task-geometry predicates.
//
// Velocity tracks the commanded setpoint (plus wind) through a first-order lag
// discretized exactly: vel' = a*vel + (1-a)*(cmd + wind) with a = exp(-dt/tau).
// Position integrates the new velocity. Every function here is pure.

#include <array>
#include <cmath>
#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "task.hpp"
#include "vec3.hpp"

namespace vrfb {

struct SimConfig {
    double dt = 0.010;
    double tau = 0.3;
    double v_max = 2.0;
    double landing_alt = 0.05;
    double landing_speed = 0.25;
    double drone_half_extent = 0.09;      // half of the 0.18 m body width
    double drone_half_height = 0.025;
    double frame_border = 0.05;           // border band width and depth

    void validate() const {
        if (!(dt > 0.0) || !(tau > 0.0) || !(v_max > 0.0) || !(landing_alt >= 0.0) ||
            !(landing_speed >= 0.0) || !(drone_half_extent > 0.0) || !(drone_half_height > 0.0) ||
            !(frame_border > 0.0)) {
            throw Error(ErrorKind::config, "invalid SimConfig");
        }
    }

    friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

enum class Weather { sunshine, rain, fog };

inline const char* to_string(Weather w) {
    switch (w) {
        case Weather::sunshine: return "sunshine";
        case Weather::rain: return "rain";
        case Weather::fog: return "fog";
    }
    return "sunshine";
}

inline std::optional<Weather> parse_weather(std::string_view s) {
    if (s == "sunshine") return Weather::sunshine;
    if (s == "rain") return Weather::rain;
    if (s == "fog") return Weather::fog;
    return std::nullopt;
}

struct EnvironmentParams {
    Vec3 wind{};
    Weather weather = Weather::sunshine;  // rendering only

    friend bool operator==(const EnvironmentParams&, const EnvironmentParams&) = default;
};

struct DroneState {
    double t = 0.0;
    Vec3 pos{};
    Vec3 vel{};
    Vec3 acc{};
    bool collided = false;

    friend bool operator==(const DroneState&, const DroneState&) = default;
};

enum class LandmarkShape { triangular_pyramid, cube };

struct Landmark {
    LandmarkShape shape;
    Vec3 pos;
};

/// Static scene: fixed observer camera and two orientation landmarks.
struct WorldScene {
    static constexpr Vec3 camera_pos{0.0, 0.0, 1.65};
    static constexpr double camera_fov_deg = 90.0;
    std::vector<Landmark> landmarks{{LandmarkShape::triangular_pyramid, {6.0, -2.5, 0.0}},
                                    {LandmarkShape::cube, {6.0, 2.5, 0.0}}};
    std::optional<TaskInstance> task;
};

inline DroneState initial_state(const TaskInstance& task) {
    DroneState s;
    s.pos = task.start_pos;
    return s;
}

/// Advances the drone by one tick. `cmd_vel` must already be clamped to v_max.
inline DroneState step(const DroneState& state, const Vec3& cmd_vel, const EnvironmentParams& env,
                       const SimConfig& cfg) {
    if (!std::isfinite(state.t) || !state.pos.finite() || !state.vel.finite() || !state.acc.finite() ||
        !cmd_vel.finite() || !env.wind.finite()) {
        throw Error(ErrorKind::state_invariant, "step: non-finite input");
    }
    const double alpha = std::exp(-cfg.dt / cfg.tau);
    DroneState next;
    next.t = state.t + cfg.dt;
    next.vel = alpha * state.vel + (1.0 - alpha) * (cmd_vel + env.wind);
    next.pos = state.pos + next.vel * cfg.dt;
    if (next.pos.z < 0.0) {
        next.pos.z = 0.0;
        next.vel.z = 0.0;
    }
    next.acc = (next.vel - state.vel) / cfg.dt;
    return next;
}

/// Clamps a raw setpoint to the simulator speed limit.
inline Vec3 clamp_command(const Vec3& cmd, const SimConfig& cfg) { return clamp_norm(cmd, cfg.v_max); }

/// True when the drone center passes forward (-x to +x) through the frame
/// plane between `prev` and `curr` inside the opening shrunk by the drone's
/// half extent.
inline bool check_crossing_trigger(const DroneState& prev, const DroneState& curr, const TaskInstance& task,
                                   const SimConfig& cfg) {
    if (task.kind() != TaskKind::crossing) {
        return false;
    }
    const double plane = task.target_center.x;
    const double before = prev.pos.x - plane;
    const double after = curr.pos.x - plane;
    if (!(before < 0.0 && after >= 0.0)) {
        return false;
    }
    const double s = -before / (after - before);
    const Vec3 hit = prev.pos + s * (curr.pos - prev.pos);
    const double limit = task.width / 2.0 - cfg.drone_half_extent;
    return std::abs(hit.y - task.target_center.y) < limit && std::abs(hit.z - task.target_center.z) < limit;
}

inline bool check_landing(const DroneState& state, const TaskInstance& task, const SimConfig& cfg) {
    if (task.kind() != TaskKind::pointing) {
        return false;
    }
    const double half = task.width / 2.0;
    return state.pos.z <= cfg.landing_alt && state.vel.norm() <= cfg.landing_speed &&
           std::abs(state.pos.x - task.target_center.x) <= half &&
           std::abs(state.pos.y - task.target_center.y) <= half;
}

struct Box {
    Vec3 lo;
    Vec3 hi;

    bool overlaps(const Box& o) const {
        return lo.x < o.hi.x && o.lo.x < hi.x && lo.y < o.hi.y && o.lo.y < hi.y && lo.z < o.hi.z && o.lo.z < hi.z;
    }

    bool contains(const Vec3& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
    }

    /// Nearest point on the box surface; for interior points, the projection
    /// onto the closest face.
    Vec3 nearest_surface_point(const Vec3& p) const {
        if (!contains(p)) {
            return {std::clamp(p.x, lo.x, hi.x), std::clamp(p.y, lo.y, hi.y), std::clamp(p.z, lo.z, hi.z)};
        }
        const std::array<double, 6> gaps{p.x - lo.x, hi.x - p.x, p.y - lo.y, hi.y - p.y, p.z - lo.z, hi.z - p.z};
        std::size_t best = 0;
        for (std::size_t i = 1; i < gaps.size(); ++i) {
            if (gaps[i] < gaps[best]) best = i;
        }
        Vec3 q = p;
        switch (best) {
            case 0: q.x = lo.x; break;
            case 1: q.x = hi.x; break;
            case 2: q.y = lo.y; break;
            case 3: q.y = hi.y; break;
            case 4: q.z = lo.z; break;
            default: q.z = hi.z; break;
        }
        return q;
    }
};

/// Four solid bars forming the border around the square opening.
inline std::array<Box, 4> frame_border_boxes(const TaskInstance& task, const SimConfig& cfg) {
    const Vec3 c = task.target_center;
    const double h = task.width / 2.0;
    const double b = cfg.frame_border;
    const double x0 = c.x - b / 2.0;
    const double x1 = c.x + b / 2.0;
    return {{
        {{x0, c.y - h - b, c.z + h}, {x1, c.y + h + b, c.z + h + b}},  // top
        {{x0, c.y - h - b, c.z - h - b}, {x1, c.y + h + b, c.z - h}},  // bottom
        {{x0, c.y - h - b, c.z - h}, {x1, c.y - h, c.z + h}},          // left
        {{x0, c.y + h, c.z - h}, {x1, c.y + h + b, c.z + h}},          // right
    }};
}

inline Box drone_box(const Vec3& center, const SimConfig& cfg) {
    const Vec3 half{cfg.drone_half_extent, cfg.drone_half_extent, cfg.drone_half_height};
    return {center - half, center + half};
}

/// Contact point on the frame border if the drone box overlaps it at `curr`.
inline std::optional<Vec3> detect_collision(const DroneState& /*prev*/, const DroneState& curr,
                                            const TaskInstance& task, const SimConfig& cfg) {
    if (task.kind() != TaskKind::crossing) {
        return std::nullopt;
    }
    const Box body = drone_box(curr.pos, cfg);
    std::optional<Vec3> best;
    double best_dist = 0.0;
    for (const Box& bar : frame_border_boxes(task, cfg)) {
        if (!body.overlaps(bar)) {
            continue;
        }
        const Vec3 p = bar.nearest_surface_point(curr.pos);
        const double d = (p - curr.pos).norm();
        if (!best || d < best_dist) {
            best = p;
            best_dist = d;
        }
    }
    return best;
}

enum class TickOutcome { none, completed, collided };

struct TickEvaluation {
    TickOutcome outcome = TickOutcome::none;
    std::optional<Vec3> contact;
};

/// Task status after the transition prev -> curr. Completion is checked
/// before collision, so a single tick never reports both.
inline TickEvaluation evaluate_tick(const DroneState& prev, const DroneState& curr, const TaskInstance& task,
                                    const SimConfig& cfg) {
    if (task.kind() == TaskKind::crossing) {
        if (check_crossing_trigger(prev, curr, task, cfg)) {
            return {TickOutcome::completed, std::nullopt};
        }
        if (auto contact = detect_collision(prev, curr, task, cfg)) {
            return {TickOutcome::collided, contact};
        }
        return {};
    }
    if (check_landing(curr, task, cfg)) {
        return {TickOutcome::completed, std::nullopt};
    }
    return {};
}

}  // namespace vrfb
