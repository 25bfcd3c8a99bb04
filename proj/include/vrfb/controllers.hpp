#pragma once

// Input-to-velocity mappings for the studied controller interfaces, a
// keyboard fallback, and a scripted pilot for headless runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>

#include "sim.hpp"
#include "task.hpp"
#include "vec3.hpp"

namespace vrfb {

enum class PadId { left, right, mono };

/// One touch pad reading. (u, v) is relative to the pad midpoint in [-1, 1].
struct TouchSample {
    PadId pad = PadId::mono;
    double u = 0.0;
    double v = 0.0;
    double pressure = 0.0;
    bool active = false;

    bool valid() const {
        return std::isfinite(u) && std::isfinite(v) && std::isfinite(pressure) && u * u + v * v <= 2.0 &&
               pressure >= 0.0 && pressure <= 1.0 && (active || pressure == 0.0);
    }
};

struct AdapterConfig {
    double s_max = 2.0;
    double deadzone = 0.1;
    double yaw_rate_max = 1.0;  // rad/s at full deflection of the left pad

    void validate() const {
        if (!(s_max > 0.0) || !(deadzone >= 0.0 && deadzone < 1.0) || !(yaw_rate_max >= 0.0)) {
            throw Error(ErrorKind::config, "invalid AdapterConfig");
        }
    }

    friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

struct VelocityCommand {
    Vec3 vel{};
    double yaw_rate = 0.0;
};

namespace detail {

// Deadzone-rescaled deflection in [0, 1].
inline double deflection(double r, double deadzone) {
    return std::min(1.0, std::max(r - deadzone, 0.0) / (1.0 - deadzone));
}

inline double signed_deflection(double x, double deadzone) {
    return std::copysign(deflection(std::abs(x), deadzone), x);
}

}  // namespace detail

/// Baseline two-pad controller: speed grows linearly with the touch
/// distance from the pad midpoint. Right pad drives (vx, vy) from (u, v);
/// left pad drives vz from v and yaw rate from u.
inline VelocityCommand two_button_map(const TouchSample& left, const TouchSample& right,
                                      const AdapterConfig& cfg) {
    VelocityCommand out;
    if (right.active) {
        const double r = std::hypot(right.u, right.v);
        if (r > 0.0) {
            const double speed = cfg.s_max * detail::deflection(r, cfg.deadzone);
            out.vel.x = speed * right.u / r;
            out.vel.y = speed * right.v / r;
        }
    }
    if (left.active) {
        out.vel.z = cfg.s_max * detail::signed_deflection(left.v, cfg.deadzone);
        out.yaw_rate = cfg.yaw_rate_max * detail::signed_deflection(left.u, cfg.deadzone);
    }
    out.vel = clamp_norm(out.vel, cfg.s_max);
    return out;
}

enum class MotionPlane { horizontal, vertical };

inline constexpr double kHoverPressure = 0.02;

/// Force-driven single pad: pressure sets speed, thumb position sets direction
/// within the selected plane. Horizontal routes (v, u) to (vx, vy); vertical
/// routes (u, v) to (vy, vz).
inline VelocityCommand one_handed_map(const TouchSample& mono, MotionPlane plane, const AdapterConfig& cfg) {
    VelocityCommand out;
    if (!mono.active || mono.pressure < kHoverPressure) {
        return out;
    }
    const double r = std::hypot(mono.u, mono.v);
    if (r == 0.0) {
        return out;
    }
    const double speed = cfg.s_max * std::min(mono.pressure, 1.0);
    const double du = mono.u / r;
    const double dv = mono.v / r;
    if (plane == MotionPlane::horizontal) {
        out.vel = {speed * dv, speed * du, 0.0};
    } else {
        out.vel = {0.0, speed * du, speed * dv};
    }
    return out;
}

enum class Key : unsigned { forward, back, left, right, up, down, yaw_left, yaw_right };

class KeySet {
public:
    KeySet() = default;
    KeySet(std::initializer_list<Key> keys) {
        for (Key k : keys) insert(k);
    }

    void insert(Key k) { bits_ |= 1u << static_cast<unsigned>(k); }
    void erase(Key k) { bits_ &= ~(1u << static_cast<unsigned>(k)); }
    bool contains(Key k) const { return (bits_ >> static_cast<unsigned>(k)) & 1u; }
    bool empty() const { return bits_ == 0; }

private:
    std::uint32_t bits_ = 0;
};

/// Each held key commands half of s_max along its axis; opposing keys cancel.
inline VelocityCommand keyboard_map(const KeySet& keys, const AdapterConfig& cfg) {
    const double s = 0.5 * cfg.s_max;
    auto axis = [&](Key pos, Key neg) {
        return s * ((keys.contains(pos) ? 1.0 : 0.0) - (keys.contains(neg) ? 1.0 : 0.0));
    };
    VelocityCommand out;
    out.vel = {axis(Key::forward, Key::back), axis(Key::right, Key::left), axis(Key::up, Key::down)};
    out.yaw_rate = cfg.yaw_rate_max * 0.5 *
                   ((keys.contains(Key::yaw_right) ? 1.0 : 0.0) - (keys.contains(Key::yaw_left) ? 1.0 : 0.0));
    return out;
}

/// Pad readings that reproduce `desired` through two_button_map.
struct TwoButtonTouch {
    TouchSample left{PadId::left};
    TouchSample right{PadId::right};
};

inline TwoButtonTouch two_button_touch_for(const Vec3& desired, const AdapterConfig& cfg) {
    TwoButtonTouch t;
    const double planar = desired.horizontal_norm();
    if (planar > 0.0) {
        const double r = cfg.deadzone + (1.0 - cfg.deadzone) * std::min(planar / cfg.s_max, 1.0);
        t.right = {PadId::right, r * desired.x / planar, r * desired.y / planar, 0.0, true};
    }
    if (desired.z != 0.0) {
        const double mag = cfg.deadzone + (1.0 - cfg.deadzone) * std::min(std::abs(desired.z) / cfg.s_max, 1.0);
        t.left = {PadId::left, 0.0, std::copysign(mag, desired.z), 0.0, true};
    }
    return t;
}

struct OneHandedTouch {
    TouchSample mono{PadId::mono};
    MotionPlane plane = MotionPlane::horizontal;
};

/// Single-pad reading approximating `desired`: the plane that captures the
/// larger share of the velocity is selected, the remaining axis is dropped.
/// Any nonzero request presses at least at the hover threshold, so slow
/// corrections are not swallowed by it.
inline OneHandedTouch one_handed_touch_for(const Vec3& desired, const AdapterConfig& cfg) {
    OneHandedTouch t;
    const double horizontal = std::hypot(desired.x, desired.y);
    const double vertical = std::hypot(desired.y, desired.z);
    t.plane = horizontal >= vertical ? MotionPlane::horizontal : MotionPlane::vertical;
    const double captured = std::max(horizontal, vertical);
    if (captured == 0.0) {
        return t;
    }
    const double pressure = std::clamp(captured / cfg.s_max, kHoverPressure, 1.0);
    if (t.plane == MotionPlane::horizontal) {
        t.mono = {PadId::mono, desired.y / captured, desired.x / captured, pressure, true};
    } else {
        t.mono = {PadId::mono, desired.y / captured, desired.z / captured, pressure, true};
    }
    return t;
}

/// Routes a desired velocity through the given controller's mapping, so that a
/// scripted pilot is subject to the same interface constraints as a human.
inline VelocityCommand through_controller(const Vec3& desired, ControllerMode mode, const AdapterConfig& cfg) {
    if (mode == ControllerMode::two_button) {
        const auto t = two_button_touch_for(desired, cfg);
        return two_button_map(t.left, t.right, cfg);
    }
    const auto t = one_handed_touch_for(desired, cfg);
    return one_handed_map(t.mono, t.plane, cfg);
}

struct BotGains {
    double kp = 1.2;                   // 1/s
    double descend_speed = 0.4;        // m/s
    double waypoint_tolerance = 0.1;   // m
    double pass_through = 0.5;         // m beyond the frame plane
    double standoff = 0.5;             // m before the frame plane where the axis is joined

    void validate() const {
        if (!(kp > 0.0) || !(descend_speed > 0.0) || !(waypoint_tolerance > 0.0) || !(pass_through > 0.0) ||
            !(standoff > 0.0)) {
            throw Error(ErrorKind::config, "invalid BotGains");
        }
    }
};

enum class BotPhase { takeoff, approach, final_leg, done };

/// Proportional-pursuit pilot.
///
/// Every trial starts with a vertical takeoff to the working altitude (the
/// frame height for crossing, 0.5 m above the plate for pointing), so that a
/// single-plane controller does not skid along the ground.
///
/// Crossing: pursue a point `standoff` in front of the frame center on the
/// frame axis until settled there (lateral offset within W/8 and lateral speed
/// below 0.05 m/s), then pursue a point `pass_through` beyond the plane and
/// stop there. Pointing: pursue the hover point above the plate center; once
/// horizontally within tolerance, descend at descend_speed while correcting
/// horizontal drift.
class BotPilot {
public:
    static constexpr double kHoverHeight = 0.5;

    explicit BotPilot(BotGains gains = {}, double speed_limit = 2.0)
        : gains_(gains), speed_limit_(speed_limit) {
        gains_.validate();
    }

    BotPhase phase() const { return phase_; }
    void reset() { phase_ = BotPhase::takeoff; }

    Vec3 step(const DroneState& state, const TaskInstance& task) {
        if (phase_ == BotPhase::takeoff) {
            const double altitude = working_altitude(task);
            if (state.pos.z >= altitude - gains_.waypoint_tolerance) {
                phase_ = BotPhase::approach;
            } else {
                return pursue({state.pos.x, state.pos.y, altitude}, state.pos);
            }
        }
        return task.kind() == TaskKind::crossing ? crossing(state, task) : pointing(state, task);
    }

private:
    static double working_altitude(const TaskInstance& task) {
        return task.kind() == TaskKind::crossing ? task.target_center.z : task.target_center.z + kHoverHeight;
    }

    Vec3 pursue(const Vec3& target, const Vec3& pos) const { return clamp_norm(gains_.kp * (target - pos), speed_limit_); }

    Vec3 crossing(const DroneState& state, const TaskInstance& task) {
        static constexpr double kSettledLateralSpeed = 0.05;
        const Vec3 center = task.target_center;
        const Vec3 entry = center - Vec3{gains_.standoff, 0.0, 0.0};
        const Vec3 exit_point = center + Vec3{gains_.pass_through, 0.0, 0.0};
        if (phase_ == BotPhase::approach) {
            const Vec3 off = state.pos - entry;
            const bool settled = std::abs(off.x) <= gains_.waypoint_tolerance &&
                                 std::hypot(off.y, off.z) <= std::min(gains_.waypoint_tolerance, task.width / 8.0) &&
                                 std::hypot(state.vel.y, state.vel.z) <= kSettledLateralSpeed;
            if (settled || state.pos.x >= center.x) phase_ = BotPhase::final_leg;
        }
        if (phase_ == BotPhase::final_leg && state.pos.x >= exit_point.x) {
            phase_ = BotPhase::done;
        }
        switch (phase_) {
            case BotPhase::takeoff:
            case BotPhase::approach: return pursue(entry, state.pos);
            case BotPhase::final_leg: return pursue(exit_point, state.pos);
            case BotPhase::done: return {};
        }
        return {};
    }

    Vec3 pointing(const DroneState& state, const TaskInstance& task) {
        const Vec3 hover = task.target_center + Vec3{0.0, 0.0, kHoverHeight};
        const Vec3 offset = hover - state.pos;
        if (phase_ == BotPhase::approach && std::hypot(offset.x, offset.y) <= gains_.waypoint_tolerance) {
            phase_ = BotPhase::final_leg;
        }
        if (phase_ == BotPhase::approach) {
            return pursue(hover, state.pos);
        }
        const Vec3 cmd{gains_.kp * offset.x, gains_.kp * offset.y, -gains_.descend_speed};
        return clamp_norm(cmd, speed_limit_);
    }

    BotGains gains_;
    double speed_limit_;
    BotPhase phase_ = BotPhase::takeoff;
};

/// Single-tick command from a fresh pilot; the phase is inferred from `state`.
inline Vec3 bot_pilot_step(const DroneState& state, const TaskInstance& task, const BotGains& gains,
                           double speed_limit = 2.0) {
    BotPilot pilot(gains, speed_limit);
    return pilot.step(state, task);
}

}  // namespace vrfb
