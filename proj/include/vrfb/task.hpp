#pragma once

// Study task conditions, Fitts difficulty indices, task placement and
// randomized trial plans.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "vec3.hpp"

namespace vrfb {

enum class TaskKind { pointing, crossing };
enum class IdFormulation { welford_2d_over_w, shannon };
enum class ControllerMode { two_button, one_handed };

inline const char* to_string(TaskKind k) { return k == TaskKind::pointing ? "pointing" : "crossing"; }
inline const char* to_string(IdFormulation f) { return f == IdFormulation::welford_2d_over_w ? "welford" : "shannon"; }
inline const char* to_string(ControllerMode m) { return m == ControllerMode::two_button ? "two_button" : "one_handed"; }

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
    if (s == "pointing") return TaskKind::pointing;
    if (s == "crossing") return TaskKind::crossing;
    return std::nullopt;
}

inline std::optional<IdFormulation> parse_id_formulation(std::string_view s) {
    if (s == "welford" || s == "welford_2d_over_w") return IdFormulation::welford_2d_over_w;
    if (s == "shannon") return IdFormulation::shannon;
    return std::nullopt;
}

inline std::optional<ControllerMode> parse_controller_mode(std::string_view s) {
    if (s == "two_button") return ControllerMode::two_button;
    if (s == "one_handed") return ControllerMode::one_handed;
    return std::nullopt;
}

/// Fitts index of difficulty in bits: log2(2D/W) or the Shannon form log2(D/W + 1).
inline double difficulty_index(double distance, double width, IdFormulation formulation) {
    if (!(distance > 0.0) || !(width > 0.0) || !std::isfinite(distance) || !std::isfinite(width)) {
        throw Error(ErrorKind::domain, "difficulty_index requires D > 0 and W > 0");
    }
    switch (formulation) {
        case IdFormulation::welford_2d_over_w: return std::log2(2.0 * distance / width);
        case IdFormulation::shannon: return std::log2(distance / width + 1.0);
    }
    return 0.0;
}

inline constexpr std::array<double, 2> kPointingDistances{2.0, 4.0};
inline constexpr std::array<double, 3> kPointingWidths{0.4, 0.7, 1.1};
inline constexpr std::array<double, 2> kCrossingDistances{2.5, 3.5};
inline constexpr std::array<double, 3> kCrossingWidths{0.3, 0.4, 0.5};

inline bool is_study_geometry(TaskKind kind, double distance, double width) {
    const auto& ds = kind == TaskKind::pointing ? std::span<const double>(kPointingDistances)
                                                : std::span<const double>(kCrossingDistances);
    const auto& ws = kind == TaskKind::pointing ? std::span<const double>(kPointingWidths)
                                                : std::span<const double>(kCrossingWidths);
    return std::find(ds.begin(), ds.end(), distance) != ds.end() &&
           std::find(ws.begin(), ws.end(), width) != ws.end();
}

struct TaskCondition {
    TaskKind kind = TaskKind::pointing;
    double distance = 0.0;  // D, meters
    double width = 0.0;     // W, meters
    double id_value = 0.0;  // bits
    IdFormulation id_formulation = IdFormulation::welford_2d_over_w;

    friend bool operator==(const TaskCondition&, const TaskCondition&) = default;
};

/// Builds a condition on the study grid; off-grid (D, W) pairs are rejected.
inline TaskCondition make_condition(TaskKind kind, double distance, double width,
                                    IdFormulation formulation = IdFormulation::welford_2d_over_w) {
    if (!is_study_geometry(kind, distance, width)) {
        throw Error(ErrorKind::domain, std::string("(D, W) not on the ") + to_string(kind) + " study grid");
    }
    return {kind, distance, width, difficulty_index(distance, width, formulation), formulation};
}

/// The six study conditions of one task kind, ascending by difficulty.
inline std::vector<TaskCondition> enumerate_conditions(
    TaskKind kind, IdFormulation formulation = IdFormulation::welford_2d_over_w) {
    std::vector<TaskCondition> out;
    const bool pointing = kind == TaskKind::pointing;
    for (double d : pointing ? std::span<const double>(kPointingDistances) : std::span<const double>(kCrossingDistances)) {
        for (double w : pointing ? std::span<const double>(kPointingWidths) : std::span<const double>(kCrossingWidths)) {
            out.push_back(make_condition(kind, d, w, formulation));
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TaskCondition& a, const TaskCondition& b) { return a.id_value < b.id_value; });
    return out;
}

struct TaskLayout {
    Vec3 spawn{1.0, 0.0, 0.0};
    double frame_height = 1.5;
};

/// Placed geometry of one condition. The approach axis is +x; a crossing
/// frame's opening lies in the plane x = target_center.x facing -x.
struct TaskInstance {
    TaskCondition condition;
    Vec3 start_pos;
    Vec3 target_center;
    double width = 0.0;

    TaskKind kind() const { return condition.kind; }
};

inline TaskInstance instantiate_task(const TaskCondition& condition, const TaskLayout& layout = {}) {
    TaskInstance t;
    t.condition = condition;
    t.start_pos = layout.spawn;
    t.width = condition.width;
    t.target_center = {layout.spawn.x + condition.distance, layout.spawn.y,
                       condition.kind == TaskKind::pointing ? 0.0 : layout.frame_height};
    return t;
}

struct PlanEntry {
    TaskCondition condition;
    int trial_index = 1;  // 1..repetitions
    ControllerMode mode = ControllerMode::two_button;

    friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

struct TrialPlan {
    std::string participant_id;
    std::uint64_t seed = 0;
    std::vector<PlanEntry> entries;
};

namespace detail {

// Unbiased draw in [0, n) from the raw engine output. std::uniform_int_distribution
// is implementation-defined, which would make plans differ across standard libraries.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Seeded, counterbalanced trial order. Even seeds run the mode list as given,
/// odd seeds reversed; each mode block is a seeded shuffle of
/// conditions x repetitions.
inline TrialPlan randomize_order(const std::vector<TaskCondition>& conditions,
                                 std::vector<ControllerMode> modes, int repetitions,
                                 std::uint64_t seed, std::string participant_id = {}) {
    if (conditions.empty()) {
        throw Error(ErrorKind::domain, "randomize_order: empty condition list");
    }
    if (modes.empty()) {
        throw Error(ErrorKind::domain, "randomize_order: empty mode list");
    }
    if (repetitions < 1) {
        throw Error(ErrorKind::domain, "randomize_order: repetitions must be >= 1");
    }
    if (seed % 2 == 1) {
        std::reverse(modes.begin(), modes.end());
    }

    TrialPlan plan;
    plan.participant_id = std::move(participant_id);
    plan.seed = seed;
    for (std::size_t block = 0; block < modes.size(); ++block) {
        std::vector<std::size_t> slots;
        for (std::size_t c = 0; c < conditions.size(); ++c) {
            for (int r = 0; r < repetitions; ++r) {
                slots.push_back(c);
            }
        }
        std::mt19937_64 rng(detail::mix_seed(seed, block));
        for (std::size_t i = slots.size(); i > 1; --i) {
            std::swap(slots[i - 1], slots[detail::bounded(rng, i)]);
        }
        std::vector<int> seen(conditions.size(), 0);
        for (std::size_t c : slots) {
            plan.entries.push_back({conditions[c], ++seen[c], modes[block]});
        }
    }
    return plan;
}

/// Full factorial plan for one kind (or both when `kind` is empty), both controller modes.
inline TrialPlan study_plan(std::optional<TaskKind> kind, int repetitions, std::uint64_t seed,
                            std::string participant_id,
                            IdFormulation formulation = IdFormulation::welford_2d_over_w) {
    std::vector<TaskCondition> conds;
    for (TaskKind k : {TaskKind::pointing, TaskKind::crossing}) {
        if (!kind || *kind == k) {
            auto c = enumerate_conditions(k, formulation);
            conds.insert(conds.end(), c.begin(), c.end());
        }
    }
    return randomize_order(conds, {ControllerMode::two_button, ControllerMode::one_handed},
                           repetitions, seed, std::move(participant_id));
}

}  // namespace vrfb
