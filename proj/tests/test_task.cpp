#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "vrfb/task.hpp"

using namespace vrfb;

TEST(DifficultyIndex, WelfordHandValues) {
    // log2(10) and log2(40/11)
    EXPECT_NEAR(difficulty_index(2.0, 0.4, IdFormulation::welford_2d_over_w), 3.3219, 1e-4);
    EXPECT_NEAR(difficulty_index(2.0, 1.1, IdFormulation::welford_2d_over_w), 1.8625, 1e-4);
    // The easiest pointing task rounds to the reported 1.9 bits.
    EXPECT_NEAR(difficulty_index(2.0, 1.1, IdFormulation::welford_2d_over_w), 1.9, 0.05);
}

TEST(DifficultyIndex, ZeroWhenDistanceIsHalfWidth) {
    for (double w : {0.1, 0.4, 1.1, 3.0}) {
        EXPECT_EQ(difficulty_index(w / 2.0, w, IdFormulation::welford_2d_over_w), 0.0);
    }
}

TEST(DifficultyIndex, RejectsNonPositiveArguments) {
    EXPECT_THROW(difficulty_index(0.0, 0.4, IdFormulation::welford_2d_over_w), Error);
    EXPECT_THROW(difficulty_index(2.0, -0.4, IdFormulation::shannon), Error);
    EXPECT_THROW(difficulty_index(std::nan(""), 0.4, IdFormulation::shannon), Error);
}

TEST(DifficultyIndex, MonotoneInDistanceAndWidth) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.05, 10.0);
    for (auto f : {IdFormulation::welford_2d_over_w, IdFormulation::shannon}) {
        for (int i = 0; i < 2000; ++i) {
            const double d = u(rng), w = u(rng), k = 1.0 + u(rng);
            EXPECT_LT(difficulty_index(d, w, f), difficulty_index(d * k, w, f));
            EXPECT_GT(difficulty_index(d, w, f), difficulty_index(d, w * k, f));
        }
    }
}

TEST(EnumerateConditions, PointingWelford) {
    const auto c = enumerate_conditions(TaskKind::pointing);
    ASSERT_EQ(c.size(), 6u);
    const double expected[] = {1.8625, 2.5146, 2.8625, 3.3219, 3.5146, 4.3219};
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(c[i].id_value, expected[i], 1e-4);
}

TEST(EnumerateConditions, CrossingWelford) {
    const auto c = enumerate_conditions(TaskKind::crossing);
    ASSERT_EQ(c.size(), 6u);
    const double expected[] = {3.3219, 3.6439, 3.8074, 4.0589, 4.1293, 4.5443};
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(c[i].id_value, expected[i], 1e-4);
}

TEST(EnumerateConditions, CrossingShannonRange) {
    const auto c = enumerate_conditions(TaskKind::crossing, IdFormulation::shannon);
    EXPECT_NEAR(c.front().id_value, 2.585, 1e-3);
    EXPECT_EQ(c.front().distance, 2.5);
    EXPECT_EQ(c.front().width, 0.5);
    EXPECT_NEAR(c.back().id_value, 3.663, 1e-3);
    EXPECT_EQ(c.back().distance, 3.5);
    EXPECT_EQ(c.back().width, 0.3);
}

TEST(EnumerateConditions, GridAndOrdering) {
    for (auto kind : {TaskKind::pointing, TaskKind::crossing}) {
        for (auto f : {IdFormulation::welford_2d_over_w, IdFormulation::shannon}) {
            const auto c = enumerate_conditions(kind, f);
            ASSERT_EQ(c.size(), 6u);
            for (std::size_t i = 1; i < c.size(); ++i) EXPECT_LT(c[i - 1].id_value, c[i].id_value);
            for (const auto& x : c) EXPECT_TRUE(is_study_geometry(kind, x.distance, x.width));
        }
    }
}

TEST(MakeCondition, RejectsOffGridGeometry) {
    EXPECT_THROW(make_condition(TaskKind::pointing, 3.0, 0.4), Error);
    EXPECT_THROW(make_condition(TaskKind::crossing, 2.0, 0.4), Error);
    EXPECT_NO_THROW(make_condition(TaskKind::crossing, 3.5, 0.4));
}

TEST(InstantiateTask, PlacesTargetsAlongApproachAxis) {
    const auto p = instantiate_task(make_condition(TaskKind::pointing, 2.0, 0.7));
    EXPECT_EQ(p.target_center, (Vec3{3.0, 0.0, 0.0}));
    const auto c = instantiate_task(make_condition(TaskKind::crossing, 3.5, 0.3));
    EXPECT_EQ(c.target_center, (Vec3{4.5, 0.0, 1.5}));
    for (auto kind : {TaskKind::pointing, TaskKind::crossing}) {
        for (const auto& cond : enumerate_conditions(kind)) {
            const auto t = instantiate_task(cond);
            EXPECT_EQ(t.start_pos, (Vec3{1.0, 0.0, 0.0}));
            EXPECT_DOUBLE_EQ(t.target_center.x - t.start_pos.x, cond.distance);
            EXPECT_EQ(t.width, cond.width);
        }
    }
}

namespace {
using CellKey = std::tuple<int, double, double, int>;

std::map<CellKey, int> cell_counts(const TrialPlan& p) {
    std::map<CellKey, int> counts;
    for (const auto& e : p.entries) {
        ++counts[{static_cast<int>(e.mode), e.condition.distance, e.condition.width, static_cast<int>(e.condition.kind)}];
    }
    return counts;
}
}  // namespace

TEST(RandomizeOrder, DeterministicPerSeed) {
    const auto a = study_plan(TaskKind::crossing, 5, 99, "P01");
    const auto b = study_plan(TaskKind::crossing, 5, 99, "P01");
    EXPECT_EQ(a.entries, b.entries);
    const auto c = study_plan(TaskKind::crossing, 5, 100, "P01");
    EXPECT_NE(a.entries, c.entries);
}

TEST(RandomizeOrder, SeedParityPicksModeBlockOrder) {
    const auto even = study_plan(TaskKind::pointing, 5, 0, "P01");
    const auto odd = study_plan(TaskKind::pointing, 5, 1, "P01");
    EXPECT_EQ(even.entries.front().mode, ControllerMode::two_button);
    EXPECT_EQ(odd.entries.front().mode, ControllerMode::one_handed);
    // Modes form two contiguous blocks.
    for (const auto& plan : {even, odd}) {
        for (std::size_t i = 0; i < plan.entries.size(); ++i) {
            EXPECT_EQ(plan.entries[i].mode, plan.entries[i < 30 ? 0 : 30].mode);
        }
    }
}

TEST(RandomizeOrder, FullFactorialMultisetForRandomSeeds) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::uint64_t seed = rng();
        const auto plan = study_plan(std::nullopt, 5, seed, "P07");
        ASSERT_EQ(plan.entries.size(), 120u);
        const auto counts = cell_counts(plan);
        ASSERT_EQ(counts.size(), 24u);
        for (const auto& [key, n] : counts) EXPECT_EQ(n, 5);
        // Repetition indices 1..5 appear once per (mode, condition), in order.
        std::map<CellKey, int> next;
        for (const auto& e : plan.entries) {
            CellKey k{static_cast<int>(e.mode), e.condition.distance, e.condition.width,
                      static_cast<int>(e.condition.kind)};
            EXPECT_EQ(e.trial_index, ++next[k]);
        }
    }
    for (auto kind : {TaskKind::pointing, TaskKind::crossing}) {
        EXPECT_EQ(study_plan(kind, 5, 42, "P01").entries.size(), 60u);
    }
}

TEST(RandomizeOrder, RejectsEmptyConditions) {
    EXPECT_THROW(randomize_order({}, {ControllerMode::two_button}, 5, 1), Error);
    EXPECT_THROW(randomize_order(enumerate_conditions(TaskKind::pointing), {ControllerMode::two_button}, 0, 1), Error);
}
