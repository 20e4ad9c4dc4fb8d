#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "swd/selection.h"

using namespace swd;

namespace {

ScoreVector scores_at(std::vector<std::size_t> positions, std::vector<double> values) {
    ScoreVector s;
    s.positions = std::move(positions);
    s.values = std::move(values);
    return s;
}

ScoreVector scores_of(std::vector<double> values) {
    std::vector<std::size_t> pos(values.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    return scores_at(std::move(pos), std::move(values));
}

// Binary row [p, 1-p] with p >= 0.5 and entropy h, by bisection.
std::vector<double> row_with_entropy(double h) {
    double lo = 0.5, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (entropy(std::vector<double>{mid, 1 - mid}) > h) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return {lo, 1 - lo};
}

}  // namespace

TEST(TopK, Examples) {
    EXPECT_EQ(select_topk(scores_of({0.9, 0.8, 0.7}), 1).positions, std::vector<std::size_t>{0});
    EXPECT_EQ(select_topk(scores_of({0.5, 0.5}), 1).positions, std::vector<std::size_t>{0});
    EXPECT_EQ(select_topk(scores_of({0.1, 0.7, 0.3}), 10).positions, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(select_topk(scores_of({0.1, 0.7, 0.3}), 2).positions, (std::vector<std::size_t>{1, 2}));
    EXPECT_THROW(select_topk(scores_of({0.1}), 0), std::invalid_argument);
    EXPECT_THROW(select_topk(ScoreVector{}, 1), std::invalid_argument);
}

TEST(TopK, TiesByLowestPosition) {
    EXPECT_EQ(select_topk(scores_at({3, 5, 9}, {0.4, 0.6, 0.6}), 1).positions, std::vector<std::size_t>{5});
    EXPECT_EQ(rank_by_score(scores_at({3, 5, 9}, {0.6, 0.2, 0.6})), (std::vector<std::size_t>{3, 9, 5}));
}

TEST(Threshold, FilterAndFallback) {
    const auto r = select_threshold(scores_of({0.95, 0.4}), 0.9);
    EXPECT_EQ(r.positions, std::vector<std::size_t>{0});
    EXPECT_EQ(r.reason, SelectionReason::threshold);
    const auto fb = select_threshold(scores_of({0.3, 0.6, 0.5}), 0.9);
    EXPECT_EQ(fb.positions, std::vector<std::size_t>{1});
    EXPECT_EQ(fb.reason, SelectionReason::fallback_top1);
    // Strict inequality: a score equal to tau does not pass.
    EXPECT_EQ(select_threshold(scores_of({0.9, 0.95}), 0.9).positions, std::vector<std::size_t>{1});
}

TEST(EbSampler, HandExample) {
    const std::vector<double> h{0.01, 0.02, 0.5};
    ProbTable probs(2);
    for (std::size_t i = 0; i < 3; ++i) probs.add_row(i, row_with_entropy(h[i]));
    for (std::size_t i = 0; i < 3; ++i) ASSERT_NEAR(entropy(probs.row(i)), h[i], 1e-12);
    const auto scores = scores_of({0.9, 0.8, 0.7});
    const auto r = select_eb(scores, probs, 0.05);
    EXPECT_EQ(r.positions, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(r.reason, SelectionReason::eb_budget);
    EXPECT_NEAR(eb_budget_usage(h), 0.03, 1e-15);
    // A tighter budget stops the prefix after two.
    EXPECT_EQ(select_eb(scores, probs, 0.02).positions, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(select_eb(scores, probs, 0.0).positions, (std::vector<std::size_t>{0}));
}

TEST(EbSampler, ZeroEntropyZeroBudgetSelectsAll) {
    ProbTable probs(3);
    for (std::size_t i = 0; i < 4; ++i) probs.add_row(i, {0.0, 1.0, 0.0});
    const auto r = select_eb(scores_of({1, 1, 1, 1}), probs, 0.0);
    EXPECT_EQ(r.positions.size(), 4u);
}

TEST(EbSampler, PrefixFollowsScoreOrderNotEntropyOrder) {
    ProbTable probs(2);
    probs.add_row(0, row_with_entropy(0.6));
    probs.add_row(1, row_with_entropy(0.01));
    probs.add_row(2, row_with_entropy(0.01));
    // Rank: 0, 1, 2. Prefix {0,1}: 0.61-0.6 = 0.01; {0,1,2}: 0.62-0.6 = 0.02.
    EXPECT_EQ(select_eb(scores_of({0.9, 0.5, 0.4}), probs, 0.015).positions, (std::vector<std::size_t>{0, 1}));
    // Rank: 1, 2, 0. Prefix {1,2}: 0.01 <= 0.015; adding 0 costs 0.02.
    EXPECT_EQ(select_eb(scores_of({0.1, 0.5, 0.4}), probs, 0.015).positions, (std::vector<std::size_t>{1, 2}));
}

TEST(EbSampler, SelectionGrowsWithBudget) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        ProbTable probs(2);
        std::vector<double> sc;
        for (std::size_t i = 0; i < 10; ++i) {
            const double p = u(rng);
            probs.add_row(i, {p, 1 - p});
            sc.push_back(p);
        }
        std::size_t prev = 0;
        for (double g : {0.0005, 0.005, 0.05, 0.1, 0.5, 1.0, 2.0}) {
            const auto n = select_eb(scores_of(sc), probs, g).positions.size();
            EXPECT_GE(n, prev);
            prev = n;
        }
    }
}

TEST(RandomSchedule, FinalStepSelectsAll) {
    std::vector<Slot> slots(6, TokenId{0});
    slots[1].reset();
    slots[4].reset();
    const SequenceState s(slots, 1);
    const auto r = select_random_schedule(s, MaskSchedule::linear(6), 123);
    EXPECT_EQ(r.positions, (std::vector<std::size_t>{1, 4}));
    EXPECT_EQ(r.reason, SelectionReason::schedule);
}

TEST(RandomSchedule, RateMatchesOneOverT) {
    const auto state = new_fully_masked(40);
    const auto sched = MaskSchedule::linear(40);
    double picked = 0;
    const int runs = 2000;
    for (int i = 0; i < runs; ++i) {
        const auto r = select_random_schedule(state, sched, mix_seed(i));
        if (r.reason == SelectionReason::schedule) picked += static_cast<double>(r.positions.size());
    }
    // Bernoulli(1/40) on each of 40 positions: one schedule pick per call on average.
    EXPECT_NEAR(picked / runs, 1.0, 0.1);
}

TEST(RandomSchedule, FallbackIsOneEligiblePositionAndDeterministic) {
    const auto state = new_fully_masked(200);
    const auto sched = MaskSchedule::linear(200);
    std::vector<std::size_t> eligible{10, 11, 12};
    bool saw_fallback = false;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto a = select_random_schedule(state, sched, seed, eligible);
        const auto b = select_random_schedule(state, sched, seed, eligible);
        EXPECT_EQ(a.positions, b.positions);
        for (auto p : a.positions) EXPECT_TRUE(p >= 10 && p <= 12);
        if (a.reason == SelectionReason::fallback_top1) {
            saw_fallback = true;
            EXPECT_EQ(a.positions.size(), 1u);
        }
    }
    EXPECT_TRUE(saw_fallback);
}

TEST(Block, UnboundedLeavesScores) {
    const auto s = new_fully_masked(5);
    const auto sc = scores_of({0.1, 0.2, 0.3, 0.4, 0.5});
    const auto out = apply_block_constraint(sc, s, std::nullopt);
    EXPECT_EQ(out.positions, sc.positions);
    EXPECT_EQ(out.values, sc.values);
}

TEST(Block, EarliestIncompleteBlock) {
    std::vector<Slot> slots(8, TokenId{0});
    slots[1].reset();
    slots[5].reset();
    const SequenceState s(slots, 2);
    const auto out = apply_block_constraint(scores_at({1, 5}, {0.2, 0.9}), s, 4);
    EXPECT_EQ(out.positions, std::vector<std::size_t>{1});
    std::vector<Slot> later(8, TokenId{0});
    later[6].reset();
    const auto out2 = apply_block_constraint(scores_at({6}, {0.2}), SequenceState(later, 1), 4);
    EXPECT_EQ(out2.positions, std::vector<std::size_t>{6});
}

TEST(Block, RaggedFinalBlock) {
    std::vector<Slot> slots(10, TokenId{0});
    slots[9].reset();
    const auto out = apply_block_constraint(scores_at({9}, {0.5}), SequenceState(slots, 1), 4);
    EXPECT_EQ(out.positions, std::vector<std::size_t>{9});
}

TEST(SelectionReason, NamesRoundTrip) {
    for (auto r : {SelectionReason::topk, SelectionReason::threshold, SelectionReason::eb_budget,
                   SelectionReason::schedule, SelectionReason::fallback_top1})
        EXPECT_EQ(parse_selection_reason(to_string(r)), r);
}
