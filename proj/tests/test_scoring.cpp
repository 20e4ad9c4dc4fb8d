#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "swd/scoring.h"
#include "swd/selection.h"

using namespace swd;

namespace {

ProbTable single_row(std::vector<double> row) {
    ProbTable t(row.size());
    t.add_row(0, std::move(row));
    return t;
}

ScoreVector scores_of(std::vector<double> values) {
    ScoreVector s;
    for (std::size_t i = 0; i < values.size(); ++i) s.positions.push_back(i);
    s.values = std::move(values);
    return s;
}

InstabilityMap instability_of(std::vector<double> values) {
    InstabilityMap d;
    for (std::size_t i = 0; i < values.size(); ++i) d.positions.push_back(i);
    d.values = std::move(values);
    return d;
}

}  // namespace

TEST(Confidence, Examples) {
    EXPECT_DOUBLE_EQ(score_confidence(single_row({0.9, 0.1})).values[0], 0.9);
    EXPECT_DOUBLE_EQ(score_confidence(single_row(uniform_row(4))).values[0], 0.25);
    EXPECT_DOUBLE_EQ(score_confidence(single_row({0.5, 0.3, 0.2})).values[0], 0.5);
}

TEST(Margin, Examples) {
    EXPECT_DOUBLE_EQ(score_margin(single_row({0.0, 1.0, 0.0})).values[0], 1.0);
    EXPECT_DOUBLE_EQ(score_margin(single_row(uniform_row(3))).values[0], 0.0);
    EXPECT_NEAR(score_margin(single_row({0.5, 0.3, 0.2})).values[0], 0.2, 1e-15);
    EXPECT_THROW(score_margin(single_row({1.0})), std::invalid_argument);
}

TEST(NegEntropy, Examples) {
    EXPECT_EQ(score_neg_entropy(single_row({0.0, 1.0})).values[0], 0.0);
    EXPECT_NEAR(score_neg_entropy(single_row(uniform_row(4))).values[0], -1.3862943611198906, 1e-15);
    EXPECT_NEAR(score_neg_entropy(single_row({0.5, 0.5})).values[0], -0.69314718055994531, 1e-15);
}

TEST(Instability, DirectionsAndIdentity) {
    ProbTable cur(2);
    cur.add_row(0, {0.25, 0.75});
    cur.add_row(1, {0.5, 0.5});
    const HistoryCache cache({0, 1}, 2);
    const auto rev = temporal_instability(cur, cache, KlDirection::reverse);
    const auto fwd = temporal_instability(cur, cache, KlDirection::forward);
    EXPECT_NEAR(rev.values[0], 0.14384103622589042, 1e-15);
    EXPECT_NEAR(fwd.values[0], 0.13081203594113697, 1e-15);
    EXPECT_EQ(rev.values[1], 0.0);
    EXPECT_EQ(fwd.values[1], 0.0);
}

TEST(Instability, MissingHistoryIsInternalError) {
    ProbTable cur(2);
    cur.add_row(3, {0.5, 0.5});
    const HistoryCache cache({0}, 2);
    EXPECT_THROW(temporal_instability(cur, cache, KlDirection::reverse), InternalError);
}

TEST(HistoryCache, RefreshKeepsOnlyStillMasked) {
    HistoryCache cache({0, 1, 2}, 2);
    EXPECT_TRUE(cache.initialized_uniform());
    EXPECT_DOUBLE_EQ(cache.prev(1)[0], 0.5);
    ProbTable cur(2);
    cur.add_row(0, {0.1, 0.9});
    cur.add_row(1, {0.2, 0.8});
    cur.add_row(2, {0.3, 0.7});
    cache.refresh(cur, {0, 2});
    EXPECT_FALSE(cache.contains(1));
    EXPECT_EQ(cache.size(), 2u);
    EXPECT_DOUBLE_EQ(cache.prev(2)[1], 0.7);
    EXPECT_THROW((void)cache.prev(1), InternalError);
}

TEST(Modulate, KnownScoreMapping) {
    const auto out = swd_modulate(scores_of({0.9, 0.8}), instability_of({0.6079893722196384, 0.3930425881096072}),
                                  1.0, ModulationMode::multiplicative);
    EXPECT_NEAR(out.values[0], 0.49, 1e-12);
    EXPECT_NEAR(out.values[1], 0.54, 1e-12);
    EXPECT_TRUE(out.modulated);
    // Same products split across lambda and D.
    const auto split = swd_modulate(scores_of({0.9}), instability_of({0.6079893722196384 / 4}), 4.0,
                                    ModulationMode::multiplicative);
    EXPECT_NEAR(split.values[0], 0.49, 1e-12);
}

TEST(Modulate, LambdaZeroIsIdentity) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto mode : {ModulationMode::multiplicative, ModulationMode::additive}) {
        std::vector<double> base(50), d(50);
        for (std::size_t i = 0; i < 50; ++i) {
            base[i] = u(rng);
            d[i] = 10 * u(rng);
        }
        const auto out = swd_modulate(scores_of(base), instability_of(d), 0.0, mode);
        for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(out.values[i], base[i]);
    }
}

TEST(Modulate, FactorInUnitIntervalAndMonotone) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20000; ++i) {
        const double lambda = 10 * u(rng);
        double d1 = 27 * u(rng), d2 = 27 * u(rng);
        if (d1 > d2) std::swap(d1, d2);
        const auto out = swd_modulate(scores_of({1.0, 1.0}), instability_of({d1, d2}), lambda,
                                      ModulationMode::multiplicative);
        EXPECT_GT(out.values[0], 0.0);
        EXPECT_LE(out.values[0], 1.0);
        EXPECT_GE(out.values[0], out.values[1]);
    }
}

TEST(Modulate, AdditiveOnLogScoresRanksLikeMultiplicative) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> base(8), logs(8), d(8);
        for (std::size_t i = 0; i < 8; ++i) {
            base[i] = u(rng);
            logs[i] = std::log(base[i]);
            d[i] = 3 * u(rng);
        }
        const double lambda = 5 * u(rng);
        const auto mul = swd_modulate(scores_of(base), instability_of(d), lambda, ModulationMode::multiplicative);
        const auto add = swd_modulate(scores_of(logs), instability_of(d), lambda, ModulationMode::additive);
        EXPECT_EQ(rank_by_score(mul), rank_by_score(add));
    }
}

TEST(Modulate, RejectsNegativeBaseInMultiplicativeMode) {
    EXPECT_THROW(swd_modulate(scores_of({-0.5}), instability_of({0.1}), 1.0, ModulationMode::multiplicative),
                 std::invalid_argument);
    const auto zero = swd_modulate(scores_of({0.0}), instability_of({0.3}), 2.0, ModulationMode::multiplicative);
    EXPECT_EQ(zero.values[0], 0.0);
    const auto add = swd_modulate(scores_of({-0.5}), instability_of({0.1}), 2.0, ModulationMode::additive);
    EXPECT_DOUBLE_EQ(add.values[0], -0.7);
}

TEST(Modulate, PositionMismatchRejected) {
    InstabilityMap d;
    d.positions = {4};
    d.values = {0.1};
    EXPECT_THROW(swd_modulate(scores_of({0.5}), d, 1.0, ModulationMode::multiplicative), std::invalid_argument);
}
