#include <gtest/gtest.h>

#include <sstream>

#include "swd/bench.h"
#include "swd/decoder.h"

using namespace swd;

namespace {

MarkovModel task_model() { return default_task_model(4); }

PerturbedDenoiser perturbed(std::uint64_t seed) { return PerturbedDenoiser(task_model(), adversarial_profile(seed)); }

DecodePolicy policy_with(Selector sel, ScoreMetric metric = ScoreMetric::confidence, double lambda = 0.0) {
    DecodePolicy p;
    p.selector = sel;
    p.score_metric = metric;
    p.modulation_mode = default_modulation_for(metric);
    p.lambda = lambda;
    p.k = 3;
    p.gamma = 0.5;
    p.tau = 0.6;
    return p;
}

class FailingDenoiser final : public Denoiser {
public:
    explicit FailingDenoiser(int fail_at) : inner_(task_model()), fail_at_(fail_at) {}
    std::size_t vocab_size() const override { return 4; }
    ProbTable predict(const SequenceState& state) override {
        if (++calls_ == fail_at_) throw TransportError("endpoint closed");
        return inner_.predict(state);
    }

private:
    ExactMarkovDenoiser inner_;
    int fail_at_;
    int calls_ = 0;
};

class WrongRowsDenoiser final : public Denoiser {
public:
    std::size_t vocab_size() const override { return 2; }
    ProbTable predict(const SequenceState&) override {
        ProbTable t(2);
        t.add_row(0, {0.5, 0.5});
        return t;
    }
};

}  // namespace

TEST(Decode, TopOneCommitsOneTokenPerStep) {
    ExactMarkovDenoiser d(task_model());
    const auto out = decode(d, policy_with(Selector::top1), new_fully_masked(4));
    EXPECT_EQ(out.nfe, 4);
    ASSERT_EQ(out.trace.steps.size(), 4u);
    for (const auto& s : out.trace.steps) EXPECT_EQ(s.selected.size(), 1u);
    EXPECT_TRUE(out.trace.complete);
    EXPECT_EQ(out.tokens.size(), 4u);
}

TEST(Decode, EbWithLargeBudgetTakesFewerCalls) {
    auto d = perturbed(1);
    DecodePolicy p = policy_with(Selector::eb_sampler);
    p.gamma = 2.0;
    EXPECT_LT(decode(d, p, new_fully_masked(32)).nfe, 32);
}

TEST(Decode, ThresholdFallbackTerminates) {
    ExactMarkovDenoiser d(MarkovModel::sticky(4, 0.3, {0.25, 0.25, 0.25, 0.25}));
    DecodePolicy p = policy_with(Selector::threshold);
    p.tau = 0.999;
    const auto out = decode(d, p, new_fully_masked(12));
    EXPECT_LE(out.nfe, 12);
    bool saw_fallback = false;
    for (const auto& s : out.trace.steps) saw_fallback |= s.reason == "fallback_top1";
    EXPECT_TRUE(saw_fallback);
}

TEST(Decode, LambdaZeroMatchesStabilityDisabled) {
    for (auto metric : {ScoreMetric::confidence, ScoreMetric::margin, ScoreMetric::neg_entropy}) {
        for (auto sel : {Selector::top1, Selector::topk, Selector::threshold, Selector::eb_sampler,
                         Selector::random_schedule}) {
            for (std::uint64_t seed = 0; seed < 5; ++seed) {
                DecodePolicy on = policy_with(sel, metric);
                on.seed = seed;
                DecodePolicy off = on;
                off.stability_enabled = false;
                auto d1 = perturbed(seed);
                auto d2 = perturbed(seed);
                const auto a = decode(d1, on, new_fully_masked(16));
                const auto b = decode(d2, off, new_fully_masked(16));
                ASSERT_EQ(a.trace.steps.size(), b.trace.steps.size());
                for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
                    EXPECT_EQ(a.trace.steps[i].selected, b.trace.steps[i].selected);
                    EXPECT_EQ(a.trace.steps[i].committed, b.trace.steps[i].committed);
                    EXPECT_EQ(a.trace.steps[i].scores, b.trace.steps[i].scores);
                }
                EXPECT_EQ(a.nfe, b.nfe);
                EXPECT_FALSE(a.trace.steps.front().kl.empty());
                EXPECT_TRUE(b.trace.steps.front().kl.empty());
            }
        }
    }
}

TEST(Decode, SameSeedSameTrace) {
    DecodePolicy p = policy_with(Selector::random_schedule);
    p.commit_mode = CommitMode::sample;
    p.seed = 77;
    auto d1 = perturbed(3);
    auto d2 = perturbed(3);
    const auto a = decode(d1, p, new_fully_masked(20));
    const auto b = decode(d2, p, new_fully_masked(20));
    std::ostringstream sa, sb;
    write_trace(sa, a.trace);
    write_trace(sb, b.trace);
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Decode, BlockConstraintOrdersCommitments) {
    ExactMarkovDenoiser d(task_model());
    DecodePolicy p = policy_with(Selector::topk);
    p.block_size = 4;
    p.k = 2;
    const auto out = decode(d, p, new_fully_masked(12));
    std::size_t max_block = 0;
    for (const auto& s : out.trace.steps) {
        for (auto pos : s.selected) {
            EXPECT_GE(pos / 4, max_block);
            max_block = std::max(max_block, pos / 4);
        }
    }
}

TEST(Decode, MonotoneMaskedSetAndJointProb) {
    auto d = perturbed(5);
    const auto out = decode(d, policy_with(Selector::eb_sampler, ScoreMetric::margin, 1.0), new_fully_masked(24));
    std::size_t prev = 25;
    for (const auto& s : out.trace.steps) {
        EXPECT_LT(s.masked.size(), prev);
        prev = s.masked.size();
        double j = 1;
        for (double c : s.commit_probs) j *= c;
        EXPECT_DOUBLE_EQ(j, s.joint_prob);
    }
}

TEST(Decode, PreconditionsChecked) {
    ExactMarkovDenoiser d(task_model());
    EXPECT_THROW(decode(d, policy_with(Selector::top1), SequenceState({TokenId{0}})), std::invalid_argument);
    EXPECT_THROW(decode(d, policy_with(Selector::top1), SequenceState({std::nullopt, std::nullopt}, 1)),
                 std::invalid_argument);
    DecodePolicy bad = policy_with(Selector::top1, ScoreMetric::neg_entropy);
    bad.modulation_mode = ModulationMode::multiplicative;
    EXPECT_THROW(decode(d, bad, new_fully_masked(3)), std::invalid_argument);
}

TEST(Decode, TransportFailureCarriesPartialTrace) {
    FailingDenoiser d(3);
    try {
        decode(d, policy_with(Selector::top1), new_fully_masked(6));
        FAIL() << "expected DecodeAborted";
    } catch (const DecodeAborted& e) {
        EXPECT_EQ(e.partial_trace().steps.size(), 2u);
        EXPECT_FALSE(e.partial_trace().complete);
        EXPECT_EQ(e.partial_trace().nfe_total, 2);
        EXPECT_TRUE(replay_trace(e.partial_trace(), e.partial_trace().policy).ok());
    }
}

TEST(Decode, MisalignedDenoiserIsInternalError) {
    WrongRowsDenoiser d;
    EXPECT_THROW(decode(d, policy_with(Selector::top1), new_fully_masked(3)), InternalError);
}

TEST(Decode, PartialInitialState) {
    ExactMarkovDenoiser d(task_model());
    const SequenceState init({TokenId{2}, std::nullopt, std::nullopt, TokenId{2}});
    const auto out = decode(d, policy_with(Selector::top1), init);
    EXPECT_EQ(out.nfe, 2);
    EXPECT_EQ(out.tokens.front(), TokenId{2});
    EXPECT_EQ(out.tokens.back(), TokenId{2});
}

TEST(Trace, RoundTripPreservesEverything) {
    auto d = perturbed(9);
    DecodePolicy p = policy_with(Selector::eb_sampler, ScoreMetric::neg_entropy, 1.5);
    p.block_size = 8;
    p.seed = 1234567890123ULL;
    const auto out = decode(d, p, new_fully_masked(16));
    std::stringstream ss;
    write_trace(ss, out.trace);
    const auto back = read_trace(ss);
    EXPECT_EQ(back.length, 16u);
    EXPECT_EQ(back.policy.seed, p.seed);
    EXPECT_EQ(back.policy.block_size, p.block_size);
    EXPECT_EQ(back.policy.score_metric, p.score_metric);
    EXPECT_EQ(back.policy.lambda, p.lambda);
    ASSERT_EQ(back.steps.size(), out.trace.steps.size());
    for (std::size_t i = 0; i < back.steps.size(); ++i) {
        EXPECT_EQ(back.steps[i].probs, out.trace.steps[i].probs);
        EXPECT_EQ(back.steps[i].scores, out.trace.steps[i].scores);
        EXPECT_EQ(back.steps[i].kl, out.trace.steps[i].kl);
        EXPECT_EQ(back.steps[i].committed, out.trace.steps[i].committed);
    }
    EXPECT_EQ(back.final_tokens, out.tokens);
    std::stringstream again;
    write_trace(again, back);
    EXPECT_EQ(again.str(), ss.str());
}

TEST(Trace, MalformedInputIsParseError) {
    std::istringstream empty("");
    EXPECT_THROW(read_trace(empty), ParseError);
    std::istringstream junk("{\"type\":\"header\"\n");
    EXPECT_THROW(read_trace(junk), ParseError);
    std::istringstream wrong("{\"type\":\"step\"}\n");
    EXPECT_THROW(read_trace(wrong), ParseError);
    EXPECT_THROW(read_trace_file("/nonexistent/trace.jsonl"), FileError);
}

TEST(Replay, CleanRunsHaveNoViolations) {
    for (auto sel : {Selector::top1, Selector::topk, Selector::threshold, Selector::eb_sampler, Selector::random_schedule}) {
        for (auto commit : {CommitMode::greedy, CommitMode::sample}) {
            auto d = perturbed(4);
            DecodePolicy p = policy_with(sel, ScoreMetric::confidence, 2.0);
            p.commit_mode = commit;
            p.kl_direction = KlDirection::forward;
            p.seed = 8;
            const auto out = decode(d, p, new_fully_masked(20));
            const auto report = replay_trace(out.trace, out.trace.policy);
            EXPECT_TRUE(report.ok()) << to_string(sel) << ' ' << report.violations.front().kind;
            EXPECT_EQ(report.steps_checked, out.trace.steps.size());
        }
    }
}

TEST(Replay, OneTamperedScoreIsOneViolation) {
    auto d = perturbed(2);
    auto out = decode(d, policy_with(Selector::eb_sampler, ScoreMetric::confidence, 1.0), new_fully_masked(16));
    out.trace.steps[1].scores[2] += 1e-6;
    const auto report = replay_trace(out.trace, out.trace.policy);
    ASSERT_EQ(report.violations.size(), 1u);
    EXPECT_EQ(report.violations[0].kind, "score");
    EXPECT_EQ(report.violations[0].step, 1u);
    EXPECT_EQ(report.violations[0].position, out.trace.steps[1].masked[2]);
}

TEST(Replay, TamperedCommitIsCaught) {
    ExactMarkovDenoiser d(task_model());
    auto out = decode(d, policy_with(Selector::top1), new_fully_masked(6));
    auto& step = out.trace.steps[0];
    step.committed[0] = TokenId{(step.committed[0].value + 1) % 4};
    const auto report = replay_trace(out.trace, out.trace.policy);
    EXPECT_FALSE(report.ok());
    bool saw_commit = false;
    for (const auto& v : report.violations) saw_commit |= v.kind == "commit";
    EXPECT_TRUE(saw_commit);
}

TEST(Replay, MisalignedRecordIsFlagged) {
    ExactMarkovDenoiser d(task_model());
    auto out = decode(d, policy_with(Selector::top1), new_fully_masked(4));
    out.trace.steps[1].scores.pop_back();
    const auto report = replay_trace(out.trace, out.trace.policy);
    ASSERT_FALSE(report.ok());
    EXPECT_EQ(report.violations.front().kind, "shape");
}

TEST(Replay, FileRoundTripReplaysCleanlyOnTies) {
    // The symmetric chain yields exact score ties; replay must break them identically.
    ExactMarkovDenoiser d(MarkovModel::sticky(3, 0.7, {1.0 / 3, 1.0 / 3, 1.0 / 3}));
    for (auto sel : {Selector::eb_sampler, Selector::topk, Selector::threshold}) {
        const auto out = decode(d, policy_with(sel, ScoreMetric::margin, 1.0), new_fully_masked(24));
        std::stringstream ss;
        write_trace(ss, out.trace);
        const auto back = read_trace(ss);
        EXPECT_TRUE(replay_trace(back, back.policy).ok()) << to_string(sel);
    }
}

TEST(Replay, BudgetOverrunIsCaught) {
    auto d = perturbed(2);
    DecodePolicy p = policy_with(Selector::eb_sampler);
    p.gamma = 2.0;
    const auto out = decode(d, p, new_fully_masked(32));
    DecodePolicy tighter = out.trace.policy;
    tighter.gamma = 0.0005;
    const auto report = replay_trace(out.trace, tighter);
    bool saw_budget = false;
    for (const auto& v : report.violations) saw_budget |= v.kind == "eb_budget";
    EXPECT_TRUE(saw_budget);
}
