#pragma once

// Brute-force oracles over the exhaustive joint of a Markov model. These are
// deliberately independent of the forward-backward code in denoiser.cpp:
// everything here is a sum over explicit sequences.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "swd/core.h"
#include "swd/denoiser.h"

namespace swd {

inline constexpr std::size_t kMaxEnumeration = 10'000'000;

/// P(x) for every x in V^L. Sequence index is base-K with position 0 as the
/// most significant digit.
class JointEnumeration {
public:
    JointEnumeration(MarkovModel model, std::size_t length, std::vector<double> table);

    const MarkovModel& model() const { return model_; }
    std::size_t length() const { return length_; }
    std::size_t vocab_size() const { return model_.vocab_size(); }
    std::size_t size() const { return table_.size(); }
    double probability(std::size_t index) const { return table_[index]; }
    const std::vector<double>& table() const { return table_; }
    std::size_t digit(std::size_t index, std::size_t pos) const { return (index / stride_[pos]) % vocab_size(); }

private:
    MarkovModel model_;
    std::size_t length_;
    std::vector<double> table_;
    std::vector<std::size_t> stride_;
};

/// OpenMP kernel. Throws std::invalid_argument when K^L > kMaxEnumeration.
JointEnumeration enumerate_joint(const MarkovModel& model, std::size_t length);
/// Single-threaded reference for enumerate_joint.
JointEnumeration enumerate_joint_serial(const MarkovModel& model, std::size_t length);

/// Conditioning context: positions with fixed observed values plus positions
/// whose (random) values are conditioned on.
struct Context {
    std::vector<Slot> observed;            // length L; empty slot = not fixed
    std::vector<std::size_t> conditioned;  // random conditioning variables
};

/// I(x^target ; x^reveal | observed, x^conditioned) in nats by exhaustive
/// summation. Throws std::invalid_argument if the sets overlap, a position is
/// out of range, or the observed assignment has zero probability.
double conditional_mi(const JointEnumeration& joint, std::size_t target, const std::vector<std::size_t>& reveal,
                      const Context& given);

/// p(x^i | observed tokens of state) for each masked i, by summation.
ProbTable enumeration_marginals(const JointEnumeration& joint, const SequenceState& state);

struct Lemma1Report {
    double lhs = 0.0;          // E[ D_KL(p(.|x_t) || p(.|x_{t+1})) ] via forward-backward
    double rhs = 0.0;          // I(x^i ; x_t | x_{t+1}) via enumeration
    double gap = 0.0;          // |lhs - rhs|
    double lhs_reverse = 0.0;  // E[ D_KL(p(.|x_{t+1}) || p(.|x_t)) ]
};

/// x_{t+1} = state_prev; x_t reveals `reveal` on top of it. Requires
/// reveal ⊆ masked(state_prev) and target ∈ masked(state_prev) \ reveal.
Lemma1Report check_lemma1(const JointEnumeration& joint, const SequenceState& state_prev,
                          const std::vector<std::size_t>& reveal, std::size_t target);

struct Theorem1Report {
    double mi_total = 0.0;     // I(x^i ; U_{t+1} | x_{t+1}), U_{t+1} = masked \ {i}
    double expected_kl = 0.0;  // lemma lhs
    double residual = 0.0;     // I(x^i ; U_t | x_t, x_{t+1})
    double slack = 0.0;        // mi_total - expected_kl
    double chain_gap = 0.0;    // |mi_total - (expected_kl + residual)|
    double expected_kl_reverse = 0.0;
    bool reverse_exceeds = false;  // reverse-direction expectation above mi_total
};

Theorem1Report check_theorem1(const JointEnumeration& joint, const SequenceState& state_prev,
                              const std::vector<std::size_t>& reveal, std::size_t target);

// ---------------------------------------------------------------------------
// Randomised corpus

struct CorpusConfig {
    std::size_t id = 0;
    std::uint64_t seed = 0;
    MarkovModel model;
    std::vector<Slot> tokens;  // x_{t+1}
    std::vector<std::size_t> reveal;
    std::size_t target = 0;
};

struct CorpusResult {
    CorpusConfig config;
    Lemma1Report lemma;
    Theorem1Report theorem;
    double marginal_diff = 0.0;  // max |DP - enumeration| over the state's rows
};

struct CorpusTolerances {
    double lemma_gap = 1e-10;
    double slack = -1e-12;
    double chain_gap = 1e-10;
    double marginal_diff = 1e-10;
};

struct CorpusSummary {
    std::size_t configs = 0;
    double max_gap = 0.0;
    double min_slack = 0.0;
    double max_chain_gap = 0.0;
    double max_marginal_diff = 0.0;
    std::size_t reverse_exceed_count = 0;
    bool lemma_ok = true;
    bool theorem_ok = true;
    bool marginals_ok = true;
    bool ok() const { return lemma_ok && theorem_ok && marginals_ok; }
};

/// Deterministic corpus with K in [2,4], L in [2,6] (so K^L <= 4096).
std::vector<CorpusConfig> generate_corpus(std::size_t count, std::uint64_t seed);

CorpusResult check_config(const CorpusConfig& config);
/// OpenMP over configurations; results keep corpus order.
std::vector<CorpusResult> run_corpus(const std::vector<CorpusConfig>& corpus);
std::vector<CorpusResult> run_corpus_serial(const std::vector<CorpusConfig>& corpus);

CorpusSummary summarize(const std::vector<CorpusResult>& results, const CorpusTolerances& tol = {});

/// One JSON object per line: {config, lhs, rhs, gap, slack, ...}.
std::string corpus_record_json(const CorpusResult& r);
void write_corpus_report(std::ostream& out, const std::vector<CorpusResult>& results);

}  // namespace swd
