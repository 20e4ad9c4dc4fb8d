#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "swd/core.h"

namespace swd {

/// Order-1 Markov chain over a vocabulary of size K; the ground-truth joint
/// for the exact denoiser and for the verification oracles.
class MarkovModel {
public:
    /// Validates row sums (1e-12) and strict positivity.
    MarkovModel(std::vector<double> initial, std::vector<std::vector<double>> transition);

    /// P(next == prev) = stay, remaining mass spread evenly.
    static MarkovModel sticky(std::size_t k, double stay, std::vector<double> initial);
    /// Independent positions: every transition row equals `initial`.
    static MarkovModel product(std::vector<double> initial);
    /// Entries drawn uniformly from [floor, 1) and normalised.
    static MarkovModel random(std::size_t k, std::mt19937_64& rng, double floor = 0.05);

    std::size_t vocab_size() const { return initial_.size(); }
    const std::vector<double>& initial() const { return initial_; }
    const std::vector<std::vector<double>>& transition() const { return transition_; }
    double initial(std::size_t v) const { return initial_[v]; }
    double transition(std::size_t from, std::size_t to) const { return transition_[from][to]; }

    double log_likelihood(std::span<const TokenId> tokens) const;

private:
    std::vector<double> initial_;
    std::vector<std::vector<double>> transition_;
};

struct ModeSequence {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    bool unique = false;  // no other sequence attains log_prob (ties within 1e-12)
};

/// Viterbi mode of the joint over length-L sequences, with tie detection.
ModeSequence mode_sequence(const MarkovModel& model, std::size_t length);

/// p(x_0^i | observed tokens of `state`) for every masked position, by scaled
/// forward-backward over the chain.
ProbTable exact_marginals(const MarkovModel& model, const SequenceState& state);

// ---------------------------------------------------------------------------

/// Maps a partially masked sequence to per-position distributions over the
/// clean token at each masked position. One call is one function evaluation.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual ProbTable predict(const SequenceState& state) = 0;
};

class ExactMarkovDenoiser final : public Denoiser {
public:
    explicit ExactMarkovDenoiser(MarkovModel model) : model_(std::move(model)) {}
    std::size_t vocab_size() const override { return model_.vocab_size(); }
    ProbTable predict(const SequenceState& state) override { return exact_marginals(model_, state); }
    const MarkovModel& model() const { return model_; }

private:
    MarkovModel model_;
};

// ---------------------------------------------------------------------------
// Instability injection

/// Envelope of the perturbation as a function of the normalised masked
/// fraction f = (|M_t| - 1) / (L - 1), so f = 1 when fully masked and f = 0
/// with one token left. Both kinds satisfy decay(0) = 0, decay(1) = 1 and are
/// non-decreasing in f.
///   linear:      min(1, rate * f)          (rate >= 1 saturates early)
///   exponential: (e^{rate f} - 1) / (e^{rate} - 1)
struct DecaySpec {
    enum class Kind { linear, exponential };
    Kind kind = Kind::linear;
    double rate = 1.0;

    double operator()(double f) const;
};

/// How the decoy mass behaves from one denoiser call to the next.
///   steady:      applied at every call (pure envelope)
///   alternating: applied on every other call, with a per-position phase,
///                which produces the confident-but-fluctuating rows
enum class PulseMode { steady, alternating };

struct PerturbationProfile {
    double flip_strength = 0.0;  // in [0, 1)
    DecaySpec decay;
    double decoy_density = 1.0;  // fraction of positions carrying a decoy
    PulseMode pulse = PulseMode::steady;
    std::uint64_t seed = 0;

    void validate() const;

    /// Envelope magnitude m = flip_strength * decay(f) for this state.
    double magnitude(const SequenceState& state) const;
    bool is_decoy_position(std::size_t pos) const;
    TokenId decoy_token(std::size_t pos, std::size_t vocab_size) const;
    /// Whether the decoy pulse is active at `pos` for the state's step counter.
    bool pulse_active(std::size_t pos, std::int64_t step) const;
};

/// For each masked decoy position with an active pulse, moves mass m onto the
/// decoy token: row' = (1 - m) * row + m * e_decoy. A decoy that coincides
/// with the row's argmax is moved to the next token, so decoys are always wrong.
ProbTable perturbed_marginals(const ProbTable& base, const PerturbationProfile& profile, const SequenceState& state);

class PerturbedDenoiser final : public Denoiser {
public:
    PerturbedDenoiser(MarkovModel model, PerturbationProfile profile);
    std::size_t vocab_size() const override { return model_.vocab_size(); }
    ProbTable predict(const SequenceState& state) override;

private:
    MarkovModel model_;
    PerturbationProfile profile_;
};

}  // namespace swd
