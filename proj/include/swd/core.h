#pragma once

// Shared domain types for the stability-weighted decoding engine.
//
// Positions are 0-based. Probabilities are 64-bit doubles throughout; every
// logarithm goes through safe_log(), which floors its argument at kProbFloor.

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swd {

inline constexpr double kProbFloor = 1e-12;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Denoiser endpoint failed: protocol violation, timeout, bad row shape.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Malformed trace / report / protocol text.
class ParseError : public Error {
public:
    using Error::Error;
};

/// An engine invariant was breached. Always a bug.
class InternalError : public Error {
public:
    using Error::Error;
};

class FileError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Tokens and sequences

struct TokenId {
    std::uint32_t value = 0;
    auto operator<=>(const TokenId&) const = default;
};

/// A token slot: empty optional is the MASK sentinel.
using Slot = std::optional<TokenId>;

/// x_t of the reverse process: token buffer, masked index set and the step
/// counter t. Positions leave the masked set exactly once (no remasking).
class SequenceState {
public:
    /// Builds a state from slots; the masked set is derived from the empty
    /// slots. `step` defaults to the length.
    explicit SequenceState(std::vector<Slot> tokens, std::optional<std::int64_t> step = std::nullopt);

    std::size_t length() const { return tokens_.size(); }
    std::int64_t step() const { return step_; }
    const std::vector<Slot>& tokens() const { return tokens_; }
    /// Ascending masked positions.
    const std::vector<std::size_t>& masked() const { return masked_; }
    bool is_masked(std::size_t pos) const;
    bool fully_decoded() const { return masked_.empty(); }
    double masked_fraction() const;

    /// Commits a token into a masked slot. Throws std::invalid_argument if the
    /// position is out of range or already committed.
    void commit(std::size_t pos, TokenId token);
    /// t <- t - 1. Throws InternalError if t would drop below zero.
    void advance_step();

    /// Sentinel/masked-set consistency. Throws InternalError on breach.
    void check_invariants() const;

    /// Unmasked tokens only; throws InternalError if any slot is still masked.
    std::vector<TokenId> final_tokens() const;

private:
    std::vector<Slot> tokens_;
    std::vector<std::size_t> masked_;
    std::int64_t step_ = 0;
};

/// x_T = [MASK]^L with t = L.
SequenceState new_fully_masked(std::size_t length);

// ---------------------------------------------------------------------------
// Probability tables

/// Per-position categorical distributions p(. | x_t), keyed by position.
/// Rows are validated and renormalised on insertion.
class ProbTable {
public:
    explicit ProbTable(std::size_t vocab_size);

    /// Rejects rows with wrong length, negative or non-finite entries, or a
    /// sum deviating from 1 by more than 1e-6. Positions must be inserted in
    /// ascending order.
    void add_row(std::size_t pos, std::vector<double> row);
    /// Same validation as add_row but keeps the entries bit-for-bit. Used to
    /// rebuild tables from recorded traces.
    void add_row_verbatim(std::size_t pos, std::vector<double> row);
    /// Same validation as add_row, for an existing position.
    void replace_row(std::size_t pos, std::vector<double> row);

    std::size_t vocab_size() const { return vocab_size_; }
    std::size_t size() const { return positions_.size(); }
    bool empty() const { return positions_.empty(); }
    const std::vector<std::size_t>& positions() const { return positions_; }
    bool contains(std::size_t pos) const;
    /// Throws std::out_of_range if absent.
    std::span<const double> row(std::size_t pos) const;
    std::span<const double> row_at(std::size_t index) const { return rows_[index]; }

private:
    std::size_t index_of(std::size_t pos) const;
    void insert(std::size_t pos, std::vector<double> row, bool normalize);
    void check_and_normalize(std::vector<double>& row, bool normalize) const;

    std::size_t vocab_size_;
    std::vector<std::size_t> positions_;
    std::vector<std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Numerics

inline double safe_log(double p) { return std::log(p < kProbFloor ? kProbFloor : p); }
double entropy(std::span<const double> p);
/// D_KL(p || q) in nats, logs floored at kProbFloor, clamped to >= 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);
/// Lowest index among the maxima.
std::size_t argmax(std::span<const double> p);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> uniform_row(std::size_t k);

// ---------------------------------------------------------------------------
// Mask schedule

/// alpha_0 = 0 < alpha_1 < ... < alpha_T = 1.
class MaskSchedule {
public:
    explicit MaskSchedule(std::vector<double> alphas);
    static MaskSchedule linear(std::size_t steps);

    std::size_t steps() const { return alphas_.size() - 1; }
    double alpha(std::size_t t) const { return alphas_.at(t); }
    /// (alpha_t - alpha_{t-1}) / alpha_t, the per-position unmask probability
    /// of the stochastic reverse step. Requires 1 <= t <= T.
    double unmask_probability(std::int64_t t) const;

private:
    std::vector<double> alphas_;
};

// ---------------------------------------------------------------------------
// Policy

enum class ScoreMetric { confidence, margin, neg_entropy };
enum class Selector { top1, topk, threshold, eb_sampler, random_schedule };
enum class KlDirection { forward, reverse };
enum class ModulationMode { multiplicative, additive };
enum class CommitMode { greedy, sample };

std::string to_string(ScoreMetric m);
std::string to_string(Selector s);
std::string to_string(KlDirection d);
std::string to_string(ModulationMode m);
std::string to_string(CommitMode m);
ScoreMetric parse_score_metric(const std::string& s);
Selector parse_selector(const std::string& s);
KlDirection parse_kl_direction(const std::string& s);
ModulationMode parse_modulation_mode(const std::string& s);
CommitMode parse_commit_mode(const std::string& s);

/// Multiplicative for positive scores, additive for neg_entropy.
ModulationMode default_modulation_for(ScoreMetric m);

struct DecodePolicy {
    ScoreMetric score_metric = ScoreMetric::confidence;
    Selector selector = Selector::top1;
    double lambda = 0.0;
    double gamma = 0.1;
    double tau = 0.9;
    std::size_t k = 1;
    std::optional<std::size_t> block_size;  // nullopt = whole sequence
    KlDirection kl_direction = KlDirection::reverse;
    ModulationMode modulation_mode = ModulationMode::multiplicative;
    CommitMode commit_mode = CommitMode::greedy;
    std::uint64_t seed = 0;
    /// When false the decoder skips the instability signal entirely
    /// (no history cache, no modulation). Used as the non-SWD baseline path.
    bool stability_enabled = true;

    /// Throws std::invalid_argument.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Trace

struct StepRecord {
    std::size_t index = 0;          // 0-based iteration number
    std::int64_t t = 0;             // step counter when the denoiser was called
    std::vector<std::size_t> masked;  // masked set before commitment
    std::vector<std::vector<double>> probs;  // rows aligned with `masked`
    std::vector<double> base_scores;         // aligned with `masked`
    std::vector<double> kl;                  // aligned with `masked`; empty if SWD off
    std::vector<double> scores;              // after modulation, aligned with `masked`
    std::vector<std::size_t> eligible;       // positions surviving the block constraint
    std::vector<std::size_t> selected;       // ascending
    std::string reason;
    std::vector<TokenId> committed;          // aligned with `selected`
    std::vector<double> commit_probs;        // marginal prob of each committed token
    double joint_prob = 1.0;                 // factorised joint of the commitment
    std::int64_t nfe_so_far = 0;
};

struct DecodeTrace {
    DecodePolicy policy;
    std::size_t length = 0;
    std::size_t vocab_size = 0;
    std::vector<Slot> initial;
    std::vector<StepRecord> steps;
    std::vector<TokenId> final_tokens;
    std::int64_t nfe_total = 0;
    bool complete = false;
};

// ---------------------------------------------------------------------------
// Seeds

/// splitmix64 finaliser.
std::uint64_t mix_seed(std::uint64_t x);
/// Per-trial seed: mix_seed(base ^ index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) { return mix_seed(base ^ index); }
/// Uniform double in [0,1) from 53 high bits.
inline double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace swd
