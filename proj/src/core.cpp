#include "swd/core.h"

#include <algorithm>
#include <limits>
#include <numeric>

namespace swd {

SequenceState::SequenceState(std::vector<Slot> tokens, std::optional<std::int64_t> step)
    : tokens_(std::move(tokens)) {
    if (tokens_.empty()) {
        throw std::invalid_argument("sequence length must be >= 1");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!tokens_[i]) masked_.push_back(i);
    }
    step_ = step.value_or(static_cast<std::int64_t>(tokens_.size()));
    if (step_ < 0) throw std::invalid_argument("step must be >= 0");
}

bool SequenceState::is_masked(std::size_t pos) const {
    return std::binary_search(masked_.begin(), masked_.end(), pos);
}

double SequenceState::masked_fraction() const {
    return static_cast<double>(masked_.size()) / static_cast<double>(tokens_.size());
}

void SequenceState::commit(std::size_t pos, TokenId token) {
    if (pos >= tokens_.size()) {
        throw std::invalid_argument("commit position " + std::to_string(pos) + " out of range");
    }
    auto it = std::lower_bound(masked_.begin(), masked_.end(), pos);
    if (it == masked_.end() || *it != pos) {
        throw std::invalid_argument("position " + std::to_string(pos) + " is already committed");
    }
    masked_.erase(it);
    tokens_[pos] = token;
}

void SequenceState::advance_step() {
    if (step_ == 0) throw InternalError("step counter would drop below zero");
    --step_;
}

void SequenceState::check_invariants() const {
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const bool in_set = cursor < masked_.size() && masked_[cursor] == i;
        if (in_set != !tokens_[i].has_value()) {
            throw InternalError("mask/sentinel mismatch at position " + std::to_string(i));
        }
        if (in_set) ++cursor;
    }
    if (cursor != masked_.size()) throw InternalError("masked set holds out-of-range positions");
}

std::vector<TokenId> SequenceState::final_tokens() const {
    std::vector<TokenId> out;
    out.reserve(tokens_.size());
    for (const auto& slot : tokens_) {
        if (!slot) throw InternalError("sequence still contains masked positions");
        out.push_back(*slot);
    }
    return out;
}

SequenceState new_fully_masked(std::size_t length) {
    if (length == 0) throw std::invalid_argument("length must be >= 1");
    return SequenceState(std::vector<Slot>(length));
}

// ---------------------------------------------------------------------------

ProbTable::ProbTable(std::size_t vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size == 0) throw std::invalid_argument("vocabulary size must be >= 1");
}

void ProbTable::check_and_normalize(std::vector<double>& row, bool normalize) const {
    if (row.size() != vocab_size_) {
        throw std::invalid_argument("row length " + std::to_string(row.size()) + " != vocabulary size " +
                                    std::to_string(vocab_size_));
    }
    double sum = 0.0;
    for (double v : row) {
        if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("row entries must be finite and >= 0");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw std::invalid_argument("row sums to " + std::to_string(sum) + ", expected 1");
    }
    if (normalize) {
        for (double& v : row) v /= sum;
    }
}

void ProbTable::add_row(std::size_t pos, std::vector<double> row) { insert(pos, std::move(row), true); }

void ProbTable::add_row_verbatim(std::size_t pos, std::vector<double> row) { insert(pos, std::move(row), false); }

void ProbTable::insert(std::size_t pos, std::vector<double> row, bool normalize) {
    if (!positions_.empty() && pos <= positions_.back()) {
        throw std::invalid_argument("rows must be added in ascending position order");
    }
    check_and_normalize(row, normalize);
    positions_.push_back(pos);
    rows_.push_back(std::move(row));
}

void ProbTable::replace_row(std::size_t pos, std::vector<double> row) {
    const std::size_t idx = index_of(pos);
    check_and_normalize(row, true);
    rows_[idx] = std::move(row);
}

std::size_t ProbTable::index_of(std::size_t pos) const {
    auto it = std::lower_bound(positions_.begin(), positions_.end(), pos);
    if (it == positions_.end() || *it != pos) {
        throw std::out_of_range("no probability row for position " + std::to_string(pos));
    }
    return static_cast<std::size_t>(it - positions_.begin());
}

bool ProbTable::contains(std::size_t pos) const {
    return std::binary_search(positions_.begin(), positions_.end(), pos);
}

std::span<const double> ProbTable::row(std::size_t pos) const { return rows_[index_of(pos)]; }

// ---------------------------------------------------------------------------

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * safe_log(v);
    }
    return h;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("KL operands differ in length");
    double d = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) {
        if (p[v] > 0.0) d += p[v] * (safe_log(p[v]) - safe_log(q[v]));
    }
    return d > 0.0 ? d : 0.0;
}

std::size_t argmax(std::span<const double> p) {
    if (p.empty()) throw std::invalid_argument("argmax of empty row");
    std::size_t best = 0;
    for (std::size_t v = 1; v < p.size(); ++v) {
        if (p[v] > p[best]) best = v;
    }
    return best;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax of empty row");
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
        out[v] = std::exp(logits[v] - hi);
        sum += out[v];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> uniform_row(std::size_t k) { return std::vector<double>(k, 1.0 / static_cast<double>(k)); }

// ---------------------------------------------------------------------------

MaskSchedule::MaskSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
    if (alphas_.size() < 2) throw std::invalid_argument("mask schedule needs at least alpha_0 and alpha_T");
    if (alphas_.front() != 0.0 || alphas_.back() != 1.0) {
        throw std::invalid_argument("mask schedule must start at 0 and end at 1");
    }
    for (std::size_t t = 1; t < alphas_.size(); ++t) {
        if (!(alphas_[t] > alphas_[t - 1])) throw std::invalid_argument("mask schedule must be strictly increasing");
    }
}

MaskSchedule MaskSchedule::linear(std::size_t steps) {
    if (steps == 0) throw std::invalid_argument("schedule needs >= 1 step");
    std::vector<double> a(steps + 1);
    for (std::size_t t = 0; t <= steps; ++t) a[t] = static_cast<double>(t) / static_cast<double>(steps);
    a.back() = 1.0;
    return MaskSchedule(std::move(a));
}

double MaskSchedule::unmask_probability(std::int64_t t) const {
    if (t < 1 || static_cast<std::size_t>(t) >= alphas_.size()) {
        throw std::invalid_argument("schedule index " + std::to_string(t) + " outside [1, " +
                                    std::to_string(steps()) + "]");
    }
    const auto i = static_cast<std::size_t>(t);
    return (alphas_[i] - alphas_[i - 1]) / alphas_[i];
}

// ---------------------------------------------------------------------------

std::string to_string(ScoreMetric m) {
    switch (m) {
        case ScoreMetric::confidence: return "confidence";
        case ScoreMetric::margin: return "margin";
        case ScoreMetric::neg_entropy: return "neg-entropy";
    }
    return "?";
}

std::string to_string(Selector s) {
    switch (s) {
        case Selector::top1: return "top1";
        case Selector::topk: return "topk";
        case Selector::threshold: return "threshold";
        case Selector::eb_sampler: return "eb";
        case Selector::random_schedule: return "random";
    }
    return "?";
}

std::string to_string(KlDirection d) { return d == KlDirection::forward ? "forward" : "reverse"; }
std::string to_string(ModulationMode m) { return m == ModulationMode::multiplicative ? "mul" : "add"; }
std::string to_string(CommitMode m) { return m == CommitMode::greedy ? "greedy" : "sample"; }

ScoreMetric parse_score_metric(const std::string& s) {
    if (s == "confidence") return ScoreMetric::confidence;
    if (s == "margin") return ScoreMetric::margin;
    if (s == "neg-entropy" || s == "neg_entropy" || s == "entropy") return ScoreMetric::neg_entropy;
    throw std::invalid_argument("unknown score metric '" + s + "'");
}

Selector parse_selector(const std::string& s) {
    if (s == "top1") return Selector::top1;
    if (s == "topk") return Selector::topk;
    if (s == "threshold") return Selector::threshold;
    if (s == "eb" || s == "eb_sampler") return Selector::eb_sampler;
    if (s == "random" || s == "random_schedule") return Selector::random_schedule;
    throw std::invalid_argument("unknown selector '" + s + "'");
}

KlDirection parse_kl_direction(const std::string& s) {
    if (s == "forward") return KlDirection::forward;
    if (s == "reverse") return KlDirection::reverse;
    throw std::invalid_argument("unknown KL direction '" + s + "'");
}

ModulationMode parse_modulation_mode(const std::string& s) {
    if (s == "mul" || s == "multiplicative") return ModulationMode::multiplicative;
    if (s == "add" || s == "additive") return ModulationMode::additive;
    throw std::invalid_argument("unknown modulation mode '" + s + "'");
}

CommitMode parse_commit_mode(const std::string& s) {
    if (s == "greedy") return CommitMode::greedy;
    if (s == "sample") return CommitMode::sample;
    throw std::invalid_argument("unknown commit mode '" + s + "'");
}

ModulationMode default_modulation_for(ScoreMetric m) {
    return m == ScoreMetric::neg_entropy ? ModulationMode::additive : ModulationMode::multiplicative;
}

void DecodePolicy::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be finite and >= 0");
    if (!std::isfinite(tau)) throw std::invalid_argument("tau must be finite");
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (block_size && *block_size < 1) throw std::invalid_argument("block size must be >= 1");
    if (score_metric == ScoreMetric::neg_entropy && modulation_mode == ModulationMode::multiplicative) {
        throw std::invalid_argument("neg-entropy scores are negative; use additive modulation");
    }
}

std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace swd
