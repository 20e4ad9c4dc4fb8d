#pragma once

#include <map>
#include <vector>

#include "swd/core.h"

namespace swd {

/// Per-position scores over the current masked set (or a block-restricted
/// subset of it), in ascending position order.
struct ScoreVector {
    std::vector<std::size_t> positions;
    std::vector<double> values;
    ScoreMetric metric = ScoreMetric::confidence;
    bool modulated = false;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
    double at(std::size_t pos) const;
};

/// Per-position instability values, aligned with a ProbTable's positions.
struct InstabilityMap {
    std::vector<std::size_t> positions;
    std::vector<double> values;
};

/// Previous-step distributions for positions that are still masked.
class HistoryCache {
public:
    /// Every masked position starts at the uniform distribution over K.
    HistoryCache(const std::vector<std::size_t>& masked, std::size_t vocab_size);

    bool contains(std::size_t pos) const { return prev_.count(pos) != 0; }
    std::span<const double> prev(std::size_t pos) const;
    std::size_t size() const { return prev_.size(); }
    bool initialized_uniform() const { return initialized_uniform_; }

    /// Overwrites with `current` rows for the positions in `still_masked` and
    /// drops everything else.
    void refresh(const ProbTable& current, const std::vector<std::size_t>& still_masked);

private:
    std::map<std::size_t, std::vector<double>> prev_;
    bool initialized_uniform_ = true;
};

ScoreVector score_confidence(const ProbTable& probs);
/// Gap between the two largest entries. Throws std::invalid_argument for K = 1.
ScoreVector score_margin(const ProbTable& probs);
ScoreVector score_neg_entropy(const ProbTable& probs);
ScoreVector score(const ProbTable& probs, ScoreMetric metric);

/// reverse: D_KL(prev || current)   forward: D_KL(current || prev).
/// Throws InternalError when the cache lacks a row for a scored position.
InstabilityMap temporal_instability(const ProbTable& current, const HistoryCache& cache, KlDirection direction);

/// multiplicative: s * exp(-lambda * D);  additive: s - lambda * D.
/// Multiplicative mode rejects negative base scores; a base of exactly 0 stays 0.
ScoreVector swd_modulate(const ScoreVector& base, const InstabilityMap& instability, double lambda,
                         ModulationMode mode);

}  // namespace swd
