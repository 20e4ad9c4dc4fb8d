#include "swd/scoring.h"

#include <algorithm>
#include <cmath>

namespace swd {

double ScoreVector::at(std::size_t pos) const {
    auto it = std::lower_bound(positions.begin(), positions.end(), pos);
    if (it == positions.end() || *it != pos) throw std::out_of_range("no score for position " + std::to_string(pos));
    return values[static_cast<std::size_t>(it - positions.begin())];
}

HistoryCache::HistoryCache(const std::vector<std::size_t>& masked, std::size_t vocab_size) {
    const auto uniform = uniform_row(vocab_size);
    for (std::size_t pos : masked) prev_.emplace(pos, uniform);
}

std::span<const double> HistoryCache::prev(std::size_t pos) const {
    auto it = prev_.find(pos);
    if (it == prev_.end()) throw InternalError("history cache has no entry for position " + std::to_string(pos));
    return it->second;
}

void HistoryCache::refresh(const ProbTable& current, const std::vector<std::size_t>& still_masked) {
    std::map<std::size_t, std::vector<double>> next;
    for (std::size_t pos : still_masked) {
        auto row = current.row(pos);
        next.emplace(pos, std::vector<double>(row.begin(), row.end()));
    }
    prev_ = std::move(next);
    initialized_uniform_ = false;
}

namespace {

template <typename F>
ScoreVector map_rows(const ProbTable& probs, ScoreMetric metric, F&& f) {
    ScoreVector out;
    out.metric = metric;
    out.positions = probs.positions();
    out.values.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out.values.push_back(f(probs.row_at(i)));
    return out;
}

}  // namespace

ScoreVector score_confidence(const ProbTable& probs) {
    return map_rows(probs, ScoreMetric::confidence,
                    [](std::span<const double> r) { return *std::max_element(r.begin(), r.end()); });
}

ScoreVector score_margin(const ProbTable& probs) {
    if (probs.vocab_size() < 2) throw std::invalid_argument("margin score needs K >= 2");
    return map_rows(probs, ScoreMetric::margin, [](std::span<const double> r) {
        double first = -1.0, second = -1.0;
        for (double v : r) {
            if (v > first) {
                second = first;
                first = v;
            } else if (v > second) {
                second = v;
            }
        }
        return first - second;
    });
}

ScoreVector score_neg_entropy(const ProbTable& probs) {
    return map_rows(probs, ScoreMetric::neg_entropy, [](std::span<const double> r) { return -entropy(r); });
}

ScoreVector score(const ProbTable& probs, ScoreMetric metric) {
    switch (metric) {
        case ScoreMetric::confidence: return score_confidence(probs);
        case ScoreMetric::margin: return score_margin(probs);
        case ScoreMetric::neg_entropy: return score_neg_entropy(probs);
    }
    throw InternalError("unhandled score metric");
}

InstabilityMap temporal_instability(const ProbTable& current, const HistoryCache& cache, KlDirection direction) {
    InstabilityMap out;
    out.positions = current.positions();
    out.values.reserve(current.size());
    for (std::size_t i = 0; i < current.size(); ++i) {
        const auto now = current.row_at(i);
        const auto before = cache.prev(current.positions()[i]);
        out.values.push_back(direction == KlDirection::reverse ? kl_divergence(before, now)
                                                               : kl_divergence(now, before));
    }
    return out;
}

ScoreVector swd_modulate(const ScoreVector& base, const InstabilityMap& instability, double lambda,
                         ModulationMode mode) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (base.positions != instability.positions) {
        throw std::invalid_argument("scores and instability cover different positions");
    }
    ScoreVector out = base;
    out.modulated = true;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double d = instability.values[i];
        if (mode == ModulationMode::multiplicative) {
            if (base.values[i] < 0.0) {
                throw std::invalid_argument("multiplicative modulation of a negative score inverts its ranking");
            }
            out.values[i] = base.values[i] * std::exp(-lambda * d);
        } else {
            out.values[i] = base.values[i] - lambda * d;
        }
    }
    return out;
}

}  // namespace swd
