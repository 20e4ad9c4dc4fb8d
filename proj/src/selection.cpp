#include "swd/selection.h"

#include <algorithm>
#include <numeric>
#include <random>

namespace swd {

std::string to_string(SelectionReason r) {
    switch (r) {
        case SelectionReason::topk: return "topk";
        case SelectionReason::threshold: return "threshold";
        case SelectionReason::eb_budget: return "eb_budget";
        case SelectionReason::schedule: return "schedule";
        case SelectionReason::fallback_top1: return "fallback_top1";
    }
    return "?";
}

SelectionReason parse_selection_reason(const std::string& s) {
    if (s == "topk") return SelectionReason::topk;
    if (s == "threshold") return SelectionReason::threshold;
    if (s == "eb_budget") return SelectionReason::eb_budget;
    if (s == "schedule") return SelectionReason::schedule;
    if (s == "fallback_top1") return SelectionReason::fallback_top1;
    throw ParseError("unknown selection reason '" + s + "'");
}

std::vector<std::size_t> rank_by_score(const ScoreVector& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.values[a] > scores.values[b]; });
    std::vector<std::size_t> ranked;
    ranked.reserve(order.size());
    for (std::size_t i : order) ranked.push_back(scores.positions[i]);
    return ranked;
}

namespace {

void require_nonempty(const ScoreVector& scores) {
    if (scores.empty()) throw std::invalid_argument("cannot select from an empty score vector");
}

SelectionResult sorted(std::vector<std::size_t> positions, SelectionReason reason) {
    std::sort(positions.begin(), positions.end());
    return {std::move(positions), reason};
}

}  // namespace

SelectionResult select_topk(const ScoreVector& scores, std::size_t k) {
    require_nonempty(scores);
    if (k == 0) throw std::invalid_argument("k must be >= 1");
    auto ranked = rank_by_score(scores);
    ranked.resize(std::min(k, ranked.size()));
    return sorted(std::move(ranked), SelectionReason::topk);
}

SelectionResult select_threshold(const ScoreVector& scores, double tau) {
    require_nonempty(scores);
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores.values[i] > tau) picked.push_back(scores.positions[i]);
    }
    if (picked.empty()) return {{rank_by_score(scores).front()}, SelectionReason::fallback_top1};
    return {std::move(picked), SelectionReason::threshold};
}

SelectionResult select_eb(const ScoreVector& scores, const ProbTable& probs, double gamma) {
    require_nonempty(scores);
    const auto ranked = rank_by_score(scores);
    std::vector<std::size_t> picked;
    double sum = 0.0;
    double max_h = 0.0;
    for (std::size_t pos : ranked) {
        const double h = entropy(probs.row(pos));
        const double next_sum = sum + h;
        const double next_max = picked.empty() ? h : std::max(max_h, h);
        if (!picked.empty() && next_sum - next_max > gamma) break;
        picked.push_back(pos);
        sum = next_sum;
        max_h = next_max;
    }
    return sorted(std::move(picked), SelectionReason::eb_budget);
}

SelectionResult select_random_schedule(const SequenceState& state, const MaskSchedule& schedule, std::uint64_t rng_seed,
                                       const std::vector<std::size_t>& eligible) {
    if (eligible.empty()) throw std::invalid_argument("no eligible positions to select from");
    const double p = schedule.unmask_probability(state.step());
    std::mt19937_64 rng(rng_seed);
    std::vector<std::size_t> picked;
    for (std::size_t pos : eligible) {
        if (unit_interval(rng()) < p) picked.push_back(pos);
    }
    if (picked.empty()) {
        const auto idx = static_cast<std::size_t>(unit_interval(rng()) * static_cast<double>(eligible.size()));
        return {{eligible[std::min(idx, eligible.size() - 1)]}, SelectionReason::fallback_top1};
    }
    return {std::move(picked), SelectionReason::schedule};
}

SelectionResult select_random_schedule(const SequenceState& state, const MaskSchedule& schedule,
                                       std::uint64_t rng_seed) {
    return select_random_schedule(state, schedule, rng_seed, state.masked());
}

ScoreVector apply_block_constraint(const ScoreVector& scores, const SequenceState& state,
                                   std::optional<std::size_t> block_size) {
    if (!block_size) return scores;
    if (*block_size == 0) throw std::invalid_argument("block size must be >= 1");
    if (state.masked().empty()) return scores;
    const std::size_t block = state.masked().front() / *block_size;
    const std::size_t lo = block * *block_size;
    const std::size_t hi = lo + *block_size;
    ScoreVector out;
    out.metric = scores.metric;
    out.modulated = scores.modulated;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores.positions[i] >= lo && scores.positions[i] < hi) {
            out.positions.push_back(scores.positions[i]);
            out.values.push_back(scores.values[i]);
        }
    }
    return out;
}

double eb_budget_usage(const std::vector<double>& entropies) {
    if (entropies.empty()) return 0.0;
    double sum = 0.0;
    for (double h : entropies) sum += h;
    return sum - *std::max_element(entropies.begin(), entropies.end());
}

}  // namespace swd
