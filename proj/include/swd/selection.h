#pragma once

#include <optional>
#include <vector>

#include "swd/core.h"
#include "swd/scoring.h"

namespace swd {

enum class SelectionReason { topk, threshold, eb_budget, schedule, fallback_top1 };

std::string to_string(SelectionReason r);
SelectionReason parse_selection_reason(const std::string& s);

/// Nonempty, ascending, drawn from the eligible masked positions.
struct SelectionResult {
    std::vector<std::size_t> positions;
    SelectionReason reason = SelectionReason::topk;
};

/// Positions ordered by score descending, ties by lowest position.
std::vector<std::size_t> rank_by_score(const ScoreVector& scores);

SelectionResult select_topk(const ScoreVector& scores, std::size_t k);
/// {i : s_i > tau}; top-1 fallback when nothing clears the threshold.
SelectionResult select_threshold(const ScoreVector& scores, double tau);
/// Largest score-ranked prefix with sum(H) - max(H) <= gamma, entropies taken
/// from `probs`.
SelectionResult select_eb(const ScoreVector& scores, const ProbTable& probs, double gamma);
/// Each eligible position unmasks with probability (alpha_t - alpha_{t-1}) / alpha_t
/// at t = state.step(). Falls back to one uniformly drawn eligible position.
SelectionResult select_random_schedule(const SequenceState& state, const MaskSchedule& schedule, std::uint64_t rng_seed,
                                       const std::vector<std::size_t>& eligible);
SelectionResult select_random_schedule(const SequenceState& state, const MaskSchedule& schedule, std::uint64_t rng_seed);

/// Restricts scores to the lowest-indexed block of `block_size` positions that
/// still holds a masked position. nullopt means no restriction.
ScoreVector apply_block_constraint(const ScoreVector& scores, const SequenceState& state,
                                   std::optional<std::size_t> block_size);

/// sum(H) - max(H) over the given entropies; 0 for an empty set.
double eb_budget_usage(const std::vector<double>& entropies);

}  // namespace swd
