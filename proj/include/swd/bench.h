#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swd/core.h"
#include "swd/denoiser.h"

namespace swd {

/// A decode workload with a known generator. Trial i uses seed
/// derive_seed(seed, i) for both the perturbation profile and the policy.
struct SyntheticTask {
    MarkovModel model;
    std::size_t length = 32;
    std::optional<PerturbationProfile> profile;
    std::size_t trials = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Sticky chain (stay = 0.85) with a mild preference for token 0, which makes
/// the mode sequence unique.
MarkovModel default_task_model(std::size_t vocab_size);
/// Decoys on a quarter of the positions, alternating pulse, full strength
/// while at least half the sequence is masked, fading linearly to zero.
PerturbationProfile adversarial_profile(std::uint64_t seed = 0);
SyntheticTask default_task(std::size_t vocab_size, std::size_t length, bool perturbed, std::size_t trials,
                           std::uint64_t seed);

struct TrialResult {
    double loglik = 0.0;
    bool exact_match = false;
    std::int64_t nfe = 0;
};

struct TaskMetrics {
    double mean_loglik = 0.0;
    double exact_match_rate = 0.0;  // NaN when the mode sequence is not unique
    double mean_nfe = 0.0;
    double speedup_vs_top1 = 0.0;   // L / mean_nfe
    std::vector<TrialResult> trials;
};

struct PairedDifference {
    double mean = 0.0;
    double standard_error = 0.0;
};

/// Mean and standard error of per-trial (a - b) log-likelihood differences.
PairedDifference paired_loglik_difference(const TaskMetrics& a, const TaskMetrics& b);

struct RunOptions {
    /// Decode every trial against this denoiser instead of one built from the
    /// task. Forces serial execution (endpoints are single-session).
    Denoiser* shared_denoiser = nullptr;
};

/// Trials run under OpenMP; results are stored by trial index.
TaskMetrics run_task(const SyntheticTask& task, const DecodePolicy& policy, const RunOptions& options = {});
/// Single-threaded reference for run_task.
TaskMetrics run_task_serial(const SyntheticTask& task, const DecodePolicy& policy, const RunOptions& options = {});

enum class SweepAxis { lambda, gamma, tau, k, block };

std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepSpec {
    DecodePolicy base;
    SweepAxis axis = SweepAxis::lambda;
    std::vector<double> values;

    /// Values must be distinct and ascending; k/block values positive integers.
    void validate() const;
    DecodePolicy policy_for(double value) const;
};

struct SweepResult {
    SweepSpec spec;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    std::vector<TaskMetrics> rows;  // aligned with spec.values
};

SweepResult run_sweep(const SweepSpec& spec, const SyntheticTask& task, const RunOptions& options = {});

/// Header line plus one row per axis value.
std::string sweep_csv(const SweepResult& result);
void write_csv_file(const std::string& path, const std::string& csv);

}  // namespace swd
