#include "swd/bench.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "json_text.h"
#include "swd/decoder.h"
#include "swd/parallel.h"

namespace swd {

void SyntheticTask::validate() const {
    if (length < 1) throw std::invalid_argument("task length must be >= 1");
    if (trials < 1) throw std::invalid_argument("task needs >= 1 trial");
    if (profile) profile->validate();
}

MarkovModel default_task_model(std::size_t vocab_size) {
    if (vocab_size < 2) throw std::invalid_argument("vocabulary size must be >= 2");
    std::vector<double> initial(vocab_size, 0.8 / static_cast<double>(vocab_size));
    initial[0] += 0.2;
    return MarkovModel::sticky(vocab_size, 0.85, std::move(initial));
}

PerturbationProfile adversarial_profile(std::uint64_t seed) {
    PerturbationProfile p;
    p.flip_strength = 0.95;
    p.decay = DecaySpec{DecaySpec::Kind::linear, 2.0};
    p.decoy_density = 0.25;
    p.pulse = PulseMode::alternating;
    p.seed = seed;
    return p;
}

SyntheticTask default_task(std::size_t vocab_size, std::size_t length, bool perturbed, std::size_t trials,
                           std::uint64_t seed) {
    SyntheticTask task{default_task_model(vocab_size), length, std::nullopt, trials, seed};
    if (perturbed) task.profile = adversarial_profile(seed);
    task.validate();
    return task;
}

namespace {

TrialResult run_trial(const SyntheticTask& task, const DecodePolicy& policy, std::size_t trial,
                      const std::optional<ModeSequence>& mode, Denoiser* shared) {
    const std::uint64_t trial_seed = derive_seed(task.seed, trial);
    DecodePolicy p = policy;
    p.seed = trial_seed;

    std::unique_ptr<Denoiser> owned;
    Denoiser* denoiser = shared;
    if (!denoiser) {
        if (task.profile) {
            PerturbationProfile prof = *task.profile;
            prof.seed = trial_seed;
            owned = std::make_unique<PerturbedDenoiser>(task.model, prof);
        } else {
            owned = std::make_unique<ExactMarkovDenoiser>(task.model);
        }
        denoiser = owned.get();
    }
    const DecodeOutcome out = decode(*denoiser, p, new_fully_masked(task.length));
    TrialResult r;
    r.loglik = task.model.log_likelihood(out.tokens);
    r.exact_match = mode && out.tokens == mode->tokens;
    r.nfe = out.nfe;
    return r;
}

std::optional<ModeSequence> unique_mode(const SyntheticTask& task) {
    ModeSequence m = mode_sequence(task.model, task.length);
    if (!m.unique) return std::nullopt;
    return m;
}

TaskMetrics aggregate(const SyntheticTask& task, std::vector<TrialResult> trials, bool mode_unique) {
    TaskMetrics m;
    double ll = 0.0, nfe = 0.0, hits = 0.0;
    for (const auto& t : trials) {
        ll += t.loglik;
        nfe += static_cast<double>(t.nfe);
        hits += t.exact_match ? 1.0 : 0.0;
    }
    const auto n = static_cast<double>(trials.size());
    m.mean_loglik = ll / n;
    m.mean_nfe = nfe / n;
    m.exact_match_rate = mode_unique ? hits / n : std::nan("");
    m.speedup_vs_top1 = static_cast<double>(task.length) / m.mean_nfe;
    m.trials = std::move(trials);
    return m;
}

void check_shared(const SyntheticTask& task, const RunOptions& options) {
    if (options.shared_denoiser && options.shared_denoiser->vocab_size() != task.model.vocab_size()) {
        throw std::invalid_argument("shared denoiser vocabulary differs from the task model");
    }
}

}  // namespace

TaskMetrics run_task_serial(const SyntheticTask& task, const DecodePolicy& policy, const RunOptions& options) {
    task.validate();
    policy.validate();
    check_shared(task, options);
    const auto mode = unique_mode(task);
    std::vector<TrialResult> trials(task.trials);
    for (std::size_t i = 0; i < task.trials; ++i) trials[i] = run_trial(task, policy, i, mode, options.shared_denoiser);
    return aggregate(task, std::move(trials), mode.has_value());
}

TaskMetrics run_task(const SyntheticTask& task, const DecodePolicy& policy, const RunOptions& options) {
    if (options.shared_denoiser) return run_task_serial(task, policy, options);
    task.validate();
    policy.validate();
    const auto mode = unique_mode(task);
    std::vector<TrialResult> trials(task.trials);
    const auto count = static_cast<std::int64_t>(task.trials);
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(engine_threads())
    for (std::int64_t i = 0; i < count; ++i) {
        try {
            trials[static_cast<std::size_t>(i)] = run_trial(task, policy, static_cast<std::size_t>(i), mode, nullptr);
        } catch (...) {
#pragma omp critical(swd_run_task_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return aggregate(task, std::move(trials), mode.has_value());
}

PairedDifference paired_loglik_difference(const TaskMetrics& a, const TaskMetrics& b) {
    if (a.trials.size() != b.trials.size() || a.trials.empty()) {
        throw std::invalid_argument("paired difference needs equal, nonzero trial counts");
    }
    const std::size_t n = a.trials.size();
    std::vector<double> d(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a.trials[i].loglik - b.trials[i].loglik;
        mean += d[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double var = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

// ---------------------------------------------------------------------------

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::lambda: return "lambda";
        case SweepAxis::gamma: return "gamma";
        case SweepAxis::tau: return "tau";
        case SweepAxis::k: return "k";
        case SweepAxis::block: return "block_size";
    }
    return "?";
}

SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "lambda") return SweepAxis::lambda;
    if (s == "gamma") return SweepAxis::gamma;
    if (s == "tau") return SweepAxis::tau;
    if (s == "k") return SweepAxis::k;
    if (s == "block" || s == "block_size" || s == "block-size") return SweepAxis::block;
    throw std::invalid_argument("unknown sweep axis '" + s + "'");
}

void SweepSpec::validate() const {
    if (values.empty()) throw std::invalid_argument("sweep needs at least one axis value");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw std::invalid_argument("sweep values must be finite");
        if (i > 0 && !(values[i] > values[i - 1])) {
            throw std::invalid_argument("sweep values must be distinct and ascending");
        }
        if ((axis == SweepAxis::k || axis == SweepAxis::block) &&
            (values[i] < 1.0 || values[i] != std::floor(values[i]))) {
            throw std::invalid_argument(to_string(axis) + " values must be positive integers");
        }
    }
    for (double v : values) policy_for(v).validate();
}

DecodePolicy SweepSpec::policy_for(double value) const {
    DecodePolicy p = base;
    switch (axis) {
        case SweepAxis::lambda: p.lambda = value; break;
        case SweepAxis::gamma: p.gamma = value; break;
        case SweepAxis::tau: p.tau = value; break;
        case SweepAxis::k: p.k = static_cast<std::size_t>(value); break;
        case SweepAxis::block: p.block_size = static_cast<std::size_t>(value); break;
    }
    return p;
}

SweepResult run_sweep(const SweepSpec& spec, const SyntheticTask& task, const RunOptions& options) {
    spec.validate();
    SweepResult r{spec, task.trials, task.seed, {}};
    for (double v : spec.values) r.rows.push_back(run_task(task, spec.policy_for(v), options));
    return r;
}

std::string sweep_csv(const SweepResult& result) {
    using json_text::append_double;
    std::string s = "axis_name,axis_value,mean_loglik,exact_match_rate,mean_nfe,speedup,trials,seed\n";
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        const TaskMetrics& m = result.rows[i];
        s += to_string(result.spec.axis);
        s += ',';
        append_double(s, result.spec.values[i]);
        s += ',';
        append_double(s, m.mean_loglik);
        s += ',';
        if (std::isnan(m.exact_match_rate)) {
            s += "nan";
        } else {
            append_double(s, m.exact_match_rate);
        }
        s += ',';
        append_double(s, m.mean_nfe);
        s += ',';
        append_double(s, m.speedup_vs_top1);
        s += ',';
        s += std::to_string(result.trials);
        s += ',';
        s += std::to_string(result.seed);
        s += '\n';
    }
    return s;
}

void write_csv_file(const std::string& path, const std::string& csv) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FileError("cannot open '" + path + "' for writing");
    f << csv;
    if (!f) throw FileError("failed writing '" + path + "'");
}

}  // namespace swd
