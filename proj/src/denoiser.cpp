#include "swd/denoiser.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace swd {

namespace {

void check_distribution(const std::vector<double>& p, const char* what) {
    double sum = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v <= 0.0) {
            throw std::invalid_argument(std::string(what) + " entries must be strictly positive");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument(std::string(what) + " must sum to 1");
}

void normalize(std::vector<double>& v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= s;
}

}  // namespace

MarkovModel::MarkovModel(std::vector<double> initial, std::vector<std::vector<double>> transition)
    : initial_(std::move(initial)), transition_(std::move(transition)) {
    if (initial_.empty()) throw std::invalid_argument("vocabulary size must be >= 1");
    check_distribution(initial_, "initial distribution");
    if (transition_.size() != initial_.size()) throw std::invalid_argument("transition matrix must be K x K");
    for (const auto& row : transition_) {
        if (row.size() != initial_.size()) throw std::invalid_argument("transition matrix must be K x K");
        check_distribution(row, "transition row");
    }
}

MarkovModel MarkovModel::sticky(std::size_t k, double stay, std::vector<double> initial) {
    if (k < 2) throw std::invalid_argument("sticky chain needs K >= 2");
    if (!(stay > 0.0 && stay < 1.0)) throw std::invalid_argument("stay probability must lie in (0,1)");
    const double other = (1.0 - stay) / static_cast<double>(k - 1);
    std::vector<std::vector<double>> t(k, std::vector<double>(k, other));
    for (std::size_t i = 0; i < k; ++i) t[i][i] = stay;
    return MarkovModel(std::move(initial), std::move(t));
}

MarkovModel MarkovModel::product(std::vector<double> initial) {
    std::vector<std::vector<double>> t(initial.size(), initial);
    return MarkovModel(std::move(initial), std::move(t));
}

MarkovModel MarkovModel::random(std::size_t k, std::mt19937_64& rng, double floor) {
    std::uniform_real_distribution<double> u(floor, 1.0);
    auto draw = [&] {
        std::vector<double> r(k);
        for (double& v : r) v = u(rng);
        normalize(r);
        return r;
    };
    std::vector<double> init = draw();
    std::vector<std::vector<double>> t;
    for (std::size_t i = 0; i < k; ++i) t.push_back(draw());
    return MarkovModel(std::move(init), std::move(t));
}

double MarkovModel::log_likelihood(std::span<const TokenId> tokens) const {
    if (tokens.empty()) return 0.0;
    const std::size_t k = vocab_size();
    for (const auto& tok : tokens) {
        if (tok.value >= k) throw std::invalid_argument("token outside vocabulary");
    }
    double ll = std::log(initial_[tokens[0].value]);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        ll += std::log(transition_[tokens[i - 1].value][tokens[i].value]);
    }
    return ll;
}

ModeSequence mode_sequence(const MarkovModel& model, std::size_t length) {
    if (length == 0) throw std::invalid_argument("length must be >= 1");
    constexpr double kTie = 1e-12;
    const std::size_t k = model.vocab_size();
    std::vector<double> score(k);
    std::vector<char> unique(k, 1);
    for (std::size_t v = 0; v < k; ++v) score[v] = std::log(model.initial(v));
    std::vector<std::vector<std::size_t>> back(length, std::vector<std::size_t>(k, 0));

    for (std::size_t i = 1; i < length; ++i) {
        std::vector<double> next(k);
        std::vector<char> next_unique(k, 1);
        for (std::size_t v = 0; v < k; ++v) {
            double best = -INFINITY;
            std::size_t arg = 0;
            for (std::size_t u = 0; u < k; ++u) {
                const double s = score[u] + std::log(model.transition(u, v));
                if (s > best) {
                    best = s;
                    arg = u;
                }
            }
            bool tie = false;
            for (std::size_t u = 0; u < k; ++u) {
                if (u != arg && score[u] + std::log(model.transition(u, v)) > best - kTie) tie = true;
            }
            next[v] = best;
            back[i][v] = arg;
            next_unique[v] = (!tie && unique[arg]) ? 1 : 0;
        }
        score = std::move(next);
        unique = std::move(next_unique);
    }

    const std::size_t end = argmax(score);
    bool tie = false;
    for (std::size_t v = 0; v < k; ++v) {
        if (v != end && score[v] > score[end] - kTie) tie = true;
    }
    ModeSequence out;
    out.log_prob = score[end];
    out.unique = !tie && unique[end];
    out.tokens.resize(length);
    std::size_t cur = end;
    for (std::size_t i = length; i-- > 0;) {
        out.tokens[i] = TokenId{static_cast<std::uint32_t>(cur)};
        if (i > 0) cur = back[i][cur];
    }
    return out;
}

ProbTable exact_marginals(const MarkovModel& model, const SequenceState& state) {
    const std::size_t k = model.vocab_size();
    const std::size_t n = state.length();
    if (state.masked().empty()) throw std::invalid_argument("state has no masked positions");
    const auto& tokens = state.tokens();
    for (const auto& slot : tokens) {
        if (slot && slot->value >= k) {
            throw std::invalid_argument("observed token " + std::to_string(slot->value) +
                                        " outside vocabulary of size " + std::to_string(k));
        }
    }

    // Evidence indicator: observed positions clamp to a single token.
    auto allowed = [&](std::size_t i, std::size_t v) { return !tokens[i] || tokens[i]->value == v; };

    // Scaled forward messages: fwd[i][v] ∝ P(x_i = v, evidence on 0..i).
    std::vector<std::vector<double>> fwd(n, std::vector<double>(k, 0.0));
    for (std::size_t v = 0; v < k; ++v) fwd[0][v] = allowed(0, v) ? model.initial(v) : 0.0;
    normalize(fwd[0]);
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t v = 0; v < k; ++v) {
            if (!allowed(i, v)) continue;
            double s = 0.0;
            for (std::size_t u = 0; u < k; ++u) s += fwd[i - 1][u] * model.transition(u, v);
            fwd[i][v] = s;
        }
        normalize(fwd[i]);
    }

    // Scaled backward messages: bwd[i][v] ∝ P(evidence on i+1..n-1 | x_i = v).
    std::vector<std::vector<double>> bwd(n, std::vector<double>(k, 1.0));
    for (std::size_t i = n - 1; i-- > 0;) {
        for (std::size_t u = 0; u < k; ++u) {
            double s = 0.0;
            for (std::size_t v = 0; v < k; ++v) {
                if (allowed(i + 1, v)) s += model.transition(u, v) * bwd[i + 1][v];
            }
            bwd[i][u] = s;
        }
        normalize(bwd[i]);
    }

    ProbTable table(k);
    for (std::size_t pos : state.masked()) {
        std::vector<double> row(k);
        for (std::size_t v = 0; v < k; ++v) row[v] = fwd[pos][v] * bwd[pos][v];
        normalize(row);
        table.add_row(pos, std::move(row));
    }
    return table;
}

// ---------------------------------------------------------------------------

double DecaySpec::operator()(double f) const {
    f = std::clamp(f, 0.0, 1.0);
    switch (kind) {
        case Kind::linear: return std::min(1.0, rate * f);
        case Kind::exponential: return std::expm1(rate * f) / std::expm1(rate);
    }
    return 0.0;
}

void PerturbationProfile::validate() const {
    if (!(flip_strength >= 0.0 && flip_strength < 1.0)) throw std::invalid_argument("flip strength must lie in [0,1)");
    if (!(decay.rate > 0.0) || !std::isfinite(decay.rate)) throw std::invalid_argument("decay rate must be > 0");
    if (!(decoy_density >= 0.0 && decoy_density <= 1.0)) throw std::invalid_argument("decoy density must lie in [0,1]");
}

double PerturbationProfile::magnitude(const SequenceState& state) const {
    const std::size_t n = state.length();
    const std::size_t m = state.masked().size();
    const double f = (n <= 1 || m == 0) ? 0.0 : static_cast<double>(m - 1) / static_cast<double>(n - 1);
    return flip_strength * decay(f);
}

bool PerturbationProfile::is_decoy_position(std::size_t pos) const {
    if (decoy_density >= 1.0) return true;
    return unit_interval(mix_seed(seed ^ (0x5bd1e995ULL * (pos + 1)))) < decoy_density;
}

TokenId PerturbationProfile::decoy_token(std::size_t pos, std::size_t vocab_size) const {
    const std::uint64_t h = mix_seed(mix_seed(seed + 0x632be59bd9b4e019ULL) ^ pos);
    return TokenId{static_cast<std::uint32_t>(h % vocab_size)};
}

bool PerturbationProfile::pulse_active(std::size_t pos, std::int64_t step) const {
    if (pulse == PulseMode::steady) return true;
    const std::uint64_t phase = mix_seed(seed ^ (0x9e3779b1ULL + pos)) & 1ULL;
    return ((static_cast<std::uint64_t>(step) + phase) & 1ULL) == 0;
}

ProbTable perturbed_marginals(const ProbTable& base, const PerturbationProfile& profile, const SequenceState& state) {
    profile.validate();
    const std::size_t k = base.vocab_size();
    const double m = profile.magnitude(state);
    ProbTable out = base;
    if (m <= 0.0) return out;
    for (std::size_t idx = 0; idx < base.size(); ++idx) {
        const std::size_t pos = base.positions()[idx];
        if (!profile.is_decoy_position(pos) || !profile.pulse_active(pos, state.step())) continue;
        auto src = base.row_at(idx);
        std::vector<double> row(src.begin(), src.end());
        for (double& v : row) v *= (1.0 - m);
        std::size_t decoy = profile.decoy_token(pos, k).value;
        if (decoy == argmax(src)) decoy = (decoy + 1) % k;
        row[decoy] += m;
        out.replace_row(pos, std::move(row));
    }
    return out;
}

PerturbedDenoiser::PerturbedDenoiser(MarkovModel model, PerturbationProfile profile)
    : model_(std::move(model)), profile_(profile) {
    profile_.validate();
}

ProbTable PerturbedDenoiser::predict(const SequenceState& state) {
    return perturbed_marginals(exact_marginals(model_, state), profile_, state);
}

}  // namespace swd
