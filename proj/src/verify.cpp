#include "swd/verify.h"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "json_text.h"
#include "swd/parallel.h"

namespace swd {

namespace {

std::size_t checked_power(std::size_t base, std::size_t exp) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < exp; ++i) {
        if (n > kMaxEnumeration / base) {
            throw std::invalid_argument("K^L exceeds the enumeration cap of " + std::to_string(kMaxEnumeration));
        }
        n *= base;
    }
    return n;
}

double sequence_probability(const MarkovModel& m, std::size_t index, std::size_t length) {
    const std::size_t k = m.vocab_size();
    // Decode digits least significant first (position L-1 first).
    double p = 1.0;
    std::size_t next = index % k;
    index /= k;
    for (std::size_t pos = length - 1; pos > 0; --pos) {
        const std::size_t cur = index % k;
        index /= k;
        p *= m.transition(cur, next);
        next = cur;
    }
    return p * m.initial(next);
}

void check_position(std::size_t pos, std::size_t length, const char* what) {
    if (pos >= length) throw std::invalid_argument(std::string(what) + " position " + std::to_string(pos) + " out of range");
}

}  // namespace

JointEnumeration::JointEnumeration(MarkovModel model, std::size_t length, std::vector<double> table)
    : model_(std::move(model)), length_(length), table_(std::move(table)), stride_(length) {
    std::size_t s = 1;
    for (std::size_t pos = length_; pos-- > 0;) {
        stride_[pos] = s;
        s *= model_.vocab_size();
    }
    if (s != table_.size()) throw std::invalid_argument("joint table size must be K^L");
}

JointEnumeration enumerate_joint_serial(const MarkovModel& model, std::size_t length) {
    if (length == 0) throw std::invalid_argument("length must be >= 1");
    const std::size_t n = checked_power(model.vocab_size(), length);
    std::vector<double> table(n);
    for (std::size_t idx = 0; idx < n; ++idx) table[idx] = sequence_probability(model, idx, length);
    return JointEnumeration(model, length, std::move(table));
}

JointEnumeration enumerate_joint(const MarkovModel& model, std::size_t length) {
    if (length == 0) throw std::invalid_argument("length must be >= 1");
    const std::size_t n = checked_power(model.vocab_size(), length);
    std::vector<double> table(n);
    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) num_threads(engine_threads())
    for (std::int64_t idx = 0; idx < count; ++idx) {
        table[static_cast<std::size_t>(idx)] = sequence_probability(model, static_cast<std::size_t>(idx), length);
    }
    return JointEnumeration(model, length, std::move(table));
}

// ---------------------------------------------------------------------------

double conditional_mi(const JointEnumeration& joint, std::size_t target, const std::vector<std::size_t>& reveal,
                      const Context& given) {
    const std::size_t n = joint.length();
    const std::size_t k = joint.vocab_size();
    if (given.observed.size() != n) throw std::invalid_argument("observed context must have length L");
    check_position(target, n, "target");
    std::vector<char> used(n, 0);
    auto claim = [&](std::size_t pos, const char* what) {
        check_position(pos, n, what);
        if (used[pos]) throw std::invalid_argument("position " + std::to_string(pos) + " appears in two roles");
        used[pos] = 1;
    };
    for (std::size_t pos = 0; pos < n; ++pos) {
        if (given.observed[pos]) {
            if (given.observed[pos]->value >= k) throw std::invalid_argument("observed token outside vocabulary");
            claim(pos, "observed");
        }
    }
    claim(target, "target");
    for (std::size_t pos : reveal) claim(pos, "reveal");
    for (std::size_t pos : given.conditioned) claim(pos, "conditioned");
    if (reveal.empty()) return 0.0;

    const std::size_t ny = checked_power(k, reveal.size());
    const std::size_t nw = checked_power(k, given.conditioned.size());
    std::vector<double> pxyw(k * ny * nw, 0.0);
    double z = 0.0;
    for (std::size_t idx = 0; idx < joint.size(); ++idx) {
        bool consistent = true;
        for (std::size_t pos = 0; pos < n && consistent; ++pos) {
            if (given.observed[pos] && joint.digit(idx, pos) != given.observed[pos]->value) consistent = false;
        }
        if (!consistent) continue;
        std::size_t y = 0;
        for (std::size_t pos : reveal) y = y * k + joint.digit(idx, pos);
        std::size_t w = 0;
        for (std::size_t pos : given.conditioned) w = w * k + joint.digit(idx, pos);
        const double p = joint.probability(idx);
        pxyw[(joint.digit(idx, target) * ny + y) * nw + w] += p;
        z += p;
    }
    if (!(z > 0.0)) throw std::invalid_argument("observed context has zero probability");

    std::vector<double> pxw(k * nw, 0.0), pyw(ny * nw, 0.0), pw(nw, 0.0);
    for (std::size_t x = 0; x < k; ++x) {
        for (std::size_t y = 0; y < ny; ++y) {
            for (std::size_t w = 0; w < nw; ++w) {
                const double p = pxyw[(x * ny + y) * nw + w] / z;
                pxw[x * nw + w] += p;
                pyw[y * nw + w] += p;
                pw[w] += p;
            }
        }
    }
    double mi = 0.0;
    for (std::size_t x = 0; x < k; ++x) {
        for (std::size_t y = 0; y < ny; ++y) {
            for (std::size_t w = 0; w < nw; ++w) {
                const double p = pxyw[(x * ny + y) * nw + w] / z;
                if (p <= 0.0) continue;
                mi += p * std::log(p * pw[w] / (pxw[x * nw + w] * pyw[y * nw + w]));
            }
        }
    }
    return mi > 0.0 ? mi : 0.0;
}

ProbTable enumeration_marginals(const JointEnumeration& joint, const SequenceState& state) {
    const std::size_t n = joint.length();
    const std::size_t k = joint.vocab_size();
    if (state.length() != n) throw std::invalid_argument("state length differs from the enumeration length");
    const auto& masked = state.masked();
    std::vector<std::vector<double>> acc(masked.size(), std::vector<double>(k, 0.0));
    for (std::size_t idx = 0; idx < joint.size(); ++idx) {
        bool consistent = true;
        for (std::size_t pos = 0; pos < n && consistent; ++pos) {
            const auto& slot = state.tokens()[pos];
            if (slot && joint.digit(idx, pos) != slot->value) consistent = false;
        }
        if (!consistent) continue;
        for (std::size_t m = 0; m < masked.size(); ++m) acc[m][joint.digit(idx, masked[m])] += joint.probability(idx);
    }
    ProbTable table(k);
    for (std::size_t m = 0; m < masked.size(); ++m) {
        double z = 0.0;
        for (double v : acc[m]) z += v;
        if (!(z > 0.0)) throw std::invalid_argument("state has zero probability under the model");
        for (double& v : acc[m]) v /= z;
        table.add_row(masked[m], std::move(acc[m]));
    }
    return table;
}

// ---------------------------------------------------------------------------

namespace {

void check_reveal_target(const SequenceState& prev, const std::vector<std::size_t>& reveal, std::size_t target) {
    for (std::size_t pos : reveal) {
        if (!prev.is_masked(pos)) throw std::invalid_argument("reveal position " + std::to_string(pos) + " is not masked");
        if (pos == target) throw std::invalid_argument("target must not be revealed");
    }
    auto sorted = reveal;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("reveal set has duplicates");
    }
    if (!prev.is_masked(target)) throw std::invalid_argument("target " + std::to_string(target) + " is not masked");
}

struct ExpectedKl {
    double forward = 0.0;
    double reverse = 0.0;
};

// Walks every realisation of the revealed values, weighting each by its
// forward-backward predictive probability (chain rule over the reveal order).
void accumulate_expected_kl(const MarkovModel& model, const SequenceState& state, const std::vector<std::size_t>& reveal,
                            std::size_t depth, double weight, std::size_t target, std::span<const double> before,
                            ExpectedKl& out) {
    if (depth == reveal.size()) {
        const ProbTable now = exact_marginals(model, state);
        const auto after = now.row(target);
        out.forward += weight * kl_divergence(after, before);
        out.reverse += weight * kl_divergence(before, after);
        return;
    }
    const std::size_t pos = reveal[depth];
    const ProbTable probs = exact_marginals(model, state);
    const auto row = probs.row(pos);
    for (std::size_t v = 0; v < model.vocab_size(); ++v) {
        SequenceState next = state;
        next.commit(pos, TokenId{static_cast<std::uint32_t>(v)});
        accumulate_expected_kl(model, next, reveal, depth + 1, weight * row[v], target, before, out);
    }
}

}  // namespace

Lemma1Report check_lemma1(const JointEnumeration& joint, const SequenceState& state_prev,
                          const std::vector<std::size_t>& reveal, std::size_t target) {
    if (state_prev.length() != joint.length()) throw std::invalid_argument("state length differs from the enumeration");
    check_reveal_target(state_prev, reveal, target);
    Lemma1Report r;
    if (!reveal.empty()) {
        const ProbTable before_table = exact_marginals(joint.model(), state_prev);
        const auto before = before_table.row(target);
        ExpectedKl e;
        accumulate_expected_kl(joint.model(), state_prev, reveal, 0, 1.0, target, before, e);
        r.lhs = e.forward;
        r.lhs_reverse = e.reverse;
        r.rhs = conditional_mi(joint, target, reveal, Context{state_prev.tokens(), {}});
    }
    r.gap = std::abs(r.lhs - r.rhs);
    return r;
}

Theorem1Report check_theorem1(const JointEnumeration& joint, const SequenceState& state_prev,
                              const std::vector<std::size_t>& reveal, std::size_t target) {
    const Lemma1Report lemma = check_lemma1(joint, state_prev, reveal, target);
    std::vector<std::size_t> unknowns;
    std::vector<std::size_t> remaining;
    for (std::size_t pos : state_prev.masked()) {
        if (pos == target) continue;
        unknowns.push_back(pos);
        if (std::find(reveal.begin(), reveal.end(), pos) == reveal.end()) remaining.push_back(pos);
    }
    Theorem1Report r;
    r.mi_total = conditional_mi(joint, target, unknowns, Context{state_prev.tokens(), {}});
    r.expected_kl = lemma.lhs;
    r.residual = conditional_mi(joint, target, remaining, Context{state_prev.tokens(), reveal});
    r.slack = r.mi_total - r.expected_kl;
    r.chain_gap = std::abs(r.mi_total - (r.expected_kl + r.residual));
    r.expected_kl_reverse = lemma.lhs_reverse;
    r.reverse_exceeds = r.expected_kl_reverse > r.mi_total;
    return r;
}

// ---------------------------------------------------------------------------

std::vector<CorpusConfig> generate_corpus(std::size_t count, std::uint64_t seed) {
    std::vector<CorpusConfig> out;
    out.reserve(count);
    for (std::size_t id = 0; id < count; ++id) {
        const std::uint64_t s = derive_seed(seed, id);
        std::mt19937_64 rng(s);
        const std::size_t k = 2 + rng() % 3;      // 2..4
        const std::size_t length = 2 + rng() % 5;  // 2..6
        // Every tenth configuration uses independent positions.
        MarkovModel model = MarkovModel::random(k, rng);
        if (id % 10 == 9) model = MarkovModel::product(model.initial());

        // Observed values come from a draw of the chain itself.
        std::vector<std::size_t> draw(length);
        auto sample = [&](const std::vector<double>& p) {
            const double u = unit_interval(rng());
            double acc = 0.0;
            for (std::size_t v = 0; v < p.size(); ++v) {
                acc += p[v];
                if (u < acc) return v;
            }
            return p.size() - 1;
        };
        draw[0] = sample(model.initial());
        for (std::size_t i = 1; i < length; ++i) draw[i] = sample(model.transition()[draw[i - 1]]);

        std::vector<Slot> tokens(length);
        std::vector<std::size_t> masked;
        for (std::size_t i = 0; i < length; ++i) {
            if (unit_interval(rng()) < 0.65) {
                masked.push_back(i);
            } else {
                tokens[i] = TokenId{static_cast<std::uint32_t>(draw[i])};
            }
        }
        if (masked.empty()) {
            const std::size_t i = rng() % length;
            tokens[i].reset();
            masked.push_back(i);
        }
        const std::size_t target = masked[rng() % masked.size()];
        std::vector<std::size_t> reveal;
        for (std::size_t pos : masked) {
            if (pos != target && unit_interval(rng()) < 0.5) reveal.push_back(pos);
        }
        out.push_back(CorpusConfig{id, s, std::move(model), std::move(tokens), std::move(reveal), target});
    }
    return out;
}

CorpusResult check_config(const CorpusConfig& config) {
    const JointEnumeration joint = enumerate_joint_serial(config.model, config.tokens.size());
    const SequenceState prev(config.tokens);
    CorpusResult r{config, {}, {}, 0.0};
    r.lemma = check_lemma1(joint, prev, config.reveal, config.target);
    r.theorem = check_theorem1(joint, prev, config.reveal, config.target);
    const ProbTable dp = exact_marginals(config.model, prev);
    const ProbTable brute = enumeration_marginals(joint, prev);
    for (std::size_t i = 0; i < dp.size(); ++i) {
        const auto a = dp.row_at(i);
        const auto b = brute.row_at(i);
        for (std::size_t v = 0; v < a.size(); ++v) r.marginal_diff = std::max(r.marginal_diff, std::abs(a[v] - b[v]));
    }
    return r;
}

std::vector<CorpusResult> run_corpus_serial(const std::vector<CorpusConfig>& corpus) {
    std::vector<CorpusResult> out;
    out.reserve(corpus.size());
    for (const auto& c : corpus) out.push_back(check_config(c));
    return out;
}

std::vector<CorpusResult> run_corpus(const std::vector<CorpusConfig>& corpus) {
    std::vector<CorpusResult> out;
    out.reserve(corpus.size());
    for (const auto& c : corpus) out.push_back(CorpusResult{c, {}, {}, 0.0});
    const auto count = static_cast<std::int64_t>(corpus.size());
#pragma omp parallel for schedule(dynamic) num_threads(engine_threads())
    for (std::int64_t i = 0; i < count; ++i) {
        out[static_cast<std::size_t>(i)] = check_config(corpus[static_cast<std::size_t>(i)]);
    }
    return out;
}

CorpusSummary summarize(const std::vector<CorpusResult>& results, const CorpusTolerances& tol) {
    CorpusSummary s;
    s.configs = results.size();
    s.min_slack = results.empty() ? 0.0 : INFINITY;
    for (const auto& r : results) {
        s.max_gap = std::max(s.max_gap, r.lemma.gap);
        s.min_slack = std::min(s.min_slack, r.theorem.slack);
        s.max_chain_gap = std::max(s.max_chain_gap, r.theorem.chain_gap);
        s.max_marginal_diff = std::max(s.max_marginal_diff, r.marginal_diff);
        if (r.theorem.reverse_exceeds) ++s.reverse_exceed_count;
        if (!(r.lemma.gap <= tol.lemma_gap)) s.lemma_ok = false;
        if (!(r.theorem.slack >= tol.slack) || !(r.theorem.chain_gap <= tol.chain_gap)) s.theorem_ok = false;
        if (!(r.marginal_diff <= tol.marginal_diff)) s.marginals_ok = false;
    }
    return s;
}

std::string corpus_record_json(const CorpusResult& r) {
    using namespace json_text;
    const auto& c = r.config;
    std::string s = "{";
    append_key(s, "config");
    s += "{";
    append_key(s, "id");
    s += std::to_string(c.id);
    s += ',';
    append_key(s, "seed");
    s += std::to_string(c.seed);
    s += ',';
    append_key(s, "K");
    s += std::to_string(c.model.vocab_size());
    s += ',';
    append_key(s, "L");
    s += std::to_string(c.tokens.size());
    s += ',';
    append_key(s, "tokens");
    s += '[';
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        if (i) s += ',';
        s += c.tokens[i] ? std::to_string(c.tokens[i]->value) : "null";
    }
    s += "],";
    append_key(s, "reveal");
    append_ints(s, c.reveal);
    s += ',';
    append_key(s, "target");
    s += std::to_string(c.target);
    s += "},";
    const std::pair<const char*, double> fields[] = {
        {"lhs", r.lemma.lhs},
        {"rhs", r.lemma.rhs},
        {"gap", r.lemma.gap},
        {"slack", r.theorem.slack},
        {"mi_total", r.theorem.mi_total},
        {"expected_kl", r.theorem.expected_kl},
        {"residual", r.theorem.residual},
        {"chain_gap", r.theorem.chain_gap},
        {"expected_kl_reverse", r.theorem.expected_kl_reverse},
        {"marginal_diff", r.marginal_diff},
    };
    for (const auto& [key, value] : fields) {
        append_key(s, key);
        append_double(s, value);
        s += ',';
    }
    append_key(s, "reverse_exceeds");
    s += r.theorem.reverse_exceeds ? "true" : "false";
    s += '}';
    return s;
}

void write_corpus_report(std::ostream& out, const std::vector<CorpusResult>& results) {
    for (const auto& r : results) out << corpus_record_json(r) << '\n';
}

}  // namespace swd
