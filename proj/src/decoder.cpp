#include "swd/decoder.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "json_text.h"
#include "swd/scoring.h"
#include "swd/selection.h"

namespace swd {

using nlohmann::json;

std::uint64_t selection_seed(std::uint64_t policy_seed, std::size_t step_index) {
    return mix_seed(policy_seed ^ mix_seed(0x51ed27d5ULL + step_index));
}

std::uint64_t commit_seed(std::uint64_t policy_seed, std::size_t step_index, std::size_t position) {
    return mix_seed(selection_seed(policy_seed, step_index) ^ mix_seed(0xc0ffee00ULL + position));
}

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

TokenId sample_token(std::span<const double> row, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double u = unit_interval(rng());
    double acc = 0.0;
    for (std::size_t v = 0; v < row.size(); ++v) {
        acc += row[v];
        if (u < acc) return TokenId{static_cast<std::uint32_t>(v)};
    }
    return TokenId{static_cast<std::uint32_t>(argmax(row))};
}

SelectionResult run_selector(const DecodePolicy& policy, const ScoreVector& eligible, const ProbTable& probs,
                             const SequenceState& state, const MaskSchedule* schedule, std::size_t step_index) {
    switch (policy.selector) {
        case Selector::top1: return select_topk(eligible, 1);
        case Selector::topk: return select_topk(eligible, policy.k);
        case Selector::threshold: return select_threshold(eligible, policy.tau);
        case Selector::eb_sampler: return select_eb(eligible, probs, policy.gamma);
        case Selector::random_schedule:
            return select_random_schedule(state, *schedule, selection_seed(policy.seed, step_index),
                                          eligible.positions);
    }
    throw InternalError("unhandled selector");
}

}  // namespace

DecodeOutcome decode(Denoiser& denoiser, const DecodePolicy& policy, const SequenceState& initial) {
    policy.validate();
    if (initial.masked().empty()) throw std::invalid_argument("initial state has no masked positions");
    if (initial.step() < static_cast<std::int64_t>(initial.masked().size())) {
        throw std::invalid_argument("initial step counter is smaller than the number of masked positions");
    }
    const std::size_t k = denoiser.vocab_size();

    DecodeTrace trace;
    trace.policy = policy;
    trace.length = initial.length();
    trace.vocab_size = k;
    trace.initial = initial.tokens();

    std::optional<MaskSchedule> schedule;
    if (policy.selector == Selector::random_schedule) {
        schedule = MaskSchedule::linear(static_cast<std::size_t>(initial.step()));
    }

    SequenceState state = initial;
    std::optional<HistoryCache> cache;
    if (policy.stability_enabled) cache.emplace(state.masked(), k);

    std::int64_t nfe = 0;
    while (!state.fully_decoded()) {
        const std::size_t index = trace.steps.size();
        ProbTable probs(k);
        try {
            probs = denoiser.predict(state);
        } catch (const TransportError& e) {
            trace.nfe_total = nfe;
            throw DecodeAborted(e.what(), std::move(trace));
        }
        ++nfe;
        if (probs.vocab_size() != k || probs.positions() != state.masked()) {
            throw InternalError("denoiser returned rows that do not match the masked set");
        }

        const ScoreVector base = score(probs, policy.score_metric);
        ScoreVector scores = base;
        InstabilityMap instability;
        if (cache) {
            instability = temporal_instability(probs, *cache, policy.kl_direction);
            scores = swd_modulate(base, instability, policy.lambda, policy.modulation_mode);
        }
        const ScoreVector eligible = apply_block_constraint(scores, state, policy.block_size);
        const SelectionResult selection =
            run_selector(policy, eligible, probs, state, schedule ? &*schedule : nullptr, index);

        StepRecord rec;
        rec.index = index;
        rec.t = state.step();
        rec.masked = state.masked();
        for (std::size_t i = 0; i < probs.size(); ++i) rec.probs.push_back(to_vec(probs.row_at(i)));
        rec.base_scores = base.values;
        rec.kl = instability.values;
        rec.scores = scores.values;
        rec.eligible = eligible.positions;
        rec.selected = selection.positions;
        rec.reason = to_string(selection.reason);

        for (std::size_t pos : selection.positions) {
            const auto row = probs.row(pos);
            const TokenId tok = policy.commit_mode == CommitMode::greedy
                                    ? TokenId{static_cast<std::uint32_t>(argmax(row))}
                                    : sample_token(row, commit_seed(policy.seed, index, pos));
            rec.committed.push_back(tok);
            rec.commit_probs.push_back(row[tok.value]);
            rec.joint_prob *= row[tok.value];
            state.commit(pos, tok);
        }
        state.advance_step();
#ifdef SWD_CHECK_INVARIANTS
        state.check_invariants();
#endif
        if (cache) cache->refresh(probs, state.masked());
        rec.nfe_so_far = nfe;
        trace.steps.push_back(std::move(rec));
    }

    trace.final_tokens = state.final_tokens();
    trace.nfe_total = nfe;
    trace.complete = true;

    DecodeOutcome out;
    out.tokens = trace.final_tokens;
    out.nfe = nfe;
    out.trace = std::move(trace);
    return out;
}

// ---------------------------------------------------------------------------
// Serialisation

std::string policy_json(const DecodePolicy& p) {
    using namespace json_text;
    std::string s = "{";
    append_key(s, "score");
    append_string(s, to_string(p.score_metric));
    s += ',';
    append_key(s, "select");
    append_string(s, to_string(p.selector));
    s += ',';
    append_key(s, "lambda");
    append_double(s, p.lambda);
    s += ',';
    append_key(s, "gamma");
    append_double(s, p.gamma);
    s += ',';
    append_key(s, "tau");
    append_double(s, p.tau);
    s += ',';
    append_key(s, "k");
    s += std::to_string(p.k);
    s += ',';
    append_key(s, "block_size");
    s += p.block_size ? std::to_string(*p.block_size) : "null";
    s += ',';
    append_key(s, "kl_direction");
    append_string(s, to_string(p.kl_direction));
    s += ',';
    append_key(s, "modulation");
    append_string(s, to_string(p.modulation_mode));
    s += ',';
    append_key(s, "commit");
    append_string(s, to_string(p.commit_mode));
    s += ',';
    append_key(s, "seed");
    s += std::to_string(p.seed);
    s += ',';
    append_key(s, "stability");
    s += p.stability_enabled ? "true" : "false";
    s += '}';
    return s;
}

namespace {

DecodePolicy policy_from(const json& j) {
    DecodePolicy p;
    p.score_metric = parse_score_metric(j.at("score").get<std::string>());
    p.selector = parse_selector(j.at("select").get<std::string>());
    p.lambda = j.at("lambda").get<double>();
    p.gamma = j.at("gamma").get<double>();
    p.tau = j.at("tau").get<double>();
    p.k = j.at("k").get<std::size_t>();
    if (!j.at("block_size").is_null()) p.block_size = j.at("block_size").get<std::size_t>();
    p.kl_direction = parse_kl_direction(j.at("kl_direction").get<std::string>());
    p.modulation_mode = parse_modulation_mode(j.at("modulation").get<std::string>());
    p.commit_mode = parse_commit_mode(j.at("commit").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.stability_enabled = j.at("stability").get<bool>();
    return p;
}

std::vector<std::uint32_t> token_values(const std::vector<TokenId>& toks) {
    std::vector<std::uint32_t> v;
    v.reserve(toks.size());
    for (const auto& t : toks) v.push_back(t.value);
    return v;
}

std::vector<TokenId> tokens_from(const json& j) {
    std::vector<TokenId> out;
    for (const auto& v : j) out.push_back(TokenId{v.get<std::uint32_t>()});
    return out;
}

}  // namespace

DecodePolicy parse_policy_json(const std::string& text) {
    try {
        return policy_from(json::parse(text));
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed policy: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError(std::string("malformed policy: ") + e.what());
    }
}

std::string trace_header_json(const DecodeTrace& trace) {
    using namespace json_text;
    std::string s = "{\"type\":\"header\",";
    append_key(s, "policy");
    s += policy_json(trace.policy);
    s += ',';
    append_key(s, "L");
    s += std::to_string(trace.length);
    s += ',';
    append_key(s, "K");
    s += std::to_string(trace.vocab_size);
    s += ',';
    append_key(s, "initial");
    s += '[';
    for (std::size_t i = 0; i < trace.initial.size(); ++i) {
        if (i) s += ',';
        s += trace.initial[i] ? std::to_string(trace.initial[i]->value) : "null";
    }
    s += "]}";
    return s;
}

std::string step_record_json(const StepRecord& r) {
    using namespace json_text;
    std::string s = "{\"type\":\"step\",";
    append_key(s, "index");
    s += std::to_string(r.index);
    s += ',';
    append_key(s, "t");
    s += std::to_string(r.t);
    s += ',';
    append_key(s, "masked");
    append_ints(s, r.masked);
    s += ',';
    append_key(s, "probs");
    s += '[';
    for (std::size_t i = 0; i < r.probs.size(); ++i) {
        if (i) s += ',';
        append_doubles(s, r.probs[i]);
    }
    s += "],";
    append_key(s, "base");
    append_doubles(s, r.base_scores);
    s += ',';
    append_key(s, "kl");
    append_doubles(s, r.kl);
    s += ',';
    append_key(s, "scores");
    append_doubles(s, r.scores);
    s += ',';
    append_key(s, "eligible");
    append_ints(s, r.eligible);
    s += ',';
    append_key(s, "selected");
    append_ints(s, r.selected);
    s += ',';
    append_key(s, "reason");
    append_string(s, r.reason);
    s += ',';
    append_key(s, "committed");
    append_ints(s, token_values(r.committed));
    s += ',';
    append_key(s, "commit_probs");
    append_doubles(s, r.commit_probs);
    s += ',';
    append_key(s, "joint_prob");
    append_double(s, r.joint_prob);
    s += ',';
    append_key(s, "nfe");
    s += std::to_string(r.nfe_so_far);
    s += '}';
    return s;
}

std::string trace_footer_json(const DecodeTrace& trace) {
    using namespace json_text;
    std::string s = "{\"type\":\"footer\",";
    append_key(s, "final_tokens");
    append_ints(s, token_values(trace.final_tokens));
    s += ',';
    append_key(s, "nfe_total");
    s += std::to_string(trace.nfe_total);
    s += '}';
    return s;
}

void write_trace(std::ostream& out, const DecodeTrace& trace) {
    out << trace_header_json(trace) << '\n';
    for (const auto& step : trace.steps) out << step_record_json(step) << '\n';
    if (trace.complete) out << trace_footer_json(trace) << '\n';
}

void write_trace_file(const std::string& path, const DecodeTrace& trace) {
    std::ofstream f(path);
    if (!f) throw FileError("cannot open trace file '" + path + "' for writing");
    write_trace(f, trace);
    if (!f) throw FileError("failed writing trace file '" + path + "'");
}

DecodeTrace read_trace(std::istream& in) {
    DecodeTrace trace;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    try {
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const json j = json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                if (have_header) throw ParseError("duplicate header");
                trace.policy = policy_from(j.at("policy"));
                trace.length = j.at("L").get<std::size_t>();
                trace.vocab_size = j.at("K").get<std::size_t>();
                for (const auto& v : j.at("initial")) {
                    trace.initial.push_back(v.is_null() ? Slot{} : Slot{TokenId{v.get<std::uint32_t>()}});
                }
                have_header = true;
            } else if (type == "step") {
                if (!have_header) throw ParseError("step record before header");
                if (trace.complete) throw ParseError("step record after footer");
                StepRecord r;
                r.index = j.at("index").get<std::size_t>();
                r.t = j.at("t").get<std::int64_t>();
                r.masked = j.at("masked").get<std::vector<std::size_t>>();
                r.probs = j.at("probs").get<std::vector<std::vector<double>>>();
                r.base_scores = j.at("base").get<std::vector<double>>();
                r.kl = j.at("kl").get<std::vector<double>>();
                r.scores = j.at("scores").get<std::vector<double>>();
                r.eligible = j.at("eligible").get<std::vector<std::size_t>>();
                r.selected = j.at("selected").get<std::vector<std::size_t>>();
                r.reason = j.at("reason").get<std::string>();
                r.committed = tokens_from(j.at("committed"));
                r.commit_probs = j.at("commit_probs").get<std::vector<double>>();
                r.joint_prob = j.at("joint_prob").get<double>();
                r.nfe_so_far = j.at("nfe").get<std::int64_t>();
                if (r.probs.size() != r.masked.size() || r.base_scores.size() != r.masked.size() ||
                    r.scores.size() != r.masked.size() || (!r.kl.empty() && r.kl.size() != r.masked.size()) ||
                    r.committed.size() != r.selected.size() || r.commit_probs.size() != r.selected.size()) {
                    throw ParseError("step record arrays have inconsistent lengths");
                }
                trace.steps.push_back(std::move(r));
            } else if (type == "footer") {
                if (!have_header) throw ParseError("footer before header");
                trace.final_tokens = tokens_from(j.at("final_tokens"));
                trace.nfe_total = j.at("nfe_total").get<std::int64_t>();
                trace.complete = true;
            } else {
                throw ParseError("unknown record type '" + type + "'");
            }
        }
    } catch (const ParseError& e) {
        throw ParseError("trace line " + std::to_string(lineno) + ": " + e.what());
    } catch (const json::exception& e) {
        throw ParseError("trace line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ParseError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) throw ParseError("trace has no header line");
    if (trace.initial.size() != trace.length) throw ParseError("header initial tokens disagree with L");
    if (!trace.complete) trace.nfe_total = static_cast<std::int64_t>(trace.steps.size());
    return trace;
}

DecodeTrace read_trace_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FileError("cannot open trace file '" + path + "'");
    return read_trace(f);
}

// ---------------------------------------------------------------------------
// Replay

namespace {

class Auditor {
public:
    explicit Auditor(ReplayReport& report) : report_(report) {}

    void flag(std::size_t step, std::optional<std::size_t> pos, std::string kind, std::string detail) {
        report_.violations.push_back({step, pos, std::move(kind), std::move(detail)});
    }

    void compare(std::size_t step, std::size_t pos, const char* kind, double recorded, double expected) {
        if (!(std::abs(recorded - expected) <= kReplayTolerance)) {
            flag(step, pos, kind,
                 "recorded " + json_text::format_double(recorded) + ", recomputed " + json_text::format_double(expected));
        }
    }

private:
    ReplayReport& report_;
};

}  // namespace

ReplayReport replay_trace(const DecodeTrace& trace, const DecodePolicy& policy) {
    ReplayReport report;
    Auditor audit(report);
    const std::size_t k = trace.vocab_size;
    if (k == 0 || trace.initial.size() != trace.length) throw ParseError("trace header is inconsistent");

    SequenceState state(trace.initial,
                        static_cast<std::int64_t>(trace.steps.empty() ? trace.length : trace.steps.front().t));
    std::optional<MaskSchedule> schedule;
    if (policy.selector == Selector::random_schedule) {
        schedule = MaskSchedule::linear(static_cast<std::size_t>(std::max<std::int64_t>(1, state.step())));
    }
    std::optional<HistoryCache> cache;
    if (policy.stability_enabled) cache.emplace(state.masked(), k);

    for (const StepRecord& rec : trace.steps) {
        const std::size_t si = rec.index;
        ++report.steps_checked;
        if (rec.masked != state.masked()) {
            audit.flag(si, std::nullopt, "masked_set", "recorded masked set differs from the replayed state");
            break;
        }
        if (rec.t != state.step()) audit.flag(si, std::nullopt, "step_counter", "t does not decrease by one per call");
        if (rec.nfe_so_far != static_cast<std::int64_t>(si + 1)) {
            audit.flag(si, std::nullopt, "nfe", "nfe_so_far != step index + 1");
        }

        if (rec.probs.size() != rec.masked.size() || rec.base_scores.size() != rec.masked.size() ||
            rec.scores.size() != rec.masked.size() || rec.committed.size() != rec.selected.size() ||
            rec.commit_probs.size() != rec.selected.size()) {
            audit.flag(si, std::nullopt, "shape", "per-position arrays are not aligned");
            break;
        }
        ProbTable probs(k);
        try {
            for (std::size_t i = 0; i < rec.masked.size(); ++i) probs.add_row_verbatim(rec.masked[i], rec.probs[i]);
        } catch (const std::invalid_argument& e) {
            audit.flag(si, std::nullopt, "probs", e.what());
            break;
        }

        const ScoreVector base = score(probs, policy.score_metric);
        for (std::size_t i = 0; i < base.size(); ++i) {
            audit.compare(si, base.positions[i], "base_score", rec.base_scores[i], base.values[i]);
        }
        ScoreVector scores = base;
        if (cache) {
            const InstabilityMap d = temporal_instability(probs, *cache, policy.kl_direction);
            if (rec.kl.size() != d.values.size()) {
                audit.flag(si, std::nullopt, "kl", "instability values missing from trace");
            } else {
                for (std::size_t i = 0; i < d.values.size(); ++i) {
                    audit.compare(si, d.positions[i], "kl", rec.kl[i], d.values[i]);
                }
            }
            scores = swd_modulate(base, d, policy.lambda, policy.modulation_mode);
        }
        for (std::size_t i = 0; i < scores.size(); ++i) {
            audit.compare(si, scores.positions[i], "score", rec.scores[i], scores.values[i]);
        }

        const ScoreVector eligible = apply_block_constraint(scores, state, policy.block_size);
        if (rec.eligible != eligible.positions) {
            audit.flag(si, std::nullopt, "block", "eligible set differs from the block constraint");
        }
        const SelectionResult expected =
            run_selector(policy, eligible, probs, state, schedule ? &*schedule : nullptr, si);
        if (rec.selected != expected.positions) {
            audit.flag(si, std::nullopt, "selection", "selected set differs from the recomputed selection");
        }
        for (std::size_t pos : rec.selected) {
            if (!std::binary_search(eligible.positions.begin(), eligible.positions.end(), pos)) {
                audit.flag(si, pos, "selection", "selected position outside the eligible set");
            }
        }
        if (policy.selector == Selector::eb_sampler) {
            std::vector<double> h;
            for (std::size_t pos : rec.selected) {
                if (probs.contains(pos)) h.push_back(entropy(probs.row(pos)));
            }
            const double usage = eb_budget_usage(h);
            if (usage > policy.gamma + kReplayTolerance) {
                audit.flag(si, std::nullopt, "eb_budget",
                           "sum(H) - max(H) = " + json_text::format_double(usage) + " exceeds gamma");
            }
        }

        double joint = 1.0;
        bool commit_ok = true;
        for (std::size_t j = 0; j < rec.selected.size(); ++j) {
            const std::size_t pos = rec.selected[j];
            const TokenId tok = rec.committed[j];
            if (!probs.contains(pos) || tok.value >= k) {
                audit.flag(si, pos, "commit", "committed position or token out of range");
                commit_ok = false;
                continue;
            }
            const auto row = probs.row(pos);
            const TokenId want = policy.commit_mode == CommitMode::greedy
                                     ? TokenId{static_cast<std::uint32_t>(argmax(row))}
                                     : sample_token(row, commit_seed(policy.seed, si, pos));
            if (tok != want) audit.flag(si, pos, "commit", "committed token differs from the commit rule");
            audit.compare(si, pos, "commit_prob", rec.commit_probs[j], row[tok.value]);
            joint *= rec.commit_probs[j];
        }
        if (!(std::abs(joint - rec.joint_prob) <= kReplayTolerance * std::max(1.0, std::abs(joint)))) {
            audit.flag(si, std::nullopt, "joint_prob", "joint probability != product of committed marginals");
        }
        if (!commit_ok) break;

        try {
            for (std::size_t j = 0; j < rec.selected.size(); ++j) state.commit(rec.selected[j], rec.committed[j]);
            state.advance_step();
        } catch (const std::exception& e) {
            audit.flag(si, std::nullopt, "commit", e.what());
            break;
        }
        if (cache) cache->refresh(probs, state.masked());
    }

    if (trace.complete) {
        if (!state.fully_decoded()) {
            audit.flag(trace.steps.size(), std::nullopt, "coverage", "masked positions remain after the last step");
        } else if (state.final_tokens() != trace.final_tokens) {
            audit.flag(trace.steps.size(), std::nullopt, "final_tokens", "footer tokens differ from replayed commits");
        }
        if (trace.nfe_total != static_cast<std::int64_t>(trace.steps.size())) {
            audit.flag(trace.steps.size(), std::nullopt, "nfe", "nfe_total != number of steps");
        }
    }
    return report;
}

}  // namespace swd
