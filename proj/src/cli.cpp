#include "swd/cli.h"

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json_text.h"
#include "swd/bench.h"
#include "swd/decoder.h"
#include "swd/protocol.h"
#include "swd/verify.h"

namespace swd {

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PolicyFlags {
    std::string score = "confidence";
    std::string select = "top1";
    std::string lambda = "0";
    std::string gamma = "0.1";
    std::string tau = "0.9";
    std::string k = "1";
    std::string block_size = "inf";
    std::string kl_direction = "reverse";
    std::string modulation;  // empty: chosen from the score metric
    std::string commit = "greedy";
    bool no_stability = false;
};

struct TaskFlags {
    std::string denoiser = "perturbed";
    std::string endpoint;
    std::size_t length = 32;
    std::size_t vocab = 4;
    std::uint64_t seed = 0;
    std::size_t trials = 1;
};

void add_policy_flags(CLI::App& cmd, PolicyFlags& f) {
    cmd.add_option("--score", f.score, "Base score: confidence|margin|neg-entropy")
        ->check(CLI::IsMember({"confidence", "margin", "neg-entropy"}));
    cmd.add_option("--select", f.select, "Selector: top1|topk|threshold|eb|random")
        ->check(CLI::IsMember({"top1", "topk", "threshold", "eb", "random"}));
    cmd.add_option("--lambda", f.lambda, "Stability penalty (comma list allowed in sweep)");
    cmd.add_option("--gamma", f.gamma, "EB uncertainty budget (comma list allowed in sweep)");
    cmd.add_option("--tau", f.tau, "Threshold (comma list allowed in sweep)");
    cmd.add_option("--k", f.k, "Tokens per step for topk (comma list allowed in sweep)");
    cmd.add_option("--block-size", f.block_size, "Semi-autoregressive block size or 'inf'");
    cmd.add_option("--kl-direction", f.kl_direction, "forward|reverse")->check(CLI::IsMember({"forward", "reverse"}));
    cmd.add_option("--modulation", f.modulation, "mul|add (default: mul, add for neg-entropy)")
        ->check(CLI::IsMember({"mul", "add"}));
    cmd.add_option("--commit", f.commit, "greedy|sample")->check(CLI::IsMember({"greedy", "sample"}));
    cmd.add_flag("--no-stability", f.no_stability, "Disable the instability signal entirely");
}

void add_task_flags(CLI::App& cmd, TaskFlags& f) {
    cmd.add_option("--denoiser", f.denoiser, "markov|perturbed|external")
        ->check(CLI::IsMember({"markov", "perturbed", "external"}));
    cmd.add_option("--endpoint", f.endpoint, "External denoiser: command line, or tcp://host:port");
    cmd.add_option("--length", f.length, "Sequence length L")->check(CLI::PositiveNumber);
    cmd.add_option("--vocab", f.vocab, "Vocabulary size K")->check(CLI::Range(2, 1 << 20));
    cmd.add_option("--seed", f.seed, "Base seed");
    cmd.add_option("--trials", f.trials, "Trials per configuration")->check(CLI::PositiveNumber);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw UsageError("empty element in list '" + s + "'");
        out.push_back(item);
    }
    if (out.empty()) throw UsageError("empty value");
    return out;
}

double parse_real(const std::string& s, const char* flag) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size()) throw UsageError(std::string(flag) + ": not a number: '" + s + "'");
    return v;
}

std::vector<double> parse_reals(const std::string& s, const char* flag) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(parse_real(item, flag));
    return out;
}

std::optional<std::size_t> parse_block(const std::string& s) {
    if (s == "inf" || s == "none" || s == "0") return std::nullopt;
    const double v = parse_real(s, "--block-size");
    if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw UsageError("--block-size must be a positive integer or 'inf'");
    }
    return static_cast<std::size_t>(v);
}

DecodePolicy build_policy(const PolicyFlags& f, std::uint64_t seed) {
    DecodePolicy p;
    p.score_metric = parse_score_metric(f.score);
    p.selector = parse_selector(f.select);
    p.kl_direction = parse_kl_direction(f.kl_direction);
    p.modulation_mode = f.modulation.empty() ? default_modulation_for(p.score_metric) : parse_modulation_mode(f.modulation);
    p.commit_mode = parse_commit_mode(f.commit);
    p.stability_enabled = !f.no_stability;
    p.seed = seed;
    auto single = [](const std::string& s, const char* flag) {
        const auto v = parse_reals(s, flag);
        return v.front();
    };
    p.lambda = single(f.lambda, "--lambda");
    p.gamma = single(f.gamma, "--gamma");
    p.tau = single(f.tau, "--tau");
    const double k = single(f.k, "--k");
    if (k < 1 || k != static_cast<double>(static_cast<std::size_t>(k))) throw UsageError("--k must be a positive integer");
    p.k = static_cast<std::size_t>(k);
    p.block_size = parse_block(split_list(f.block_size).front());
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return p;
}

/// The sweep axis is the one flag holding more than one value (lambda when none does).
SweepSpec build_sweep(const PolicyFlags& f, std::uint64_t seed) {
    struct Candidate {
        SweepAxis axis;
        const std::string* raw;
    };
    const Candidate candidates[] = {{SweepAxis::lambda, &f.lambda},
                                    {SweepAxis::gamma, &f.gamma},
                                    {SweepAxis::tau, &f.tau},
                                    {SweepAxis::k, &f.k},
                                    {SweepAxis::block, &f.block_size}};
    std::optional<Candidate> chosen;
    for (const auto& c : candidates) {
        if (split_list(*c.raw).size() > 1) {
            if (chosen) throw UsageError("sweep accepts a value list on one flag only");
            chosen = c;
        }
    }
    SweepSpec spec;
    spec.base = build_policy(f, seed);
    spec.axis = chosen ? chosen->axis : SweepAxis::lambda;
    const std::string& raw = chosen ? *chosen->raw : f.lambda;
    for (const auto& item : split_list(raw)) {
        if (spec.axis == SweepAxis::block) {
            const auto b = parse_block(item);
            if (!b) throw UsageError("block sweep values must be integers");
            spec.values.push_back(static_cast<double>(*b));
        } else {
            spec.values.push_back(parse_real(item, "sweep value"));
        }
    }
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return spec;
}

std::unique_ptr<Denoiser> build_denoiser(const TaskFlags& f, const SyntheticTask& task) {
    if (f.denoiser == "external") {
        if (f.endpoint.empty()) throw UsageError("--denoiser external requires --endpoint");
        return std::make_unique<ExternalDenoiser>(ProtocolEndpoint::open(f.endpoint), f.vocab);
    }
    if (!f.endpoint.empty()) throw UsageError("--endpoint is only valid with --denoiser external");
    if (f.denoiser == "perturbed") {
        PerturbationProfile prof = *task.profile;
        prof.seed = derive_seed(task.seed, 0);
        return std::make_unique<PerturbedDenoiser>(task.model, prof);
    }
    return std::make_unique<ExactMarkovDenoiser>(task.model);
}

SyntheticTask build_task(const TaskFlags& f) {
    return default_task(f.vocab, f.length, f.denoiser == "perturbed", f.trials, f.seed);
}

int run_decode(const PolicyFlags& pf, const TaskFlags& tf, const std::string& trace_out, std::ostream& out,
               std::ostream& err) {
    for (const auto* raw : {&pf.lambda, &pf.gamma, &pf.tau, &pf.k, &pf.block_size}) {
        if (split_list(*raw).size() > 1) throw UsageError("decode takes single values; use sweep for lists");
    }
    const SyntheticTask task = build_task(tf);
    // Decode uses trial 0 of the task, matching run_task's seeding.
    const DecodePolicy policy = build_policy(pf, derive_seed(tf.seed, 0));
    auto denoiser = build_denoiser(tf, task);
    DecodeTrace trace;
    int code = 0;
    try {
        trace = decode(*denoiser, policy, new_fully_masked(tf.length)).trace;
    } catch (const DecodeAborted& e) {
        err << "decode aborted: " << e.what() << '\n';
        trace = e.partial_trace();
        code = 3;
    }
    if (trace_out.empty() || trace_out == "-") {
        write_trace(out, trace);
    } else {
        write_trace_file(trace_out, trace);
    }
    if (trace.complete) {
        err << "nfe=" << trace.nfe_total << " loglik=" << json_text::format_double(task.model.log_likelihood(trace.final_tokens))
            << '\n';
    }
    return code;
}

int run_sweep_cmd(const PolicyFlags& pf, const TaskFlags& tf, const std::string& csv_out, std::ostream& out,
                  std::ostream& err) {
    const SyntheticTask task = build_task(tf);
    const SweepSpec spec = build_sweep(pf, tf.seed);
    RunOptions opts;
    std::unique_ptr<Denoiser> external;
    if (tf.denoiser == "external") {
        external = build_denoiser(tf, task);
        opts.shared_denoiser = external.get();
    } else if (!tf.endpoint.empty()) {
        throw UsageError("--endpoint is only valid with --denoiser external");
    }
    const std::string csv = sweep_csv(run_sweep(spec, task, opts));
    if (csv_out.empty() || csv_out == "-") {
        out << csv;
    } else {
        write_csv_file(csv_out, csv);
        err << "wrote " << spec.values.size() << " rows to " << csv_out << '\n';
    }
    return 0;
}

int run_verify(std::size_t count, std::uint64_t seed, const std::string& report_out, std::ostream& out,
               std::ostream& err) {
    const auto corpus = generate_corpus(count, seed);
    const auto results = run_corpus(corpus);
    if (report_out.empty() || report_out == "-") {
        write_corpus_report(out, results);
    } else {
        std::ofstream f(report_out);
        if (!f) throw FileError("cannot open '" + report_out + "' for writing");
        write_corpus_report(f, results);
    }
    const CorpusSummary s = summarize(results);
    err << "configs=" << s.configs << " max_gap=" << json_text::format_double(s.max_gap)
        << " min_slack=" << json_text::format_double(s.min_slack)
        << " max_chain_gap=" << json_text::format_double(s.max_chain_gap)
        << " max_marginal_diff=" << json_text::format_double(s.max_marginal_diff)
        << " reverse_exceeds=" << s.reverse_exceed_count << '\n';
    err << (s.ok() ? "verify: all checks within tolerance\n" : "verify: FAILED\n");
    return s.ok() ? 0 : 1;
}

int run_replay(const std::string& path, std::ostream& out) {
    const DecodeTrace trace = read_trace_file(path);
    const ReplayReport report = replay_trace(trace, trace.policy);
    for (const auto& v : report.violations) {
        out << "violation step=" << v.step;
        if (v.position) out << " position=" << *v.position;
        out << " kind=" << v.kind << ": " << v.detail << '\n';
    }
    out << "replayed " << report.steps_checked << " steps, " << report.violations.size() << " violations\n";
    return report.ok() ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stability-weighted decoding engine for masked diffusion decoders"};
    app.require_subcommand(1);

    PolicyFlags pf;
    TaskFlags tf;
    std::string trace_out;
    std::string csv_out;

    auto* decode_cmd = app.add_subcommand("decode", "Decode one fully masked sequence and emit its trace");
    add_policy_flags(*decode_cmd, pf);
    add_task_flags(*decode_cmd, tf);
    decode_cmd->add_option("--trace-out", trace_out, "Trace file (default stdout)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one policy parameter and emit CSV");
    add_policy_flags(*sweep_cmd, pf);
    add_task_flags(*sweep_cmd, tf);
    sweep_cmd->add_option("--csv-out", csv_out, "CSV file (default stdout)");

    std::size_t corpus_size = 256;
    std::uint64_t verify_seed = 0;
    std::string report_out;
    auto* verify_cmd = app.add_subcommand("verify", "Check the instability/mutual-information identities on a random corpus");
    verify_cmd->add_option("--trials", corpus_size, "Corpus size")->check(CLI::PositiveNumber);
    verify_cmd->add_option("--seed", verify_seed, "Corpus seed");
    verify_cmd->add_option("--report-out", report_out, "JSONL report file (default stdout)");

    std::string replay_path;
    auto* replay_cmd = app.add_subcommand("replay", "Audit a trace file");
    replay_cmd->add_option("trace", replay_path, "Trace file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*decode_cmd) return run_decode(pf, tf, trace_out, out, err);
        if (*sweep_cmd) return run_sweep_cmd(pf, tf, csv_out, out, err);
        if (*verify_cmd) return run_verify(corpus_size, verify_seed, report_out, out, err);
        if (*replay_cmd) return run_replay(replay_path, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}

}  // namespace swd
