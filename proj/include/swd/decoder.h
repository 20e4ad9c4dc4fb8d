#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "swd/core.h"
#include "swd/denoiser.h"

namespace swd {

struct DecodeOutcome {
    std::vector<TokenId> tokens;
    DecodeTrace trace;
    std::int64_t nfe = 0;
};

/// Thrown when the denoiser fails mid-run; carries the steps completed so far.
class DecodeAborted : public TransportError {
public:
    DecodeAborted(const std::string& what, DecodeTrace partial)
        : TransportError(what), partial_(std::move(partial)) {}
    const DecodeTrace& partial_trace() const { return partial_; }

private:
    DecodeTrace partial_;
};

/// Seeds for the per-step random draws; shared with replay so sampled runs
/// can be re-derived from the trace.
std::uint64_t selection_seed(std::uint64_t policy_seed, std::size_t step_index);
std::uint64_t commit_seed(std::uint64_t policy_seed, std::size_t step_index, std::size_t position);

/// Predict -> score -> modulate -> block -> select -> commit -> cache, until
/// no position is masked. Requires initial.step() >= |masked|.
DecodeOutcome decode(Denoiser& denoiser, const DecodePolicy& policy, const SequenceState& initial);

// ---------------------------------------------------------------------------
// Trace files: line-delimited JSON, a header line, one line per step, and a
// footer line once the run completes. Doubles use 17 significant digits.

std::string trace_header_json(const DecodeTrace& trace);
std::string step_record_json(const StepRecord& step);
std::string trace_footer_json(const DecodeTrace& trace);
void write_trace(std::ostream& out, const DecodeTrace& trace);
void write_trace_file(const std::string& path, const DecodeTrace& trace);

/// Throws ParseError on malformed input.
DecodeTrace read_trace(std::istream& in);
DecodeTrace read_trace_file(const std::string& path);

std::string policy_json(const DecodePolicy& policy);
DecodePolicy parse_policy_json(const std::string& text);

// ---------------------------------------------------------------------------

struct Violation {
    std::size_t step = 0;
    std::optional<std::size_t> position;
    std::string kind;
    std::string detail;
};

struct ReplayReport {
    std::size_t steps_checked = 0;
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

/// Recomputes every per-step quantity from the recorded probabilities and
/// reports each disagreement. Numeric comparisons use kReplayTolerance.
inline constexpr double kReplayTolerance = 1e-12;
ReplayReport replay_trace(const DecodeTrace& trace, const DecodePolicy& policy);

}  // namespace swd
