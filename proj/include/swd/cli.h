#pragma once

#include <iosfwd>

namespace swd {

/// Exit codes: 0 success, 1 check failed (verify gaps, replay violations),
/// 2 usage error, 3 runtime failure (I/O, parse, transport).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace swd
