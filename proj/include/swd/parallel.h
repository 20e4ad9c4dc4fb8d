#pragma once

namespace swd {

/// Thread count for the OpenMP kernels: the OpenMP default, capped by the
/// SWD_ENGINE_THREADS environment variable when it holds a positive integer.
int engine_threads();

}  // namespace swd
