#include "swd/parallel.h"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <string>

namespace swd {

int engine_threads() {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("SWD_ENGINE_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap > 0) n = std::min(n, cap);
        } catch (const std::exception&) {
            // unparseable: keep the OpenMP default
        }
    }
    return std::max(1, n);
}

}  // namespace swd
