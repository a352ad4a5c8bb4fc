#include "cavsim/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cavsim::kern {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

namespace {

const Kernels* pick_auto() {
#ifdef CAVSIM_HAVE_AVX2
    if (cpu_has_avx2()) return &avx2();
#endif
    return &scalar();
}

const Kernels* resolve(const char* which) {
    if (std::strcmp(which, "auto") == 0) return pick_auto();
    if (std::strcmp(which, "scalar") == 0) return &scalar();
    if (std::strcmp(which, "avx2") == 0) {
#ifdef CAVSIM_HAVE_AVX2
        if (cpu_has_avx2()) return &avx2();
#endif
        throw std::runtime_error("avx2 kernels unavailable on this machine");
    }
    throw std::runtime_error(std::string("unknown kernel set: ") + which);
}

const Kernels* initial() {
    if (const char* env = std::getenv("CAVSIM_KERNELS")) return resolve(env);
    return pick_auto();
}

const Kernels*& slot() {
    static const Kernels* k = initial();
    return k;
}

}  // namespace

const Kernels& active() { return *slot(); }

void force(const char* which) { slot() = resolve(which); }

}  // namespace cavsim::kern
