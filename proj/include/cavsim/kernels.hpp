#pragma once

// Dense double-precision kernels used by the MLP forward/backward passes.
// A scalar reference implementation always exists; an AVX2 variant is
// selected at runtime when the CPU supports it. Both variants are
// equivalence-tested against each other (tests/test_kernels.cpp).

namespace cavsim::kern {

struct Kernels {
    const char* name;

    // y = W x + b, W row-major (rows x cols), b may be null (treated as 0)
    void (*matvec)(int rows, int cols, const double* W, const double* x,
                   const double* b, double* y);
    // dx = W^T dy (overwrites dx)
    void (*matvec_t)(int rows, int cols, const double* W, const double* dy,
                     double* dx);
    // dW += dy x^T
    void (*outer_acc)(int rows, int cols, const double* dy, const double* x,
                      double* dW);
    double (*dot)(int n, const double* a, const double* b);
    // y += alpha * x
    void (*axpy)(int n, double alpha, const double* x, double* y);
    // y = max(x, 0)
    void (*relu)(int n, const double* x, double* y);
    // dx = dy where act > 0, else 0
    void (*relu_bwd)(int n, const double* act, const double* dy, double* dx);
};

const Kernels& scalar();
#ifdef CAVSIM_HAVE_AVX2
const Kernels& avx2();
#endif

// Active table. Chosen once on first use: AVX2 when the CPU has it,
// scalar otherwise. CAVSIM_KERNELS=scalar|avx2|auto overrides.
const Kernels& active();

// Test hook; accepts "scalar", "avx2" or "auto". Throws if unavailable.
void force(const char* which);

bool cpu_has_avx2();

}  // namespace cavsim::kern
