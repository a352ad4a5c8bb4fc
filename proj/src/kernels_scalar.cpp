#include "cavsim/kernels.hpp"

namespace cavsim::kern {

namespace {

void matvec_scalar(int rows, int cols, const double* W, const double* x,
                   const double* b, double* y) {
    for (int i = 0; i < rows; ++i) {
        const double* row = W + static_cast<long>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc + (b ? b[i] : 0.0);
    }
}

void matvec_t_scalar(int rows, int cols, const double* W, const double* dy,
                     double* dx) {
    for (int j = 0; j < cols; ++j) dx[j] = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double* row = W + static_cast<long>(i) * cols;
        const double d = dy[i];
        for (int j = 0; j < cols; ++j) dx[j] += row[j] * d;
    }
}

void outer_acc_scalar(int rows, int cols, const double* dy, const double* x,
                      double* dW) {
    for (int i = 0; i < rows; ++i) {
        double* row = dW + static_cast<long>(i) * cols;
        const double d = dy[i];
        for (int j = 0; j < cols; ++j) row[j] += d * x[j];
    }
}

double dot_scalar(int n, const double* a, const double* b) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(int n, double alpha, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu_scalar(int n, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_scalar(int n, const double* act, const double* dy, double* dx) {
    for (int i = 0; i < n; ++i) dx[i] = act[i] > 0.0 ? dy[i] : 0.0;
}

const Kernels kScalar = {
    "scalar",    matvec_scalar, matvec_t_scalar, outer_acc_scalar,
    dot_scalar,  axpy_scalar,   relu_scalar,     relu_bwd_scalar,
};

}  // namespace

const Kernels& scalar() { return kScalar; }

}  // namespace cavsim::kern
