#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

// ReLU MLP over a flat parameter vector, with hand-rolled backprop on top
// of the dispatched kernels. Small nets, full-precision doubles: the
// gradient tests compare against central finite differences at 1e-4
// relative error, which float32 could not meet.

namespace cavsim {

class MlpNet {
  public:
    MlpNet() = default;
    // sizes = {input, hidden..., output}; hidden layers are ReLU, the
    // output layer is linear (softmax, if any, applied downstream).
    static MlpNet make(std::vector<int> sizes, std::mt19937_64& rng);
    static MlpNet zeros(std::vector<int> sizes);

    int n_params() const { return static_cast<int>(params_.size()); }
    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    const std::vector<int>& sizes() const { return sizes_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // Per-layer activations kept for backward.
    struct Workspace {
        std::vector<std::vector<double>> act;  // act[0] = input, act[L] = output
    };

    void forward(std::span<const double> in, std::span<double> out,
                 Workspace* ws = nullptr) const;
    std::vector<double> forward(std::span<const double> in) const;

    // Accumulates dL/dparams into grad given dL/doutput; needs the
    // workspace of the matching forward call. Optionally also produces
    // dL/dinput.
    void backward(const Workspace& ws, std::span<const double> dout,
                  std::span<double> grad, std::span<double> din = {}) const;

  private:
    std::vector<int> sizes_;
    std::vector<double> params_;
    std::vector<int> w_off_, b_off_;  // per-layer offsets into params_

    void init_offsets();
};

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<double> m, v;

    Adam() = default;
    Adam(int n, double lr_in) : lr(lr_in), m(n, 0.0), v(n, 0.0) {}
    void step(std::span<double> params, std::span<const double> grad);
};

// Softmax over the entries where mask is nonzero; masked-out entries get
// probability zero. The kept entries sum to 1.
std::vector<double> masked_softmax(std::span<const double> logits,
                                   const std::vector<std::uint8_t>& mask);

}  // namespace cavsim
