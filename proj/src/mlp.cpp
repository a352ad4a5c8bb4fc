#include "cavsim/mlp.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

#include "cavsim/kernels.hpp"

namespace cavsim {

void MlpNet::init_offsets() {
    w_off_.clear();
    b_off_.clear();
    int off = 0;
    for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
        w_off_.push_back(off);
        off += sizes_[l + 1] * sizes_[l];
        b_off_.push_back(off);
        off += sizes_[l + 1];
    }
    params_.assign(off, 0.0);
}

MlpNet MlpNet::zeros(std::vector<int> sizes) {
    MlpNet net;
    net.sizes_ = std::move(sizes);
    net.init_offsets();
    return net;
}

MlpNet MlpNet::make(std::vector<int> sizes, std::mt19937_64& rng) {
    MlpNet net = zeros(std::move(sizes));
    for (size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
        const int fan_in = net.sizes_[l], fan_out = net.sizes_[l + 1];
        const double s = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> u(-s, s);
        double* W = net.params_.data() + net.w_off_[l];
        for (int k = 0; k < fan_out * fan_in; ++k) W[k] = u(rng);
        // biases stay zero
    }
    return net;
}

void MlpNet::forward(std::span<const double> in, std::span<double> out,
                     Workspace* ws) const {
    if (static_cast<int>(in.size()) != input_dim())
        throw std::invalid_argument("MlpNet::forward: input dimension mismatch");
    if (static_cast<int>(out.size()) != output_dim())
        throw std::invalid_argument("MlpNet::forward: output dimension mismatch");

    const auto& K = kern::active();
    const size_t L = sizes_.size() - 1;
    std::vector<double> cur(in.begin(), in.end());
    if (ws) {
        ws->act.assign(L + 1, {});
        ws->act[0] = cur;
    }
    std::vector<double> next;
    for (size_t l = 0; l < L; ++l) {
        next.assign(sizes_[l + 1], 0.0);
        K.matvec(sizes_[l + 1], sizes_[l], params_.data() + w_off_[l],
                 cur.data(), params_.data() + b_off_[l], next.data());
        if (l + 1 < L) K.relu(sizes_[l + 1], next.data(), next.data());
        if (ws) ws->act[l + 1] = next;
        cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out.begin());
}

std::vector<double> MlpNet::forward(std::span<const double> in) const {
    std::vector<double> out(output_dim());
    forward(in, out);
    return out;
}

void MlpNet::backward(const Workspace& ws, std::span<const double> dout,
                      std::span<double> grad, std::span<double> din) const {
    assert(static_cast<int>(grad.size()) == n_params());
    const auto& K = kern::active();
    const int L = static_cast<int>(sizes_.size()) - 1;

    std::vector<double> dcur(dout.begin(), dout.end());
    std::vector<double> dprev;
    for (int l = L - 1; l >= 0; --l) {
        // dcur = dL/d(pre-activation of layer l output). For hidden layers
        // the ReLU mask was applied on the way down to this level.
        K.outer_acc(sizes_[l + 1], sizes_[l], dcur.data(), ws.act[l].data(),
                    grad.data() + w_off_[l]);
        K.axpy(sizes_[l + 1], 1.0, dcur.data(), grad.data() + b_off_[l]);
        if (l == 0 && din.empty()) break;
        dprev.assign(sizes_[l], 0.0);
        K.matvec_t(sizes_[l + 1], sizes_[l], params_.data() + w_off_[l],
                   dcur.data(), dprev.data());
        if (l > 0) {
            // act[l] = relu(pre[l]), so act[l] > 0 marks the pass-through set
            K.relu_bwd(sizes_[l], ws.act[l].data(), dprev.data(), dprev.data());
        }
        dcur.swap(dprev);
    }
    if (!din.empty()) std::copy(dcur.begin(), dcur.end(), din.begin());
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    assert(params.size() == m.size() && grad.size() == m.size());
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

std::vector<double> masked_softmax(std::span<const double> logits,
                                   const std::vector<std::uint8_t>& mask) {
    assert(logits.size() == mask.size());
    std::vector<double> p(logits.size(), 0.0);
    double mx = -1e300;
    bool any = false;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (mask[i] && logits[i] > mx) {
            mx = logits[i];
            any = true;
        }
    }
    if (!any) return p;
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (mask[i]) {
            p[i] = std::exp(logits[i] - mx);
            sum += p[i];
        }
    }
    for (double& x : p) x /= sum;
    return p;
}

}  // namespace cavsim
