#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avloc/rng.hpp"
#include "avloc/tensor.hpp"

namespace avloc::nn {

// Learnable (or tracked) array. Non-trainable params are buffers such as
// batch-norm running statistics: serialized with checkpoints, skipped by the
// optimizer and by gradient checks.
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value, grad;
    bool trainable = true;

    void resize(std::vector<int> s, double fill = 0.0) {
        shape = std::move(s);
        std::size_t n = 1;
        for (const int d : shape) n *= static_cast<std::size_t>(d);
        value.assign(n, fill);
        grad.assign(n, 0.0);
    }
    std::size_t count() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using NamedParams = std::vector<std::pair<std::string, Param*>>;

// ---------------------------------------------------------------------------
// Layers. Each caches what its backward pass needs; one batch may be in
// flight at a time (single-writer training contract).
// ---------------------------------------------------------------------------

struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, stride_h = 1, stride_w = 1, pad = 1;
    bool use_bias = true;
    Param weight, bias;

    Conv2d() = default;
    Conv2d(int in_c, int out_c, int k, int s = 1, int p = -1, bool with_bias = true);
    Conv2d(int in_c, int out_c, int k, int sh, int sw, int p, bool with_bias);

    void init(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void collect(NamedParams& out, const std::string& prefix);

    int out_h = 0, out_w = 0;
    Tensor x_cache;
};

struct BatchNorm2d {
    int ch = 0;
    double eps = 1e-5, momentum = 0.1;
    Param gamma, beta, running_mean, running_var;
    bool training = true;
    bool track_running = true; // disabled during gradient checks

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void collect(NamedParams& out, const std::string& prefix);

    Tensor xhat_cache;
    std::vector<double> invstd_cache;
};

struct ReLU {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;
    Tensor mask_cache;
};

struct MaxPool2d {
    int ksize = 3, stride = 2, pad = 1;
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;
    int in_h = 0, in_w = 0, in_c = 0, in_n = 0;
    std::vector<int> argmax_cache; // flat input index per output cell
};

// Operates on (N, C, 1, 1) tensors.
struct Linear {
    int in_dim = 0, out_dim = 0;
    bool use_bias = true;
    Param weight, bias; // weight is out x in

    Linear() = default;
    Linear(int in_d, int out_d, bool with_bias = true);

    void init(Rng& rng);
    void reinit(std::uint64_t seed);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void collect(NamedParams& out, const std::string& prefix);

    Tensor x_cache;
};

struct GlobalMaxPool {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;
    int in_h = 0, in_w = 0;
    std::vector<int> argmax_cache;
};

struct GlobalAvgPool {
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;
    int in_h = 0, in_w = 0;
};

// ---------------------------------------------------------------------------
// Adam (beta1 0.9, beta2 0.999, eps 1e-8).
// ---------------------------------------------------------------------------
struct Adam {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    struct Slot {
        Param* p = nullptr;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots;
    long t = 0;

    explicit Adam(double lr_ = 1e-4) : lr(lr_) {}
    void attach(const std::vector<Param*>& params);
    void zero_grad();
    void step();
};

// Softmax over a logit vector (numerically shifted).
std::vector<double> softmax(const std::vector<double>& logits);

// Mean cross-entropy of softmax(logits) rows against integer targets;
// fills dlogits with the gradient (softmax - onehot) / batch.
double softmax_cross_entropy(const std::vector<std::vector<double>>& logits, const std::vector<int>& targets,
                             std::vector<std::vector<double>>* dlogits);

} // namespace avloc::nn
