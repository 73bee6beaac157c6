#include "avloc/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace avloc::nn {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using ConstMapMat = Eigen::Map<const EMat>;

// col layout: (in_ch * k * k) rows x (out_h * out_w) cols.
void im2col(const double* x, int c, int h, int w, int k, int sh, int sw, int pad, int oh, int ow, double* col) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                                        (static_cast<std::size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * sh - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + static_cast<std::size_t>(oy) * ow,
                                  row + static_cast<std::size_t>(oy + 1) * ow, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * sw - pad + kx;
                        row[static_cast<std::size_t>(oy) * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w, int k, int sh, int sw, int pad, int oh, int ow, double* x) {
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) *
                                              (static_cast<std::size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * sh - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = x + (static_cast<std::size_t>(ci) * h + iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * sw - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += row[static_cast<std::size_t>(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

void he_init(Param& p, int fan_in, Rng& rng) {
    const double sigma = std::sqrt(2.0 / fan_in);
    for (auto& v : p.value) v = rng.normal(0.0, sigma);
}

} // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_c, int out_c, int k, int s, int p, bool with_bias)
    : Conv2d(in_c, out_c, k, s, s, p, with_bias) {}

Conv2d::Conv2d(int in_c, int out_c, int k, int sh, int sw, int p, bool with_bias)
    : in_ch(in_c), out_ch(out_c), ksize(k), stride_h(sh), stride_w(sw), pad(p < 0 ? k / 2 : p),
      use_bias(with_bias) {
    weight.resize({out_ch, in_ch, ksize, ksize});
    if (use_bias) bias.resize({out_ch});
}

void Conv2d::init(Rng& rng) {
    he_init(weight, in_ch * ksize * ksize, rng);
    if (use_bias) std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_ch) throw ShapeError("Conv2d: channel mismatch");
    out_h = (x.h + 2 * pad - ksize) / stride_h + 1;
    out_w = (x.w + 2 * pad - ksize) / stride_w + 1;
    if (out_h <= 0 || out_w <= 0) throw ShapeError("Conv2d: output would be empty");
    x_cache = x;

    Tensor y(x.n, out_ch, out_h, out_w);
    const int krows = in_ch * ksize * ksize;
    const int cols = out_h * out_w;
    std::vector<double> col(static_cast<std::size_t>(krows) * cols);
    ConstMapMat wm(weight.value.data(), out_ch, krows);
    for (int i = 0; i < x.n; ++i) {
        im2col(x.sample(i), in_ch, x.h, x.w, ksize, stride_h, stride_w, pad, out_h, out_w, col.data());
        MapMat ym(y.sample(i), out_ch, cols);
        ConstMapMat cm(col.data(), krows, cols);
        ym.noalias() = wm * cm;
    }
    if (use_bias)
        for (int i = 0; i < y.n; ++i)
            for (int c = 0; c < out_ch; ++c) {
                double* dst = y.sample(i) + static_cast<std::size_t>(c) * cols;
                const double b = bias.value[c];
                for (int p = 0; p < cols; ++p) dst[p] += b;
            }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Tensor& x = x_cache;
    const int krows = in_ch * ksize * ksize;
    const int cols = out_h * out_w;
    Tensor dx(x.n, x.c, x.h, x.w);
    std::vector<double> col(static_cast<std::size_t>(krows) * cols);
    std::vector<double> dcol(static_cast<std::size_t>(krows) * cols);

    ConstMapMat wm(weight.value.data(), out_ch, krows);
    MapMat dwm(weight.grad.data(), out_ch, krows);
    for (int i = 0; i < x.n; ++i) {
        ConstMapMat dym(dy.sample(i), out_ch, cols);
        im2col(x.sample(i), in_ch, x.h, x.w, ksize, stride_h, stride_w, pad, out_h, out_w, col.data());
        ConstMapMat cm(col.data(), krows, cols);
        dwm.noalias() += dym * cm.transpose();
        MapMat dcm(dcol.data(), krows, cols);
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcol.data(), in_ch, x.h, x.w, ksize, stride_h, stride_w, pad, out_h, out_w, dx.sample(i));
    }
    if (use_bias)
        for (int i = 0; i < dy.n; ++i)
            for (int c = 0; c < out_ch; ++c) {
                const double* src = dy.sample(i) + static_cast<std::size_t>(c) * cols;
                double acc = 0.0;
                for (int p = 0; p < cols; ++p) acc += src[p];
                bias.grad[c] += acc;
            }
    return dx;
}

void Conv2d::collect(NamedParams& out, const std::string& prefix) {
    weight.name = prefix + ".weight";
    out.emplace_back(weight.name, &weight);
    if (use_bias) {
        bias.name = prefix + ".bias";
        out.emplace_back(bias.name, &bias);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels) : ch(channels) {
    gamma.resize({ch}, 1.0);
    beta.resize({ch}, 0.0);
    running_mean.resize({ch}, 0.0);
    running_mean.trainable = false;
    running_var.resize({ch}, 1.0);
    running_var.trainable = false;
}

Tensor BatchNorm2d::forward(const Tensor& x) {
    if (x.c != ch) throw ShapeError("BatchNorm2d: channel mismatch");
    const int spatial = x.h * x.w;
    const double m = static_cast<double>(x.n) * spatial;
    Tensor y(x.n, x.c, x.h, x.w);
    xhat_cache = Tensor(x.n, x.c, x.h, x.w);
    invstd_cache.assign(ch, 0.0);

    for (int c = 0; c < ch; ++c) {
        double mean, var;
        if (training) {
            double s = 0.0, s2 = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const double* src = x.sample(i) + static_cast<std::size_t>(c) * spatial;
                for (int p = 0; p < spatial; ++p) {
                    s += src[p];
                    s2 += src[p] * src[p];
                }
            }
            mean = s / m;
            var = std::max(0.0, s2 / m - mean * mean);
            if (track_running) {
                running_mean.value[c] = (1.0 - momentum) * running_mean.value[c] + momentum * mean;
                running_var.value[c] = (1.0 - momentum) * running_var.value[c] + momentum * var;
            }
        } else {
            mean = running_mean.value[c];
            var = running_var.value[c];
        }
        const double invstd = 1.0 / std::sqrt(var + eps);
        invstd_cache[c] = invstd;
        const double g = gamma.value[c], b = beta.value[c];
        for (int i = 0; i < x.n; ++i) {
            const double* src = x.sample(i) + static_cast<std::size_t>(c) * spatial;
            double* xh = xhat_cache.sample(i) + static_cast<std::size_t>(c) * spatial;
            double* dst = y.sample(i) + static_cast<std::size_t>(c) * spatial;
            for (int p = 0; p < spatial; ++p) {
                xh[p] = (src[p] - mean) * invstd;
                dst[p] = g * xh[p] + b;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    const int spatial = dy.h * dy.w;
    const double m = static_cast<double>(dy.n) * spatial;
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    for (int c = 0; c < ch; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < dy.n; ++i) {
            const double* d = dy.sample(i) + static_cast<std::size_t>(c) * spatial;
            const double* xh = xhat_cache.sample(i) + static_cast<std::size_t>(c) * spatial;
            for (int p = 0; p < spatial; ++p) {
                sum_dy += d[p];
                sum_dy_xhat += d[p] * xh[p];
            }
        }
        gamma.grad[c] += sum_dy_xhat;
        beta.grad[c] += sum_dy;
        const double g = gamma.value[c], invstd = invstd_cache[c];
        if (training) {
            for (int i = 0; i < dy.n; ++i) {
                const double* d = dy.sample(i) + static_cast<std::size_t>(c) * spatial;
                const double* xh = xhat_cache.sample(i) + static_cast<std::size_t>(c) * spatial;
                double* o = dx.sample(i) + static_cast<std::size_t>(c) * spatial;
                for (int p = 0; p < spatial; ++p)
                    o[p] = g * invstd * (d[p] - sum_dy / m - xh[p] * sum_dy_xhat / m);
            }
        } else {
            for (int i = 0; i < dy.n; ++i) {
                const double* d = dy.sample(i) + static_cast<std::size_t>(c) * spatial;
                double* o = dx.sample(i) + static_cast<std::size_t>(c) * spatial;
                for (int p = 0; p < spatial; ++p) o[p] = g * invstd * d[p];
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect(NamedParams& out, const std::string& prefix) {
    gamma.name = prefix + ".gamma";
    beta.name = prefix + ".beta";
    running_mean.name = prefix + ".running_mean";
    running_var.name = prefix + ".running_var";
    out.emplace_back(gamma.name, &gamma);
    out.emplace_back(beta.name, &beta);
    out.emplace_back(running_mean.name, &running_mean);
    out.emplace_back(running_var.name, &running_var);
}

// ---------------------------------------------------------------------------
// ReLU / pooling
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
    Tensor y = x;
    mask_cache = Tensor(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        if (x.v[i] > 0.0) {
            mask_cache.v[i] = 1.0;
        } else {
            y.v[i] = 0.0;
        }
    }
    return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] *= mask_cache.v[i];
    return dx;
}

Tensor MaxPool2d::forward(const Tensor& x) {
    in_n = x.n;
    in_c = x.c;
    in_h = x.h;
    in_w = x.w;
    const int oh = (x.h + 2 * pad - ksize) / stride + 1;
    const int ow = (x.w + 2 * pad - ksize) / stride + 1;
    Tensor y(x.n, x.c, oh, ow);
    argmax_cache.assign(y.size(), -1);
    std::size_t oi = 0;
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    double best = -1e300;
                    int best_idx = -1;
                    for (int ky = 0; ky < ksize; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < ksize; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            const double v = x.at(i, c, iy, ix);
                            if (v > best) {
                                best = v;
                                best_idx = iy * x.w + ix;
                            }
                        }
                    }
                    y.v[oi] = best;
                    argmax_cache[oi] = best_idx;
                }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) const {
    Tensor dx(in_n, in_c, in_h, in_w);
    const int spatial = in_h * in_w;
    std::size_t oi = 0;
    for (int i = 0; i < dy.n; ++i)
        for (int c = 0; c < dy.c; ++c) {
            double* dst = dx.sample(i) + static_cast<std::size_t>(c) * spatial;
            for (int p = 0; p < dy.h * dy.w; ++p, ++oi) dst[argmax_cache[oi]] += dy.v[oi];
        }
    return dx;
}

Tensor GlobalMaxPool::forward(const Tensor& x) {
    in_h = x.h;
    in_w = x.w;
    const int spatial = x.h * x.w;
    Tensor y(x.n, x.c, 1, 1);
    argmax_cache.assign(static_cast<std::size_t>(x.n) * x.c, 0);
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c) {
            const double* src = x.sample(i) + static_cast<std::size_t>(c) * spatial;
            int best = 0;
            for (int p = 1; p < spatial; ++p)
                if (src[p] > src[best]) best = p;
            y.at(i, c, 0, 0) = src[best];
            argmax_cache[static_cast<std::size_t>(i) * x.c + c] = best;
        }
    return y;
}

Tensor GlobalMaxPool::backward(const Tensor& dy) const {
    Tensor dx(dy.n, dy.c, in_h, in_w);
    const int spatial = in_h * in_w;
    for (int i = 0; i < dy.n; ++i)
        for (int c = 0; c < dy.c; ++c)
            dx.sample(i)[static_cast<std::size_t>(c) * spatial +
                         argmax_cache[static_cast<std::size_t>(i) * dy.c + c]] = dy.at(i, c, 0, 0);
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    in_h = x.h;
    in_w = x.w;
    const int spatial = x.h * x.w;
    Tensor y(x.n, x.c, 1, 1);
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c) {
            const double* src = x.sample(i) + static_cast<std::size_t>(c) * spatial;
            double acc = 0.0;
            for (int p = 0; p < spatial; ++p) acc += src[p];
            y.at(i, c, 0, 0) = acc / spatial;
        }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) const {
    Tensor dx(dy.n, dy.c, in_h, in_w);
    const int spatial = in_h * in_w;
    for (int i = 0; i < dy.n; ++i)
        for (int c = 0; c < dy.c; ++c) {
            const double g = dy.at(i, c, 0, 0) / spatial;
            double* dst = dx.sample(i) + static_cast<std::size_t>(c) * spatial;
            for (int p = 0; p < spatial; ++p) dst[p] = g;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in_d, int out_d, bool with_bias) : in_dim(in_d), out_dim(out_d), use_bias(with_bias) {
    weight.resize({out_dim, in_dim});
    if (use_bias) bias.resize({out_dim});
}

void Linear::init(Rng& rng) {
    he_init(weight, in_dim, rng);
    if (use_bias) std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

void Linear::reinit(std::uint64_t seed) {
    Rng rng(seed);
    init(rng);
}

Tensor Linear::forward(const Tensor& x) {
    if (x.c != in_dim || x.h != 1 || x.w != 1) throw ShapeError("Linear: expected (N, in_dim, 1, 1)");
    x_cache = x;
    Tensor y(x.n, out_dim, 1, 1);
    ConstMapMat xm(x.v.data(), x.n, in_dim);
    ConstMapMat wm(weight.value.data(), out_dim, in_dim);
    MapMat ym(y.v.data(), x.n, out_dim);
    ym.noalias() = xm * wm.transpose();
    if (use_bias)
        for (int i = 0; i < x.n; ++i)
            for (int o = 0; o < out_dim; ++o) y.at(i, o, 0, 0) += bias.value[o];
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    Tensor dx(x_cache.n, in_dim, 1, 1);
    ConstMapMat dym(dy.v.data(), dy.n, out_dim);
    ConstMapMat xm(x_cache.v.data(), x_cache.n, in_dim);
    ConstMapMat wm(weight.value.data(), out_dim, in_dim);
    MapMat dwm(weight.grad.data(), out_dim, in_dim);
    MapMat dxm(dx.v.data(), dx.n, in_dim);
    dwm.noalias() += dym.transpose() * xm;
    dxm.noalias() = dym * wm;
    if (use_bias)
        for (int i = 0; i < dy.n; ++i)
            for (int o = 0; o < out_dim; ++o) bias.grad[o] += dy.at(i, o, 0, 0);
    return dx;
}

void Linear::collect(NamedParams& out, const std::string& prefix) {
    weight.name = prefix + ".weight";
    out.emplace_back(weight.name, &weight);
    if (use_bias) {
        bias.name = prefix + ".bias";
        out.emplace_back(bias.name, &bias);
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::attach(const std::vector<Param*>& params) {
    slots.clear();
    for (Param* p : params) {
        if (!p->trainable) continue;
        Slot s;
        s.p = p;
        s.m.assign(p->count(), 0.0);
        s.v.assign(p->count(), 0.0);
        slots.push_back(std::move(s));
    }
    t = 0;
}

void Adam::zero_grad() {
    for (auto& s : slots) s.p->zero_grad();
}

void Adam::step() {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& s : slots) {
        for (std::size_t i = 0; i < s.m.size(); ++i) {
            const double g = s.p->grad[i];
            s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
            s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            s.p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax helpers
// ---------------------------------------------------------------------------

std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> out(logits.size());
    double mx = -1e300;
    for (const double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

double softmax_cross_entropy(const std::vector<std::vector<double>>& logits, const std::vector<int>& targets,
                             std::vector<std::vector<double>>* dlogits) {
    const std::size_t n = logits.size();
    if (n == 0 || targets.size() != n) throw ShapeError("softmax_cross_entropy: batch mismatch");
    if (dlogits) dlogits->assign(n, {});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double> p = softmax(logits[i]);
        loss += -std::log(std::max(p[targets[i]], 1e-300));
        if (dlogits) {
            (*dlogits)[i] = p;
            (*dlogits)[i][targets[i]] -= 1.0;
            for (double& g : (*dlogits)[i]) g /= static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

} // namespace avloc::nn
