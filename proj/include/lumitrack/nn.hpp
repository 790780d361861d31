#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lumitrack/common.hpp"

namespace lumitrack {

// ---- batched tensor ---------------------------------------------------------------
// One batch of (channels x length) feature maps, row-major: ((b*ch + c)*len + i).
// Dense layers view each example as a flat (ch*len) feature vector.

struct BatchT {
    int n = 0, ch = 0, len = 0;
    std::vector<double> v;

    BatchT() = default;
    BatchT(int n_, int ch_, int len_)
        : n(n_), ch(ch_), len(len_), v(static_cast<std::size_t>(n_) * ch_ * len_, 0.0) {}

    double& at(int b, int c, int i) {
        return v[(static_cast<std::size_t>(b) * ch + c) * len + i];
    }
    const double& at(int b, int c, int i) const {
        return v[(static_cast<std::size_t>(b) * ch + c) * len + i];
    }
    int features() const { return ch * len; }
};

// ---- layer and network specs --------------------------------------------------------

enum class LayerKind { conv, batchnorm, relu, maxpool, dense, dropout, softmax };

struct LayerSpec {
    LayerKind kind{};
    int out_ch = 0;   // conv
    int kernel = 0;   // conv
    int stride = 1;   // conv
    int pool_k = 2;   // maxpool
    int out = 0;      // dense
    double p = 0.0;   // dropout

    static LayerSpec conv(int out_ch, int kernel, int stride = 1) {
        LayerSpec s;
        s.kind = LayerKind::conv;
        s.out_ch = out_ch;
        s.kernel = kernel;
        s.stride = stride;
        return s;
    }
    static LayerSpec batchnorm() { return {LayerKind::batchnorm}; }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec maxpool(int k = 2) {
        LayerSpec s;
        s.kind = LayerKind::maxpool;
        s.pool_k = k;
        return s;
    }
    static LayerSpec dense(int out) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.out = out;
        return s;
    }
    static LayerSpec dropout(double p) {
        LayerSpec s;
        s.kind = LayerKind::dropout;
        s.p = p;
        return s;
    }
    static LayerSpec softmax() { return {LayerKind::softmax}; }
};

struct NetworkSpec {
    int in_ch = 1;
    int in_len = 1;
    std::vector<LayerSpec> layers;

    // per-layer output shapes; throws if adjacent shapes are incompatible
    std::vector<std::pair<int, int>> shapes() const {
        std::vector<std::pair<int, int>> out;
        int ch = in_ch, len = in_len;
        if (ch <= 0 || len <= 0) throw input_error("network: bad input shape");
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const auto& l = layers[li];
            switch (l.kind) {
                case LayerKind::conv:
                    if (l.out_ch <= 0 || l.kernel <= 0 || l.stride <= 0)
                        throw input_error("network: bad conv spec");
                    if (len < l.kernel)
                        throw input_error("network: conv kernel exceeds input length");
                    len = (len - l.kernel) / l.stride + 1;
                    ch = l.out_ch;
                    break;
                case LayerKind::maxpool:
                    if (l.pool_k <= 0) throw input_error("network: bad pool spec");
                    if (len < l.pool_k) throw input_error("network: pool exceeds length");
                    len = len / l.pool_k;
                    break;
                case LayerKind::dense:
                    if (l.out <= 0) throw input_error("network: bad dense spec");
                    ch = l.out;
                    len = 1;
                    break;
                case LayerKind::dropout:
                    if (l.p < 0.0 || l.p >= 1.0)
                        throw input_error("network: dropout p outside [0,1)");
                    break;
                case LayerKind::softmax:
                    if (li + 1 != layers.size())
                        throw input_error("network: softmax must be the final layer");
                    if (len != 1) throw input_error("network: softmax needs a flat input");
                    break;
                case LayerKind::batchnorm:
                case LayerKind::relu:
                    break;
            }
            out.emplace_back(ch, len);
        }
        return out;
    }

    std::string canonical() const {
        std::string s = "in:" + std::to_string(in_ch) + "x" + std::to_string(in_len);
        char buf[64];
        for (const auto& l : layers) {
            switch (l.kind) {
                case LayerKind::conv:
                    std::snprintf(buf, sizeof(buf), ";conv:%dk%ds%d", l.out_ch, l.kernel,
                                  l.stride);
                    break;
                case LayerKind::batchnorm:
                    std::snprintf(buf, sizeof(buf), ";bn");
                    break;
                case LayerKind::relu:
                    std::snprintf(buf, sizeof(buf), ";relu");
                    break;
                case LayerKind::maxpool:
                    std::snprintf(buf, sizeof(buf), ";pool:%d", l.pool_k);
                    break;
                case LayerKind::dense:
                    std::snprintf(buf, sizeof(buf), ";dense:%d", l.out);
                    break;
                case LayerKind::dropout:
                    std::snprintf(buf, sizeof(buf), ";drop:%.6g", l.p);
                    break;
                case LayerKind::softmax:
                    std::snprintf(buf, sizeof(buf), ";softmax");
                    break;
            }
            s += buf;
        }
        return s;
    }

    std::uint64_t hash() const { return fnv1a(canonical()); }
};

// ---- parameters ----------------------------------------------------------------------

struct LayerParams {
    std::vector<double> W, b;                  // conv/dense
    std::vector<double> gamma, beta;           // batchnorm affine
    std::vector<double> run_mean, run_var;     // batchnorm running stats
};

struct NetworkParams {
    std::vector<LayerParams> layers;

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& l : layers)
            n += l.W.size() + l.b.size() + l.gamma.size() + l.beta.size();
        return n;
    }
};

inline NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
    const auto shapes = spec.shapes();
    NetworkParams params;
    params.layers.resize(spec.layers.size());
    Rng rng(derive_seed(seed, "init:" + spec.canonical()));
    int ch = spec.in_ch, len = spec.in_len;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        auto& p = params.layers[li];
        if (l.kind == LayerKind::conv) {
            const int fan_in = ch * l.kernel;
            const double bound = std::sqrt(6.0 / fan_in);
            p.W.resize(static_cast<std::size_t>(l.out_ch) * ch * l.kernel);
            for (auto& w : p.W) w = rng.uniform(-bound, bound);
            p.b.assign(l.out_ch, 0.0);
        } else if (l.kind == LayerKind::dense) {
            const int fan_in = ch * len;
            const double bound = std::sqrt(6.0 / fan_in);
            p.W.resize(static_cast<std::size_t>(l.out) * fan_in);
            for (auto& w : p.W) w = rng.uniform(-bound, bound);
            p.b.assign(l.out, 0.0);
        } else if (l.kind == LayerKind::batchnorm) {
            p.gamma.assign(ch, 1.0);
            p.beta.assign(ch, 0.0);
            p.run_mean.assign(ch, 0.0);
            p.run_var.assign(ch, 1.0);
        }
        ch = shapes[li].first;
        len = shapes[li].second;
    }
    return params;
}

// ---- forward ----------------------------------------------------------------------------

enum class Mode { train, infer };

struct LayerCache {
    BatchT in;                      // layer input
    std::vector<int> argmax;        // maxpool winners
    std::vector<double> mean, invstd;  // batchnorm batch stats
    std::vector<double> batch_var;     // biased batch variance (for commit)
    std::vector<std::uint8_t> mask;    // dropout keep mask
};

struct ForwardCache {
    Mode mode = Mode::infer;
    std::vector<LayerCache> layers;
    BatchT probs;
    bool valid = false;
};

// small enough that normalized batch variance is 1 within 1e-6 even for O(1)
// channel variances; doubles keep this stable
inline constexpr double kBnEps = 1e-12;

namespace nn_detail {

inline double hash_uniform(std::uint64_t stream, std::uint64_t counter) {
    return static_cast<double>(splitmix64(stream ^ splitmix64(counter)) >> 11) * 0x1.0p-53;
}

inline void conv_forward(const LayerSpec& l, const LayerParams& p, const BatchT& x,
                         BatchT& y) {
    const int in_ch = x.ch, in_len = x.len;
    const int out_len = (in_len - l.kernel) / l.stride + 1;
    y = BatchT(x.n, l.out_ch, out_len);
    for (int b = 0; b < x.n; ++b) {
        for (int oc = 0; oc < l.out_ch; ++oc) {
            double* out = &y.at(b, oc, 0);
            const double bias = p.b[oc];
            for (int j = 0; j < out_len; ++j) out[j] = bias;
            for (int ic = 0; ic < in_ch; ++ic) {
                const double* in = &x.at(b, ic, 0);
                const double* w = &p.W[(static_cast<std::size_t>(oc) * in_ch + ic) * l.kernel];
                for (int k = 0; k < l.kernel; ++k) {
                    const double wk = w[k];
                    if (l.stride == 1) {
                        for (int j = 0; j < out_len; ++j) out[j] += wk * in[j + k];
                    } else {
                        for (int j = 0; j < out_len; ++j) out[j] += wk * in[j * l.stride + k];
                    }
                }
            }
        }
    }
}

inline void conv_backward(const LayerSpec& l, const LayerParams& p, const BatchT& x,
                          const BatchT& dy, BatchT& dx, LayerParams& g) {
    const int in_ch = x.ch;
    const int out_len = dy.len;
    dx = BatchT(x.n, x.ch, x.len);
    g.W.assign(p.W.size(), 0.0);
    g.b.assign(p.b.size(), 0.0);
    for (int b = 0; b < x.n; ++b) {
        for (int oc = 0; oc < l.out_ch; ++oc) {
            const double* dout = &dy.at(b, oc, 0);
            double acc_b = 0.0;
            for (int j = 0; j < out_len; ++j) acc_b += dout[j];
            g.b[oc] += acc_b;
            for (int ic = 0; ic < in_ch; ++ic) {
                const double* in = &x.at(b, ic, 0);
                double* din = &dx.at(b, ic, 0);
                const std::size_t wbase = (static_cast<std::size_t>(oc) * in_ch + ic) * l.kernel;
                for (int k = 0; k < l.kernel; ++k) {
                    const double wk = p.W[wbase + k];
                    double acc_w = 0.0;
                    if (l.stride == 1) {
                        for (int j = 0; j < out_len; ++j) {
                            acc_w += dout[j] * in[j + k];
                            din[j + k] += wk * dout[j];
                        }
                    } else {
                        for (int j = 0; j < out_len; ++j) {
                            acc_w += dout[j] * in[j * l.stride + k];
                            din[j * l.stride + k] += wk * dout[j];
                        }
                    }
                    g.W[wbase + k] += acc_w;
                }
            }
        }
    }
}

inline void dense_forward(const LayerSpec& l, const LayerParams& p, const BatchT& x,
                          BatchT& y) {
    const int in = x.features();
    y = BatchT(x.n, l.out, 1);
    for (int b = 0; b < x.n; ++b) {
        const double* xin = &x.v[static_cast<std::size_t>(b) * in];
        for (int o = 0; o < l.out; ++o) {
            const double* w = &p.W[static_cast<std::size_t>(o) * in];
            double acc = p.b[o];
            for (int i = 0; i < in; ++i) acc += w[i] * xin[i];
            y.at(b, o, 0) = acc;
        }
    }
}

inline void dense_backward(const LayerSpec& l, const LayerParams& p, const BatchT& x,
                           const BatchT& dy, BatchT& dx, LayerParams& g) {
    const int in = x.features();
    dx = BatchT(x.n, x.ch, x.len);
    g.W.assign(p.W.size(), 0.0);
    g.b.assign(p.b.size(), 0.0);
    for (int b = 0; b < x.n; ++b) {
        const double* xin = &x.v[static_cast<std::size_t>(b) * in];
        double* din = &dx.v[static_cast<std::size_t>(b) * in];
        for (int o = 0; o < l.out; ++o) {
            const double d = dy.at(b, o, 0);
            g.b[o] += d;
            const double* w = &p.W[static_cast<std::size_t>(o) * in];
            double* gw = &g.W[static_cast<std::size_t>(o) * in];
            for (int i = 0; i < in; ++i) {
                gw[i] += d * xin[i];
                din[i] += d * w[i];
            }
        }
    }
}

}  // namespace nn_detail

// Training-mode batchnorm uses batch statistics; running statistics are only
// modified by commit_batch_stats so finite-difference probes stay pure.
inline BatchT forward(const NetworkSpec& spec, const NetworkParams& params, const BatchT& x,
                      Mode mode, ForwardCache* cache = nullptr,
                      std::uint64_t dropout_seed = 0) {
    if (x.ch != spec.in_ch || x.len != spec.in_len || x.n <= 0)
        throw input_error("forward: input shape (" + std::to_string(x.ch) + "x" +
                          std::to_string(x.len) + ") does not match network (" +
                          std::to_string(spec.in_ch) + "x" + std::to_string(spec.in_len) + ")");
    spec.shapes();  // validates composition
    if (cache) {
        cache->mode = mode;
        cache->layers.assign(spec.layers.size(), {});
        cache->valid = true;
    }

    BatchT cur = x;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        const auto& p = params.layers[li];
        LayerCache* lc = cache ? &cache->layers[li] : nullptr;
        BatchT next;
        switch (l.kind) {
            case LayerKind::conv:
                nn_detail::conv_forward(l, p, cur, next);
                if (lc) lc->in = std::move(cur);
                break;
            case LayerKind::dense:
                nn_detail::dense_forward(l, p, cur, next);
                if (lc) lc->in = std::move(cur);
                break;
            case LayerKind::relu: {
                next = cur;
                for (auto& t : next.v) t = t > 0.0 ? t : 0.0;
                if (lc) lc->in = std::move(cur);
                break;
            }
            case LayerKind::maxpool: {
                const int out_len = cur.len / l.pool_k;
                next = BatchT(cur.n, cur.ch, out_len);
                if (lc) lc->argmax.resize(next.v.size());
                for (int b = 0; b < cur.n; ++b)
                    for (int c = 0; c < cur.ch; ++c) {
                        const double* in = &cur.at(b, c, 0);
                        double* out = &next.at(b, c, 0);
                        for (int j = 0; j < out_len; ++j) {
                            int best = j * l.pool_k;
                            for (int k = 1; k < l.pool_k; ++k)
                                if (in[j * l.pool_k + k] > in[best]) best = j * l.pool_k + k;
                            out[j] = in[best];
                            if (lc)
                                lc->argmax[(static_cast<std::size_t>(b) * cur.ch + c) * out_len +
                                           j] = best;
                        }
                    }
                if (lc) lc->in = std::move(cur);
                break;
            }
            case LayerKind::batchnorm: {
                const int C = cur.ch, L = cur.len, N = cur.n * L;
                next = BatchT(cur.n, C, L);
                std::vector<double> mean(C, 0.0), var(C, 0.0), invstd(C, 0.0);
                if (mode == Mode::train) {
                    for (int b = 0; b < cur.n; ++b)
                        for (int c = 0; c < C; ++c) {
                            const double* in = &cur.at(b, c, 0);
                            for (int i = 0; i < L; ++i) mean[c] += in[i];
                        }
                    for (int c = 0; c < C; ++c) mean[c] /= N;
                    for (int b = 0; b < cur.n; ++b)
                        for (int c = 0; c < C; ++c) {
                            const double* in = &cur.at(b, c, 0);
                            for (int i = 0; i < L; ++i)
                                var[c] += (in[i] - mean[c]) * (in[i] - mean[c]);
                        }
                    for (int c = 0; c < C; ++c) var[c] /= N;
                } else {
                    mean = p.run_mean;
                    var = p.run_var;
                }
                for (int c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + kBnEps);
                for (int b = 0; b < cur.n; ++b)
                    for (int c = 0; c < C; ++c) {
                        const double* in = &cur.at(b, c, 0);
                        double* out = &next.at(b, c, 0);
                        for (int i = 0; i < L; ++i)
                            out[i] = p.gamma[c] * (in[i] - mean[c]) * invstd[c] + p.beta[c];
                    }
                if (lc) {
                    lc->mean = std::move(mean);
                    lc->invstd = std::move(invstd);
                    lc->batch_var = std::move(var);
                    lc->in = std::move(cur);
                }
                break;
            }
            case LayerKind::dropout: {
                next = cur;
                if (mode == Mode::train && l.p > 0.0) {
                    const double keep = 1.0 - l.p;
                    const std::uint64_t stream =
                        derive_seed(dropout_seed, "drop:" + std::to_string(li));
                    if (lc) lc->mask.resize(next.v.size());
                    for (std::size_t i = 0; i < next.v.size(); ++i) {
                        const bool on = nn_detail::hash_uniform(stream, i) >= l.p;
                        if (lc) lc->mask[i] = on;
                        next.v[i] = on ? next.v[i] / keep : 0.0;
                    }
                } else if (lc) {
                    lc->mask.assign(next.v.size(), 1);
                }
                break;
            }
            case LayerKind::softmax: {
                next = BatchT(cur.n, cur.ch, 1);
                for (int b = 0; b < cur.n; ++b) {
                    double mx = -1e300;
                    for (int c = 0; c < cur.ch; ++c) mx = std::max(mx, cur.at(b, c, 0));
                    double z = 0.0;
                    for (int c = 0; c < cur.ch; ++c) {
                        const double e = std::exp(cur.at(b, c, 0) - mx);
                        next.at(b, c, 0) = e;
                        z += e;
                    }
                    for (int c = 0; c < cur.ch; ++c) next.at(b, c, 0) /= z;
                }
                break;
            }
        }
        cur = std::move(next);
    }

    if (mode == Mode::infer)
        for (const double t : cur.v)
            if (!std::isfinite(t)) throw numeric_error("forward: non-finite network output");
    if (cache) cache->probs = cur;
    return cur;
}

// Fold the cached batch statistics into the running estimates (momentum update,
// unbiased variance). Call once per accepted training step.
inline void commit_batch_stats(const NetworkSpec& spec, NetworkParams& params,
                               const ForwardCache& cache, double momentum = 0.1) {
    if (cache.mode != Mode::train || !cache.valid)
        throw input_error("commit_batch_stats needs a training-mode cache");
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        if (spec.layers[li].kind != LayerKind::batchnorm) continue;
        auto& p = params.layers[li];
        const auto& lc = cache.layers[li];
        const int N = lc.in.n * lc.in.len;
        const double corr = N > 1 ? static_cast<double>(N) / (N - 1) : 1.0;
        for (std::size_t c = 0; c < p.run_mean.size(); ++c) {
            p.run_mean[c] = (1.0 - momentum) * p.run_mean[c] + momentum * lc.mean[c];
            p.run_var[c] = (1.0 - momentum) * p.run_var[c] + momentum * lc.batch_var[c] * corr;
        }
    }
}

// ---- loss and backward -------------------------------------------------------------------

inline double xent_loss(const BatchT& probs, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != probs.n)
        throw input_error("xent: label count does not match batch");
    double loss = 0.0;
    for (int b = 0; b < probs.n; ++b) {
        const int y = labels[b];
        if (y < 0 || y >= probs.ch) throw input_error("xent: label out of range");
        loss += -std::log(std::max(probs.at(b, y, 0), 1e-300));
    }
    return loss / probs.n;
}

// Gradients of mean cross-entropy w.r.t. every parameter; shapes mirror params.
inline NetworkParams backward(const NetworkSpec& spec, const NetworkParams& params,
                              const ForwardCache& cache, const std::vector<int>& labels) {
    if (!cache.valid) throw input_error("backward: empty cache");
    if (cache.mode != Mode::train)
        throw input_error("backward requires a training-mode forward cache");
    if (spec.layers.empty() || spec.layers.back().kind != LayerKind::softmax)
        throw input_error("backward: network must end in softmax");
    if (static_cast<int>(labels.size()) != cache.probs.n)
        throw input_error("backward: label count does not match cache");

    NetworkParams grads;
    grads.layers.resize(spec.layers.size());

    // fused softmax + cross-entropy start: d z = (p - onehot) / B
    BatchT d = cache.probs;
    for (int b = 0; b < d.n; ++b) {
        for (int c = 0; c < d.ch; ++c) d.at(b, c, 0) /= d.n;
        d.at(b, labels[b], 0) -= 1.0 / d.n;
    }

    for (int li = static_cast<int>(spec.layers.size()) - 2; li >= 0; --li) {
        const auto& l = spec.layers[li];
        const auto& p = params.layers[li];
        const auto& lc = cache.layers[li];
        BatchT dx;
        switch (l.kind) {
            case LayerKind::conv:
                nn_detail::conv_backward(l, p, lc.in, d, dx, grads.layers[li]);
                break;
            case LayerKind::dense:
                // incoming gradient is flat (out,1); dx takes the input's shape
                nn_detail::dense_backward(l, p, lc.in, d, dx, grads.layers[li]);
                break;
            case LayerKind::relu: {
                dx = d;
                for (std::size_t i = 0; i < dx.v.size(); ++i)
                    if (lc.in.v[i] <= 0.0) dx.v[i] = 0.0;
                break;
            }
            case LayerKind::maxpool: {
                dx = BatchT(lc.in.n, lc.in.ch, lc.in.len);
                for (int b = 0; b < d.n; ++b)
                    for (int c = 0; c < d.ch; ++c)
                        for (int j = 0; j < d.len; ++j)
                            dx.at(b, c,
                                  lc.argmax[(static_cast<std::size_t>(b) * d.ch + c) * d.len +
                                            j]) += d.at(b, c, j);
                break;
            }
            case LayerKind::batchnorm: {
                const int C = lc.in.ch, L = lc.in.len, N = lc.in.n * L;
                auto& g = grads.layers[li];
                g.gamma.assign(C, 0.0);
                g.beta.assign(C, 0.0);
                dx = BatchT(lc.in.n, C, L);
                std::vector<double> sum_d(C, 0.0), sum_dx(C, 0.0);
                for (int b = 0; b < d.n; ++b)
                    for (int c = 0; c < C; ++c) {
                        const double* din = &d.at(b, c, 0);
                        const double* xin = &lc.in.at(b, c, 0);
                        for (int i = 0; i < L; ++i) {
                            const double xhat = (xin[i] - lc.mean[c]) * lc.invstd[c];
                            g.gamma[c] += din[i] * xhat;
                            g.beta[c] += din[i];
                            sum_d[c] += din[i];
                            sum_dx[c] += din[i] * xhat;
                        }
                    }
                for (int b = 0; b < d.n; ++b)
                    for (int c = 0; c < C; ++c) {
                        const double* din = &d.at(b, c, 0);
                        const double* xin = &lc.in.at(b, c, 0);
                        double* dout = &dx.at(b, c, 0);
                        const double k = p.gamma[c] * lc.invstd[c];
                        for (int i = 0; i < L; ++i) {
                            const double xhat = (xin[i] - lc.mean[c]) * lc.invstd[c];
                            dout[i] = k * (din[i] - sum_d[c] / N - xhat * sum_dx[c] / N);
                        }
                    }
                break;
            }
            case LayerKind::dropout: {
                dx = d;
                if (!lc.mask.empty()) {
                    const double keep = 1.0 - l.p;
                    for (std::size_t i = 0; i < dx.v.size(); ++i)
                        dx.v[i] = lc.mask[i] ? dx.v[i] / keep : 0.0;
                }
                break;
            }
            case LayerKind::softmax:
                throw input_error("backward: interior softmax");
        }
        d = std::move(dx);
    }
    return grads;
}

// ---- Adam -------------------------------------------------------------------------------

struct AdamState {
    struct Slot {
        std::vector<double> mW, vW, mb, vb, mg, vg, mB, vB;
    };
    std::vector<Slot> layers;
    std::uint64_t step = 0;
};

namespace nn_detail {

inline void adam_update(std::vector<double>& w, const std::vector<double>& g,
                        std::vector<double>& m, std::vector<double>& v, double lr, double b1,
                        double b2, double eps, std::uint64_t t, const std::string& where) {
    if (g.empty()) return;
    if (m.empty()) m.assign(w.size(), 0.0);
    if (v.empty()) v.assign(w.size(), 0.0);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!std::isfinite(g[i]))
            throw numeric_error("adam: non-finite gradient in " + where);
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
}

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::dense: return "dense";
        case LayerKind::dropout: return "dropout";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

}  // namespace nn_detail

inline void adam_step(const NetworkSpec& spec, NetworkParams& params,
                      const NetworkParams& grads, AdamState& state, double lr = 1e-3,
                      double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    if (state.layers.empty()) state.layers.resize(spec.layers.size());
    ++state.step;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        auto& p = params.layers[li];
        const auto& g = grads.layers[li];
        auto& s = state.layers[li];
        const std::string where = "layer " + std::to_string(li) + " (" +
                                  nn_detail::kind_name(spec.layers[li].kind) + ")";
        nn_detail::adam_update(p.W, g.W, s.mW, s.vW, lr, b1, b2, eps, state.step, where);
        nn_detail::adam_update(p.b, g.b, s.mb, s.vb, lr, b1, b2, eps, state.step, where);
        nn_detail::adam_update(p.gamma, g.gamma, s.mg, s.vg, lr, b1, b2, eps, state.step, where);
        nn_detail::adam_update(p.beta, g.beta, s.mB, s.vB, lr, b1, b2, eps, state.step, where);
    }
}

// ---- balanced batches ----------------------------------------------------------------------

// One epoch of class-balanced batches: the majority class is shuffled and
// consumed once; the minority class is resampled with replacement.
inline std::vector<std::vector<int>> balanced_batches(const std::vector<int>& labels,
                                                      int batch_size, Rng& rng) {
    if (batch_size < 2) throw input_error("batch size must be at least 2");
    std::vector<int> idx0, idx1;
    for (std::size_t i = 0; i < labels.size(); ++i)
        (labels[i] == 0 ? idx0 : idx1).push_back(static_cast<int>(i));
    if (idx0.empty() || idx1.empty())
        throw input_error("balanced_batches: both classes must be present");

    const bool zero_major = idx0.size() >= idx1.size();
    auto& major = zero_major ? idx0 : idx1;
    auto& minor = zero_major ? idx1 : idx0;

    // Fisher-Yates with our deterministic generator
    for (std::size_t i = major.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(major[i - 1], major[j]);
    }

    const int maj_per = (batch_size + 1) / 2;
    const int min_per = batch_size - maj_per;
    const std::size_t n_batches = major.size() / static_cast<std::size_t>(maj_per);
    std::vector<std::vector<int>> out;
    out.reserve(n_batches);
    std::size_t mpos = 0;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
        std::vector<int> batch;
        batch.reserve(batch_size);
        for (int k = 0; k < maj_per; ++k) batch.push_back(major[mpos++]);
        for (int k = 0; k < min_per; ++k)
            batch.push_back(minor[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(minor.size()) - 1))]);
        out.push_back(std::move(batch));
    }
    return out;
}

// ---- persistence ------------------------------------------------------------------------------

inline constexpr char kNnMagic[12] = {'L', 'U', 'M', 'I', 'T', 'R', 'A', 'C', 'K', '-', 'N', 'N'};
inline constexpr std::uint32_t kNnVersion = 1;

namespace nn_detail {

template <typename T>
void put(std::ostream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw input_error("network file truncated");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void put_array(std::ostream& out, const std::vector<double>& a) {
    put<std::uint64_t>(out, a.size());
    for (double x : a) put<double>(out, x);
}

inline std::vector<double> get_array(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (1u << 28)) throw input_error("network file corrupt: absurd array length");
    std::vector<double> a(n);
    for (auto& x : a) x = get<double>(in);
    return a;
}

}  // namespace nn_detail

inline void save_params(std::ostream& out, const NetworkSpec& spec,
                        const NetworkParams& params) {
    out.write(kNnMagic, sizeof(kNnMagic));
    nn_detail::put<std::uint32_t>(out, kNnVersion);
    nn_detail::put<std::uint64_t>(out, spec.hash());
    nn_detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& l : params.layers) {
        nn_detail::put_array(out, l.W);
        nn_detail::put_array(out, l.b);
        nn_detail::put_array(out, l.gamma);
        nn_detail::put_array(out, l.beta);
        nn_detail::put_array(out, l.run_mean);
        nn_detail::put_array(out, l.run_var);
    }
}

inline NetworkParams load_params(std::istream& in, const NetworkSpec& spec) {
    char magic[sizeof(kNnMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kNnMagic, sizeof(magic)) != 0)
        throw input_error("not a network parameter file (bad magic)");
    const auto version = nn_detail::get<std::uint32_t>(in);
    if (version != kNnVersion)
        throw input_error("unsupported network file version " + std::to_string(version));
    const auto hash = nn_detail::get<std::uint64_t>(in);
    if (hash != spec.hash()) {
        char expect[32], found[32];
        std::snprintf(expect, sizeof(expect), "%016llx",
                      static_cast<unsigned long long>(spec.hash()));
        std::snprintf(found, sizeof(found), "%016llx", static_cast<unsigned long long>(hash));
        throw input_error(std::string("network spec hash mismatch: expected ") + expect +
                          ", found " + found);
    }
    const auto n_layers = nn_detail::get<std::uint32_t>(in);
    if (n_layers != spec.layers.size())
        throw input_error("network file layer count mismatch");
    NetworkParams params;
    params.layers.resize(n_layers);
    for (auto& l : params.layers) {
        l.W = nn_detail::get_array(in);
        l.b = nn_detail::get_array(in);
        l.gamma = nn_detail::get_array(in);
        l.beta = nn_detail::get_array(in);
        l.run_mean = nn_detail::get_array(in);
        l.run_var = nn_detail::get_array(in);
    }
    for (const auto& l : params.layers)
        for (double rv : l.run_var)
            if (!(rv > 0.0)) throw input_error("network file corrupt: running variance <= 0");
    return params;
}

}  // namespace lumitrack
