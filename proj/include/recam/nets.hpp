#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "recam/core.hpp"

namespace recam {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 2-D convolution over planar tensors, lowered to one GEMM per call.
template <typename T>
struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int dilation = 1;
    bool has_bias = true;
    std::vector<T> weight;  // out × (in·k·k), row-major
    std::vector<T> bias;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int s, int pad, int dil, bool bias_on)
        : in_channels(in), out_channels(out), kernel(k), stride(s), padding(pad), dilation(dil), has_bias(bias_on),
          weight(static_cast<std::size_t>(out) * in * k * k, T(0)), bias(bias_on ? out : 0, T(0)) {}

    int patch() const { return in_channels * kernel * kernel; }
    int out_size(int n) const { return (n + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1; }

    void im2col(const Tensor3<T>& in, std::vector<T>& cols) const {
        const int oh = out_size(in.height), ow = out_size(in.width);
        cols.assign(static_cast<std::size_t>(patch()) * oh * ow, T(0));
        std::size_t r = 0;
        for (int c = 0; c < in_channels; ++c)
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx, ++r) {
                    T* dst = cols.data() + r * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky * dilation;
                        if (iy < 0 || iy >= in.height) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx * dilation;
                            if (ix >= 0 && ix < in.width) dst[oy * ow + ox] = in(c, iy, ix);
                        }
                    }
                }
    }

    void col2im(const std::vector<T>& cols, Tensor3<T>& in_grad) const {
        const int oh = out_size(in_grad.height), ow = out_size(in_grad.width);
        std::size_t r = 0;
        for (int c = 0; c < in_channels; ++c)
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx, ++r) {
                    const T* src = cols.data() + r * oh * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky * dilation;
                        if (iy < 0 || iy >= in_grad.height) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx * dilation;
                            if (ix >= 0 && ix < in_grad.width) in_grad(c, iy, ix) += src[oy * ow + ox];
                        }
                    }
                }
    }

    /// Writes the pre-activation output; `cols` receives the lowered input.
    Tensor3<T> forward(const Tensor3<T>& in, std::vector<T>& cols) const {
        if (in.channels != in_channels) throw ContractError("conv: input channel mismatch");
        im2col(in, cols);
        const int oh = out_size(in.height), ow = out_size(in.width);
        Tensor3<T> out(out_channels, oh, ow);
        Eigen::Map<const RowMatrix<T>> w(weight.data(), out_channels, patch());
        Eigen::Map<const RowMatrix<T>> x(cols.data(), patch(), oh * ow);
        Eigen::Map<RowMatrix<T>> y(out.data.data(), out_channels, oh * ow);
        y.noalias() = w * x;
        if (has_bias)
            for (int o = 0; o < out_channels; ++o) y.row(o).array() += bias[o];
        return out;
    }

    /// Accumulates parameter gradients into `grad`; returns dL/d(input) when requested.
    /// `grad` may be null when only the input gradient is wanted.
    void backward(const std::vector<T>& cols, const Tensor3<T>& out_grad, Conv2d* grad, Tensor3<T>* in_grad) const {
        const int hw = out_grad.height * out_grad.width;
        Eigen::Map<const RowMatrix<T>> dy(out_grad.data.data(), out_channels, hw);
        if (grad) {
            Eigen::Map<const RowMatrix<T>> x(cols.data(), patch(), hw);
            Eigen::Map<RowMatrix<T>> dw(grad->weight.data(), out_channels, patch());
            dw.noalias() += dy * x.transpose();
            // Sequential sum: Eigen's vectorised reduction peels by pointer
            // alignment, which would make the result depend on heap layout.
            if (has_bias)
                for (int o = 0; o < out_channels; ++o) {
                    const T* row = out_grad.data.data() + static_cast<std::size_t>(o) * hw;
                    T acc = 0;
                    for (int n = 0; n < hw; ++n) acc += row[n];
                    grad->bias[o] += acc;
                }
        }
        if (in_grad) {
            std::vector<T> dcols(static_cast<std::size_t>(patch()) * hw);
            Eigen::Map<const RowMatrix<T>> w(weight.data(), out_channels, patch());
            Eigen::Map<RowMatrix<T>> dx(dcols.data(), patch(), hw);
            dx.noalias() = w.transpose() * dy;
            col2im(dcols, *in_grad);
        }
    }

    template <typename U>
    Conv2d<U> cast() const {
        Conv2d<U> out(in_channels, out_channels, kernel, stride, padding, dilation, has_bias);
        std::transform(weight.begin(), weight.end(), out.weight.begin(), [](T v) { return static_cast<U>(v); });
        std::transform(bias.begin(), bias.end(), out.bias.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }
};

/// Architecture of the feature encoder (3×3 conv + ReLU stages) and heads.
struct ArchConfig {
    std::vector<int> widths{16, 32, 32, 64, 64, 64};
    std::vector<int> strides{2, 2, 1, 2, 1, 1};
    int num_classes = 8;
    bool head_bias = false;

    int feature_channels() const { return widths.back(); }
    int total_stride() const {
        int s = 1;
        for (int v : strides) s *= v;
        return s;
    }
    void validate() const {
        if (widths.empty() || widths.size() != strides.size()) throw ConfigError("encoder widths/strides mismatch");
        for (int s : strides)
            if (s != 1 && s != 2) throw ConfigError("encoder strides must be 1 or 2");
        if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    }
};

/// Activations a backward pass needs. One tape serves one image.
template <typename T>
struct EncoderTape {
    int in_height = 0, in_width = 0;
    std::vector<std::vector<T>> cols;
    std::vector<Tensor3<T>> outputs;  // post-ReLU
};

/// Convolutional encoder; the output is the feature block before GAP.
template <typename T>
struct Encoder {
    std::vector<Conv2d<T>> layers;

    Encoder() = default;
    explicit Encoder(const ArchConfig& arch) {
        arch.validate();
        int in = 3;
        for (std::size_t i = 0; i < arch.widths.size(); ++i) {
            // Last layer is bias-free so a zero-weight encoder maps any input to zero.
            const bool last = i + 1 == arch.widths.size();
            layers.emplace_back(in, arch.widths[i], 3, arch.strides[i], 1, 1, !last);
            in = arch.widths[i];
        }
    }

    int stride() const {
        int s = 1;
        for (const auto& l : layers) s *= l.stride;
        return s;
    }

    Tensor3<T> forward(const Tensor3<T>& x, EncoderTape<T>* tape = nullptr) const {
        const int s = stride();
        if (x.height % s != 0 || x.width % s != 0)
            throw ConfigError("input size " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                              " not divisible by encoder stride " + std::to_string(s));
        std::vector<T> scratch;
        Tensor3<T> h = x;
        if (tape) {
            tape->in_height = x.height;
            tape->in_width = x.width;
            tape->cols.resize(layers.size());
            tape->outputs.resize(layers.size());
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& cols = tape ? tape->cols[i] : scratch;
            h = layers[i].forward(h, cols);
            for (auto& v : h.data) v = v > T(0) ? v : T(0);
            if (tape) tape->outputs[i] = h;
        }
        return h;
    }

    /// Backpropagates dL/df into `grad` (nullable). Returns dL/dx when `want_input_grad`.
    Tensor3<T> backward(const EncoderTape<T>& tape, Tensor3<T> grad_out, Encoder* grad, bool want_input_grad = false) const {
        for (std::size_t li = layers.size(); li-- > 0;) {
            const auto& out = tape.outputs[li];
            for (std::size_t n = 0; n < grad_out.data.size(); ++n)
                if (!(out.data[n] > T(0))) grad_out.data[n] = T(0);
            const bool need_input = li > 0 || want_input_grad;
            Tensor3<T> in_grad;
            if (need_input) {
                const int ih = li > 0 ? tape.outputs[li - 1].height : tape.in_height;
                const int iw = li > 0 ? tape.outputs[li - 1].width : tape.in_width;
                in_grad = Tensor3<T>(layers[li].in_channels, ih, iw);
            }
            layers[li].backward(tape.cols[li], grad_out, grad ? &grad->layers[li] : nullptr, need_input ? &in_grad : nullptr);
            if (!need_input) return {};
            grad_out = std::move(in_grad);
        }
        return grad_out;
    }

    template <typename U>
    Encoder<U> cast() const {
        Encoder<U> out;
        for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
        return out;
    }
};

/// Encoder plus the two linear heads (FC1 trained with BCE, FC2 with SCE).
template <typename T>
struct ClassifierState {
    ArchConfig arch;
    Encoder<T> encoder;
    Matrix<T> w;        // FC1, K×C
    Matrix<T> w2;       // FC2, K×C
    std::vector<T> b;   // FC1 bias (used only with arch.head_bias)
    std::vector<T> b2;
    double lambda = 1.0;
    std::uint64_t seed = 0;

    ClassifierState() = default;
    explicit ClassifierState(const ArchConfig& a)
        : arch(a), encoder(a), w(a.num_classes, a.feature_channels()), w2(a.num_classes, a.feature_channels()),
          b(a.num_classes, T(0)), b2(a.num_classes, T(0)) {}

    int num_classes() const { return arch.num_classes; }
    int channels() const { return arch.feature_channels(); }

    template <typename U>
    ClassifierState<U> cast() const {
        ClassifierState<U> out;
        out.arch = arch;
        out.encoder = encoder.template cast<U>();
        out.w = w.template cast<U>();
        out.w2 = w2.template cast<U>();
        out.b.assign(b.begin(), b.end());
        out.b2.assign(b2.begin(), b2.end());
        out.lambda = lambda;
        out.seed = seed;
        return out;
    }
};

/// Visits every trainable array as (name, span). The order is stable and shared by
/// the optimizer and the checkpoint writer.
template <typename T, typename F>
void for_each_param(Encoder<T>& enc, const std::string& prefix, F&& fn) {
    for (std::size_t i = 0; i < enc.layers.size(); ++i) {
        auto& l = enc.layers[i];
        fn(prefix + std::to_string(i) + ".weight", std::span<T>(l.weight));
        if (l.has_bias) fn(prefix + std::to_string(i) + ".bias", std::span<T>(l.bias));
    }
}

template <typename T, typename F>
void for_each_param(ClassifierState<T>& s, F&& fn) {
    for_each_param(s.encoder, "encoder.", fn);
    fn("fc1.weight", std::span<T>(s.w.data));
    fn("fc2.weight", std::span<T>(s.w2.data));
    if (s.arch.head_bias) {
        fn("fc1.bias", std::span<T>(s.b));
        fn("fc2.bias", std::span<T>(s.b2));
    }
}

template <typename S>
S zeros_like(const S& s) {
    S z = s;
    for_each_param(z, [](const std::string&, auto span) { std::fill(span.begin(), span.end(), 0); });
    return z;
}

/// He-normal convolutions, U(±1/√C) heads. FC2 draws from its own stream so it
/// can be re-initialised at the start of phase 2 without touching the rest.
template <typename T>
ClassifierState<T> init_classifier(const ArchConfig& arch, std::uint64_t seed) {
    ClassifierState<T> s(arch);
    s.seed = seed;
    Rng rng(derive_seed(seed, 0xe4c0de));
    for (auto& l : s.encoder.layers) {
        const double sd = std::sqrt(2.0 / l.patch());
        for (auto& v : l.weight) v = static_cast<T>(sd * rng.normal());
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(arch.feature_channels()));
    for (auto& v : s.w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    init_fc2(s, seed);
    return s;
}

template <typename T>
void init_fc2(ClassifierState<T>& s, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xfc2));
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.channels()));
    for (auto& v : s.w2.data) v = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(s.b2.begin(), s.b2.end(), T(0));
}

template <typename T>
std::vector<T> global_average_pool(const Tensor3<T>& f) {
    std::vector<T> g(f.channels, T(0));
    const T inv = T(1) / static_cast<T>(f.plane_size());
    for (int c = 0; c < f.channels; ++c) {
        T sum = 0;
        for (T v : f.plane(c)) sum += v;
        g[c] = sum * inv;
    }
    return g;
}

template <typename T>
std::vector<T> linear_head(const Matrix<T>& w, std::span<const T> bias, bool use_bias, std::span<const T> x) {
    if (static_cast<int>(x.size()) != w.cols) throw ContractError("head: feature channel count does not match weights");
    std::vector<T> z(w.rows);
    for (int k = 0; k < w.rows; ++k) {
        T acc = 0;
        for (int c = 0; c < w.cols; ++c) acc += w(k, c) * x[c];
        z[k] = acc + (use_bias ? bias[k] : T(0));
    }
    return z;
}

template <typename T>
std::vector<T> classify_fc1(const Tensor3<T>& f, const ClassifierState<T>& s) {
    const auto g = global_average_pool(f);
    return linear_head<T>(s.w, s.b, s.arch.head_bias, g);
}

template <typename T>
std::vector<T> classify_fc2(const Tensor3<T>& f, const ClassifierState<T>& s) {
    const auto g = global_average_pool(f);
    return linear_head<T>(s.w2, s.b2, s.arch.head_bias, g);
}

template <typename T>
Tensor3<T> encode(const Tensor3<T>& x, const ClassifierState<T>& s, EncoderTape<T>* tape = nullptr) {
    return s.encoder.forward(x, tape);
}

// ---------------------------------------------------------------------------
// Bilinear resizing (half-pixel centres, edge clamped).

struct BilinearTap {
    int y0, y1, x0, x1;
    double wy, wx;
};

inline std::vector<BilinearTap> bilinear_taps(int in_h, int in_w, int out_h, int out_w) {
    std::vector<BilinearTap> taps(static_cast<std::size_t>(out_h) * out_w);
    const double sy = static_cast<double>(in_h) / out_h, sx = static_cast<double>(in_w) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, in_h - 1);
        for (int j = 0; j < out_w; ++j) {
            double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, in_w - 1);
            taps[static_cast<std::size_t>(i) * out_w + j] = {y0, y1, x0, x1, fy - y0, fx - x0};
        }
    }
    return taps;
}

template <typename T>
Grid<T> resize_bilinear(const Grid<T>& in, int out_h, int out_w) {
    Grid<T> out(out_h, out_w);
    const auto taps = bilinear_taps(in.height, in.width, out_h, out_w);
    for (std::size_t n = 0; n < taps.size(); ++n) {
        const auto& t = taps[n];
        const T top = in(t.y0, t.x0) * T(1 - t.wx) + in(t.y0, t.x1) * T(t.wx);
        const T bot = in(t.y1, t.x0) * T(1 - t.wx) + in(t.y1, t.x1) * T(t.wx);
        out.data[n] = top * T(1 - t.wy) + bot * T(t.wy);
    }
    return out;
}

template <typename T>
Tensor3<T> resize_bilinear(const Tensor3<T>& in, int out_h, int out_w) {
    Tensor3<T> out(in.channels, out_h, out_w);
    const auto taps = bilinear_taps(in.height, in.width, out_h, out_w);
    for (int c = 0; c < in.channels; ++c)
        for (std::size_t n = 0; n < taps.size(); ++n) {
            const auto& t = taps[n];
            const T top = in(c, t.y0, t.x0) * T(1 - t.wx) + in(c, t.y0, t.x1) * T(t.wx);
            const T bot = in(c, t.y1, t.x0) * T(1 - t.wx) + in(c, t.y1, t.x1) * T(t.wx);
            out.data[static_cast<std::size_t>(c) * taps.size() + n] = top * T(1 - t.wy) + bot * T(t.wy);
        }
    return out;
}

// Adjoint of resize_bilinear.
template <typename T>
Tensor3<T> resize_bilinear_backward(const Tensor3<T>& out_grad, int in_h, int in_w) {
    Tensor3<T> g(out_grad.channels, in_h, in_w);
    const auto taps = bilinear_taps(in_h, in_w, out_grad.height, out_grad.width);
    for (int c = 0; c < out_grad.channels; ++c)
        for (std::size_t n = 0; n < taps.size(); ++n) {
            const auto& t = taps[n];
            const T d = out_grad.data[static_cast<std::size_t>(c) * taps.size() + n];
            g(c, t.y0, t.x0) += d * T((1 - t.wy) * (1 - t.wx));
            g(c, t.y0, t.x1) += d * T((1 - t.wy) * t.wx);
            g(c, t.y1, t.x0) += d * T(t.wy * (1 - t.wx));
            g(c, t.y1, t.x1) += d * T(t.wy * t.wx);
        }
    return g;
}

// ---------------------------------------------------------------------------
// Segmentation head: three dilated 5×5 convolutions at half resolution, then
// bilinear upsampling back to the input size.

struct SegmenterConfig {
    int num_classes = 8;  // foreground classes; output has num_classes + 1 channels
    int width = 32;
};

template <typename T>
struct SegmenterTape {
    std::vector<std::vector<T>> cols;
    std::vector<Tensor3<T>> outputs;
    int in_height = 0, in_width = 0;
};

template <typename T>
struct SegmenterState {
    SegmenterConfig cfg;
    std::vector<Conv2d<T>> layers;

    SegmenterState() = default;
    explicit SegmenterState(const SegmenterConfig& c) : cfg(c) {
        layers.emplace_back(3, c.width, 5, 2, 2, 1, true);
        layers.emplace_back(c.width, c.width, 5, 1, 4, 2, true);
        layers.emplace_back(c.width, c.num_classes + 1, 5, 1, 8, 4, true);
    }
};

template <typename T, typename F>
void for_each_param(SegmenterState<T>& s, F&& fn) {
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
        fn("seg." + std::to_string(i) + ".weight", std::span<T>(s.layers[i].weight));
        fn("seg." + std::to_string(i) + ".bias", std::span<T>(s.layers[i].bias));
    }
}

template <typename T>
SegmenterState<T> init_segmenter(const SegmenterConfig& cfg, std::uint64_t seed) {
    SegmenterState<T> s(cfg);
    Rng rng(derive_seed(seed, 0x5e6));
    for (auto& l : s.layers) {
        const double sd = std::sqrt(2.0 / l.patch());
        for (auto& v : l.weight) v = static_cast<T>(sd * rng.normal());
    }
    return s;
}

/// Per-pixel logits, (K+1)×H×W.
template <typename T>
Tensor3<T> segment(const Tensor3<T>& x, const SegmenterState<T>& s, SegmenterTape<T>* tape = nullptr) {
    if (x.height % 2 || x.width % 2) throw ConfigError("segmenter input size must be even");
    std::vector<T> scratch;
    Tensor3<T> h = x;
    if (tape) {
        tape->cols.resize(s.layers.size());
        tape->outputs.resize(s.layers.size());
        tape->in_height = x.height;
        tape->in_width = x.width;
    }
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
        auto& cols = tape ? tape->cols[i] : scratch;
        h = s.layers[i].forward(h, cols);
        if (i + 1 < s.layers.size())
            for (auto& v : h.data) v = v > T(0) ? v : T(0);
        if (tape) tape->outputs[i] = h;
    }
    return resize_bilinear(h, x.height, x.width);
}

template <typename T>
void segment_backward(const SegmenterState<T>& s, const SegmenterTape<T>& tape, const Tensor3<T>& logit_grad,
                      SegmenterState<T>& grad) {
    const auto& last = tape.outputs.back();
    Tensor3<T> g = resize_bilinear_backward(logit_grad, last.height, last.width);
    for (std::size_t li = s.layers.size(); li-- > 0;) {
        if (li + 1 < s.layers.size()) {
            const auto& out = tape.outputs[li];
            for (std::size_t n = 0; n < g.data.size(); ++n)
                if (!(out.data[n] > T(0))) g.data[n] = T(0);
        }
        Tensor3<T> in_grad;
        if (li > 0) in_grad = Tensor3<T>(s.layers[li].in_channels, tape.outputs[li - 1].height, tape.outputs[li - 1].width);
        s.layers[li].backward(tape.cols[li], g, &grad.layers[li], li > 0 ? &in_grad : nullptr);
        if (li == 0) break;
        g = std::move(in_grad);
    }
}

// ---------------------------------------------------------------------------
// Optimizers over the for_each_param ordering.

enum class OptimizerKind { adam, sgd };

template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind, double weight_decay = 0.0) : kind_(kind), weight_decay_(weight_decay) {}

    /// Per-array learning-rate multiplier, looked up by parameter name.
    void set_lr_scale(std::function<double(const std::string&)> fn) { lr_scale_ = std::move(fn); }

    template <typename S>
    void step(S& params, S& grads, double lr) {
        std::vector<std::span<T>> p, g;
        std::vector<double> rate;
        for_each_param(params, [&](const std::string& name, std::span<T> v) {
            p.push_back(v);
            rate.push_back(lr_scale_ ? lr * lr_scale_(name) : lr);
        });
        for_each_param(grads, [&](const std::string&, std::span<T> v) { g.push_back(v); });
        if (m_.empty()) {
            for (auto& v : p) {
                m_.emplace_back(v.size(), T(0));
                v_.emplace_back(v.size(), T(0));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t a = 0; a < p.size(); ++a) {
            auto& pa = p[a];
            const auto& ga = g[a];
            const double lr_a = rate[a];
            for (std::size_t n = 0; n < pa.size(); ++n) {
                const T grad = ga[n] + static_cast<T>(weight_decay_) * pa[n];
                if (kind_ == OptimizerKind::sgd) {
                    pa[n] -= static_cast<T>(lr_a) * grad;
                    continue;
                }
                auto& m = m_[a][n];
                auto& v = v_[a][n];
                m = static_cast<T>(beta1) * m + static_cast<T>(1 - beta1) * grad;
                v = static_cast<T>(beta2) * v + static_cast<T>(1 - beta2) * grad * grad;
                const T mhat = m / static_cast<T>(bc1);
                const T vhat = v / static_cast<T>(bc2);
                pa[n] -= static_cast<T>(lr_a) * mhat / (std::sqrt(vhat) + static_cast<T>(eps));
            }
        }
    }

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

private:
    OptimizerKind kind_;
    double weight_decay_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
    std::function<double(const std::string&)> lr_scale_;
};

} // namespace recam
