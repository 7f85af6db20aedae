#pragma once

#include <cmath>
#include <vector>

#include "recam/activation.hpp"
#include "recam/core.hpp"
#include "recam/nets.hpp"

namespace recam {

// ---------------------------------------------------------------------------
// Adversarial climbing.

struct ClimbConfig {
    int steps = 8;
    double step_size = 0.01;
    double mu = 0.5;
    double mask_threshold = 0.5;
    // Scale each ascent direction by its max-abs entry, so one step moves any
    // pixel by at most `step_size`. Off = plain x + ξ·∇L.
    bool normalize_gradient = true;
    // Score the class with the resolved ReCAM weights instead of FC1.
    bool use_resolved_logits = false;

    void validate() const {
        if (steps < 0) throw ConfigError("climb steps must be nonnegative");
        if (step_size < 0) throw ConfigError("climb step size must be nonnegative");
        if (mu < 0) throw ConfigError("climb mu must be nonnegative");
    }
};

/// Value and input-gradient of the climbing objective
///   L = y[k] - Σ_{j≠k} y[j] - μ ‖R ⊙ |A⁺_k(x) - A⁺_k(x⁰)|‖₁
/// where A⁺_k is the un-normalised ReCAM (ReLU of w″_kᵀ f) and R the
/// restricting mask 1(ReCAM_k(x) > threshold).
template <typename T>
struct ClimbObjective {
    T value = 0;
    Tensor3<T> input_grad;
    Grid<T> recam_raw;     // ReLU(w″_kᵀ f) at x
    std::vector<T> logits;
};

template <typename T>
ClimbObjective<T> climb_objective(const ClassifierState<T>& s, const ReCAMWeights<T>& rw, const Tensor3<T>& x, int k,
                                  const Grid<T>& seed_raw, const ClimbConfig& cfg, bool want_grad = true) {
    EncoderTape<T> tape;
    const auto f = s.encoder.forward(x, want_grad ? &tape : nullptr);
    const Matrix<T>& head = cfg.use_resolved_logits ? rw.w : s.w;
    const bool use_bias = s.arch.head_bias && !cfg.use_resolved_logits;
    const auto pooled = global_average_pool(f);
    ClimbObjective<T> out;
    out.logits = linear_head<T>(head, s.b, use_bias, pooled);
    const int K = head.rows, C = f.channels, N = f.plane_size();

    out.value = out.logits[k];
    for (int j = 0; j < K; ++j)
        if (j != k) out.value -= out.logits[j];

    const auto a = weighted_channel_sum<T>(f, rw.w.row(k));
    out.recam_raw = Grid<T>(a.height, a.width);
    for (std::size_t n = 0; n < a.size(); ++n) out.recam_raw.data[n] = std::max(a.data[n], T(0));
    const auto normalized = normalize_map(a);
    std::vector<T> reg_coef(N, T(0));
    const bool regularize = seed_raw.size() == a.size();
    for (int n = 0; regularize && n < N; ++n) {
        if (!(normalized.data[n] > static_cast<T>(cfg.mask_threshold))) continue;
        const T diff = out.recam_raw.data[n] - seed_raw.data[n];
        out.value -= static_cast<T>(cfg.mu) * std::abs(diff);
        if (a.data[n] > T(0) && diff != T(0)) reg_coef[n] = -static_cast<T>(cfg.mu) * (diff > T(0) ? T(1) : T(-1));
    }
    if (!want_grad) return out;

    Tensor3<T> df(C, f.height, f.width);
    const T inv_n = T(1) / static_cast<T>(N);
    for (int c = 0; c < C; ++c) {
        T g = 0;
        for (int j = 0; j < K; ++j) g += (j == k ? T(1) : T(-1)) * head(j, c);
        g *= inv_n;
        const T wkc = rw.w(k, c);
        auto dp = df.plane(c);
        for (int n = 0; n < N; ++n) dp[n] = g + reg_coef[n] * wkc;
    }
    out.input_grad = s.encoder.backward(tape, std::move(df), nullptr, true);
    return out;
}

/// Iterated ascent on the climbing objective; returns the normalised sum of
/// un-normalised ReCAM maps over x⁰..x^T at feature resolution.
template <typename T>
ActivationMap<T> adversarial_climb(const Tensor3<T>& image, int k, const ClassifierState<T>& s, const ReCAMWeights<T>& rw,
                                   const ClimbConfig& cfg, std::vector<T>* class_scores = nullptr) {
    cfg.validate();
    if (k < 0 || k >= s.num_classes()) throw ContractError("adversarial_climb: class index out of range");
    Tensor3<T> x = image;
    const auto first = climb_objective(s, rw, x, k, Grid<T>(), cfg, false);
    const Grid<T> seed_raw = first.recam_raw;
    // Double accumulation: for float maps the sum of ξ=0 steps is exact, so the
    // normalised result then equals the seed bit for bit.
    Grid<double> accum = seed_raw.template cast<double>();
    if (class_scores) class_scores->assign(1, first.logits[k]);
    for (int t = 1; t <= cfg.steps; ++t) {
        const auto obj = climb_objective(s, rw, x, k, seed_raw, cfg);
        T scale = static_cast<T>(cfg.step_size);
        if (cfg.normalize_gradient) {
            T peak = 0;
            for (T v : obj.input_grad.data) peak = std::max(peak, std::abs(v));
            scale = peak > T(0) ? scale / peak : T(0);
        }
        for (std::size_t n = 0; n < x.data.size(); ++n) x.data[n] += scale * obj.input_grad.data[n];
        if (!all_finite<T>(x.data)) throw DivergenceError(t, "non-finite adversarial perturbation");
        const auto next = climb_objective(s, rw, x, k, seed_raw, cfg, false);
        for (std::size_t n = 0; n < accum.size(); ++n) accum.data[n] += static_cast<double>(next.recam_raw.data[n]);
        if (class_scores) class_scores->push_back(next.logits[k]);
    }
    ActivationMap<T> out;
    out.cls = k;
    out.raw = accum.template cast<T>();
    out.normalized = normalize_map(accum).template cast<T>();
    return out;
}

// ---------------------------------------------------------------------------
// Affinity random walk.

struct WalkConfig {
    int radius = 5;
    double tau = 0.2;
    int iterations = 32;

    void validate() const {
        if (radius < 1) throw ConfigError("walk radius must be at least 1");
        if (!(tau > 0)) throw ConfigError("walk tau must be positive");
        if (iterations < 0) throw ContractError("walk iterations must be nonnegative");
    }
};

/// Row-stochastic sparse matrix over row-major pixel indices (CSR).
struct TransitionMatrix {
    int height = 0, width = 0;
    std::vector<std::uint32_t> row_ptr;
    std::vector<std::uint32_t> col;
    std::vector<double> value;

    std::size_t size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t nnz() const { return value.size(); }

    std::vector<double> apply(std::span<const double> v) const {
        std::vector<double> out(size(), 0.0);
        for (std::size_t r = 0; r < size(); ++r) {
            double acc = 0;
            for (auto e = row_ptr[r]; e < row_ptr[r + 1]; ++e) acc += value[e] * v[col[e]];
            out[r] = acc;
        }
        return out;
    }

    struct Triplet {
        std::uint32_t row, col;
        double value;
    };

    /// Triplets must be sorted by row.
    static TransitionMatrix from_triplets(int height, int width, const std::vector<Triplet>& entries) {
        TransitionMatrix t;
        t.height = height;
        t.width = width;
        t.row_ptr.assign(t.size() + 1, 0);
        for (const auto& e : entries) {
            if (e.row >= t.size() || e.col >= t.size()) throw ContractError("transition triplet out of range");
            ++t.row_ptr[e.row + 1];
        }
        for (std::size_t r = 0; r < t.size(); ++r) t.row_ptr[r + 1] += t.row_ptr[r];
        for (std::size_t n = 1; n < entries.size(); ++n)
            if (entries[n].row < entries[n - 1].row) throw ContractError("transition triplets must be sorted by row");
        for (const auto& e : entries) {
            t.col.push_back(e.col);
            t.value.push_back(e.value);
        }
        return t;
    }
};

/// Affinity a(p, q) = exp(-max_{r on segment pq} B(r) / τ) for 0 < |p - q| ≤ radius,
/// self-affinity 1, then row normalisation. A row with zero mass becomes a
/// self-loop of probability 1.
inline TransitionMatrix build_transition(const Grid<double>& boundary, const WalkConfig& cfg) {
    cfg.validate();
    const int H = boundary.height, W = boundary.width, r = cfg.radius;
    std::vector<std::array<int, 2>> offsets;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dy * dy + dx * dx <= r * r) offsets.push_back({dy, dx});

    TransitionMatrix t;
    t.height = H;
    t.width = W;
    t.row_ptr.reserve(t.size() + 1);
    t.row_ptr.push_back(0);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const std::size_t begin = t.value.size();
            double mass = 0;
            const auto self = static_cast<std::uint32_t>(i * W + j);
            for (auto [dy, dx] : offsets) {
                const int y = i + dy, x = j + dx;
                if (y < 0 || x < 0 || y >= H || x >= W) continue;
                double a = 1.0;
                if (dy != 0 || dx != 0) {
                    const int n = std::max(std::abs(dy), std::abs(dx));
                    double bmax = 0;
                    for (int s = 0; s <= n; ++s) {
                        const int py = i + static_cast<int>(std::lround(static_cast<double>(dy) * s / n));
                        const int px = j + static_cast<int>(std::lround(static_cast<double>(dx) * s / n));
                        bmax = std::max(bmax, boundary(py, px));
                    }
                    a = std::exp(-bmax / cfg.tau);
                }
                if (a <= 0) continue;
                t.col.push_back(static_cast<std::uint32_t>(y * W + x));
                t.value.push_back(a);
                mass += a;
            }
            if (!(mass > 0)) {
                t.col.resize(begin);
                t.value.resize(begin);
                t.col.push_back(self);
                t.value.push_back(1.0);
            } else {
                for (std::size_t e = begin; e < t.value.size(); ++e) t.value[e] /= mass;
            }
            t.row_ptr.push_back(static_cast<std::uint32_t>(t.value.size()));
        }
    return t;
}

/// vec(M') = Tᵗ · vec(seed ⊙ (1 - B)), then max-normalised.
inline Grid<double> random_walk_refine(const Grid<double>& seed, const Grid<double>& boundary, const TransitionMatrix& t,
                                       int iterations) {
    if (iterations < 0) throw ContractError("random_walk_refine: negative iteration count");
    if (!seed.same_shape(boundary) || seed.height != t.height || seed.width != t.width)
        throw ContractError("random_walk_refine: seed, boundary and transition shapes disagree");
    std::vector<double> v(seed.size());
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = seed.data[n] * (1.0 - boundary.data[n]);
    for (int it = 0; it < iterations; ++it) v = t.apply(v);
    Grid<double> out(seed.height, seed.width);
    out.data = std::move(v);
    return normalize_map(out);
}

/// Same walk without the final normalisation (mass bookkeeping in tests).
inline std::vector<double> random_walk_raw(const Grid<double>& seed, const Grid<double>& boundary,
                                           const TransitionMatrix& t, int iterations) {
    std::vector<double> v(seed.size());
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = seed.data[n] * (1.0 - boundary.data[n]);
    for (int it = 0; it < iterations; ++it) v = t.apply(v);
    return v;
}

} // namespace recam
