#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "recam/core.hpp"

namespace recam {

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// log(1 + e^x) without overflow.
template <typename T>
T softplus(T x) {
    return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
std::vector<T> log_softmax(std::span<const T> z) {
    require(!z.empty(), "log_softmax: empty logits");
    const T zmax = *std::max_element(z.begin(), z.end());
    T sum = 0;
    for (T v : z) sum += std::exp(v - zmax);
    const T lse = zmax + std::log(sum);
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

template <typename T>
std::vector<T> softmax(std::span<const T> z) {
    auto out = log_softmax(z);
    for (auto& v : out) v = std::exp(v);
    return out;
}

template <typename T>
void check_multi_hot(std::span<const T> z, std::span<const int> y) {
    if (z.size() != y.size()) throw ContractError("logit/label dimension mismatch");
    for (int v : y) {
        if (v != 0 && v != 1) throw ContractError("label entries must be 0 or 1");
    }
}

/// Mean binary cross-entropy over the K sigmoid outputs.
template <typename T>
T bce_loss(std::span<const T> z, std::span<const int> y) {
    check_multi_hot(z, y);
    T sum = 0;
    for (std::size_t k = 0; k < z.size(); ++k) sum += y[k] ? softplus(-z[k]) : softplus(z[k]);
    return sum / static_cast<T>(z.size());
}

/// (sigmoid(z) - y) / K
template <typename T>
std::vector<T> grad_bce(std::span<const T> z, std::span<const int> y) {
    check_multi_hot(z, y);
    const T inv_k = T(1) / static_cast<T>(z.size());
    std::vector<T> g(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) g[k] = (sigmoid(z[k]) - static_cast<T>(y[k])) * inv_k;
    return g;
}

/// Softmax cross-entropy over per-class masked-feature logits. `per_class_logits`
/// holds one FC2 logit vector per positive class, in increasing class order.
template <typename T>
T sce_loss(const std::vector<std::vector<T>>& per_class_logits, std::span<const int> y) {
    const int positives = std::accumulate(y.begin(), y.end(), 0);
    if (positives == 0) throw ContractError("sce_loss: label has no positive class");
    if (static_cast<int>(per_class_logits.size()) != positives)
        throw ContractError("sce_loss: need one logit vector per positive class");
    T sum = 0;
    std::size_t idx = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (!y[k]) continue;
        const auto& z = per_class_logits[idx++];
        if (z.size() != y.size()) throw ContractError("sce_loss: logit dimension mismatch");
        sum -= log_softmax<T>(z)[k];
    }
    return sum / static_cast<T>(positives);
}

/// Cross-entropy of softmax(z) against a (possibly soft) target distribution.
template <typename T>
T softmax_cross_entropy(std::span<const T> z, std::span<const T> target) {
    require(z.size() == target.size(), "softmax_cross_entropy: dimension mismatch");
    const auto lsm = log_softmax(z);
    T sum = 0;
    for (std::size_t k = 0; k < z.size(); ++k) sum -= target[k] * lsm[k];
    return sum;
}

/// Gradient of softmax_cross_entropy: softmax(z) * sum(target) - target.
template <typename T>
std::vector<T> grad_softmax_cross_entropy(std::span<const T> z, std::span<const T> target) {
    require(z.size() == target.size(), "softmax_cross_entropy: dimension mismatch");
    const T mass = std::accumulate(target.begin(), target.end(), T(0));
    auto g = softmax(z);
    for (std::size_t k = 0; k < z.size(); ++k) g[k] = g[k] * mass - target[k];
    return g;
}

/// Vanilla (single-target) SCE on one logit vector.
template <typename T>
T vanilla_sce_loss(std::span<const T> z, std::span<const int> y) {
    check_multi_hot(z, y);
    if (std::accumulate(y.begin(), y.end(), 0) != 1) throw ContractError("vanilla SCE requires a one-hot label");
    const auto lsm = log_softmax(z);
    for (std::size_t k = 0; k < y.size(); ++k)
        if (y[k]) return -lsm[k];
    return T(0);
}

/// softmax(z) - y for a one-hot y.
template <typename T>
std::vector<T> grad_sce(std::span<const T> z, std::span<const int> y) {
    check_multi_hot(z, y);
    if (std::accumulate(y.begin(), y.end(), 0) != 1) throw ContractError("grad_sce requires a one-hot label");
    auto g = softmax(z);
    for (std::size_t k = 0; k < z.size(); ++k) g[k] -= static_cast<T>(y[k]);
    return g;
}

struct LossConfig {
    double lambda = 1.0;
    int num_classes = 0;
};

inline double recam_loss(double bce, double sce, const LossConfig& cfg) {
    if (cfg.lambda < 0) throw ConfigError("lambda must be nonnegative");
    return bce + cfg.lambda * sce;
}

/// Pixel-mean softmax cross-entropy over (K+1)×H×W logits. Pixels labelled
/// kIgnoreLabel are excluded from both the sum and the pixel count. When
/// `grad` is non-null it receives dL/dz in the logits' layout.
template <typename T>
T seg_loss(const Tensor3<T>& logits, const Grid<std::uint8_t>& labels, Tensor3<T>* grad = nullptr) {
    if (logits.height != labels.height || logits.width != labels.width)
        throw ContractError("seg_loss: logit and label grids disagree in shape");
    const int classes = logits.channels;
    std::size_t counted = 0;
    for (auto v : labels.data) {
        if (v == kIgnoreLabel) continue;
        if (v >= classes) throw ContractError("seg_loss: label exceeds class count");
        ++counted;
    }
    if (counted == 0) throw ContractError("seg_loss: every pixel is ignored");
    if (grad) *grad = Tensor3<T>(classes, logits.height, logits.width);

    const T inv = T(1) / static_cast<T>(counted);
    T total = 0;
    std::vector<T> z(classes);
    for (int i = 0; i < logits.height; ++i) {
        for (int j = 0; j < logits.width; ++j) {
            const auto label = labels(i, j);
            if (label == kIgnoreLabel) continue;
            for (int c = 0; c < classes; ++c) z[c] = logits(c, i, j);
            const auto lsm = log_softmax<T>(z);
            total -= lsm[label];
            if (grad) {
                for (int c = 0; c < classes; ++c)
                    (*grad)(c, i, j) = (std::exp(lsm[c]) - (c == label ? T(1) : T(0))) * inv;
            }
        }
    }
    return total * inv;
}

/// The four logit-gradient magnitudes of the binary (K = 2) BCE/SCE case study:
/// g1 = |dBCE/dz_p|, g2 = |dBCE/dz_q|, g3 = |dSCE/dz_p|, g4 = |dSCE/dz_q|.
struct RegimeRow {
    double z_p, z_q;
    double g1, g2, g3, g4;
};

inline std::vector<RegimeRow> regime_table(std::span<const double> z_p_values, std::span<const double> z_q_values) {
    require(!z_p_values.empty() && !z_q_values.empty(), "regime_table: empty grid");
    const std::array<int, 2> y{1, 0};
    std::vector<RegimeRow> rows;
    rows.reserve(z_p_values.size() * z_q_values.size());
    for (double zp : z_p_values) {
        for (double zq : z_q_values) {
            const std::array<double, 2> z{zp, zq};
            const auto gb = grad_bce<double>(z, y);
            const auto gs = grad_sce<double>(z, y);
            rows.push_back({zp, zq, std::abs(gb[0]), std::abs(gb[1]), std::abs(gs[0]), std::abs(gs[1])});
        }
    }
    return rows;
}

} // namespace recam
