#pragma once

#include <string>
#include <vector>

#include "recam/core.hpp"
#include "recam/nets.hpp"

namespace recam {

/// Class response map: raw A_k = w_kᵀ f and its ReLU/max normalisation.
template <typename T>
struct ActivationMap {
    int cls = 0;
    Grid<T> raw;
    Grid<T> normalized;
};

/// ReLU(raw) / max(ReLU(raw)); an identically non-positive map normalises to zero.
template <typename T>
Grid<T> normalize_map(const Grid<T>& raw) {
    Grid<T> out(raw.height, raw.width);
    T peak = 0;
    for (T v : raw.data) peak = std::max(peak, v);
    if (!(peak > T(0))) return out;
    for (std::size_t n = 0; n < raw.size(); ++n) out.data[n] = std::max(raw.data[n], T(0)) / peak;
    return out;
}

template <typename T>
Grid<T> weighted_channel_sum(const Tensor3<T>& f, std::span<const T> weights) {
    if (static_cast<int>(weights.size()) != f.channels) throw ContractError("CAM: weight length does not match channels");
    Grid<T> a(f.height, f.width);
    for (int c = 0; c < f.channels; ++c) {
        const T wc = weights[c];
        const auto plane = f.plane(c);
        for (std::size_t n = 0; n < plane.size(); ++n) a.data[n] += wc * plane[n];
    }
    return a;
}

template <typename T>
ActivationMap<T> extract_cam(const Tensor3<T>& f, std::span<const T> w_k, int k) {
    ActivationMap<T> m;
    m.cls = k;
    m.raw = weighted_channel_sum(f, w_k);
    m.normalized = normalize_map(m.raw);
    return m;
}

/// f_k(c, i, j) = M(i, j) · f(c, i, j)
template <typename T>
Tensor3<T> mask_features(const Tensor3<T>& f, const Grid<T>& mask) {
    if (mask.height != f.height || mask.width != f.width) throw ContractError("mask_features: spatial shape mismatch");
    Tensor3<T> out = f;
    for (int c = 0; c < f.channels; ++c) {
        auto plane = out.plane(c);
        for (std::size_t n = 0; n < plane.size(); ++n) plane[n] *= mask.data[n];
    }
    return out;
}

enum class WeightVariant { w, wprime, sum, product };

inline const char* to_string(WeightVariant v) {
    switch (v) {
    case WeightVariant::w: return "w";
    case WeightVariant::wprime: return "wprime";
    case WeightVariant::sum: return "sum";
    case WeightVariant::product: return "product";
    }
    return "?";
}

inline WeightVariant parse_weight_variant(const std::string& s) {
    if (s == "w") return WeightVariant::w;
    if (s == "wprime") return WeightVariant::wprime;
    if (s == "sum") return WeightVariant::sum;
    if (s == "product") return WeightVariant::product;
    throw ConfigError("unknown weight variant '" + s + "' (expected w, wprime, sum, product)");
}

template <typename T>
struct ReCAMWeights {
    WeightVariant variant = WeightVariant::product;
    Matrix<T> w;  // K×C
};

template <typename T>
ReCAMWeights<T> resolve_weights(const ClassifierState<T>& s, WeightVariant variant) {
    ReCAMWeights<T> rw{variant, s.w};
    switch (variant) {
    case WeightVariant::w: break;
    case WeightVariant::wprime: rw.w = s.w2; break;
    case WeightVariant::sum:
        for (std::size_t n = 0; n < rw.w.data.size(); ++n) rw.w.data[n] = s.w.data[n] + s.w2.data[n];
        break;
    case WeightVariant::product:
        for (std::size_t n = 0; n < rw.w.data.size(); ++n) rw.w.data[n] = s.w.data[n] * s.w2.data[n];
        break;
    }
    return rw;
}

template <typename T>
ActivationMap<T> extract_recam(const Tensor3<T>& f, const ReCAMWeights<T>& rw, int k) {
    if (k < 0 || k >= rw.w.rows) throw ContractError("extract_recam: class index out of range");
    return extract_cam<T>(f, rw.w.row(k), k);
}

/// Upsamples the raw map to image resolution and renormalises it there.
template <typename T>
ActivationMap<T> upsample_map(const ActivationMap<T>& m, int height, int width) {
    ActivationMap<T> out;
    out.cls = m.cls;
    out.raw = resize_bilinear(m.raw, height, width);
    out.normalized = normalize_map(out.raw);
    return out;
}

template <typename T>
Tensor3<T> flip_horizontal(const Tensor3<T>& x) {
    Tensor3<T> out(x.channels, x.height, x.width);
    for (int c = 0; c < x.channels; ++c)
        for (int i = 0; i < x.height; ++i)
            for (int j = 0; j < x.width; ++j) out(c, i, j) = x(c, i, x.width - 1 - j);
    return out;
}

template <typename T>
Grid<T> flip_horizontal(const Grid<T>& g) {
    Grid<T> out(g.height, g.width);
    for (int i = 0; i < g.height; ++i)
        for (int j = 0; j < g.width; ++j) out(i, j) = g(i, g.width - 1 - j);
    return out;
}

/// Feature-resolution maps for every positive class of an image. With
/// `flip_tta` the raw map is averaged with the un-flipped map of the mirrored image.
template <typename T>
std::vector<ActivationMap<T>> extract_image_maps(const ClassifierState<T>& s, const ReCAMWeights<T>& rw,
                                                 const Tensor3<T>& x, std::span<const int> label, bool flip_tta = false) {
    const auto f = encode(x, s);
    Tensor3<T> f_flip;
    if (flip_tta) f_flip = encode(flip_horizontal(x), s);
    std::vector<ActivationMap<T>> maps;
    for (int k = 0; k < static_cast<int>(label.size()); ++k) {
        if (!label[k]) continue;
        auto m = extract_recam(f, rw, k);
        if (flip_tta) {
            const auto mirrored = flip_horizontal(extract_recam(f_flip, rw, k).raw);
            for (std::size_t n = 0; n < m.raw.size(); ++n) m.raw.data[n] = (m.raw.data[n] + mirrored.data[n]) / T(2);
            m.normalized = normalize_map(m.raw);
        }
        maps.push_back(std::move(m));
    }
    return maps;
}

} // namespace recam
