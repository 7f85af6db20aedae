#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "recam/core.hpp"

namespace recam {

/// Parameters of the procedural corpus. Classes in one confusable group share
/// colour, stripe texture and silhouette and differ only in a small glyph
/// stamped over the object. Classes outside every group get a family of
/// their own and carry no glyph.
struct DatasetSpec {
    int num_classes = 8;
    std::vector<std::vector<int>> confusable_groups{{0, 1, 2, 3, 4}};
    int height = 64;
    int width = 64;
    double single_label_fraction = 0.4;
    int max_objects_per_image = 3;
    int background_styles = 4;
    std::uint64_t seed = 1;

    // Object radius range in pixels at 64×64; scaled with the shorter side.
    double min_radius = 10.0;
    double max_radius = 15.0;
    // Uniform per-pixel noise amplitude.
    double noise = 0.04;
    // Glyph edge length in pixels.
    int glyph_size = 5;
    // 0 stamps one glyph at the object centre; a positive pitch tiles the glyph
    // over the object on a lattice with that spacing.
    int glyph_pitch = 8;

    void validate() const {
        if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
        if (height < 16 || width < 16) throw ConfigError("image size must be at least 16x16");
        if (single_label_fraction < 0.0 || single_label_fraction > 1.0)
            throw ConfigError("single_label_fraction must lie in [0,1]");
        if (max_objects_per_image < 1) throw ConfigError("max_objects_per_image must be positive");
        if (single_label_fraction < 1.0 && max_objects_per_image < 2)
            throw ConfigError("multi-label images need max_objects_per_image >= 2");
        if (max_objects_per_image > num_classes) throw ConfigError("max_objects_per_image exceeds num_classes");
        if (background_styles < 1) throw ConfigError("background_styles must be positive");
        if (min_radius <= 1.0 || max_radius < min_radius) throw ConfigError("invalid radius range");
        if (glyph_size < 3) throw ConfigError("glyph_size must be at least 3");
        if (glyph_pitch != 0 && glyph_pitch <= glyph_size) throw ConfigError("glyph_pitch must exceed glyph_size");
        std::set<int> seen;
        for (const auto& g : confusable_groups) {
            if (g.size() < 2) throw ConfigError("confusable group must contain at least two classes");
            for (int k : g) {
                if (k < 0 || k >= num_classes) throw ConfigError("confusable group holds an invalid class index");
                if (!seen.insert(k).second) throw ConfigError("class appears in more than one confusable group");
            }
        }
    }
};

struct ImageSample {
    std::string id;
    Tensor3<float> pixels;          // 3×H×W, values in [0,1]
    std::vector<int> label;         // multi-hot, length K
    Grid<std::uint8_t> gt_mask;     // 0 = background, k+1 = class k

    int cardinality() const { return std::accumulate(label.begin(), label.end(), 0); }
};

namespace detail {

struct Family {
    std::array<double, 3> color;
    double stripe_angle;
    double stripe_period;
    int sides;  // 0 = ellipse
};

inline Family family_appearance(int family) {
    static const std::array<std::array<double, 3>, 8> palette{{
        {0.78, 0.52, 0.28},
        {0.25, 0.50, 0.85},
        {0.30, 0.72, 0.35},
        {0.85, 0.30, 0.55},
        {0.88, 0.82, 0.25},
        {0.55, 0.35, 0.80},
        {0.20, 0.75, 0.75},
        {0.90, 0.50, 0.20},
    }};
    Family f{};
    if (family < static_cast<int>(palette.size())) {
        f.color = palette[family];
    } else {
        Rng rng(derive_seed(0x5eed, static_cast<std::uint64_t>(family)));
        for (auto& c : f.color) c = rng.uniform(0.2, 0.9);
    }
    f.stripe_angle = 0.61 * family;
    f.stripe_period = 4.0 + (family % 3);
    f.sides = (family % 2 == 0) ? 0 : 5 + (family % 3);
    return f;
}

// Deterministic glyph set: every glyph has the same number of "on" cells, so
// a glyph changes no colour statistic of the image, only its local layout.
inline std::vector<std::vector<std::uint8_t>> glyph_patterns(int count, int size) {
    const int cells = size * size;
    const int on = cells * 2 / 5;
    Rng rng(0x6c797068ULL + static_cast<std::uint64_t>(size));
    std::vector<std::vector<std::uint8_t>> out;
    std::set<std::vector<std::uint8_t>> seen;
    while (static_cast<int>(out.size()) < count) {
        std::vector<std::uint8_t> p(cells, 0);
        std::fill(p.begin(), p.begin() + on, 1);
        rng.shuffle(p.begin(), p.end());
        if (seen.insert(p).second) out.push_back(std::move(p));
    }
    return out;
}

inline bool inside_shape(int sides, double dx, double dy, double radius, double aspect, double rotation) {
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double u = c * dx + s * dy;
    const double v = (-s * dx + c * dy) / aspect;
    if (sides == 0) return u * u + v * v <= radius * radius;
    // Regular polygon with circumradius `radius`.
    const double pi = 3.14159265358979323846;
    const double sector = 2.0 * pi / sides;
    double ang = std::atan2(v, u);
    if (ang < 0) ang += 2.0 * pi;
    const double local = std::fmod(ang, sector) - sector / 2.0;
    const double apothem = radius * std::cos(sector / 2.0);
    return std::hypot(u, v) * std::cos(local) <= apothem;
}

struct Placement {
    int cls;
    double cy, cx, radius, aspect, rotation, phase;
};

} // namespace detail

/// Family index of each class (group index, or a fresh index for ungrouped classes)
/// and its position inside the group (-1 when ungrouped).
struct ClassLayout {
    std::vector<int> family;
    std::vector<int> glyph;
};

inline ClassLayout class_layout(const DatasetSpec& spec) {
    ClassLayout layout{std::vector<int>(spec.num_classes, -1), std::vector<int>(spec.num_classes, -1)};
    int next = 0;
    for (const auto& g : spec.confusable_groups) {
        for (std::size_t m = 0; m < g.size(); ++m) {
            layout.family[g[m]] = next;
            layout.glyph[g[m]] = static_cast<int>(m);
        }
        ++next;
    }
    for (int k = 0; k < spec.num_classes; ++k)
        if (layout.family[k] < 0) layout.family[k] = next++;
    return layout;
}

/// The label-sampling rule: with probability single_label_fraction one class,
/// otherwise m ~ U{2..max_objects} distinct classes, uniformly without replacement.
inline std::vector<int> sample_classes(const DatasetSpec& spec, Rng& rng) {
    const bool single = rng.uniform() < spec.single_label_fraction;
    const int m = single ? 1 : rng.uniform_int(2, spec.max_objects_per_image);
    std::vector<int> classes(spec.num_classes);
    std::iota(classes.begin(), classes.end(), 0);
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng.next() % static_cast<std::uint64_t>(spec.num_classes - i));
        std::swap(classes[i], classes[j]);
    }
    classes.resize(m);
    return classes;
}

/// Sample `index` of the corpus; a pure function of (spec, index).
inline ImageSample generate_sample(const DatasetSpec& spec, std::uint64_t index) {
    const int H = spec.height, W = spec.width;
    Rng rng(derive_seed(spec.seed, index));
    const auto classes = sample_classes(spec, rng);
    const int style = rng.uniform_int(0, spec.background_styles - 1);

    const double scale = std::min(H, W) / 64.0;
    std::vector<detail::Placement> placed;
    double shrink = 1.0;
    for (int cls : classes) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 0 && attempt % 200 == 0) shrink *= 0.9;
            const double r = rng.uniform(spec.min_radius, spec.max_radius) * scale * shrink;
            const double margin = r + 1.0;
            if (2 * margin >= std::min(H, W)) continue;
            const double cy = rng.uniform(margin, H - 1 - margin);
            const double cx = rng.uniform(margin, W - 1 - margin);
            bool ok = true;
            for (const auto& p : placed)
                if (std::hypot(p.cy - cy, p.cx - cx) < p.radius + r + 2.0) ok = false;
            if (!ok) continue;
            placed.push_back({cls, cy, cx, r, rng.uniform(0.75, 1.0), rng.uniform(0.0, 6.283185307179586),
                              rng.uniform(0.0, 6.283185307179586)});
            break;
        }
    }

    ImageSample s;
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%07llu", static_cast<unsigned long long>(index));
    s.id = buf;
    s.pixels = Tensor3<float>(3, H, W);
    s.gt_mask = Grid<std::uint8_t>(H, W, 0);
    s.label.assign(spec.num_classes, 0);

    // Background: a grey base tinted per style with a low-frequency blotch pattern.
    Rng style_rng(derive_seed(0xb4c6, static_cast<std::uint64_t>(style)));
    const double base = style_rng.uniform(0.35, 0.6);
    std::array<double, 3> tint{};
    for (auto& t : tint) t = style_rng.uniform(-0.06, 0.06);
    const double fy = style_rng.uniform(0.08, 0.25), fx = style_rng.uniform(0.08, 0.25);
    const double py = rng.uniform(0.0, 6.3), px = rng.uniform(0.0, 6.3);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double blotch = 0.08 * std::sin(fy * i + py) * std::sin(fx * j + px);
            for (int c = 0; c < 3; ++c) s.pixels(c, i, j) = static_cast<float>(base + tint[c] + blotch);
        }

    const auto layout = class_layout(spec);
    const int glyph_count = [&] {
        int n = 0;
        for (const auto& g : spec.confusable_groups) n = std::max<int>(n, static_cast<int>(g.size()));
        return n;
    }();
    const auto glyphs = detail::glyph_patterns(std::max(glyph_count, 1), spec.glyph_size);

    for (const auto& p : placed) {
        const auto fam = detail::family_appearance(layout.family[p.cls]);
        const double ca = std::cos(fam.stripe_angle), sa = std::sin(fam.stripe_angle);
        const int i0 = std::max(0, static_cast<int>(std::floor(p.cy - p.radius)) - 1);
        const int i1 = std::min(H - 1, static_cast<int>(std::ceil(p.cy + p.radius)) + 1);
        const int j0 = std::max(0, static_cast<int>(std::floor(p.cx - p.radius)) - 1);
        const int j1 = std::min(W - 1, static_cast<int>(std::ceil(p.cx + p.radius)) + 1);
        for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j) {
                if (!detail::inside_shape(fam.sides, i - p.cy, j - p.cx, p.radius, p.aspect, p.rotation)) continue;
                s.gt_mask(i, j) = static_cast<std::uint8_t>(p.cls + 1);
                const double stripe = std::sin(6.283185307179586 * (ca * j + sa * i) / fam.stripe_period + p.phase);
                for (int c = 0; c < 3; ++c) s.pixels(c, i, j) = static_cast<float>(fam.color[c] * (0.8 + 0.2 * stripe));
            }
        if (layout.glyph[p.cls] >= 0) {
            const auto& g = glyphs[layout.glyph[p.cls]];
            const int gs = spec.glyph_size;
            auto stamp = [&](int top, int left, bool whole) {
                if (whole)
                    for (int a = 0; a < gs; ++a)
                        for (int b = 0; b < gs; ++b) {
                            const int i = top + a, j = left + b;
                            if (i < 0 || j < 0 || i >= H || j >= W || s.gt_mask(i, j) != p.cls + 1) return;
                        }
                for (int a = 0; a < gs; ++a)
                    for (int b = 0; b < gs; ++b) {
                        const int i = top + a, j = left + b;
                        if (i < 0 || j < 0 || i >= H || j >= W || s.gt_mask(i, j) != p.cls + 1) continue;
                        const float v = g[a * gs + b] ? 0.08f : 0.95f;
                        for (int c = 0; c < 3; ++c) s.pixels(c, i, j) = v;
                    }
            };
            const int top = static_cast<int>(std::lround(p.cy)) - gs / 2;
            const int left = static_cast<int>(std::lround(p.cx)) - gs / 2;
            if (spec.glyph_pitch == 0) {
                stamp(top, left, false);
            } else {
                // Lattice anchored at the centre; only glyphs that fit inside the object.
                const int reach = static_cast<int>(p.radius) / spec.glyph_pitch + 1;
                for (int a = -reach; a <= reach; ++a)
                    for (int b = -reach; b <= reach; ++b)
                        stamp(top + a * spec.glyph_pitch, left + b * spec.glyph_pitch, a != 0 || b != 0);
            }
        }
    }

    for (auto& v : s.pixels.data) {
        v = static_cast<float>(v + rng.uniform(-spec.noise, spec.noise));
        v = std::clamp(v, 0.0f, 1.0f);
    }
    for (auto v : s.gt_mask.data)
        if (v > 0 && v != kIgnoreLabel) s.label[v - 1] = 1;
    return s;
}

/// Samples [first, first + count) of the corpus.
inline std::vector<ImageSample> generate_dataset(const DatasetSpec& spec, int count, std::uint64_t first = 0) {
    spec.validate();
    if (count < 1) throw ConfigError("count must be positive");
    std::vector<ImageSample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(generate_sample(spec, first + static_cast<std::uint64_t>(i)));
    return out;
}

/// 1 where the mask differs from any 4-neighbour, optionally box-blurred.
inline Grid<double> boundary_oracle(const Grid<std::uint8_t>& mask, int blur_radius = 0) {
    const int H = mask.height, W = mask.width;
    Grid<double> b(H, W, 0.0);
    constexpr std::array<std::array<int, 2>, 4> nb{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (auto [di, dj] : nb) {
                const int y = i + di, x = j + dj;
                if (y < 0 || x < 0 || y >= H || x >= W) continue;
                if (mask(y, x) != mask(i, j)) {
                    b(i, j) = 1.0;
                    break;
                }
            }
    if (blur_radius <= 0) return b;
    Grid<double> out(H, W, 0.0);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double sum = 0;
            int n = 0;
            for (int y = std::max(0, i - blur_radius); y <= std::min(H - 1, i + blur_radius); ++y)
                for (int x = std::max(0, j - blur_radius); x <= std::min(W - 1, j + blur_radius); ++x) {
                    sum += b(y, x);
                    ++n;
                }
            out(i, j) = std::min(1.0, sum / n);
        }
    return out;
}

/// Image-gradient boundary estimate (Sobel magnitude over RGB, max-normalized).
/// An oracle-free alternative for ablations.
inline Grid<double> gradient_boundary(const Tensor3<float>& image) {
    const int H = image.height, W = image.width;
    Grid<double> b(H, W, 0.0);
    auto at = [&](int c, int i, int j) {
        return static_cast<double>(image(c, std::clamp(i, 0, H - 1), std::clamp(j, 0, W - 1)));
    };
    double peak = 0;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double mag = 0;
            for (int c = 0; c < image.channels; ++c) {
                const double gx = at(c, i - 1, j + 1) + 2 * at(c, i, j + 1) + at(c, i + 1, j + 1) - at(c, i - 1, j - 1) -
                                  2 * at(c, i, j - 1) - at(c, i + 1, j - 1);
                const double gy = at(c, i + 1, j - 1) + 2 * at(c, i + 1, j) + at(c, i + 1, j + 1) - at(c, i - 1, j - 1) -
                                  2 * at(c, i - 1, j) - at(c, i - 1, j + 1);
                mag += gx * gx + gy * gy;
            }
            b(i, j) = std::sqrt(mag);
            peak = std::max(peak, b(i, j));
        }
    if (peak > 0)
        for (auto& v : b.data) v /= peak;
    return b;
}

} // namespace recam
