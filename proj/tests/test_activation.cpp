#include <gtest/gtest.h>

#include "recam/activation.hpp"

using namespace recam;

namespace {

Tensor3<double> random_features(Rng& rng, int c, int h, int w) {
    Tensor3<double> f(c, h, w);
    for (auto& v : f.data) v = std::max(0.0, rng.uniform(-0.5, 2.0));
    return f;
}

ClassifierState<double> random_state(Rng& rng, int k, int c) {
    ArchConfig a;
    a.widths = {c};
    a.strides = {1};
    a.num_classes = k;
    ClassifierState<double> s(a);
    for (auto& v : s.w.data) v = rng.uniform(-1, 1);
    for (auto& v : s.w2.data) v = rng.uniform(-1, 1);
    return s;
}

void expect_normalized(const Grid<double>& g) {
    double peak = 0;
    for (double v : g.data) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        peak = std::max(peak, v);
    }
    EXPECT_TRUE(peak == 0.0 || peak == 1.0);
}

} // namespace

TEST(ExtractCam, MatchesBruteForce) {
    Rng rng(21);
    for (int inst = 0; inst < 50; ++inst) {
        const int c = rng.uniform_int(1, 12), h = rng.uniform_int(1, 9), w = rng.uniform_int(1, 9);
        const auto f = random_features(rng, c, h, w);
        std::vector<double> wk(c);
        for (auto& v : wk) v = rng.uniform(-1, 1);
        const auto m = extract_cam<double>(f, wk, 3);
        EXPECT_EQ(m.cls, 3);
        double peak = 0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double a = 0;
                for (int ch = 0; ch < c; ++ch) a += wk[ch] * f(ch, i, j);
                EXPECT_NEAR(m.raw(i, j), a, 1e-12);
                peak = std::max(peak, a);
            }
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) EXPECT_NEAR(m.normalized(i, j), peak > 0 ? std::max(0.0, m.raw(i, j)) / peak : 0.0, 1e-12);
        expect_normalized(m.normalized);
    }
}

TEST(ExtractCam, NormalisationIsScaleInvariantAndZeroSafe) {
    Rng rng(22);
    const auto f = random_features(rng, 4, 5, 5);
    std::vector<double> wk{0.3, -0.2, 0.9, 0.1}, scaled(4);
    for (int c = 0; c < 4; ++c) scaled[c] = 7.5 * wk[c];
    const auto a = extract_cam<double>(f, wk, 0), b = extract_cam<double>(f, scaled, 0);
    for (std::size_t n = 0; n < a.normalized.size(); ++n) EXPECT_NEAR(a.normalized.data[n], b.normalized.data[n], 1e-12);
    const std::vector<double> negative{-1, -1, -1, -1};
    for (double v : extract_cam<double>(f, negative, 0).normalized.data) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(extract_cam<double>(f, std::vector<double>{1.0}, 0), ContractError);
}

TEST(MaskFeatures, MatchesBruteForce) {
    Rng rng(23);
    for (int inst = 0; inst < 50; ++inst) {
        const int c = rng.uniform_int(1, 6), h = rng.uniform_int(1, 7), w = rng.uniform_int(1, 7);
        const auto f = random_features(rng, c, h, w);
        Grid<double> m(h, w);
        for (auto& v : m.data) v = rng.uniform();
        const auto out = mask_features(f, m);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) EXPECT_NEAR(out(ch, i, j), m(i, j) * f(ch, i, j), 1e-15);
    }
}

TEST(MaskFeatures, ShrinksNonNegativeFeatures) {
    Rng rng(24);
    const auto f = random_features(rng, 3, 6, 6);
    Grid<double> m(6, 6);
    for (auto& v : m.data) v = rng.uniform();
    const auto out = mask_features(f, m);
    for (std::size_t n = 0; n < f.data.size(); ++n) EXPECT_LE(out.data[n], f.data[n]);
    EXPECT_THROW(mask_features(f, Grid<double>(5, 6)), ContractError);
}

TEST(ResolveWeights, MatchesBruteForceForEveryVariant) {
    Rng rng(25);
    for (int inst = 0; inst < 50; ++inst) {
        const int k = rng.uniform_int(2, 6), c = rng.uniform_int(1, 8);
        const auto s = random_state(rng, k, c);
        const auto f = random_features(rng, c, 4, 5);
        for (auto variant : {WeightVariant::w, WeightVariant::wprime, WeightVariant::sum, WeightVariant::product}) {
            const auto rw = resolve_weights(s, variant);
            for (int r = 0; r < k; ++r)
                for (int ch = 0; ch < c; ++ch) {
                    const double a = s.w(r, ch), b = s.w2(r, ch);
                    const double ref = variant == WeightVariant::w ? a
                                     : variant == WeightVariant::wprime ? b
                                     : variant == WeightVariant::sum ? a + b
                                                                       : a * b;
                    EXPECT_NEAR(rw.w(r, ch), ref, 1e-15);
                }
            const int cls = rng.uniform_int(0, k - 1);
            const auto m = extract_recam(f, rw, cls);
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 5; ++j) {
                    double a = 0;
                    for (int ch = 0; ch < c; ++ch) a += rw.w(cls, ch) * f(ch, i, j);
                    EXPECT_NEAR(m.raw(i, j), a, 1e-12);
                }
            expect_normalized(m.normalized);
        }
    }
}

TEST(ResolveWeights, UnitHeadsGiveKnownCombinations) {
    Rng rng(26);
    auto s = random_state(rng, 3, 4);
    std::fill(s.w.data.begin(), s.w.data.end(), 1.0);
    std::fill(s.w2.data.begin(), s.w2.data.end(), 1.0);
    for (double v : resolve_weights(s, WeightVariant::sum).w.data) EXPECT_EQ(v, 2.0);
    for (double v : resolve_weights(s, WeightVariant::product).w.data) EXPECT_EQ(v, 1.0);
}

TEST(ResolveWeights, PlainVariantReproducesCam) {
    Rng rng(27);
    const auto s = random_state(rng, 4, 5);
    const auto f = random_features(rng, 5, 6, 6);
    const auto rw = resolve_weights(s, WeightVariant::w);
    for (int k = 0; k < 4; ++k) {
        const auto a = extract_recam(f, rw, k), b = extract_cam<double>(f, s.w.row(k), k);
        EXPECT_EQ(a.raw.data, b.raw.data);
        EXPECT_EQ(a.normalized.data, b.normalized.data);
    }
    EXPECT_THROW(extract_recam(f, rw, 4), ContractError);
}

TEST(ResolveWeights, ZeroSecondHeadZeroesProductMaps) {
    Rng rng(28);
    auto s = random_state(rng, 3, 4);
    std::fill(s.w2.data.begin(), s.w2.data.end(), 0.0);
    const auto f = random_features(rng, 4, 5, 5);
    const auto m = extract_recam(f, resolve_weights(s, WeightVariant::product), 1);
    for (double v : m.raw.data) EXPECT_EQ(v, 0.0);
    for (double v : m.normalized.data) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(parse_weight_variant("both"), ConfigError);
    EXPECT_EQ(parse_weight_variant("wprime"), WeightVariant::wprime);
}

TEST(UpsampleMap, RenormalisesAtImageResolution) {
    Rng rng(29);
    ActivationMap<double> m;
    m.raw = Grid<double>(4, 4);
    for (auto& v : m.raw.data) v = rng.uniform(-1, 3);
    m.normalized = normalize_map(m.raw);
    const auto up = upsample_map(m, 32, 32);
    EXPECT_EQ(up.raw.height, 32);
    expect_normalized(up.normalized);
    EXPECT_EQ(*std::max_element(up.normalized.data.begin(), up.normalized.data.end()), 1.0);
}

TEST(FlipTta, SymmetricInputGivesSymmetricAverage) {
    ArchConfig a;
    a.widths = {4, 4};
    a.strides = {2, 1};
    a.num_classes = 2;
    const auto s = init_classifier<double>(a, 3);
    const auto rw = resolve_weights(s, WeightVariant::w);
    Rng rng(30);
    Tensor3<double> x(3, 8, 8);
    for (auto& v : x.data) v = rng.uniform();
    const std::vector<int> label{1, 1};
    const auto plain = extract_image_maps(s, rw, x, label, false);
    const auto tta = extract_image_maps(s, rw, x, label, true);
    const auto mirrored = extract_image_maps(s, rw, flip_horizontal(x), label, false);
    ASSERT_EQ(tta.size(), 2u);
    for (int k = 0; k < 2; ++k) {
        const auto back = flip_horizontal(mirrored[k].raw);
        for (std::size_t n = 0; n < tta[k].raw.size(); ++n)
            EXPECT_NEAR(tta[k].raw.data[n], (plain[k].raw.data[n] + back.data[n]) / 2, 1e-12);
        expect_normalized(tta[k].normalized);
    }
    EXPECT_EQ(extract_image_maps(s, rw, x, std::vector<int>{0, 1}).size(), 1u);
}
