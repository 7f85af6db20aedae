#pragma once

#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "recam/activation.hpp"
#include "recam/core.hpp"
#include "recam/losses.hpp"
#include "recam/nets.hpp"
#include "recam/synthgen.hpp"

namespace recam {

/// Training objective of a single epoch loop.
enum class Objective {
    bce,              // BCE on FC1
    sce_soft,         // SCE on FC1 against the label normalised to sum 1
    sce_single_only,  // SCE on FC1 for single-label images, BCE otherwise
    recam,            // BCE on FC1 + λ·SCE of FC2 on class-masked features
    bce_plus_sce_fc1, // BCE on FC1 + λ·SCE on FC1 (soft labels)
    bce_plus_sce_single,  // BCE on FC1 + λ·SCE on FC1 for single-label images
};

/// Which SCE term phase 2 adds to the BCE objective.
enum class SceMode { recam, vanilla_on_fc1, single_only };

inline SceMode parse_sce_mode(const std::string& s) {
    if (s == "recam") return SceMode::recam;
    if (s == "vanilla_on_fc1") return SceMode::vanilla_on_fc1;
    if (s == "single_only") return SceMode::single_only;
    throw ConfigError("unknown sce_mode '" + s + "'");
}

inline const char* to_string(SceMode m) {
    switch (m) {
    case SceMode::recam: return "recam";
    case SceMode::vanilla_on_fc1: return "vanilla_on_fc1";
    case SceMode::single_only: return "single_only";
    }
    return "?";
}

enum class BaselineLoss { bce_only, sce_only, sce_single_only };

struct TrainConfig {
    ArchConfig arch;
    int phase1_epochs = 24;
    int phase2_epochs = 4;
    double phase1_lr = 1e-3;
    double phase2_lr = 5e-4;
    double lr_power = 1.0;  // polynomial decay exponent
    double weight_decay = 0.0;
    int batch_size = 16;
    double lambda = 1.0;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 1;
    SceMode sce_mode = SceMode::recam;
    // Phase-2 encoder learning rate as a fraction of the head learning rate.
    double phase2_encoder_lr_scale = 0.1;
    // Stop gradients at the soft mask M_k (ablation); default lets them flow.
    bool detach_mask = false;

    void validate() const {
        arch.validate();
        if (phase1_epochs < 1 || phase2_epochs < 0) throw ConfigError("epoch counts must be positive");
        if (sce_mode == SceMode::recam && phase2_epochs < 1) throw ConfigError("sce_mode=recam requires phase2_epochs >= 1");
        if (!(phase1_lr > 0) || !(phase2_lr > 0)) throw ConfigError("learning rates must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
        if (lambda < 0) throw ConfigError("lambda must be nonnegative");
    }
};

struct TrainLogRow {
    long step;
    double bce, sce, total, lr;
};

struct GradientRecord {
    long step;
    double grad_positive;  // dL/dz_p, p the only positive class
    double grad_confuser;  // dL/dz_q, q the highest-logit negative class
};

using GradientTrace = std::vector<GradientRecord>;

template <typename T>
struct TrainHooks {
    std::vector<TrainLogRow>* log = nullptr;
    // Called before the first step and then every `monitor_every` steps.
    long monitor_every = 0;
    std::function<void(long step, const ClassifierState<T>&)> monitor;
};

struct SampleLoss {
    double bce = 0, sce = 0, total = 0;
};

// ---------------------------------------------------------------------------
// Per-sample forward/backward. `scale` multiplies every gradient contribution
// (1/batch for minibatch means).

namespace detail {

template <typename T>
void head_backward(const Matrix<T>& w, std::span<const T> dz, std::span<const T> pooled, Matrix<T>& grad_w,
                   std::vector<T>* grad_b, std::vector<T>& d_pooled) {
    for (int k = 0; k < w.rows; ++k) {
        if (dz[k] == T(0)) continue;
        for (int c = 0; c < w.cols; ++c) {
            grad_w(k, c) += dz[k] * pooled[c];
            d_pooled[c] += w(k, c) * dz[k];
        }
        if (grad_b) (*grad_b)[k] += dz[k];
    }
}

// df(c, ·) += d_pooled[c] / N
template <typename T>
void gap_backward(std::span<const T> d_pooled, Tensor3<T>& df) {
    const T inv = T(1) / static_cast<T>(df.plane_size());
    for (int c = 0; c < df.channels; ++c) {
        const T g = d_pooled[c] * inv;
        for (auto& v : df.plane(c)) v += g;
    }
}

template <typename T>
std::vector<T> soft_label(std::span<const int> y) {
    const int n = std::accumulate(y.begin(), y.end(), 0);
    std::vector<T> t(y.size(), T(0));
    for (std::size_t k = 0; k < y.size(); ++k) t[k] = n ? static_cast<T>(y[k]) / static_cast<T>(n) : T(0);
    return t;
}

} // namespace detail

/// Masked-feature SCE term and its gradient: for every positive class k, mask f with the
/// FC1 CAM of k, pool, apply FC2 and take SCE against the one-hot k.
/// Gradients flow into FC2, into f, and (unless `detach_mask`) through the
/// mask into FC1 and f.
template <typename T>
T recam_sce_backward(const ClassifierState<T>& s, const Tensor3<T>& f, std::span<const int> y, bool detach_mask,
                     T scale, Tensor3<T>& df, ClassifierState<T>& grad) {
    const int K = s.num_classes(), C = s.channels();
    const int positives = std::accumulate(y.begin(), y.end(), 0);
    if (positives == 0) throw ContractError("SCE term needs at least one positive class");
    const int N = f.plane_size();
    const T inv_n = T(1) / static_cast<T>(N);
    T loss = 0;
    for (int k = 0; k < K; ++k) {
        if (!y[k]) continue;
        const auto raw = weighted_channel_sum<T>(f, s.w.row(k));
        T peak = 0;
        std::size_t arg = 0;
        for (std::size_t n = 0; n < raw.size(); ++n)
            if (raw.data[n] > peak) {
                peak = raw.data[n];
                arg = n;
            }
        const auto mask = normalize_map(raw);
        const auto fk = mask_features(f, mask);
        const auto pooled = global_average_pool(fk);
        const auto z = linear_head<T>(s.w2, s.b2, s.arch.head_bias, pooled);
        const auto lsm = log_softmax<T>(z);
        loss -= lsm[k];

        std::vector<T> dz(K);
        const T coef = scale / static_cast<T>(positives);
        for (int j = 0; j < K; ++j) dz[j] = (std::exp(lsm[j]) - (j == k ? T(1) : T(0))) * coef;
        std::vector<T> d_pooled(C, T(0));
        detail::head_backward<T>(s.w2, dz, pooled, grad.w2, s.arch.head_bias ? &grad.b2 : nullptr, d_pooled);

        // Through f_k = M ⊙ f.
        std::vector<T> d_mask(N, T(0));
        for (int c = 0; c < C; ++c) {
            const T g = d_pooled[c] * inv_n;
            const auto fp = f.plane(c);
            auto dp = df.plane(c);
            for (int n = 0; n < N; ++n) {
                dp[n] += mask.data[n] * g;
                d_mask[n] += fp[n] * g;
            }
        }
        if (detach_mask || !(peak > T(0))) continue;

        // Through M = ReLU(A) / max ReLU(A), with A = w_kᵀ f.
        T dot = 0;
        for (int n = 0; n < N; ++n) dot += d_mask[n] * std::max(raw.data[n], T(0));
        std::vector<T> d_raw(N, T(0));
        for (int n = 0; n < N; ++n)
            if (raw.data[n] > T(0)) d_raw[n] = d_mask[n] / peak;
        d_raw[arg] -= dot / (peak * peak);
        for (int c = 0; c < C; ++c) {
            const auto fp = f.plane(c);
            auto dp = df.plane(c);
            const T wkc = s.w(k, c);
            T acc = 0;
            for (int n = 0; n < N; ++n) {
                acc += d_raw[n] * fp[n];
                dp[n] += d_raw[n] * wkc;
            }
            grad.w(k, c) += acc;
        }
    }
    return loss / static_cast<T>(positives);
}

/// Loss of one sample under `objective`, accumulating scaled gradients into `grad`.
template <typename T>
SampleLoss sample_backward(const ClassifierState<T>& s, const Tensor3<T>& x, std::span<const int> y, Objective objective,
                           double lambda, bool detach_mask, T scale, ClassifierState<T>& grad) {
    EncoderTape<T> tape;
    const auto f = s.encoder.forward(x, &tape);
    const auto pooled = global_average_pool(f);
    const auto z = linear_head<T>(s.w, s.b, s.arch.head_bias, pooled);
    const int positives = std::accumulate(y.begin(), y.end(), 0);
    const bool single = positives == 1;

    SampleLoss out;
    std::vector<T> dz(z.size(), T(0));
    auto add_bce = [&](T weight) {
        out.bce = static_cast<double>(bce_loss<T>(z, y));
        const auto g = grad_bce<T>(z, y);
        for (std::size_t k = 0; k < z.size(); ++k) dz[k] += weight * g[k];
    };
    auto add_sce_fc1 = [&](T weight) {
        if (positives == 0) throw ContractError("SCE needs at least one positive class");
        const auto t = detail::soft_label<T>(y);
        out.sce = static_cast<double>(softmax_cross_entropy<T>(z, t));
        const auto g = grad_softmax_cross_entropy<T>(z, t);
        for (std::size_t k = 0; k < z.size(); ++k) dz[k] += weight * g[k];
    };

    Tensor3<T> df(f.channels, f.height, f.width);
    const T lam = static_cast<T>(lambda);
    switch (objective) {
    case Objective::bce:
        add_bce(scale);
        out.total = out.bce;
        break;
    case Objective::sce_soft:
        add_sce_fc1(scale);
        out.total = out.sce;
        break;
    case Objective::sce_single_only:
        if (single) {
            add_sce_fc1(scale);
            out.total = out.sce;
        } else {
            add_bce(scale);
            out.total = out.bce;
        }
        break;
    case Objective::bce_plus_sce_fc1:
        add_bce(scale);
        add_sce_fc1(scale * lam);
        out.total = out.bce + lambda * out.sce;
        break;
    case Objective::bce_plus_sce_single:
        add_bce(scale);
        if (single) add_sce_fc1(scale * lam);
        out.total = out.bce + lambda * out.sce;
        break;
    case Objective::recam:
        add_bce(scale);
        out.sce = static_cast<double>(recam_sce_backward(s, f, y, detach_mask, scale * lam, df, grad));
        out.total = out.bce + lambda * out.sce;
        break;
    }

    std::vector<T> d_pooled(s.channels(), T(0));
    detail::head_backward<T>(s.w, dz, pooled, grad.w, s.arch.head_bias ? &grad.b : nullptr, d_pooled);
    detail::gap_backward<T>(d_pooled, df);
    s.encoder.backward(tape, std::move(df), &grad.encoder);
    return out;
}

/// Loss only (no gradients); used by finite-difference checks.
template <typename T>
double sample_loss(const ClassifierState<T>& s, const Tensor3<T>& x, std::span<const int> y, Objective objective,
                   double lambda) {
    auto scratch = zeros_like(s);
    return sample_backward(s, x, y, objective, lambda, false, T(0), scratch).total;
}

// ---------------------------------------------------------------------------
// Epoch loop.

struct Schedule {
    int epochs = 1;
    double lr = 1e-3;
    double power = 1.0;
    int batch_size = 16;
    OptimizerKind optimizer = OptimizerKind::adam;
    double weight_decay = 0.0;
    double lambda = 0.0;
    bool detach_mask = false;
    std::uint64_t seed = 1;
    std::uint64_t stream = 1;  // batch-order stream; phases use distinct streams
    double encoder_lr_scale = 1.0;  // encoder learning rate relative to the heads
};

inline double poly_lr(double base, long step, long total, double power) {
    if (total <= 0) return base;
    return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

/// Batch order of one epoch: a pure function of (seed, stream, epoch).
inline std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stream, int epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(derive_seed(seed, stream), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    return order;
}

/// Runs `sched.epochs` epochs of minibatch descent on `objective`. Returns the
/// per-epoch mean total loss.
template <typename T>
std::vector<double> train_epochs(ClassifierState<T>& s, const std::vector<ImageSample>& corpus, Objective objective,
                                 const Schedule& sched, const TrainHooks<T>& hooks = {}) {
    if (corpus.empty()) throw ContractError("training corpus is empty");
    for (const auto& sample : corpus)
        if (sample.cardinality() < 1) throw ContractError("training sample " + sample.id + " has no positive class");
    Optimizer<T> opt(sched.optimizer, sched.weight_decay);
    if (sched.encoder_lr_scale != 1.0)
        opt.set_lr_scale([k = sched.encoder_lr_scale](const std::string& name) {
            return name.rfind("encoder.", 0) == 0 ? k : 1.0;
        });
    const long steps_per_epoch = static_cast<long>((corpus.size() + sched.batch_size - 1) / sched.batch_size);
    const long total_steps = steps_per_epoch * sched.epochs;
    long step = 0;
    std::vector<double> epoch_means;
    auto grad = zeros_like(s);
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        const auto order = epoch_order(corpus.size(), sched.seed, sched.stream, epoch);
        double epoch_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += sched.batch_size, ++step) {
            if (hooks.monitor && hooks.monitor_every > 0 && step % hooks.monitor_every == 0) hooks.monitor(step, s);
            const std::size_t end = std::min(order.size(), start + sched.batch_size);
            const T scale = T(1) / static_cast<T>(end - start);
            grad = zeros_like(s);
            SampleLoss batch{};
            for (std::size_t b = start; b < end; ++b) {
                const auto& sample = corpus[order[b]];
                const auto x = sample.pixels.template cast<T>();
                const auto l = sample_backward(s, x, sample.label, objective, sched.lambda, sched.detach_mask, scale, grad);
                batch.bce += l.bce;
                batch.sce += l.sce;
                batch.total += l.total;
            }
            const double count = static_cast<double>(end - start);
            batch.bce /= count;
            batch.sce /= count;
            batch.total /= count;
            if (!std::isfinite(batch.total)) throw DivergenceError(step, "non-finite training loss");
            const double lr = poly_lr(sched.lr, step, total_steps, sched.power);
            opt.step(s, grad, lr);
            if (hooks.log) hooks.log->push_back({step, batch.bce, batch.sce, batch.total, lr});
            epoch_sum += batch.total * count;
        }
        epoch_means.push_back(epoch_sum / static_cast<double>(corpus.size()));
    }
    if (hooks.monitor && hooks.monitor_every > 0) hooks.monitor(step, s);
    return epoch_means;
}

inline Schedule phase1_schedule(const TrainConfig& cfg) {
    return {cfg.phase1_epochs, cfg.phase1_lr, cfg.lr_power, cfg.batch_size, cfg.optimizer, cfg.weight_decay,
            0.0, false, cfg.seed, 1};
}

inline Schedule phase2_schedule(const TrainConfig& cfg) {
    return {cfg.phase2_epochs, cfg.phase2_lr, cfg.lr_power, cfg.batch_size, cfg.optimizer, cfg.weight_decay,
            cfg.lambda, cfg.detach_mask, cfg.seed, 2, cfg.phase2_encoder_lr_scale};
}

/// Phase 1: encoder + FC1 from a fresh initialisation, BCE only.
template <typename T>
ClassifierState<T> train_phase1(const std::vector<ImageSample>& corpus, const TrainConfig& cfg,
                                const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    auto s = init_classifier<T>(cfg.arch, cfg.seed);
    s.lambda = cfg.lambda;
    train_epochs(s, corpus, Objective::bce, phase1_schedule(cfg), hooks);
    return s;
}

/// Phase 2: re-initialise FC2, then optimise encoder, FC1 and FC2 jointly on
/// BCE + λ·SCE.
template <typename T>
ClassifierState<T> train_phase2(ClassifierState<T> s, const std::vector<ImageSample>& corpus, const TrainConfig& cfg,
                                const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    init_fc2(s, cfg.seed);
    s.lambda = cfg.lambda;
    Objective obj = Objective::recam;
    if (cfg.sce_mode == SceMode::vanilla_on_fc1) obj = Objective::bce_plus_sce_fc1;
    if (cfg.sce_mode == SceMode::single_only) obj = Objective::bce_plus_sce_single;
    train_epochs(s, corpus, obj, phase2_schedule(cfg), hooks);
    return s;
}

/// Single-phase baselines trained on FC1 only.
template <typename T>
ClassifierState<T> train_baseline(const std::vector<ImageSample>& corpus, BaselineLoss loss, const TrainConfig& cfg,
                                  const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    auto s = init_classifier<T>(cfg.arch, cfg.seed);
    s.lambda = cfg.lambda;
    const Objective obj = loss == BaselineLoss::bce_only  ? Objective::bce
                          : loss == BaselineLoss::sce_only ? Objective::sce_soft
                                                           : Objective::sce_single_only;
    train_epochs(s, corpus, obj, phase1_schedule(cfg), hooks);
    return s;
}

/// Mean logit gradients over single-label samples: dL/dz_p for the positive
/// class and dL/dz_q for the highest-logit negative class (lowest index on ties).
template <typename T>
GradientRecord monitor_gradients(const ClassifierState<T>& s, const std::vector<ImageSample>& subset, BaselineLoss loss,
                                 long step = 0) {
    if (subset.empty()) throw ContractError("monitor_gradients: empty subset");
    double gp = 0, gq = 0;
    for (const auto& sample : subset) {
        if (sample.cardinality() != 1) throw ContractError("monitor_gradients: sample " + sample.id + " is not single-label");
        const auto f = encode(sample.pixels.template cast<T>(), s);
        const auto z = classify_fc1(f, s);
        int p = 0;
        while (!sample.label[p]) ++p;
        int q = -1;
        for (int k = 0; k < static_cast<int>(z.size()); ++k)
            if (k != p && (q < 0 || z[k] > z[q])) q = k;
        const auto g = loss == BaselineLoss::bce_only ? grad_bce<T>(z, sample.label) : grad_sce<T>(z, sample.label);
        gp += static_cast<double>(g[p]);
        gq += static_cast<double>(g[q]);
    }
    const double n = static_cast<double>(subset.size());
    return {step, gp / n, gq / n};
}

// ---------------------------------------------------------------------------
// Segmentation model.

struct SegTrainConfig {
    SegmenterConfig arch;
    int epochs = 30;
    double lr = 2e-3;
    int batch_size = 8;
    std::uint64_t seed = 1;
};

template <typename T>
SegmenterState<T> train_segmenter(const std::vector<Grid<std::uint8_t>>& masks, const std::vector<ImageSample>& corpus,
                                  const SegTrainConfig& cfg, std::vector<double>* epoch_losses = nullptr) {
    if (masks.size() != corpus.size())
        throw ContractError("train_segmenter: need exactly one pseudo mask per training image");
    if (corpus.empty()) throw ContractError("train_segmenter: empty corpus");
    auto s = init_segmenter<T>(cfg.arch, cfg.seed);
    Optimizer<T> opt(OptimizerKind::adam);
    const long steps_per_epoch = static_cast<long>((corpus.size() + cfg.batch_size - 1) / cfg.batch_size);
    const long total = steps_per_epoch * cfg.epochs;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(corpus.size(), cfg.seed, 0x5e9, epoch);
        double sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            auto grad = init_segmenter<T>(cfg.arch, 0);
            for_each_param(grad, [](const std::string&, std::span<T> v) { std::fill(v.begin(), v.end(), T(0)); });
            const T scale = T(1) / static_cast<T>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const auto& sample = corpus[order[b]];
                const auto& mask = masks[order[b]];
                if (mask.height != sample.pixels.height || mask.width != sample.pixels.width)
                    throw ContractError("train_segmenter: mask shape mismatch for " + sample.id);
                SegmenterTape<T> tape;
                const auto logits = segment(sample.pixels.template cast<T>(), s, &tape);
                bool any = false;
                for (auto v : mask.data) any |= v != kIgnoreLabel;
                if (!any) continue;
                Tensor3<T> dz;
                sum += static_cast<double>(seg_loss(logits, mask, &dz));
                for (auto& v : dz.data) v *= scale;
                segment_backward(s, tape, dz, grad);
            }
            if (!std::isfinite(sum)) throw DivergenceError(step, "non-finite segmentation loss");
            opt.step(s, grad, poly_lr(cfg.lr, step, total, 1.0));
        }
        if (epoch_losses) epoch_losses->push_back(sum / static_cast<double>(corpus.size()));
    }
    return s;
}

/// Argmax labels of the segmenter's logits.
template <typename T>
Grid<std::uint8_t> predict_mask(const SegmenterState<T>& s, const Tensor3<float>& image) {
    const auto logits = segment(image.template cast<T>(), s);
    Grid<std::uint8_t> out(image.height, image.width);
    for (int i = 0; i < image.height; ++i)
        for (int j = 0; j < image.width; ++j) {
            int best = 0;
            for (int c = 1; c < logits.channels; ++c)
                if (logits(c, i, j) > logits(best, i, j)) best = c;
            out(i, j) = static_cast<std::uint8_t>(best);
        }
    return out;
}

} // namespace recam
