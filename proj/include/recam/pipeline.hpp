#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "recam/activation.hpp"
#include "recam/evalstats.hpp"
#include "recam/io.hpp"
#include "recam/refine.hpp"
#include "recam/synthgen.hpp"
#include "recam/trainer.hpp"

namespace recam::pipeline {

using io::Config;

// ---------------------------------------------------------------------------
// Configuration schema and typed settings.

inline Config::Schema schema() {
    using K = io::ValueKind;
    return {
        {"run.seed", {K::integer, "1", {}}},
        {"run.workers", {K::integer, "1", {}}},

        {"data.num_classes", {K::integer, "8", {}}},
        {"data.confusable_group", {K::int_list, "0 1 2 3 4", {}}},
        {"data.height", {K::integer, "64", {}}},
        {"data.width", {K::integer, "64", {}}},
        {"data.train_count", {K::integer, "2000", {}}},
        {"data.val_count", {K::integer, "500", {}}},
        {"data.single_label_fraction", {K::real, "0.4", {}}},
        {"data.max_objects", {K::integer, "3", {}}},
        {"data.background_styles", {K::integer, "4", {}}},
        {"data.min_radius", {K::real, "10", {}}},
        {"data.max_radius", {K::real, "15", {}}},
        {"data.noise", {K::real, "0.04", {}}},
        {"data.glyph_size", {K::integer, "5", {}}},
        {"data.glyph_pitch", {K::integer, "8", {}}},

        {"train.loss", {K::text, "recam", {"bce", "sce", "sce-single", "recam"}}},
        {"train.sce_mode", {K::text, "recam", {"recam", "vanilla_on_fc1", "single_only"}}},
        {"train.phase1_epochs", {K::integer, "24", {}}},
        {"train.phase2_epochs", {K::integer, "4", {}}},
        {"train.phase1_lr", {K::real, "0.001", {}}},
        {"train.phase2_lr", {K::real, "0.0005", {}}},
        {"train.lr_power", {K::real, "1", {}}},
        {"train.weight_decay", {K::real, "0", {}}},
        {"train.batch_size", {K::integer, "16", {}}},
        {"train.lambda", {K::real, "1", {}}},
        {"train.encoder_lr_scale", {K::real, "0.1", {}}},
        {"train.detach_mask", {K::boolean, "false", {}}},
        {"train.optimizer", {K::text, "adam", {"adam", "sgd"}}},
        {"train.widths", {K::int_list, "16 32 32 64 64 64", {}}},
        {"train.strides", {K::int_list, "2 2 1 2 1 1", {}}},
        {"train.head_bias", {K::boolean, "false", {}}},
        {"train.monitor_every", {K::integer, "50", {}}},
        {"train.monitor_images", {K::integer, "64", {}}},

        {"extract.variant", {K::text, "product", {"w", "wprime", "sum", "product"}}},
        {"extract.flip_tta", {K::boolean, "false", {}}},
        {"extract.split", {K::text, "train", {"train", "val"}}},

        {"refine.route", {K::text, "seed", {"seed", "walk", "climb", "climb+walk"}}},
        {"refine.boundary", {K::text, "oracle", {"oracle", "gradient"}}},
        {"refine.walk_radius", {K::integer, "5", {}}},
        {"refine.walk_tau", {K::real, "0.2", {}}},
        {"refine.walk_iterations", {K::integer, "32", {}}},
        {"refine.climb_steps", {K::integer, "8", {}}},
        {"refine.climb_step_size", {K::real, "0.01", {}}},
        {"refine.climb_mu", {K::real, "0.5", {}}},
        {"refine.climb_mask_threshold", {K::real, "0.5", {}}},

        {"eval.search_threshold", {K::boolean, "true", {}}},
        {"eval.threshold", {K::real, "0.25", {}}},

        {"sweep.lambdas", {K::real_list, "0 0.1 0.5 1 2", {}}},
        {"sweep.variants", {K::text, "w wprime sum product", {}}},
        {"sweep.losses", {K::text, "bce sce sce-single recam", {}}},

        {"segment.epochs", {K::integer, "30", {}}},
        {"segment.lr", {K::real, "0.002", {}}},
        {"segment.width", {K::integer, "32", {}}},
        {"segment.batch_size", {K::integer, "8", {}}},
    };
}

struct Settings {
    std::uint64_t seed = 1;
    int workers = 1;

    DatasetSpec data;
    int train_count = 2000, val_count = 500;

    std::string loss = "recam";
    TrainConfig train;
    long monitor_every = 50;
    int monitor_images = 64;

    WeightVariant variant = WeightVariant::product;
    bool flip_tta = false;
    std::string split = "train";

    std::string route = "seed";
    std::string boundary = "oracle";
    WalkConfig walk;
    ClimbConfig climb;

    bool search_threshold = true;
    double threshold = 0.25;

    std::vector<double> lambdas;
    std::vector<std::string> variants, losses;

    SegTrainConfig seg;
};

inline std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    for (auto& w : io::split(s, ' '))
        if (!w.empty()) out.push_back(w);
    return out;
}

inline Settings settings_from(const Config& c) {
    Settings s;
    s.seed = static_cast<std::uint64_t>(c.integer("run.seed"));
    s.workers = static_cast<int>(c.integer("run.workers"));
    if (s.workers < 1) throw ConfigError("run.workers must be at least 1");

    auto& d = s.data;
    d.num_classes = static_cast<int>(c.integer("data.num_classes"));
    d.confusable_groups.clear();
    if (const auto g = c.int_list("data.confusable_group"); !g.empty()) d.confusable_groups.push_back(g);
    d.height = static_cast<int>(c.integer("data.height"));
    d.width = static_cast<int>(c.integer("data.width"));
    d.single_label_fraction = c.real("data.single_label_fraction");
    d.max_objects_per_image = static_cast<int>(c.integer("data.max_objects"));
    d.background_styles = static_cast<int>(c.integer("data.background_styles"));
    d.min_radius = c.real("data.min_radius");
    d.max_radius = c.real("data.max_radius");
    d.noise = c.real("data.noise");
    d.glyph_size = static_cast<int>(c.integer("data.glyph_size"));
    d.glyph_pitch = static_cast<int>(c.integer("data.glyph_pitch"));
    d.seed = s.seed;
    d.validate();
    s.train_count = static_cast<int>(c.integer("data.train_count"));
    s.val_count = static_cast<int>(c.integer("data.val_count"));
    if (s.train_count < 1 || s.val_count < 1) throw ConfigError("data counts must be positive");

    s.loss = c.raw("train.loss");
    auto& t = s.train;
    t.arch.widths = c.int_list("train.widths");
    t.arch.strides = c.int_list("train.strides");
    t.arch.num_classes = d.num_classes;
    t.arch.head_bias = c.boolean("train.head_bias");
    t.phase1_epochs = static_cast<int>(c.integer("train.phase1_epochs"));
    t.phase2_epochs = static_cast<int>(c.integer("train.phase2_epochs"));
    t.phase1_lr = c.real("train.phase1_lr");
    t.phase2_lr = c.real("train.phase2_lr");
    t.lr_power = c.real("train.lr_power");
    t.weight_decay = c.real("train.weight_decay");
    t.batch_size = static_cast<int>(c.integer("train.batch_size"));
    t.lambda = c.real("train.lambda");
    t.phase2_encoder_lr_scale = c.real("train.encoder_lr_scale");
    t.detach_mask = c.boolean("train.detach_mask");
    t.optimizer = c.raw("train.optimizer") == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    t.sce_mode = parse_sce_mode(c.raw("train.sce_mode"));
    t.seed = s.seed;
    t.validate();
    if (d.height % t.arch.total_stride() || d.width % t.arch.total_stride())
        throw ConfigError("image size must be divisible by the encoder stride");
    s.monitor_every = c.integer("train.monitor_every");
    s.monitor_images = static_cast<int>(c.integer("train.monitor_images"));

    s.variant = parse_weight_variant(c.raw("extract.variant"));
    s.flip_tta = c.boolean("extract.flip_tta");
    s.split = c.raw("extract.split");

    s.route = c.raw("refine.route");
    s.boundary = c.raw("refine.boundary");
    s.walk.radius = static_cast<int>(c.integer("refine.walk_radius"));
    s.walk.tau = c.real("refine.walk_tau");
    s.walk.iterations = static_cast<int>(c.integer("refine.walk_iterations"));
    s.walk.validate();
    s.climb.steps = static_cast<int>(c.integer("refine.climb_steps"));
    s.climb.step_size = c.real("refine.climb_step_size");
    s.climb.mu = c.real("refine.climb_mu");
    s.climb.mask_threshold = c.real("refine.climb_mask_threshold");
    s.climb.validate();

    s.search_threshold = c.boolean("eval.search_threshold");
    s.threshold = c.real("eval.threshold");
    if (!s.search_threshold) {
        try {
            check_threshold(s.threshold);
        } catch (const ContractError& e) {
            throw ConfigError(std::string("eval.threshold: ") + e.what());
        }
    }

    s.lambdas = c.real_list("sweep.lambdas");
    s.variants = words(c.raw("sweep.variants"));
    for (const auto& v : s.variants) parse_weight_variant(v);
    s.losses = words(c.raw("sweep.losses"));
    for (const auto& l : s.losses)
        if (l != "bce" && l != "sce" && l != "sce-single" && l != "recam") throw ConfigError("unknown loss '" + l + "' in sweep.losses");

    s.seg.arch.num_classes = d.num_classes;
    s.seg.arch.width = static_cast<int>(c.integer("segment.width"));
    s.seg.epochs = static_cast<int>(c.integer("segment.epochs"));
    s.seg.lr = c.real("segment.lr");
    s.seg.batch_size = static_cast<int>(c.integer("segment.batch_size"));
    s.seg.seed = s.seed;
    if (s.seg.epochs < 1 || s.seg.batch_size < 1 || !(s.seg.lr > 0)) throw ConfigError("invalid segment settings");
    return s;
}

// ---------------------------------------------------------------------------
// Worker pool: indices are claimed dynamically, results land in index order,
// and the exception of the lowest failing index wins.

template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto body = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(workers)));
    for (int t = 0; t < count; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Stages.

inline io::Corpus make_corpus(const Settings& s) {
    io::Corpus c;
    c.spec = s.data;
    c.train = generate_dataset(s.data, s.train_count, 0);
    c.val = generate_dataset(s.data, s.val_count, static_cast<std::uint64_t>(s.train_count));
    return c;
}

inline BaselineLoss baseline_of(const std::string& loss) {
    if (loss == "bce") return BaselineLoss::bce_only;
    if (loss == "sce") return BaselineLoss::sce_only;
    if (loss == "sce-single") return BaselineLoss::sce_single_only;
    throw ConfigError("loss '" + loss + "' is not a single-phase baseline");
}

/// Weights a λ-sweep point is scored with. At λ = 0 the second head never
/// receives a gradient, so its combinations are undefined and the point is
/// scored as the plain CAM it is.
inline WeightVariant lambda_sweep_variant(double lambda, WeightVariant configured) {
    return lambda == 0.0 ? WeightVariant::w : configured;
}

struct TrainOutputs {
    ClassifierState<float> model;
    std::vector<TrainLogRow> log;
    GradientTrace gradients;
};

inline std::vector<ImageSample> monitor_subset(const std::vector<ImageSample>& train, int count) {
    std::vector<ImageSample> out;
    for (const auto& x : train)
        if (x.cardinality() == 1 && static_cast<int>(out.size()) < count) out.push_back(x);
    return out;
}

/// Phase 1 alone (the BCE model two-phase training starts from).
inline ClassifierState<float> train_first_phase(const std::vector<ImageSample>& train, const Settings& s,
                                                std::vector<TrainLogRow>* log = nullptr) {
    TrainHooks<float> hooks;
    hooks.log = log;
    return train_phase1<float>(train, s.train, hooks);
}

/// Trains the configured loss. For two-phase training a ready phase-1 model
/// may be supplied; its log rows are then not repeated.
inline TrainOutputs train_model(const std::vector<ImageSample>& train, const Settings& s,
                                const ClassifierState<float>* phase1 = nullptr) {
    TrainOutputs out;
    if (s.loss == "recam") {
        auto p1 = phase1 ? *phase1 : train_first_phase(train, s, &out.log);
        std::vector<TrainLogRow> log2;
        TrainHooks<float> hooks;
        hooks.log = &log2;
        out.model = train_phase2<float>(std::move(p1), train, s.train, hooks);
        const long offset = out.log.empty() ? 0 : out.log.back().step + 1;
        for (auto r : log2) {
            r.step += offset;
            out.log.push_back(r);
        }
        return out;
    }
    const auto loss = baseline_of(s.loss);
    TrainHooks<float> hooks;
    hooks.log = &out.log;
    const auto subset = monitor_subset(train, s.monitor_images);
    if (s.monitor_every > 0 && !subset.empty()) {
        hooks.monitor_every = s.monitor_every;
        const auto monitored = loss == BaselineLoss::bce_only ? BaselineLoss::bce_only : BaselineLoss::sce_only;
        hooks.monitor = [&, monitored](long step, const ClassifierState<float>& st) {
            out.gradients.push_back(monitor_gradients(st, subset, monitored, step));
        };
    }
    out.model = train_baseline<float>(train, loss, s.train, hooks);
    return out;
}

/// True when every value lies in [0,1] and the maximum is 1 (or the map is all zero).
template <typename T>
bool normalized_ok(const Grid<T>& g) {
    T peak = 0;
    for (T v : g.data) {
        if (!(v >= T(0) && v <= T(1))) return false;
        peak = std::max(peak, v);
    }
    return peak == T(0) || peak == T(1);
}

template <typename T>
void require_normalized(const std::vector<ActivationMap<T>>& maps, const std::string& id) {
    for (const auto& m : maps)
        if (!normalized_ok(m.normalized))
            throw ContractError("normalized map of class " + std::to_string(m.cls) + " in " + id + " leaves [0,1]/max=1");
}

/// Feature-resolution maps of every positive class.
inline std::vector<ActivationMap<float>> extract_maps(const ClassifierState<float>& s, const ReCAMWeights<float>& rw,
                                                      const ImageSample& x, bool flip_tta) {
    auto maps = extract_image_maps(s, rw, x.pixels, x.label, flip_tta);
    require_normalized(maps, x.id);
    return maps;
}

inline Grid<double> boundary_for(const ImageSample& x, const std::string& kind) {
    return kind == "gradient" ? gradient_boundary(x.pixels) : boundary_oracle(x.gt_mask);
}

/// Applies the configured route and returns maps at image resolution.
inline std::vector<ActivationMap<float>> refine_maps(std::vector<ActivationMap<float>> maps, const ImageSample& x,
                                                     const ClassifierState<float>& s, const ReCAMWeights<float>& rw,
                                                     const Settings& st) {
    const bool climb = st.route == "climb" || st.route == "climb+walk";
    const bool walk = st.route == "walk" || st.route == "climb+walk";
    if (climb)
        for (auto& m : maps) m = adversarial_climb(x.pixels, m.cls, s, rw, st.climb);
    const int H = x.pixels.height, W = x.pixels.width;
    for (auto& m : maps)
        if (m.normalized.height != H || m.normalized.width != W) m = upsample_map(m, H, W);
    if (walk && !maps.empty()) {
        const auto boundary = boundary_for(x, st.boundary);
        const auto t = build_transition(boundary, st.walk);
        for (auto& m : maps) {
            const auto walked = random_walk_refine(m.normalized.cast<double>(), boundary, t, st.walk.iterations);
            m.raw = walked.cast<float>();
            m.normalized = m.raw;
        }
    }
    require_normalized(maps, x.id);
    return maps;
}

struct MapEvaluation {
    EvalReport report;
    std::optional<ThresholdSearch> search;
    double theta = 0;
    std::vector<Grid<std::uint8_t>> pseudo;
};

inline MapEvaluation evaluate_maps(const std::vector<std::vector<ActivationMap<float>>>& maps,
                                   const std::vector<ImageSample>& samples, int num_classes, bool search, double theta,
                                   int workers = 1) {
    if (maps.size() != samples.size()) throw ContractError("one map set per image required");
    std::vector<PixelWinner> winners(samples.size());
    std::vector<Grid<std::uint8_t>> gt(samples.size());
    parallel_for(samples.size(), workers, [&](std::size_t i) {
        const auto& x = samples[i];
        std::vector<ActivationMap<float>> up;
        for (const auto& m : maps[i])
            up.push_back(m.normalized.height == x.pixels.height && m.normalized.width == x.pixels.width
                             ? m
                             : upsample_map(m, x.pixels.height, x.pixels.width));
        winners[i] = pixel_winner(up, x.label);
        if (winners[i].cls.size() == 0) {
            winners[i].cls = Grid<std::uint8_t>(x.pixels.height, x.pixels.width, 0);
            winners[i].score = Grid<double>(x.pixels.height, x.pixels.width, -1.0);
        }
        gt[i] = x.gt_mask;
    });
    MapEvaluation out;
    if (search) {
        const auto grid = default_threshold_grid();
        out.search = search_threshold(winners, gt, grid, num_classes);
        out.theta = out.search->best_theta;
    } else {
        check_threshold(theta);
        out.theta = theta;
    }
    std::vector<int> cardinality;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.pseudo.push_back(apply_threshold(winners[i], out.theta));
        cardinality.push_back(samples[i].cardinality());
    }
    out.report = evaluate(out.pseudo, gt, cardinality, num_classes);
    return out;
}

/// Seed-map quality of a classifier: mIoU of thresholded, upsampled maps with
/// the threshold searched over the default grid.
inline MapEvaluation seed_quality(const ClassifierState<float>& s, WeightVariant variant,
                                  const std::vector<ImageSample>& samples, bool flip_tta = false, int workers = 1) {
    const auto rw = resolve_weights(s, variant);
    std::vector<std::vector<ActivationMap<float>>> maps(samples.size());
    parallel_for(samples.size(), workers, [&](std::size_t i) { maps[i] = extract_maps(s, rw, samples[i], flip_tta); });
    return evaluate_maps(maps, samples, s.num_classes(), true, 0.0, workers);
}

// ---------------------------------------------------------------------------
// Tables.

inline std::string metrics_csv(const MapEvaluation& e) {
    auto csv = io::eval_report_csv(e.report);
    csv += "theta," + io::fmt(e.theta) + "\n";
    return csv;
}

inline std::string curve_csv(const ThresholdSearch& s) {
    io::CsvTable t;
    t.header = {"theta", "miou"};
    for (const auto& [theta, m] : s.curve) t.rows.push_back({io::fmt(theta), io::fmt(m)});
    return t.str();
}

inline std::string train_log_csv(const std::vector<TrainLogRow>& log) {
    io::CsvTable t;
    t.header = {"step", "bce", "sce", "total", "lr"};
    for (const auto& r : log)
        t.rows.push_back({std::to_string(r.step), io::fmt_sci(r.bce), io::fmt_sci(r.sce), io::fmt_sci(r.total), io::fmt_sci(r.lr)});
    return t.str();
}

inline std::string gradients_csv(const GradientTrace& g) {
    io::CsvTable t;
    t.header = {"step", "grad_positive", "grad_confuser"};
    for (const auto& r : g) t.rows.push_back({std::to_string(r.step), io::fmt_sci(r.grad_positive), io::fmt_sci(r.grad_confuser)});
    return t.str();
}

} // namespace recam::pipeline
