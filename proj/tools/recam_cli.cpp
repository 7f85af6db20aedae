// Batch driver for the seed-map pipeline: gen -> train -> extract -> refine -> eval,
// plus sweeps, the gradient-regime table and SVG reports.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "recam/pipeline.hpp"
#include "recam/plot.hpp"

namespace {

namespace fs = std::filesystem;
using namespace recam;
using pipeline::Settings;
using io::json;

constexpr int kExitUsage = 64;
constexpr int kExitUnknown = 1;

int exit_code(ErrorCode c) {
    switch (c) {
    case ErrorCode::configuration: return 2;
    case ErrorCode::contract: return 3;
    case ErrorCode::dependency: return 4;
    case ErrorCode::divergence: return 5;
    case ErrorCode::io: return 6;
    }
    return kExitUnknown;
}

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string variant, route, loss;
    std::optional<double> lambda, threshold;
    bool search_threshold = false;
    std::optional<int> workers;
    std::string what = "lambda";
    std::string model = "classifier";
};

struct Context {
    fs::path out;
    io::Config cfg{pipeline::schema()};
    Settings s;
    std::optional<io::RunManifest> manifest;
};

Context make_context(const Options& o) {
    Context c;
    if (!o.config_path.empty()) c.cfg.load_file(o.config_path);
    if (o.seed) c.cfg.set("run.seed", std::to_string(*o.seed));
    if (!o.variant.empty()) c.cfg.set("extract.variant", o.variant);
    if (!o.route.empty()) c.cfg.set("refine.route", o.route);
    if (!o.loss.empty()) c.cfg.set("train.loss", o.loss);
    if (o.lambda) c.cfg.set("train.lambda", io::fmt_sci(*o.lambda));
    if (o.workers) c.cfg.set("run.workers", std::to_string(*o.workers));
    if (o.threshold) {
        c.cfg.set("eval.search_threshold", "false");
        c.cfg.set("eval.threshold", io::fmt_sci(*o.threshold));
    }
    if (o.search_threshold) c.cfg.set("eval.search_threshold", "true");
    c.s = pipeline::settings_from(c.cfg);

    if (!o.out_dir.empty()) c.out = o.out_dir;
    else if (const char* env = std::getenv("RECAM_OUT_DIR"); env && *env) c.out = env;
    else c.out = "recam_out";
    fs::create_directories(c.out);
    c.manifest.emplace(c.out / "manifest.json");
    c.manifest->set_config(c.cfg);
    c.manifest->set_seed("run", c.s.seed);
    io::atomic_write(c.out / "config.ini", c.cfg.dump());
    return c;
}

// ---------------------------------------------------------------------------
// Artifact layout.

fs::path corpus_dir(const Context& c) { return c.out / "corpus"; }
fs::path model_dir(const Context& c) { return c.out / "model"; }
std::string route_tag(const std::string& route) { return route == "climb+walk" ? "climb_walk" : route; }
fs::path maps_dir(const Context& c) { return c.out / "maps" / c.s.split; }
fs::path refined_dir(const Context& c) { return c.out / "refined" / route_tag(c.s.route) / c.s.split; }
fs::path eval_dir(const Context& c) { return c.out / "eval" / route_tag(c.s.route) / c.s.split; }

void require_exists(const fs::path& p) {
    if (!fs::exists(p)) throw DependencyError(p.string());
}

/// Loads the corpus and checks it was generated from the configured data section.
io::Corpus load_corpus(Context& c) {
    require_exists(corpus_dir(c) / "manifest.json");
    auto corpus = io::load_corpus(corpus_dir(c));
    if (io::spec_to_json(corpus.spec) != io::spec_to_json(c.s.data) ||
        static_cast<int>(corpus.train.size()) != c.s.train_count || static_cast<int>(corpus.val.size()) != c.s.val_count)
        throw ConfigError("corpus in " + corpus_dir(c).string() + " was generated from a different data config; rerun gen");
    c.manifest->add_input(corpus_dir(c), corpus.content_hash);
    return corpus;
}

const std::vector<ImageSample>& split_of(const io::Corpus& corpus, const Settings& s) {
    return s.split == "val" ? corpus.val : corpus.train;
}

std::string phase1_key(const Settings& s, const std::string& corpus_hash) {
    const auto& t = s.train;
    json j{{"corpus", corpus_hash},
           {"arch", io::arch_to_json(t.arch)},
           {"epochs", t.phase1_epochs},
           {"lr", t.phase1_lr},
           {"power", t.lr_power},
           {"wd", t.weight_decay},
           {"batch", t.batch_size},
           {"optimizer", t.optimizer == OptimizerKind::sgd ? "sgd" : "adam"},
           {"seed", t.seed},
           {"code", io::RunManifest::kCodeVersion}};
    return io::sha256_hex(j.dump());
}

std::string model_key(const Settings& s, const std::string& corpus_hash) {
    const auto& t = s.train;
    json j{{"phase1", phase1_key(s, corpus_hash)},
           {"loss", s.loss},
           {"sce_mode", to_string(t.sce_mode)},
           {"phase2_epochs", t.phase2_epochs},
           {"phase2_lr", t.phase2_lr},
           {"lambda", t.lambda},
           {"encoder_lr_scale", t.phase2_encoder_lr_scale},
           {"detach_mask", t.detach_mask}};
    return io::sha256_hex(j.dump());
}

fs::path key_path(fs::path model) {
    model += ".key";
    return model;
}

std::optional<ClassifierState<float>> load_cached(const fs::path& model, const std::string& key) {
    if (!fs::exists(model) || !fs::exists(key_path(model)) || io::read_file(key_path(model)) != key) return std::nullopt;
    return io::decode_classifier(io::read_file(model));
}

void save_model(Context& c, const fs::path& path, const ClassifierState<float>& m, const std::string& loss,
                const std::string& key) {
    c.manifest->write_artifact(path, io::encode_classifier(m, {{"loss", loss}}));
    io::atomic_write(key_path(path), key);
}

ClassifierState<float> load_model(const fs::path& path, std::string* loss = nullptr) {
    require_exists(path);
    const auto bytes = io::read_file(path);
    if (loss) *loss = io::checkpoint_header(bytes).value("loss", "");
    return io::decode_classifier(bytes);
}

/// Phase-1 model shared by every two-phase training on the same corpus.
ClassifierState<float> phase1_model(Context& c, const io::Corpus& corpus) {
    const auto path = model_dir(c) / "phase1.rcam";
    const auto key = phase1_key(c.s, corpus.content_hash);
    if (auto m = load_cached(path, key)) return *m;
    std::vector<TrainLogRow> log;
    auto m = pipeline::train_first_phase(corpus.train, c.s, &log);
    c.manifest->write_artifact(model_dir(c) / "phase1_log.csv", pipeline::train_log_csv(log));
    save_model(c, path, m, "bce", key);
    return m;
}

/// Trains (or reuses) the model of the configured loss at `path`.
ClassifierState<float> trained_model(Context& c, const io::Corpus& corpus, const Settings& s, const fs::path& path,
                                     bool write_logs) {
    const auto key = model_key(s, corpus.content_hash);
    if (auto m = load_cached(path, key)) return *m;
    pipeline::TrainOutputs out;
    if (s.loss == "recam") {
        // The log then covers phase 2 only; phase 1 keeps its own.
        const auto p1 = phase1_model(c, corpus);
        out = pipeline::train_model(corpus.train, s, &p1);
    } else {
        out = pipeline::train_model(corpus.train, s);
    }
    if (write_logs) {
        c.manifest->write_artifact(path.parent_path() / "train_log.csv", pipeline::train_log_csv(out.log));
        if (!out.gradients.empty())
            c.manifest->write_artifact(path.parent_path() / "gradients.csv", pipeline::gradients_csv(out.gradients));
    }
    save_model(c, path, out.model, s.loss, key);
    return out.model;
}

void check_variant(const std::string& loss, WeightVariant v) {
    if (v != WeightVariant::w && loss != "recam")
        throw ConfigError(std::string("variant '") + to_string(v) + "' needs a two-phase model (train.loss = recam)");
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_gen(Context& c) {
    auto corpus = pipeline::make_corpus(c.s);
    io::save_corpus(corpus_dir(c), corpus);
    c.manifest->add_artifact(corpus_dir(c), corpus.content_hash);
    c.manifest->set_seed("data", c.s.data.seed);
}

void cmd_train(Context& c, const std::string& model) {
    const auto corpus = load_corpus(c);
    if (model == "classifier") {
        c.manifest->set_seed("train", c.s.train.seed);
        trained_model(c, corpus, c.s, model_dir(c) / "classifier.rcam", true);
        return;
    }
    if (model != "segmenter") throw ConfigError("unknown model '" + model + "' (expected classifier or segmenter)");
    // Segmenter: trained on the pseudo masks of the configured route over the training split.
    auto s = c.s;
    s.split = "train";
    Context view = c;
    view.s = s;
    const auto pseudo = eval_dir(view) / "pseudo";
    require_exists(pseudo);
    std::vector<Grid<std::uint8_t>> masks;
    for (const auto& x : corpus.train) {
        const auto p = pseudo / (x.id + ".png");
        require_exists(p);
        masks.push_back(io::decode_mask_png(io::read_file(p)));
    }
    std::vector<double> losses;
    const auto seg = train_segmenter<float>(masks, corpus.train, c.s.seg, &losses);
    c.manifest->write_artifact(model_dir(c) / "segmenter.rcam", io::encode_segmenter(seg));
    std::vector<Grid<std::uint8_t>> pred(corpus.val.size()), gt;
    std::vector<int> card;
    pipeline::parallel_for(corpus.val.size(), c.s.workers,
                           [&](std::size_t i) { pred[i] = predict_mask(seg, corpus.val[i].pixels); });
    for (const auto& x : corpus.val) {
        gt.push_back(x.gt_mask);
        card.push_back(x.cardinality());
    }
    const auto report = evaluate(pred, gt, card, c.s.data.num_classes);
    const auto dir = c.out / "eval" / "segmenter";
    c.manifest->write_artifact(dir / "metrics.csv", io::eval_report_csv(report));
    c.manifest->write_artifact(dir / "summary.txt", summary_text(report));
    io::CsvTable t;
    t.header = {"epoch", "loss"};
    for (std::size_t e = 0; e < losses.size(); ++e) t.rows.push_back({std::to_string(e), io::fmt_sci(losses[e])});
    c.manifest->write_artifact(model_dir(c) / "segmenter_log.csv", t.str());
}

void cmd_extract(Context& c) {
    const auto corpus = load_corpus(c);
    std::string loss;
    const auto model = load_model(model_dir(c) / "classifier.rcam", &loss);
    check_variant(loss, c.s.variant);
    const auto rw = resolve_weights(model, c.s.variant);
    const auto& samples = split_of(corpus, c.s);
    std::vector<std::string> hashes(samples.size());
    pipeline::parallel_for(samples.size(), c.s.workers, [&](std::size_t i) {
        const auto bytes = io::encode_rmap(pipeline::extract_maps(model, rw, samples[i], c.s.flip_tta));
        io::atomic_write(maps_dir(c) / (samples[i].id + ".rmap"), bytes);
        hashes[i] = io::sha256_hex(bytes);
    });
    for (std::size_t i = 0; i < samples.size(); ++i) c.manifest->add_artifact(maps_dir(c) / (samples[i].id + ".rmap"), hashes[i]);
    io::atomic_write(maps_dir(c) / "variant.txt", std::string(to_string(c.s.variant)) + "\n");
}

void cmd_refine(Context& c) {
    const auto corpus = load_corpus(c);
    const auto& samples = split_of(corpus, c.s);
    require_exists(maps_dir(c) / "variant.txt");
    const bool climb = c.s.route == "climb" || c.s.route == "climb+walk";
    ClassifierState<float> model;
    ReCAMWeights<float> rw;
    if (climb) {
        std::string loss;
        model = load_model(model_dir(c) / "classifier.rcam", &loss);
        auto v = io::read_file(maps_dir(c) / "variant.txt");
        while (!v.empty() && (v.back() == '\n' || v.back() == '\r')) v.pop_back();
        rw = resolve_weights(model, parse_weight_variant(v));
    }
    std::vector<std::string> hashes(samples.size());
    pipeline::parallel_for(samples.size(), c.s.workers, [&](std::size_t i) {
        const auto src = maps_dir(c) / (samples[i].id + ".rmap");
        require_exists(src);
        auto maps = io::decode_rmap(io::read_file(src));
        const auto bytes = io::encode_rmap(pipeline::refine_maps(std::move(maps), samples[i], model, rw, c.s));
        io::atomic_write(refined_dir(c) / (samples[i].id + ".rmap"), bytes);
        hashes[i] = io::sha256_hex(bytes);
    });
    for (std::size_t i = 0; i < samples.size(); ++i)
        c.manifest->add_artifact(refined_dir(c) / (samples[i].id + ".rmap"), hashes[i]);
}

pipeline::MapEvaluation evaluate_refined(Context& c, const io::Corpus& corpus) {
    const auto& samples = split_of(corpus, c.s);
    std::vector<std::vector<ActivationMap<float>>> maps(samples.size());
    pipeline::parallel_for(samples.size(), c.s.workers, [&](std::size_t i) {
        const auto p = refined_dir(c) / (samples[i].id + ".rmap");
        require_exists(p);
        maps[i] = io::decode_rmap(io::read_file(p));
    });
    return pipeline::evaluate_maps(maps, samples, c.s.data.num_classes, c.s.search_threshold, c.s.threshold, c.s.workers);
}

void cmd_eval(Context& c) {
    const auto corpus = load_corpus(c);
    const auto& samples = split_of(corpus, c.s);
    const auto e = evaluate_refined(c, corpus);
    const auto dir = eval_dir(c);
    c.manifest->write_artifact(dir / "metrics.csv", pipeline::metrics_csv(e));
    c.manifest->write_artifact(dir / "summary.txt", summary_text(e.report) + "threshold       " + io::fmt(e.theta) + "\n");
    if (e.search) c.manifest->write_artifact(dir / "threshold_curve.csv", pipeline::curve_csv(*e.search));
    std::vector<std::string> hashes(samples.size());
    pipeline::parallel_for(samples.size(), c.s.workers, [&](std::size_t i) {
        const auto bytes = io::encode_mask_png(e.pseudo[i]);
        io::atomic_write(dir / "pseudo" / (samples[i].id + ".png"), bytes);
        hashes[i] = io::sha256_hex(bytes);
    });
    for (std::size_t i = 0; i < samples.size(); ++i)
        c.manifest->add_artifact(dir / "pseudo" / (samples[i].id + ".png"), hashes[i]);
    std::cout << summary_text(e.report) << "threshold       " << io::fmt(e.theta) << "\n";
}

void cmd_sweep(Context& c, const std::string& what) {
    const auto dir = c.out / "sweep";
    io::CsvTable t;
    if (what == "threshold") {
        const auto corpus = load_corpus(c);
        auto s = c.s;
        s.search_threshold = true;
        Context view = c;
        view.s = s;
        const auto e = evaluate_refined(view, corpus);
        c.manifest->write_artifact(dir / "threshold.csv", pipeline::curve_csv(*e.search));
        return;
    }
    const auto corpus = load_corpus(c);
    const auto& samples = split_of(corpus, c.s);
    auto quality = [&](const ClassifierState<float>& m, WeightVariant v) {
        return pipeline::seed_quality(m, v, samples, c.s.flip_tta, c.s.workers);
    };
    if (what == "lambda") {
        check_variant("recam", c.s.variant);
        t.header = {"lambda", "variant", "miou", "theta"};
        for (double lambda : c.s.lambdas) {
            auto s = c.s;
            s.loss = "recam";
            s.train.lambda = lambda;
            s.train.validate();
            const auto tag = io::fmt(lambda);
            const auto m = trained_model(c, corpus, s, dir / ("lambda_" + tag) / "classifier.rcam", false);
            const auto v = pipeline::lambda_sweep_variant(lambda, c.s.variant);
            const auto e = quality(m, v);
            t.rows.push_back({tag, to_string(v), io::fmt(e.report.mean_iou), io::fmt(e.theta)});
        }
    } else if (what == "variant") {
        std::string loss;
        const auto m = load_model(model_dir(c) / "classifier.rcam", &loss);
        t.header = {"variant", "miou", "theta"};
        for (const auto& name : c.s.variants) {
            const auto v = parse_weight_variant(name);
            check_variant(loss, v);
            const auto e = quality(m, v);
            t.rows.push_back({name, io::fmt(e.report.mean_iou), io::fmt(e.theta)});
        }
    } else if (what == "loss") {
        t.header = {"loss", "variant", "miou", "theta"};
        for (const auto& loss : c.s.losses) {
            auto s = c.s;
            s.loss = loss;
            const auto m = trained_model(c, corpus, s, dir / ("loss_" + loss) / "classifier.rcam", false);
            const auto v = loss == "recam" ? c.s.variant : WeightVariant::w;
            const auto e = quality(m, v);
            t.rows.push_back({loss, to_string(v), io::fmt(e.report.mean_iou), io::fmt(e.theta)});
        }
    } else {
        throw ConfigError("unknown sweep '" + what + "' (expected lambda, variant, loss or threshold)");
    }
    c.manifest->write_artifact(dir / (what + ".csv"), t.str());
}

void cmd_regime(Context& c) {
    std::vector<double> grid;
    for (int z = -10; z <= 10; ++z) grid.push_back(z);
    c.manifest->write_artifact(c.out / "regime.csv", io::regime_csv(regime_table(grid, grid)));
}

std::vector<double> column(const io::CsvTable& t, const std::string& name) {
    std::vector<double> out;
    const int col = t.column(name);
    for (const auto& r : t.rows) out.push_back(std::stod(r[col]));
    return out;
}

/// Renders SVGs from CSVs already on disk; nothing is recomputed.
void cmd_report(Context& c) {
    const auto dir = c.out / "report";
    int made = 0;
    auto emit = [&](const std::string& name, const plot::Axes& axes, const std::vector<plot::Series>& series) {
        c.manifest->write_artifact(dir / name, plot::line_chart(axes, series));
        ++made;
    };
    if (fs::exists(c.out / "regime.csv")) {
        const auto t = io::read_csv(c.out / "regime.csv");
        plot::Series g[4] = {{"|dBCE/dz_p|", {}, {}}, {"|dBCE/dz_q|", {}, {}}, {"|dSCE/dz_p|", {}, {}}, {"|dSCE/dz_q|", {}, {}}};
        const auto zp = column(t, "z_p"), zq = column(t, "z_q");
        const std::vector<double> cols[4] = {column(t, "g1"), column(t, "g2"), column(t, "g3"), column(t, "g4")};
        for (std::size_t i = 0; i < zp.size(); ++i) {
            if (zp[i] != 0.0) continue;
            for (int k = 0; k < 4; ++k) {
                g[k].x.push_back(zq[i]);
                g[k].y.push_back(std::max(cols[k][i], 1e-12));
            }
        }
        emit("regime.svg", {"Logit-gradient magnitudes at z_p = 0", "z_q", "magnitude", true}, {g[0], g[1], g[2], g[3]});
    }
    if (fs::exists(model_dir(c) / "train_log.csv")) {
        const auto t = io::read_csv(model_dir(c) / "train_log.csv");
        const auto step = column(t, "step");
        emit("train_loss.svg", {"Training loss", "step", "loss", false},
             {{"total", step, column(t, "total")}, {"bce", step, column(t, "bce")}, {"sce", step, column(t, "sce")}});
    }
    if (fs::exists(model_dir(c) / "phase1_log.csv")) {
        const auto t = io::read_csv(model_dir(c) / "phase1_log.csv");
        emit("phase1_loss.svg", {"First-phase training loss", "step", "loss", false},
             {{"bce", column(t, "step"), column(t, "bce")}});
    }
    if (fs::exists(model_dir(c) / "gradients.csv")) {
        const auto t = io::read_csv(model_dir(c) / "gradients.csv");
        const auto step = column(t, "step");
        auto gp = column(t, "grad_positive"), gq = column(t, "grad_confuser");
        emit("gradients.svg", {"Mean logit gradients on single-label images", "step", "dL/dz", false},
             {{"positive class", step, gp}, {"top negative class", step, gq}});
    }
    if (fs::exists(c.out / "sweep" / "lambda.csv")) {
        const auto t = io::read_csv(c.out / "sweep" / "lambda.csv");
        emit("lambda_sweep.svg", {"Seed mIoU against lambda", "lambda", "mIoU", false},
             {{"seed mIoU", column(t, "lambda"), column(t, "miou")}});
    }
    if (fs::exists(c.out / "sweep" / "threshold.csv")) {
        const auto t = io::read_csv(c.out / "sweep" / "threshold.csv");
        emit("threshold_sweep.svg", {"mIoU against threshold", "threshold", "mIoU", false},
             {{"mIoU", column(t, "theta"), column(t, "miou")}});
    }
    if (fs::exists(c.out / "eval")) {
        std::vector<fs::path> curves;
        for (const auto& e : fs::recursive_directory_iterator(c.out / "eval"))
            if (e.path().filename() == "threshold_curve.csv") curves.push_back(e.path());
        std::sort(curves.begin(), curves.end());
        for (const auto& p : curves) {
            const auto t = io::read_csv(p);
            const auto rel = fs::relative(p.parent_path(), c.out / "eval").generic_string();
            std::string name = rel;
            std::replace(name.begin(), name.end(), '/', '_');
            emit("threshold_" + name + ".svg", {"mIoU against threshold (" + rel + ")", "threshold", "mIoU", false},
                 {{"mIoU", column(t, "theta"), column(t, "miou")}});
        }
    }
    if (made == 0) throw DependencyError((c.out / "regime.csv").string() + " (or any other report CSV)");
}

template <typename F>
void timed(Context& c, const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.manifest->add_timing(name, secs);
    c.manifest->save();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Seed-map pipeline for weakly supervised segmentation on synthetic shapes"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "INI configuration file");
        sub->add_option("--seed", o.seed, "Run seed (overrides run.seed)");
        sub->add_option("--out-dir", o.out_dir, "Output root (default: $RECAM_OUT_DIR or ./recam_out)");
        sub->add_option("--variant", o.variant, "Weight variant: w, wprime, sum, product");
        sub->add_option("--route", o.route, "Mask route: seed, walk, climb, climb+walk");
        sub->add_option("--loss", o.loss, "Training loss: bce, sce, sce-single, recam");
        sub->add_option("--lambda", o.lambda, "Weight of the SCE term");
        auto* th = sub->add_option("--threshold", o.threshold, "Fixed foreground threshold in (0,1)");
        auto* st = sub->add_flag("--search-threshold", o.search_threshold, "Search the threshold over the default grid");
        th->excludes(st);
        sub->add_option("--workers", o.workers, "Worker threads for per-image stages");
    };
    auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus");
    auto* train = app.add_subcommand("train", "Train the classifier (or the segmenter on pseudo masks)");
    train->add_option("--model", o.model, "classifier or segmenter");
    auto* extract = app.add_subcommand("extract", "Extract activation maps");
    auto* refine = app.add_subcommand("refine", "Refine maps along the configured route");
    auto* eval = app.add_subcommand("eval", "Threshold refined maps and score them");
    auto* sweep = app.add_subcommand("sweep", "Ablation sweeps");
    sweep->add_option("--what", o.what, "lambda, variant, loss or threshold");
    auto* report = app.add_subcommand("report", "Render SVG plots from CSVs on disk");
    auto* regime = app.add_subcommand("regime", "Tabulate logit-gradient magnitudes");
    auto* run = app.add_subcommand("run", "gen, train, extract, refine and eval in one go");
    for (auto* sub : {gen, train, extract, refine, eval, sweep, report, regime, run}) common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[USAGE]: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        auto c = make_context(o);
        if (gen->parsed()) timed(c, "gen", [&] { cmd_gen(c); });
        if (train->parsed()) timed(c, "train", [&] { cmd_train(c, o.model); });
        if (extract->parsed()) timed(c, "extract", [&] { cmd_extract(c); });
        if (refine->parsed()) timed(c, "refine", [&] { cmd_refine(c); });
        if (eval->parsed()) timed(c, "eval", [&] { cmd_eval(c); });
        if (sweep->parsed()) timed(c, "sweep", [&] { cmd_sweep(c, o.what); });
        if (report->parsed()) timed(c, "report", [&] { cmd_report(c); });
        if (regime->parsed()) timed(c, "regime", [&] { cmd_regime(c); });
        if (run->parsed()) {
            timed(c, "gen", [&] { cmd_gen(c); });
            timed(c, "train", [&] { cmd_train(c, "classifier"); });
            timed(c, "extract", [&] { cmd_extract(c); });
            timed(c, "refine", [&] { cmd_refine(c); });
            timed(c, "eval", [&] { cmd_eval(c); });
        }
    } catch (const Error& e) {
        std::cerr << "error[" << to_string(e.code()) << "]: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error[UNKNOWN]: " << e.what() << "\n";
        return kExitUnknown;
    }
    return 0;
}
