#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "recam/activation.hpp"
#include "recam/core.hpp"

namespace recam {

/// Hard per-pixel labels: 0 background, k+1 class k, 255 ignore.
struct PseudoMask {
    Grid<std::uint8_t> labels;
    std::string provenance;
};

/// (K+1)×(K+1) pixel counts indexed [gt][pred]; ignore pixels never enter.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes = 0) : n_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {}

    int classes() const { return n_; }
    std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * n_ + pred]; }

    void add(const Grid<std::uint8_t>& pred, const Grid<std::uint8_t>& gt) {
        if (!pred.same_shape(gt)) throw ContractError("prediction and ground truth differ in shape");
        for (std::size_t n = 0; n < gt.size(); ++n) {
            const auto g = gt.data[n], p = pred.data[n];
            if (g == kIgnoreLabel || p == kIgnoreLabel) continue;
            if (g >= n_ || p >= n_) throw ContractError("label exceeds class count");
            ++counts_[static_cast<std::size_t>(g) * n_ + p];
        }
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (o.n_ != n_) throw ContractError("confusion matrices differ in class count");
        for (std::size_t n = 0; n < counts_.size(); ++n) counts_[n] += o.counts_[n];
        return *this;
    }

    std::uint64_t true_positive(int c) const { return at(c, c); }
    std::uint64_t false_positive(int c) const {
        std::uint64_t s = 0;
        for (int g = 0; g < n_; ++g)
            if (g != c) s += at(g, c);
        return s;
    }
    std::uint64_t false_negative(int c) const {
        std::uint64_t s = 0;
        for (int p = 0; p < n_; ++p)
            if (p != c) s += at(c, p);
        return s;
    }
    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto v : counts_) s += v;
        return s;
    }

private:
    int n_;
    std::vector<std::uint64_t> counts_;
};

/// Pixel partition for the flaw taxonomy:
///   tp      predicted object k, actual k
///   tn_bg   predicted background, actual background
///   fp_obj  predicted object k, actual another object
///   fp_bg   predicted object, actual background
///   fn      predicted background, actual object
/// Percentages are over tp + fn + fp_bg.
struct FlawCounts {
    std::uint64_t tp = 0, tn_bg = 0, fp_obj = 0, fp_bg = 0, fn = 0;

    std::uint64_t percent_base() const { return tp + fn + fp_bg; }
    double percent(std::uint64_t v) const {
        const auto base = percent_base();
        return base ? 100.0 * static_cast<double>(v) / static_cast<double>(base) : 0.0;
    }
};

enum class PixelCategory { tp, tn_bg, fp_obj, fp_bg, fn, ignored };

inline PixelCategory categorize_pixel(std::uint8_t pred, std::uint8_t gt) {
    if (pred == kIgnoreLabel || gt == kIgnoreLabel) return PixelCategory::ignored;
    if (pred == 0) return gt == 0 ? PixelCategory::tn_bg : PixelCategory::fn;
    if (gt == 0) return PixelCategory::fp_bg;
    return pred == gt ? PixelCategory::tp : PixelCategory::fp_obj;
}

inline FlawCounts flaw_counts(const ConfusionMatrix& cm) {
    FlawCounts f;
    for (int g = 0; g < cm.classes(); ++g)
        for (int p = 0; p < cm.classes(); ++p) {
            const auto v = cm.at(g, p);
            switch (categorize_pixel(static_cast<std::uint8_t>(p), static_cast<std::uint8_t>(g))) {
            case PixelCategory::tp: f.tp += v; break;
            case PixelCategory::tn_bg: f.tn_bg += v; break;
            case PixelCategory::fp_obj: f.fp_obj += v; break;
            case PixelCategory::fp_bg: f.fp_bg += v; break;
            case PixelCategory::fn: f.fn += v; break;
            case PixelCategory::ignored: break;
            }
        }
    return f;
}

struct EvalReport {
    std::vector<std::optional<double>> class_iou;  // index 0 = background
    double mean_iou = 0;
    double mean_f1 = 0;
    double pixel_accuracy = 0;
    FlawCounts flaws;
    std::optional<double> single_miou;
    std::optional<double> multi_miou;
};

/// IoU_c = TP/(TP+FP+FN) over corpus totals. Classes absent from both
/// prediction and ground truth are left out of the mean.
inline EvalReport report_from_confusion(const ConfusionMatrix& cm) {
    EvalReport r;
    r.class_iou.resize(cm.classes());
    double iou_sum = 0, f1_sum = 0;
    int present = 0;
    std::uint64_t correct = 0;
    for (int c = 0; c < cm.classes(); ++c) {
        const double tp = static_cast<double>(cm.true_positive(c));
        const double fp = static_cast<double>(cm.false_positive(c));
        const double fn = static_cast<double>(cm.false_negative(c));
        correct += cm.true_positive(c);
        if (tp + fp + fn == 0) continue;
        r.class_iou[c] = tp / (tp + fp + fn);
        iou_sum += *r.class_iou[c];
        f1_sum += 2 * tp / (2 * tp + fp + fn);
        ++present;
    }
    r.mean_iou = present ? iou_sum / present : 0.0;
    r.mean_f1 = present ? f1_sum / present : 0.0;
    const auto total = cm.total();
    r.pixel_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    r.flaws = flaw_counts(cm);
    return r;
}

inline ConfusionMatrix confusion_of(const std::vector<Grid<std::uint8_t>>& pred, const std::vector<Grid<std::uint8_t>>& gt,
                                    int num_classes) {
    if (pred.size() != gt.size()) throw ContractError("prediction and ground-truth sets differ in size");
    ConfusionMatrix cm(num_classes + 1);
    for (std::size_t n = 0; n < pred.size(); ++n) cm.add(pred[n], gt[n]);
    return cm;
}

inline EvalReport miou(const std::vector<Grid<std::uint8_t>>& pred, const std::vector<Grid<std::uint8_t>>& gt,
                       int num_classes) {
    return report_from_confusion(confusion_of(pred, gt, num_classes));
}

inline FlawCounts flaw_stats(const std::vector<Grid<std::uint8_t>>& pred, const std::vector<Grid<std::uint8_t>>& gt,
                             int num_classes) {
    return flaw_counts(confusion_of(pred, gt, num_classes));
}

/// mIoU over the single-label and multi-label subsets; an empty subset is absent.
inline std::pair<std::optional<double>, std::optional<double>> decompose_by_cardinality(
    const std::vector<ConfusionMatrix>& per_image, std::span<const int> cardinality) {
    if (per_image.size() != cardinality.size()) throw ContractError("one cardinality tag per image required");
    if (per_image.empty()) return {};
    ConfusionMatrix single(per_image.front().classes()), multi(per_image.front().classes());
    bool any_single = false, any_multi = false;
    for (std::size_t n = 0; n < per_image.size(); ++n) {
        if (cardinality[n] == 1) {
            single += per_image[n];
            any_single = true;
        } else {
            multi += per_image[n];
            any_multi = true;
        }
    }
    std::optional<double> s, m;
    if (any_single) s = report_from_confusion(single).mean_iou;
    if (any_multi) m = report_from_confusion(multi).mean_iou;
    return {s, m};
}

/// Full report including the single/multi decomposition.
inline EvalReport evaluate(const std::vector<Grid<std::uint8_t>>& pred, const std::vector<Grid<std::uint8_t>>& gt,
                           std::span<const int> cardinality, int num_classes) {
    if (pred.size() != gt.size()) throw ContractError("prediction and ground-truth sets differ in size");
    std::vector<ConfusionMatrix> per_image;
    ConfusionMatrix total(num_classes + 1);
    for (std::size_t n = 0; n < pred.size(); ++n) {
        ConfusionMatrix cm(num_classes + 1);
        cm.add(pred[n], gt[n]);
        total += cm;
        per_image.push_back(std::move(cm));
    }
    auto r = report_from_confusion(total);
    std::tie(r.single_miou, r.multi_miou) = decompose_by_cardinality(per_image, cardinality);
    return r;
}

// ---------------------------------------------------------------------------
// Thresholding.

/// Per-pixel winning class among the positive classes (lowest index on ties)
/// and its score. Thresholding then reduces to one comparison per pixel.
struct PixelWinner {
    Grid<std::uint8_t> cls;  // k+1 of the winner, 0 when no positive class has a map
    Grid<double> score;
};

template <typename T>
PixelWinner pixel_winner(const std::vector<ActivationMap<T>>& maps, std::span<const int> label) {
    PixelWinner w;
    bool first = true;
    for (const auto& m : maps) {
        if (m.cls < 0 || m.cls >= static_cast<int>(label.size())) throw ContractError("map class index out of range");
        if (!label[m.cls]) continue;
        if (first) {
            w.cls = Grid<std::uint8_t>(m.normalized.height, m.normalized.width, 0);
            w.score = Grid<double>(m.normalized.height, m.normalized.width, -1.0);
            first = false;
        } else if (m.normalized.height != w.cls.height || m.normalized.width != w.cls.width) {
            throw ContractError("class maps of one image differ in shape");
        }
        for (std::size_t n = 0; n < w.cls.size(); ++n) {
            const double v = static_cast<double>(m.normalized.data[n]);
            const bool lower_index = w.cls.data[n] == 0 || m.cls + 1 < w.cls.data[n];
            if (v > w.score.data[n] || (v == w.score.data[n] && lower_index)) {
                w.score.data[n] = v;
                w.cls.data[n] = static_cast<std::uint8_t>(m.cls + 1);
            }
        }
    }
    return w;
}

inline Grid<std::uint8_t> apply_threshold(const PixelWinner& w, double theta) {
    Grid<std::uint8_t> out(w.cls.height, w.cls.width, 0);
    for (std::size_t n = 0; n < out.size(); ++n) out.data[n] = w.score.data[n] > theta ? w.cls.data[n] : 0;
    return out;
}

inline void check_threshold(double theta) {
    if (!(theta > 0.0 && theta < 1.0)) throw ContractError("threshold must lie in (0,1)");
}

/// Pixel gets argmax_k M_k over positive classes if that maximum exceeds θ,
/// background otherwise. Maps must already be at image resolution.
template <typename T>
PseudoMask threshold_maps(const std::vector<ActivationMap<T>>& maps, std::span<const int> label, double theta,
                          int height, int width, std::string provenance = "threshold") {
    check_threshold(theta);
    const auto w = pixel_winner(maps, label);
    if (w.cls.size() == 0) return {Grid<std::uint8_t>(height, width, 0), std::move(provenance)};
    if (w.cls.height != height || w.cls.width != width) throw ContractError("maps are not at image resolution");
    return {apply_threshold(w, theta), std::move(provenance)};
}

inline std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int i = 5; i <= 60; ++i) g.push_back(i / 100.0);
    return g;
}

struct ThresholdSearch {
    double best_theta = 0;
    double best_miou = 0;
    std::vector<std::pair<double, double>> curve;  // (θ, mIoU)
};

/// θ maximising corpus mIoU over the grid; ties go to the smaller θ.
inline ThresholdSearch search_threshold(const std::vector<PixelWinner>& winners, const std::vector<Grid<std::uint8_t>>& gt,
                                        std::span<const double> grid, int num_classes) {
    if (grid.empty()) throw ContractError("threshold grid is empty");
    if (winners.size() != gt.size()) throw ContractError("one winner map per ground-truth mask required");
    ThresholdSearch out;
    bool first = true;
    for (double theta : grid) {
        check_threshold(theta);
        ConfusionMatrix cm(num_classes + 1);
        for (std::size_t n = 0; n < gt.size(); ++n) {
            if (winners[n].cls.size() == 0) {
                cm.add(Grid<std::uint8_t>(gt[n].height, gt[n].width, 0), gt[n]);
                continue;
            }
            cm.add(apply_threshold(winners[n], theta), gt[n]);
        }
        const double m = report_from_confusion(cm).mean_iou;
        out.curve.emplace_back(theta, m);
        if (first || m > out.best_miou || (m == out.best_miou && theta < out.best_theta)) {
            out.best_theta = theta;
            out.best_miou = m;
            first = false;
        }
    }
    return out;
}

inline std::string summary_text(const EvalReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "mIoU            " << r.mean_iou << "\n";
    os << "mean F1         " << r.mean_f1 << "\n";
    os << "pixel accuracy  " << r.pixel_accuracy << "\n";
    for (std::size_t c = 0; c < r.class_iou.size(); ++c) {
        os << (c == 0 ? "IoU background  " : "IoU class " + std::to_string(c - 1) + std::string(c - 1 < 10 ? "     " : "    "));
        if (r.class_iou[c]) os << *r.class_iou[c] << "\n";
        else os << "absent\n";
    }
    const auto& f = r.flaws;
    os.precision(2);
    os << "TP      " << f.tp << " (" << f.percent(f.tp) << "%)\n";
    os << "FP obj  " << f.fp_obj << " (" << f.percent(f.fp_obj) << "%)\n";
    os << "FN      " << f.fn << " (" << f.percent(f.fn) << "%)\n";
    os << "FP bg   " << f.fp_bg << " (" << f.percent(f.fp_bg) << "%)\n";
    os << "TN bg   " << f.tn_bg << "\n";
    os.precision(4);
    os << "single-label mIoU  " << (r.single_miou ? std::to_string(*r.single_miou) : std::string("absent")) << "\n";
    os << "multi-label mIoU   " << (r.multi_miou ? std::to_string(*r.multi_miou) : std::string("absent")) << "\n";
    return os.str();
}

} // namespace recam
