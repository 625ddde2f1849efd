#include "codetect/metrics.hpp"

#include "codetect/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace codetect {

std::vector<bool> match_predictions(const std::vector<ScoredBox>& preds,
                                    const std::vector<ObjectLabel>& gts,
                                    double iou_threshold) {
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].confidence > preds[b].confidence;
    });

    std::vector<bool> gt_used(gts.size(), false);
    std::vector<bool> tp(preds.size(), false);
    for (const std::size_t pi : order) {
        const ScoredBox& p = preds[pi];
        double best_iou = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_used[gi] || gts[gi].class_id != p.class_id) continue;
            const double ov = iou(p.box, gts[gi].box);
            if (ov > best_iou) {
                best_iou = ov;
                best_gt = gi;
            }
        }
        if (best_gt < gts.size() && best_iou >= iou_threshold) {
            tp[pi] = true;
            gt_used[best_gt] = true;
        }
    }
    return tp;
}

double average_precision(const std::vector<bool>& tp_sequence, int n_gt) {
    if (tp_sequence.empty()) return 0.0;
    if (n_gt <= 0) return 0.0;

    const std::size_t n = tp_sequence.size();
    std::vector<double> precision(n), recall(n);
    int tp_cum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (tp_sequence[i]) ++tp_cum;
        precision[i] = static_cast<double>(tp_cum) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp_cum) / static_cast<double>(n_gt);
    }
    // Monotone non-increasing envelope.
    for (std::size_t i = n - 1; i-- > 0;) {
        precision[i] = std::max(precision[i], precision[i + 1]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    return ap;
}

std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
    return t;
}

EvalResult evaluate(const std::vector<std::vector<ScoredBox>>& preds_per_scene,
                    const std::vector<std::vector<ObjectLabel>>& gts_per_scene,
                    const std::vector<double>& iou_thresholds) {
    if (preds_per_scene.size() != gts_per_scene.size()) {
        throw UsageError("evaluate: prediction and gt scene counts differ");
    }
    if (iou_thresholds.empty()) {
        throw UsageError("evaluate: need at least one IoU threshold");
    }

    // Classes present anywhere in the split.
    std::set<int> classes;
    for (const auto& scene : gts_per_scene)
        for (const auto& g : scene) classes.insert(g.class_id);
    for (const auto& scene : preds_per_scene)
        for (const auto& p : scene) classes.insert(p.class_id);

    std::size_t idx50 = 0;
    for (std::size_t t = 0; t < iou_thresholds.size(); ++t) {
        if (std::abs(iou_thresholds[t] - 0.5) < 1e-12) idx50 = t;
    }

    EvalResult res;
    std::vector<double> map_at_threshold(iou_thresholds.size(), 0.0);
    int n_counted_classes = 0;

    for (const int cls : classes) {
        int n_gt = 0;
        std::size_t n_pred = 0;
        for (const auto& scene : gts_per_scene)
            for (const auto& g : scene)
                if (g.class_id == cls) ++n_gt;
        for (const auto& scene : preds_per_scene)
            for (const auto& p : scene)
                if (p.class_id == cls) ++n_pred;
        if (n_gt == 0 && n_pred == 0) continue; // undefined AP, excluded from the mean

        std::vector<double> aps(iou_thresholds.size(), 0.0);
        for (std::size_t t = 0; t < iou_thresholds.size(); ++t) {
            // Pool this class's predictions over all scenes, ranked by confidence.
            struct Entry {
                double conf;
                std::size_t scene;
                std::size_t local; // index within the scene's class-filtered list
                bool tp;
            };
            std::vector<Entry> entries;
            for (std::size_t s = 0; s < preds_per_scene.size(); ++s) {
                std::vector<ScoredBox> cls_preds;
                std::vector<ObjectLabel> cls_gts;
                for (const auto& p : preds_per_scene[s])
                    if (p.class_id == cls) cls_preds.push_back(p);
                for (const auto& g : gts_per_scene[s])
                    if (g.class_id == cls) cls_gts.push_back(g);
                const std::vector<bool> tp = match_predictions(cls_preds, cls_gts, iou_thresholds[t]);
                for (std::size_t i = 0; i < cls_preds.size(); ++i) {
                    entries.push_back({cls_preds[i].confidence, s, i, tp[i]});
                }
            }
            std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
                return a.conf > b.conf;
            });
            std::vector<bool> tp_seq;
            tp_seq.reserve(entries.size());
            int tp_count = 0;
            for (const auto& e : entries) {
                tp_seq.push_back(e.tp);
                if (e.tp) ++tp_count;
            }
            aps[t] = average_precision(tp_seq, n_gt);

            if (t == idx50) {
                ClassCounts cc;
                cc.tp = tp_count;
                cc.fp = static_cast<int>(tp_seq.size()) - tp_count;
                cc.fn = n_gt - tp_count;
                res.counts[cls] = cc;
            }
        }
        res.per_class_ap[cls] = aps;
        for (std::size_t t = 0; t < iou_thresholds.size(); ++t) map_at_threshold[t] += aps[t];
        ++n_counted_classes;
    }

    if (n_counted_classes > 0) {
        for (auto& m : map_at_threshold) m /= n_counted_classes;
        res.map50 = map_at_threshold[idx50];
        res.map5095 = std::accumulate(map_at_threshold.begin(), map_at_threshold.end(), 0.0) /
                      static_cast<double>(map_at_threshold.size());
    }
    return res;
}

} // namespace codetect
