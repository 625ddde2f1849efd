#pragma once

#include "codetect/geometry.hpp"

#include <map>
#include <vector>

namespace codetect {

struct ClassCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct EvalResult {
    /// class_id -> AP at each requested IoU threshold (same order as the
    /// thresholds passed to evaluate). Classes absent from both gt and
    /// predictions across the whole split do not appear.
    std::map<int, std::vector<double>> per_class_ap;
    double map50 = 0.0;
    double map5095 = 0.0;
    /// Per-class TP/FP/FN at IoU 0.5 (or the first threshold if 0.5 is not
    /// in the list).
    std::map<int, ClassCounts> counts;
};

/// Greedy per-class matching: predictions sorted by confidence descending
/// (stable), each matches the unmatched same-class gt of highest IoU when
/// that IoU >= iou_threshold. Returns one TP flag per input prediction, in
/// the original input order.
std::vector<bool> match_predictions(const std::vector<ScoredBox>& preds,
                                    const std::vector<ObjectLabel>& gts,
                                    double iou_threshold);

/// Area under the precision-recall curve, all-point interpolation (the
/// precision envelope is made monotone non-increasing before integration).
/// The sequence must be ordered by confidence descending. n_gt == 0 with a
/// non-empty sequence yields 0.
double average_precision(const std::vector<bool>& tp_sequence, int n_gt);

/// Full-split evaluation at a list of IoU thresholds. map50 is computed at
/// threshold 0.5 and map5095 as the class-mean of the threshold-mean when the
/// canonical 10-threshold list is passed; with an arbitrary list, map50 uses
/// the first threshold and map5095 averages whatever was given.
EvalResult evaluate(const std::vector<std::vector<ScoredBox>>& preds_per_scene,
                    const std::vector<std::vector<ObjectLabel>>& gts_per_scene,
                    const std::vector<double>& iou_thresholds);

/// The canonical {0.50, 0.55, ..., 0.95} list.
std::vector<double> coco_thresholds();

} // namespace codetect
