#pragma once

#include <array>
#include <vector>

namespace codetect {

/// Axis-aligned bounding box, center format, normalized image units.
/// Construction rejects degenerate extents (w or h <= 1e-6) and boxes whose
/// clip to the unit square has no area; every Box in the system is usable by
/// the IoU/CIoU math without further checks.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    Box() = default;
    Box(double cx_, double cy_, double w_, double h_);

    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    /// Clip to the unit square. Returns false if nothing with positive area
    /// is left; out is untouched in that case.
    static bool clipped_to_unit(double cx, double cy, double w, double h, Box& out);
};

/// A detection or pseudo-label: box + class + confidence.
struct ScoredBox {
    Box box;
    int class_id = 0;
    double confidence = 0.0;

    ScoredBox() = default;
    ScoredBox(const Box& b, int cls, double conf);
};

/// One labelled object (no confidence attached).
struct ObjectLabel {
    Box box;
    int class_id = 0;
};

double iou(const Box& a, const Box& b);

/// 1 - CIoU(pred, target) with
///   CIoU = IoU - rho^2/c^2 - alpha*v,
///   v = (4/pi^2) (atan(w_t/h_t) - atan(w_p/h_p))^2,
///   alpha = v / ((1 - IoU) + v + 1e-9).
double ciou_loss(const Box& pred, const Box& target);

/// Same value plus the exact derivative with respect to pred's
/// (cx, cy, w, h), differentiating through IoU, the enclosing box and alpha.
double ciou_loss_grad(const Box& pred, const Box& target, std::array<double, 4>& dpred);

/// Greedy class-wise non-maximum suppression. Candidates are ordered by
/// confidence descending (ties: smaller class_id, then smaller input index);
/// a box is kept iff its IoU with every kept box of the same class is
/// <= iou_threshold. Output keeps that order.
std::vector<ScoredBox> nms(const std::vector<ScoredBox>& candidates, double iou_threshold);

/// Index form of nms(): positions into `candidates` of the kept boxes, in
/// the same suppression order. Lets callers carry parallel metadata through.
std::vector<std::size_t> nms_indices(const std::vector<ScoredBox>& candidates,
                                     double iou_threshold);

} // namespace codetect
