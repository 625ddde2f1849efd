#pragma once

#include "codetect/detector.hpp"
#include "codetect/geometry.hpp"
#include "codetect/tensor.hpp"

#include <string>
#include <vector>

namespace codetect {

struct LossWeights {
    double box = 0.05;
    double cls = 0.3;
    double obj = 0.7;

    void validate() const;
};

/// Which loss terms enter the per-anchor selection score that decides what a
/// peer keeps. The training objective itself is unaffected.
enum class SelectionVariant {
    kBoxCls, // default: localization + classification
    kBox,
    kCls,
    kObj,
    kBoxObj,
    kClsObj,
    kBoxClsObj,
};

const char* selection_variant_name(SelectionVariant v);
SelectionVariant selection_variant_from_name(const std::string& name);

/// Loss decomposition of one positive anchor. Terms are unweighted; the
/// lambda weights are applied by selection_loss() and masked_total_loss().
struct AnchorLoss {
    int anchor = -1; // flat anchor index
    int label = -1;  // index into the scene's label list
    double box = 0.0; // 1 - CIoU(decoded pred, target)
    double cls = 0.0; // BCE summed over class logits, one-hot target
    double obj = 0.0; // BCE(objectness logit, 1)
};

/// Per-scene loss state: one entry per assigned label (label order) plus the
/// pooled objectness BCE of every negative anchor.
struct SceneLosses {
    std::vector<AnchorLoss> positives;
    double negative_obj = 0.0;
};

/// Numerically stable BCE with logits: max(z,0) - z*t + log(1+exp(-|z|)).
double bce_with_logits(double logit, double target);

/// Decompose the raw head output against the scene's labels. Labels with
/// anchor_of_label == -1 are skipped (they appear in no AnchorLoss).
SceneLosses per_anchor_losses(const Tensor3& raw, const std::vector<ObjectLabel>& labels,
                              const Assignment& asg, const ArchConfig& arch);

/// The per-anchor score used for small-loss ranking.
double selection_loss(const AnchorLoss& al, const LossWeights& w, SelectionVariant v);

/// Masked training objective: weighted box+cls+obj over kept positives plus
/// the always-on weighted negative objectness term. keep runs parallel to
/// losses.positives.
double masked_total_loss(const SceneLosses& losses, const std::vector<bool>& keep,
                         const LossWeights& w);

/// d(masked_total_loss)/d(raw head output), recomputed from raw. Anchors of
/// masked-out positives receive exactly zero gradient in all channels.
Tensor3 masked_loss_backward(const Tensor3& raw, const std::vector<ObjectLabel>& labels,
                             const Assignment& asg, const std::vector<bool>& keep,
                             const LossWeights& w, const ArchConfig& arch);

} // namespace codetect
