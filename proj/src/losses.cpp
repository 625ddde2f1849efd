#include "codetect/losses.hpp"

#include "codetect/common.hpp"

#include <cmath>

namespace codetect {

namespace {

constexpr double kLogSizeClamp = 8.0;

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct CellOfAnchor {
    int cell_y;
    int cell_x;
    int a;
};

CellOfAnchor split_anchor_index(int idx, const ArchConfig& arch) {
    const int A = arch.num_anchors();
    const int cell = idx / A;
    return {cell / arch.grid, cell % arch.grid, idx % A};
}

} // namespace

void LossWeights::validate() const {
    if (box < 0.0 || cls < 0.0 || obj < 0.0)
        throw ConfigError("loss weights must be >= 0");
    if (!(box > 0.0 || cls > 0.0 || obj > 0.0))
        throw ConfigError("at least one loss weight must be positive");
}

const char* selection_variant_name(SelectionVariant v) {
    switch (v) {
        case SelectionVariant::kBoxCls: return "box_cls";
        case SelectionVariant::kBox: return "box";
        case SelectionVariant::kCls: return "cls";
        case SelectionVariant::kObj: return "obj";
        case SelectionVariant::kBoxObj: return "box_obj";
        case SelectionVariant::kClsObj: return "cls_obj";
        case SelectionVariant::kBoxClsObj: return "box_cls_obj";
    }
    throw UsageError("unknown selection variant");
}

SelectionVariant selection_variant_from_name(const std::string& name) {
    if (name == "box_cls") return SelectionVariant::kBoxCls;
    if (name == "box") return SelectionVariant::kBox;
    if (name == "cls") return SelectionVariant::kCls;
    if (name == "obj") return SelectionVariant::kObj;
    if (name == "box_obj") return SelectionVariant::kBoxObj;
    if (name == "cls_obj") return SelectionVariant::kClsObj;
    if (name == "box_cls_obj") return SelectionVariant::kBoxClsObj;
    throw ConfigError("unknown selection variant: " + name);
}

double bce_with_logits(double logit, double target) {
    return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

SceneLosses per_anchor_losses(const Tensor3& raw, const std::vector<ObjectLabel>& labels,
                              const Assignment& asg, const ArchConfig& arch) {
    if (asg.anchor_of_label.size() != labels.size())
        throw UsageError("per_anchor_losses: assignment does not match the label list");

    SceneLosses out;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const int idx = asg.anchor_of_label[j];
        if (idx < 0) continue;
        const auto [cy, cx, a] = split_anchor_index(idx, arch);

        AnchorLoss al;
        al.anchor = idx;
        al.label = static_cast<int>(j);

        double px, py, pw, ph;
        decode_box(raw, cy, cx, a, arch, px, py, pw, ph);
        Box pred;
        pred.cx = px;
        pred.cy = py;
        pred.w = pw;
        pred.h = ph;
        al.box = ciou_loss(pred, labels[j].box);

        for (int k = 0; k < arch.num_classes; ++k) {
            const double z = raw.at(head_channel(a, 5 + k, arch), cy, cx);
            al.cls += bce_with_logits(z, k == labels[j].class_id ? 1.0 : 0.0);
        }
        al.obj = bce_with_logits(raw.at(head_channel(a, 4, arch), cy, cx), 1.0);
        out.positives.push_back(al);
    }

    for (int idx = 0; idx < arch.anchors_total(); ++idx) {
        if (asg.label_of_anchor[idx] != -1) continue;
        const auto [cy, cx, a] = split_anchor_index(idx, arch);
        out.negative_obj += bce_with_logits(raw.at(head_channel(a, 4, arch), cy, cx), 0.0);
    }
    return out;
}

double selection_loss(const AnchorLoss& al, const LossWeights& w, SelectionVariant v) {
    const bool has_box = v == SelectionVariant::kBox || v == SelectionVariant::kBoxCls ||
                         v == SelectionVariant::kBoxObj || v == SelectionVariant::kBoxClsObj;
    const bool has_cls = v == SelectionVariant::kCls || v == SelectionVariant::kBoxCls ||
                         v == SelectionVariant::kClsObj || v == SelectionVariant::kBoxClsObj;
    const bool has_obj = v == SelectionVariant::kObj || v == SelectionVariant::kBoxObj ||
                         v == SelectionVariant::kClsObj || v == SelectionVariant::kBoxClsObj;
    double s = 0.0;
    if (has_box) s += w.box * al.box;
    if (has_cls) s += w.cls * al.cls;
    if (has_obj) s += w.obj * al.obj;
    return s;
}

double masked_total_loss(const SceneLosses& losses, const std::vector<bool>& keep,
                         const LossWeights& w) {
    if (keep.size() != losses.positives.size())
        throw UsageError("masked_total_loss: keep mask does not match positives");
    double total = w.obj * losses.negative_obj;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        const AnchorLoss& al = losses.positives[i];
        total += w.box * al.box + w.cls * al.cls + w.obj * al.obj;
    }
    return total;
}

Tensor3 masked_loss_backward(const Tensor3& raw, const std::vector<ObjectLabel>& labels,
                             const Assignment& asg, const std::vector<bool>& keep,
                             const LossWeights& w, const ArchConfig& arch) {
    if (asg.anchor_of_label.size() != labels.size())
        throw UsageError("masked_loss_backward: assignment does not match the label list");

    Tensor3 dout(raw.c, raw.h, raw.w);

    std::size_t pos_rank = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const int idx = asg.anchor_of_label[j];
        if (idx < 0) continue;
        const std::size_t rank = pos_rank++;
        if (rank >= keep.size()) throw UsageError("masked_loss_backward: keep mask too short");
        if (!keep[rank]) continue;
        const auto [cy, cx, a] = split_anchor_index(idx, arch);

        // Box term via the decode chain. w = prior*exp(clamp(tw)), so the
        // gradient dies outside the clamp window.
        double px, py, pw, ph;
        decode_box(raw, cy, cx, a, arch, px, py, pw, ph);
        Box pred;
        pred.cx = px;
        pred.cy = py;
        pred.w = pw;
        pred.h = ph;
        std::array<double, 4> dbox;
        ciou_loss_grad(pred, labels[j].box, dbox);

        const double tx = raw.at(head_channel(a, 0, arch), cy, cx);
        const double ty = raw.at(head_channel(a, 1, arch), cy, cx);
        const double tw = raw.at(head_channel(a, 2, arch), cy, cx);
        const double th = raw.at(head_channel(a, 3, arch), cy, cx);
        const double sx = sigmoid(tx);
        const double sy = sigmoid(ty);
        dout.at(head_channel(a, 0, arch), cy, cx) += w.box * dbox[0] * sx * (1.0 - sx) / arch.grid;
        dout.at(head_channel(a, 1, arch), cy, cx) += w.box * dbox[1] * sy * (1.0 - sy) / arch.grid;
        if (std::abs(tw) <= kLogSizeClamp)
            dout.at(head_channel(a, 2, arch), cy, cx) += w.box * dbox[2] * pw;
        if (std::abs(th) <= kLogSizeClamp)
            dout.at(head_channel(a, 3, arch), cy, cx) += w.box * dbox[3] * ph;

        for (int k = 0; k < arch.num_classes; ++k) {
            const double z = raw.at(head_channel(a, 5 + k, arch), cy, cx);
            const double t = k == labels[j].class_id ? 1.0 : 0.0;
            dout.at(head_channel(a, 5 + k, arch), cy, cx) += w.cls * (sigmoid(z) - t);
        }
        const double zo = raw.at(head_channel(a, 4, arch), cy, cx);
        dout.at(head_channel(a, 4, arch), cy, cx) += w.obj * (sigmoid(zo) - 1.0);
    }
    if (pos_rank != keep.size())
        throw UsageError("masked_loss_backward: keep mask does not match positives");

    for (int idx = 0; idx < arch.anchors_total(); ++idx) {
        if (asg.label_of_anchor[idx] != -1) continue;
        const auto [cy, cx, a] = split_anchor_index(idx, arch);
        const double zo = raw.at(head_channel(a, 4, arch), cy, cx);
        dout.at(head_channel(a, 4, arch), cy, cx) += w.obj * sigmoid(zo);
    }
    return dout;
}

} // namespace codetect
