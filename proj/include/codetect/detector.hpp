#pragma once

#include "codetect/geometry.hpp"
#include "codetect/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace codetect {

/// Architecture of the grid detector: a stack of stride-2 3x3 conv stages
/// with leaky-ReLU activations, then a linear 1x1 conv head emitting
/// num_anchors*(5+num_classes) channels per grid cell
/// (tx, ty, tw, th, tobj, class logits ... per anchor).
struct ArchConfig {
    int in_channels = 3;
    int img_size = 32;
    int grid = 8;
    int num_classes = 4;
    std::vector<int> stage_channels = {16, 32};
    std::vector<std::array<double, 2>> priors = {{0.2, 0.2}, {0.4, 0.4}};
    double leaky_slope = 0.1;

    int num_anchors() const { return static_cast<int>(priors.size()); }
    int head_channels() const { return num_anchors() * (5 + num_classes); }
    int num_stages() const { return static_cast<int>(stage_channels.size()); }
    int anchors_total() const { return grid * grid * num_anchors(); }

    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

/// Post-activation output of every stage, kept for the backward pass.
struct ForwardCache {
    std::vector<Tensor3> acts;
};

class Detector {
public:
    explicit Detector(const ArchConfig& arch);

    /// Scaled-uniform weight init (bound sqrt(6/fan_in)), zero biases.
    void init_params(std::uint64_t seed);

    const ArchConfig& arch() const { return arch_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t num_params() const { return params_.size(); }

    /// Raw head output, shape (head_channels, grid, grid). Pass a cache to
    /// enable backward().
    Tensor3 forward(const Tensor3& input, ForwardCache* cache = nullptr) const;

    /// Accumulate d(loss)/d(params) into grad given d(loss)/d(raw output).
    /// cache must come from a forward() over the same input.
    void backward(const Tensor3& input, const ForwardCache& cache, const Tensor3& dout,
                  std::vector<double>& grad) const;

    /// Human-readable layer name owning flat parameter index i.
    const std::string& layer_of_param(std::size_t i) const;

private:
    struct LayerDesc {
        int in_c;
        int out_c;
        int ksize;
        int stride;
        std::size_t w_off;
        std::size_t b_off;
        std::string name;
    };

    ArchConfig arch_;
    std::vector<LayerDesc> layers_;
    std::vector<double> params_;
};

/// Flat anchor index of (cell_y, cell_x, anchor).
inline int anchor_index(int cell_y, int cell_x, int a, const ArchConfig& arch) {
    return (cell_y * arch.grid + cell_x) * arch.num_anchors() + a;
}

/// Raw-output channel of field `f` (0..4 = tx,ty,tw,th,tobj; 5.. = class
/// logits) for anchor a.
inline int head_channel(int a, int f, const ArchConfig& arch) {
    return a * (5 + arch.num_classes) + f;
}

/// Decode one anchor's raw box to center format in image units:
/// cx=(cell_x+sigmoid(tx))/grid, w=prior_w*exp(tw) (tw clamped to [-8,8]).
/// The result is not clipped and may stick out of the unit square.
void decode_box(const Tensor3& raw, int cell_y, int cell_x, int a, const ArchConfig& arch,
                double& cx, double& cy, double& w, double& h);

/// Label-to-anchor assignment: each box goes to its center cell and the free
/// prior with the highest same-center shape IoU; on collision, the later box
/// takes its next-best free prior, or stays unassigned when none is left.
struct Assignment {
    std::vector<int> anchor_of_label; // flat anchor index or -1 (unassignable)
    std::vector<int> label_of_anchor; // label index or -1 (negative anchor)
    int n_assigned = 0;
};

Assignment assign_anchors(const std::vector<Box>& boxes, const ArchConfig& arch);

/// Full inference: decode every anchor, confidence = sigmoid(tobj) * best
/// sigmoid(class logit), keep confidence >= conf_threshold, clip boxes to
/// the unit square (dropping degenerates), then class-wise NMS.
std::vector<ScoredBox> predict(const Detector& det, const Tensor3& input,
                               double conf_threshold, double nms_iou);

/// SGD with classical momentum: v = mu*v + g; p -= lr*v. Throws
/// RuntimeFailure naming the offending layer if any gradient entry is not
/// finite.
struct SgdState {
    std::vector<double> velocity;
};

void sgd_step(Detector& det, SgdState& state, const std::vector<double>& grad, double lr,
              double momentum);

} // namespace codetect
