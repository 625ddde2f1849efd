#pragma once

#include "codetect/datagen.hpp"
#include "codetect/detector.hpp"
#include "codetect/losses.hpp"
#include "codetect/metrics.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace codetect {

/// Training regime. All three share one epoch/batch/gradient code path and
/// differ only in how the keep masks are computed, so with a zero forget
/// rate they collapse to the same arithmetic.
enum class Method {
    kBase,            // one model, no filtering
    kPerImageCoteach, // peers exchange whole images by smallest total loss
    kPerObjectCoteach // peers exchange positive anchors by smallest selection loss
};

const char* method_name(Method m);
Method method_from_name(const std::string& name);

/// Forget-rate ramp: grows linearly to max_forget over rampup_epochs, flat
/// afterwards.
struct Schedule {
    int epochs = 300;
    int rampup_epochs = 150;
    double max_forget = 0.2;

    void validate() const;
};

/// max_forget * min(1, epoch/rampup). Epochs are 1-based; epoch outside
/// [1, epochs] is a usage error.
double forget_rate(const Schedule& s, int epoch);

/// Number of items kept when discarding a `forget` fraction: ceil((1-forget)*n),
/// nudged so exact products do not round up through float error.
int keep_count(int n, double forget);

/// Each peer keeps what its partner scored lowest: keep_f holds the indices
/// of the k smallest entries of sel_g and keep_g those of sel_f. Ties break
/// toward the smaller index; results come back sorted ascending.
struct SelectedSets {
    std::vector<std::size_t> keep_f;
    std::vector<std::size_t> keep_g;
};

SelectedSets cross_select(const std::vector<double>& sel_f, const std::vector<double>& sel_g,
                          std::size_t k);

struct PredictParams {
    double conf_threshold = 0.25;
    double nms_iou = 0.5;
};

struct TrainParams {
    Method method = Method::kPerObjectCoteach;
    SelectionVariant variant = SelectionVariant::kBoxCls;
    LossWeights weights;
    Schedule schedule;
    double lr = 0.02; // peak rate; cosine-decayed to 5% over the run
    double momentum = 0.9;
    int batch_size = 8;
    int eval_interval = 5; // epochs between val evals; <= 0 means final only
    PredictParams predict;
    std::uint64_t data_seed = 1;   // drives the epoch shuffles
    std::uint64_t init_seed_f = 2; // peer weight init
    std::uint64_t init_seed_g = 3;

    void validate() const;
};

/// One training scene. For pseudo-labelled scenes, labels are the
/// post-processed pseudo labels and provenance runs parallel to them; for
/// gt-labelled scenes provenance is empty and the scene is excluded from the
/// noise-tracking statistics.
struct TrainScene {
    int scene_id = 0;
    Tensor3 features;
    std::vector<ObjectLabel> labels;
    std::vector<Provenance> provenance;
    bool gt_labelled = false;
};

struct EvalScene {
    int scene_id = 0;
    Tensor3 features;
    std::vector<ObjectLabel> gt;
};

/// Weighted loss sums of what one peer actually trained on, plus its side of
/// the filtering statistics. Noise counts only cover pseudo-labelled scenes.
struct PeerEpochStats {
    long n_kept = 0;
    long discarded = 0;       // positives this peer dropped (pseudo scenes)
    long discarded_noisy = 0; // of those, noisy-provenance ones
    double loss_box = 0.0;    // epoch means of the weighted components
    double loss_cls = 0.0;
    double loss_obj_pos = 0.0;
    double loss_obj_neg = 0.0;
    double loss_total = 0.0;

    double discard_precision() const {
        return discarded > 0 ? static_cast<double>(discarded_noisy) / discarded : 0.0;
    }
    double discard_recall(long pos_noisy) const {
        return pos_noisy > 0 ? static_cast<double>(discarded_noisy) / pos_noisy : 0.0;
    }
};

struct EpochStats {
    int epoch = 0;
    double forget = 0.0;
    long n_pos = 0;      // assigned anchors seen per peer this epoch
    long kept_both = 0;  // anchors kept by f and g alike
    long pos_pseudo = 0; // positives in pseudo-labelled scenes
    long pos_noisy = 0;  // of those, anchors with noisy provenance
    PeerEpochStats f;
    PeerEpochStats g;

    double noisy_base_rate() const {
        return pos_pseudo > 0 ? static_cast<double>(pos_noisy) / pos_pseudo : 0.0;
    }
};

struct EvalPoint {
    int epoch = 0;
    double map50_f = 0.0;
    double map5095_f = 0.0;
    double map50_g = 0.0;
    double map5095_g = 0.0;
    bool has_g = false;
};

struct TrainResult {
    Detector f;
    Detector g;
    bool g_trained = false; // false for Method::kBase
    std::vector<EpochStats> stats;
    std::vector<EvalPoint> evals;
    double final_map50 = 0.0; // peer f on val at the last epoch
    double final_map5095 = 0.0;
    double final_map50_g = 0.0;
    double final_map5095_g = 0.0;
    double best_map50 = 0.0; // best val mAP@0.5 of peer f over eval points
    int best_epoch = 0;
    std::vector<double> best_params_f;
    double best_map50_g = 0.0;
    int best_epoch_g = 0;
    std::vector<double> best_params_g;
};

/// Called after every epoch; eval is non-null on evaluation epochs.
using EpochCallback = std::function<void(const EpochStats&, const EvalPoint* eval)>;

TrainResult train(const ArchConfig& arch, const std::vector<TrainScene>& train_scenes,
                  const std::vector<EvalScene>& val_scenes, const TrainParams& params,
                  const EpochCallback& on_epoch = nullptr);

/// Decode + score the validation split with one detector.
EvalResult evaluate_detector(const Detector& det, const std::vector<EvalScene>& scenes,
                             const PredictParams& pp, const std::vector<double>& thresholds);

/// Union of both peers' detections per scene, fused by one NMS pass.
EvalResult evaluate_ensemble(const Detector& f, const Detector& g,
                             const std::vector<EvalScene>& scenes, const PredictParams& pp,
                             const std::vector<double>& thresholds);

} // namespace codetect
