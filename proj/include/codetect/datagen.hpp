#pragma once

#include "codetect/geometry.hpp"
#include "codetect/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace codetect {

/// Where a pseudo-label came from. `clean` means the emitted box kept its
/// class and stayed within IoU >= 0.99 of its source gt box; everything else
/// is noise of the named kind. `duplicated` is a spurious extra detection of
/// a real object: correct class, badly perturbed geometry.
enum class Provenance { kClean, kJittered, kFlipped, kHallucinated, kDuplicated };

const char* provenance_name(Provenance p);
Provenance provenance_from_name(const std::string& name);
inline bool is_noisy(Provenance p) { return p != Provenance::kClean; }

/// Parameters of the procedural scene generator.
struct SceneSpec {
    int num_classes = 4;
    int min_objects = 1;
    int max_objects = 4;
    double min_size = 0.15;
    double max_size = 0.45;
    int img_size = 32;
    int channels = 3;
    /// Expected number of unlabeled object-like background patches per scene.
    double distractor_rate = 1.5;
    /// Maximum pairwise IoU allowed between placed gt boxes.
    double max_overlap = 0.3;
    /// Minimum L-inf distance between gt box centers, so each object lands
    /// in its own anchor cell at typical grid resolutions.
    double min_center_dist = 0.15;
    std::uint64_t render_seed = 0;
    /// Per-class sampling weights; empty means uniform.
    std::vector<double> class_prior;

    void validate() const;
};

/// Beta(a,b) parameters for the confidence score of one provenance kind.
struct BetaParams {
    double a = 1.0;
    double b = 1.0;
};

/// The synthetic auto-labeller noise oracle. Each gt box is independently
/// dropped, class-flipped, and (with probability jitter_prob) coordinate-
/// jittered with per-coordinate sigma jitter_sigma * box size; spurious boxes
/// arrive as Poisson(halluc_rate) per scene with uniform random geometry and
/// class, plus Poisson(dup_rate) near-duplicates per scene that copy a random
/// gt box's class but displace its geometry (IoU with the source in
/// [0.05, 0.45] and at least one grid cell of center offset). Confidences are
/// drawn per provenance kind.
struct NoiseModel {
    double drop_rate = 0.10;
    double flip_rate = 0.05;
    /// When set, flips target the class whose rendered signature is nearest
    /// to the true one (a labeller confusing look-alikes) instead of a
    /// uniformly random wrong class.
    bool flip_nearest = false;
    double jitter_prob = 0.15;
    double jitter_sigma = 0.05;
    double halluc_rate = 0.3;
    double dup_rate = 0.0;
    BetaParams conf_clean{8.0, 2.0};
    BetaParams conf_jittered{5.0, 3.0};
    BetaParams conf_flipped{5.0, 3.0};
    BetaParams conf_hallucinated{2.0, 4.0};
    BetaParams conf_duplicated{5.0, 3.0};

    void validate() const;
};

/// One synthetic image surrogate with its labels.
///
/// `pseudo` holds the raw auto-labeller output (before confidence
/// thresholding and NMS); `provenance` and `pseudo_source` run parallel to
/// it, the latter holding the index of the source gt box or -1 for
/// hallucinations.
struct LabeledScene {
    int scene_id = 0;
    int num_classes = 0;
    Tensor3 features;
    std::vector<ObjectLabel> gt;
    std::vector<Box> distractors;
    std::vector<bool> gt_dropped;
    std::vector<ScoredBox> pseudo;
    std::vector<Provenance> provenance;
    std::vector<int> pseudo_source;
};

/// Train/val membership plus which train scenes carry ground-truth labels.
struct DatasetSplit {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> gt_scenes; // subset of train
    double gt_fraction = 0.0;
    double pseudo_fraction = 1.0;
};

/// Deterministic procedural scene: gt boxes inside the unit square, features
/// rendering each object as a class-distinctive pattern over a structured
/// background (plus unlabeled distractor patches that share the object
/// texture but carry no class signature).
LabeledScene generate_scene(int scene_id, const SceneSpec& spec);

/// Apply the noise oracle to a freshly generated scene (pseudo must be
/// empty). gt is never mutated; provenance tags partition the output.
void corrupt_labels(LabeledScene& scene, const NoiseModel& noise, std::uint64_t seed);

/// Confidence thresholding (keep confidence >= conf_threshold) followed by
/// class-wise NMS. Returns indices into `raw` in the NMS output order, so
/// parallel metadata (provenance) can follow the boxes.
std::vector<std::size_t> postprocess_indices(const std::vector<ScoredBox>& raw,
                                             double conf_threshold, double nms_iou);

std::vector<ScoredBox> postprocess_pseudo(const std::vector<ScoredBox>& raw,
                                          double conf_threshold, double nms_iou);

/// Deterministic split: shuffle by seed, carve off round(n*val_ratio) for
/// val, keep round(pool*pseudo_fraction) scenes for train, flag
/// round(train*gt_fraction) of them as ground-truth-labelled. Id lists come
/// back sorted.
DatasetSplit make_split(int n_scenes, double val_ratio, double pseudo_fraction,
                        double gt_fraction, std::uint64_t seed);

} // namespace codetect
