#pragma once

#include "codetect/config.hpp"
#include "codetect/coteach.hpp"
#include "codetect/datagen.hpp"
#include "codetect/detector.hpp"
#include "codetect/tensor.hpp"

#include <string>
#include <vector>

namespace codetect {

/// Plain-text label lines: `class_id cx cy w h [confidence]`, six decimals.
/// Readers accept either field count (confidence defaults to 1) and report
/// malformed lines as `<path>:<line>: <what>`.
void write_gt_labels(const std::string& path, const std::vector<ObjectLabel>& labels);
void write_scored_labels(const std::string& path, const std::vector<ScoredBox>& labels);
std::vector<ScoredBox> read_scored_labels(const std::string& path);
std::vector<ObjectLabel> read_gt_labels(const std::string& path);

/// Feature grids as a small binary blob (native-endian doubles).
void save_features(const std::string& path, const Tensor3& t);
Tensor3 load_features(const std::string& path);

/// Model checkpoint: architecture JSON plus the raw parameter vector.
/// Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Detector& det);
Detector load_checkpoint(const std::string& path);

/// Aggregate counts of what the noise oracle did to a scene corpus.
struct NoiseAudit {
    long n_scenes = 0;
    long n_gt = 0;
    long n_dropped = 0;
    long n_emitted = 0; // gt-sourced auto labels
    long n_clean = 0;
    long n_jittered = 0;
    long n_flipped = 0;
    long n_hallucinated = 0;
    long n_duplicated = 0;
    long n_auto = 0;   // emitted + hallucinated
    long n_pseudo = 0; // left after confidence threshold + NMS
    long n_pseudo_noisy = 0;
    /// RMS of the relative coordinate offsets of jitter-tagged labels, an
    /// estimate of the configured jitter_sigma.
    double measured_jitter_sigma = 0.0;

    double drop_rate() const { return n_gt > 0 ? static_cast<double>(n_dropped) / n_gt : 0.0; }
    double flip_rate() const { return n_emitted > 0 ? static_cast<double>(n_flipped) / n_emitted : 0.0; }
    double jitter_rate() const { return n_emitted > 0 ? static_cast<double>(n_jittered) / n_emitted : 0.0; }
    double halluc_per_scene() const { return n_scenes > 0 ? static_cast<double>(n_hallucinated) / n_scenes : 0.0; }
    double dup_per_scene() const { return n_scenes > 0 ? static_cast<double>(n_duplicated) / n_scenes : 0.0; }
    double pseudo_noisy_rate() const { return n_pseudo > 0 ? static_cast<double>(n_pseudo_noisy) / n_pseudo : 0.0; }
};

/// Audit fully materialized scenes (pseudo lists must be populated).
/// conf_threshold/nms_iou define the post-filter counted by n_pseudo.
NoiseAudit audit_scenes(const std::vector<LabeledScene>& scenes, double conf_threshold,
                        double nms_iou);

struct BuildSummary {
    DatasetSplit split;
    NoiseAudit audit;
};

/// Materialize a dataset directory: scenes/*.bin feature grids,
/// labels_gt/ labels_auto/ labels_pseudo/ label files, and manifest.json
/// recording the recipe, the split and per-scene provenance.
BuildSummary build_dataset(const std::string& dir, const DatasetConfig& cfg);

struct LoadedDataset {
    DatasetConfig cfg;
    DatasetSplit split;
    std::vector<TrainScene> train;
    std::vector<EvalScene> val;
};

/// Load what train() needs from a built dataset directory. Train scenes in
/// the gt subset carry gt labels; the rest carry post-processed pseudo
/// labels with per-label provenance from the manifest.
LoadedDataset load_dataset(const std::string& dir);

/// Just the dataset recipe recorded in a directory's manifest.
DatasetConfig load_dataset_config(const std::string& dir);

/// Features plus gt labels of one split ("train" or "val"), for evaluation.
/// Unknown split names and empty splits are usage errors.
std::vector<EvalScene> load_eval_split(const std::string& dir, const std::string& split);

/// Re-audit a dataset directory from its files and manifest.
NoiseAudit audit_dataset(const std::string& dir);

} // namespace codetect
