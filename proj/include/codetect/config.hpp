#pragma once

#include "codetect/coteach.hpp"
#include "codetect/datagen.hpp"
#include "codetect/detector.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace codetect {

using json = nlohmann::json;

struct DatasetConfig {
    int n_scenes = 150;
    double val_ratio = 0.2;
    double pseudo_fraction = 1.0;
    double gt_fraction = 0.0;
    std::uint64_t seed = 7;
    /// scene.render_seed is not part of the JSON surface; the builder sets it
    /// from `seed`.
    SceneSpec scene;
    NoiseModel noise;
    double conf_threshold = 0.3; // pseudo-label post-processing
    double nms_iou = 0.5;

    void validate() const;
};

/// Everything one run needs: dataset recipe, architecture, training setup.
/// JSON is strict: unknown keys are rejected with their dotted path, missing
/// keys fall back to these defaults.
struct RunConfig {
    DatasetConfig dataset;
    ArchConfig arch;
    TrainParams train;

    void validate() const;
};

RunConfig run_config_from_json(const json& j);
json run_config_to_json(const RunConfig& c);

/// File variants; parse and validation failures throw ConfigError naming the
/// file.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& c);

json arch_to_json(const ArchConfig& a);
ArchConfig arch_from_json(const json& j, const std::string& path_prefix = "arch");

json dataset_config_to_json(const DatasetConfig& d);
DatasetConfig dataset_config_from_json(const json& j, const std::string& path_prefix = "dataset");

} // namespace codetect
