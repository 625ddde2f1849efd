#include "codetect/datagen.hpp"

#include "codetect/common.hpp"
#include "codetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace codetect {

namespace {

// Stream tags for derive_seed, so scene placement, rendering noise and label
// corruption draw from independent deterministic streams.
constexpr std::uint64_t kStreamScene = 0x5c31;
constexpr std::uint64_t kStreamNoise = 0x401e;
constexpr std::uint64_t kStreamSplit = 0x59c7;

constexpr double kBgAmplitude = 0.1;
constexpr double kPixelNoiseSigma = 0.02;
constexpr double kDistractorMinSize = 0.10;
constexpr double kDistractorMaxSize = 0.30;
constexpr double kDistractorMaxIou = 0.05;
constexpr double kCleanIouFloor = 0.99;
// Near-duplicate emission: relative perturbation scale, the IoU band the
// duplicate must land in against its source (the ceiling keeps it under the
// default NMS threshold so it survives post-processing), and the minimum
// center offset (one cell at the default 8x8 grid) so it claims a different
// anchor than the source.
constexpr double kDupSigma = 0.35;
constexpr double kDupIouMin = 0.05;
constexpr double kDupIouMax = 0.45;
constexpr double kDupMinCenterOffset = 0.125;
constexpr int kDupMaxTries = 40;

/// Class-constant paint level on channel 2. Signs alternate and magnitudes
/// grow from 0.4 to 1.0, keeping every class at least 4x the background
/// amplitude and well separated from its neighbours.
double class_level(int class_id, int num_classes) {
    const int tier = class_id / 2;
    const int tiers = (num_classes + 1) / 2;
    const double mag = tiers > 1 ? 0.4 + 0.6 * tier / (tiers - 1) : 0.4;
    return class_id % 2 == 0 ? mag : -mag;
}

void paint_gradients(Tensor3& img, const Box& b, bool with_class, double level) {
    const int n = img.w;
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y1() * n)));
    const int y1 = std::min(n - 1, static_cast<int>(std::ceil(b.y2() * n)));
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x1() * n)));
    const int x1 = std::min(n - 1, static_cast<int>(std::ceil(b.x2() * n)));
    for (int yi = y0; yi <= y1; ++yi) {
        const double py = (yi + 0.5) / n;
        if (py < b.y1() || py > b.y2()) continue;
        for (int xi = x0; xi <= x1; ++xi) {
            const double px = (xi + 0.5) / n;
            if (px < b.x1() || px > b.x2()) continue;
            img.at(0, yi, xi) = 2.0 * (px - b.cx) / b.w;
            img.at(1, yi, xi) = 2.0 * (py - b.cy) / b.h;
            if (with_class) img.at(2, yi, xi) = level;
        }
    }
}

} // namespace

const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::kClean: return "clean";
        case Provenance::kJittered: return "jittered";
        case Provenance::kFlipped: return "flipped";
        case Provenance::kHallucinated: return "hallucinated";
        case Provenance::kDuplicated: return "duplicated";
    }
    throw UsageError("unknown provenance value");
}

Provenance provenance_from_name(const std::string& name) {
    if (name == "clean") return Provenance::kClean;
    if (name == "jittered") return Provenance::kJittered;
    if (name == "flipped") return Provenance::kFlipped;
    if (name == "hallucinated") return Provenance::kHallucinated;
    if (name == "duplicated") return Provenance::kDuplicated;
    throw ConfigError("unknown provenance tag: " + name);
}

void SceneSpec::validate() const {
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (min_objects < 1 || max_objects < min_objects)
        throw ConfigError("object count range must satisfy 1 <= min_objects <= max_objects");
    if (!(min_size > 0.0 && max_size >= min_size && max_size <= 1.0))
        throw ConfigError("object size range must satisfy 0 < min_size <= max_size <= 1");
    if (img_size < 4) throw ConfigError("img_size must be >= 4");
    if (channels < 3) throw ConfigError("channels must be >= 3");
    if (distractor_rate < 0.0) throw ConfigError("distractor_rate must be >= 0");
    if (!(max_overlap >= 0.0 && max_overlap < 1.0))
        throw ConfigError("max_overlap must lie in [0,1)");
    if (!(min_center_dist >= 0.0 && min_center_dist < 1.0))
        throw ConfigError("min_center_dist must lie in [0,1)");
    if (!class_prior.empty()) {
        if (static_cast<int>(class_prior.size()) != num_classes)
            throw ConfigError("class_prior size must equal num_classes");
        double sum = 0.0;
        for (const double p : class_prior) {
            if (p < 0.0) throw ConfigError("class_prior entries must be >= 0");
            sum += p;
        }
        if (!(sum > 0.0)) throw ConfigError("class_prior must have positive mass");
    }
}

void NoiseModel::validate() const {
    auto check_rate = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) {
            std::ostringstream os;
            os << name << " must lie in [0,1], got " << v;
            throw ConfigError(os.str());
        }
    };
    check_rate(drop_rate, "drop_rate");
    check_rate(flip_rate, "flip_rate");
    check_rate(jitter_prob, "jitter_prob");
    if (jitter_sigma < 0.0) throw ConfigError("jitter_sigma must be >= 0");
    if (halluc_rate < 0.0) throw ConfigError("halluc_rate must be >= 0");
    if (dup_rate < 0.0) throw ConfigError("dup_rate must be >= 0");
    for (const BetaParams* bp :
         {&conf_clean, &conf_jittered, &conf_flipped, &conf_hallucinated, &conf_duplicated}) {
        if (!(bp->a > 0.0 && bp->b > 0.0))
            throw ConfigError("confidence Beta parameters must be positive");
    }
}

LabeledScene generate_scene(int scene_id, const SceneSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.render_seed, kStreamScene, static_cast<std::uint64_t>(scene_id)));

    LabeledScene scene;
    scene.scene_id = scene_id;
    scene.num_classes = spec.num_classes;

    // --- place objects -----------------------------------------------------
    const int target_count =
        spec.min_objects + static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));
    int attempts = 0;
    while (static_cast<int>(scene.gt.size()) < target_count) {
        if (++attempts > 200 * spec.max_objects) {
            if (static_cast<int>(scene.gt.size()) >= spec.min_objects) break;
            throw RuntimeFailure("scene generation could not place the minimum object count; "
                                 "loosen max_overlap or the size range");
        }
        const double w = rng.uniform(spec.min_size, spec.max_size);
        const double h = rng.uniform(spec.min_size, spec.max_size);
        const double cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
        const double cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
        const Box cand(cx, cy, w, h);
        bool ok = true;
        for (const auto& placed : scene.gt) {
            if (iou(cand, placed.box) > spec.max_overlap ||
                std::max(std::abs(cand.cx - placed.box.cx), std::abs(cand.cy - placed.box.cy)) <
                    spec.min_center_dist) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        int cls;
        if (spec.class_prior.empty()) {
            cls = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.num_classes)));
        } else {
            double total = 0.0;
            for (const double p : spec.class_prior) total += p;
            double u = rng.uniform01() * total;
            cls = spec.num_classes - 1;
            for (int c = 0; c < spec.num_classes; ++c) {
                u -= spec.class_prior[c];
                if (u < 0.0) {
                    cls = c;
                    break;
                }
            }
        }
        scene.gt.push_back({cand, cls});
    }

    // --- place distractors ---------------------------------------------------
    const int n_distract = rng.poisson(spec.distractor_rate);
    for (int d = 0; d < n_distract; ++d) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const double w = rng.uniform(kDistractorMinSize, kDistractorMaxSize);
            const double h = rng.uniform(kDistractorMinSize, kDistractorMaxSize);
            const double cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
            const double cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
            const Box cand(cx, cy, w, h);
            bool ok = true;
            for (const auto& g : scene.gt) {
                if (iou(cand, g.box) > kDistractorMaxIou) {
                    ok = false;
                    break;
                }
            }
            for (const auto& other : scene.distractors) {
                if (!ok) break;
                if (iou(cand, other) > kDistractorMaxIou) ok = false;
            }
            if (ok) {
                scene.distractors.push_back(cand);
                break;
            }
        }
    }

    // --- render --------------------------------------------------------------
    // Background: one low-amplitude sinusoid per channel. Objects overwrite
    // the first two channels with in-box coordinate gradients and stamp a
    // class-specific constant on channel 2; distractors get the same
    // gradients but keep the background on channel 2, so only channel 2
    // separates real objects from look-alikes.
    scene.features = Tensor3(spec.channels, spec.img_size, spec.img_size);
    for (int c = 0; c < spec.channels; ++c) {
        const double fx = rng.uniform(0.5, 2.5);
        const double fy = rng.uniform(0.5, 2.5);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (int yi = 0; yi < spec.img_size; ++yi) {
            const double py = (yi + 0.5) / spec.img_size;
            for (int xi = 0; xi < spec.img_size; ++xi) {
                const double px = (xi + 0.5) / spec.img_size;
                scene.features.at(c, yi, xi) =
                    kBgAmplitude * std::sin(2.0 * M_PI * (fx * px + fy * py) + phase);
            }
        }
    }
    for (const auto& d : scene.distractors) paint_gradients(scene.features, d, false, 0.0);
    for (const auto& g : scene.gt) {
        paint_gradients(scene.features, g.box, true, class_level(g.class_id, spec.num_classes));
    }
    for (int c = 0; c < spec.channels; ++c) {
        for (int yi = 0; yi < spec.img_size; ++yi) {
            for (int xi = 0; xi < spec.img_size; ++xi) {
                scene.features.at(c, yi, xi) += rng.normal(0.0, kPixelNoiseSigma);
            }
        }
    }

    scene.gt_dropped.assign(scene.gt.size(), false);
    return scene;
}

void corrupt_labels(LabeledScene& scene, const NoiseModel& noise, std::uint64_t seed) {
    noise.validate();
    if (!scene.pseudo.empty()) throw UsageError("corrupt_labels: scene already has pseudo labels");
    if (scene.num_classes < 1) throw UsageError("corrupt_labels: scene has no class space");

    // The scene id is folded in, so one dataset-level seed serves all scenes.
    Rng rng(derive_seed(seed, kStreamNoise, static_cast<std::uint64_t>(scene.scene_id)));
    scene.gt_dropped.assign(scene.gt.size(), false);

    auto draw_conf = [&](const BetaParams& bp) { return rng.beta(bp.a, bp.b); };

    for (std::size_t i = 0; i < scene.gt.size(); ++i) {
        const ObjectLabel& src = scene.gt[i];
        if (rng.uniform01() < noise.drop_rate) {
            scene.gt_dropped[i] = true;
            continue;
        }
        int cls = src.class_id;
        bool flipped = false;
        if (scene.num_classes > 1 && rng.uniform01() < noise.flip_rate) {
            if (noise.flip_nearest) {
                // Confuse the class whose painted level is closest to the
                // true one; ties resolve to the smaller id.
                const double own = class_level(src.class_id, scene.num_classes);
                int best = -1;
                double best_dist = 0.0;
                for (int c = 0; c < scene.num_classes; ++c) {
                    if (c == src.class_id) continue;
                    const double dist = std::abs(class_level(c, scene.num_classes) - own);
                    if (best < 0 || dist < best_dist) {
                        best = c;
                        best_dist = dist;
                    }
                }
                cls = best;
            } else {
                const int offset = 1 + static_cast<int>(rng.uniform_int(
                                           static_cast<std::uint64_t>(scene.num_classes - 1)));
                cls = (cls + offset) % scene.num_classes;
            }
            flipped = true;
        }
        Box emitted = src.box;
        bool jitter_applied = false;
        if (rng.uniform01() < noise.jitter_prob) {
            jitter_applied = true;
            const double cx = src.box.cx + rng.normal(0.0, noise.jitter_sigma * src.box.w);
            const double cy = src.box.cy + rng.normal(0.0, noise.jitter_sigma * src.box.h);
            const double w = src.box.w + rng.normal(0.0, noise.jitter_sigma * src.box.w);
            const double h = src.box.h + rng.normal(0.0, noise.jitter_sigma * src.box.h);
            if (!Box::clipped_to_unit(cx, cy, w, h, emitted)) {
                // Jitter destroyed the box; the auto labeller simply missed it.
                scene.gt_dropped[i] = true;
                continue;
            }
        }

        Provenance prov;
        if (flipped) {
            prov = Provenance::kFlipped;
        } else if (jitter_applied && iou(emitted, src.box) < kCleanIouFloor) {
            prov = Provenance::kJittered;
        } else {
            prov = Provenance::kClean;
        }
        const BetaParams& bp = prov == Provenance::kClean     ? noise.conf_clean
                               : prov == Provenance::kFlipped ? noise.conf_flipped
                                                              : noise.conf_jittered;
        scene.pseudo.emplace_back(emitted, cls, draw_conf(bp));
        scene.provenance.push_back(prov);
        scene.pseudo_source.push_back(static_cast<int>(i));
    }

    const int n_halluc = rng.poisson(noise.halluc_rate);
    for (int hi = 0; hi < n_halluc; ++hi) {
        const double w = rng.uniform(0.08, 0.45);
        const double h = rng.uniform(0.08, 0.45);
        const double cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
        const double cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
        const int cls = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(scene.num_classes)));
        scene.pseudo.emplace_back(Box(cx, cy, w, h), cls, draw_conf(noise.conf_hallucinated));
        scene.provenance.push_back(Provenance::kHallucinated);
        scene.pseudo_source.push_back(-1);
    }

    const int n_dup = scene.gt.empty() ? 0 : rng.poisson(noise.dup_rate);
    for (int di = 0; di < n_dup; ++di) {
        const std::size_t si = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::uint64_t>(scene.gt.size())));
        const ObjectLabel& src = scene.gt[si];
        for (int attempt = 0; attempt < kDupMaxTries; ++attempt) {
            const double cx = src.box.cx + rng.normal(0.0, kDupSigma * src.box.w);
            const double cy = src.box.cy + rng.normal(0.0, kDupSigma * src.box.h);
            const double w = src.box.w + rng.normal(0.0, kDupSigma * src.box.w);
            const double h = src.box.h + rng.normal(0.0, kDupSigma * src.box.h);
            Box dup;
            if (!Box::clipped_to_unit(cx, cy, w, h, dup)) continue;
            const double overlap = iou(dup, src.box);
            if (overlap < kDupIouMin || overlap > kDupIouMax) continue;
            if (std::max(std::abs(dup.cx - src.box.cx), std::abs(dup.cy - src.box.cy)) <
                kDupMinCenterOffset)
                continue;
            scene.pseudo.emplace_back(dup, src.class_id, draw_conf(noise.conf_duplicated));
            scene.provenance.push_back(Provenance::kDuplicated);
            scene.pseudo_source.push_back(static_cast<int>(si));
            break;
        }
    }
}

std::vector<std::size_t> postprocess_indices(const std::vector<ScoredBox>& raw,
                                             double conf_threshold, double nms_iou) {
    if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
        throw ConfigError("conf_threshold must lie in [0,1]");
    std::vector<std::size_t> surviving;
    std::vector<ScoredBox> boxes;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i].confidence >= conf_threshold) {
            surviving.push_back(i);
            boxes.push_back(raw[i]);
        }
    }
    std::vector<std::size_t> out;
    for (const std::size_t k : nms_indices(boxes, nms_iou)) out.push_back(surviving[k]);
    return out;
}

std::vector<ScoredBox> postprocess_pseudo(const std::vector<ScoredBox>& raw,
                                          double conf_threshold, double nms_iou) {
    std::vector<ScoredBox> out;
    for (const std::size_t i : postprocess_indices(raw, conf_threshold, nms_iou)) {
        out.push_back(raw[i]);
    }
    return out;
}

DatasetSplit make_split(int n_scenes, double val_ratio, double pseudo_fraction,
                        double gt_fraction, std::uint64_t seed) {
    if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
    if (!(val_ratio >= 0.0 && val_ratio < 1.0)) throw ConfigError("val_ratio must lie in [0,1)");
    if (!(pseudo_fraction > 0.0 && pseudo_fraction <= 1.0))
        throw ConfigError("pseudo_fraction must lie in (0,1]");
    if (!(gt_fraction >= 0.0 && gt_fraction <= 1.0))
        throw ConfigError("gt_fraction must lie in [0,1]");

    std::vector<int> ids(n_scenes);
    for (int i = 0; i < n_scenes; ++i) ids[i] = i;
    Rng rng(derive_seed(seed, kStreamSplit));
    rng.shuffle(ids);

    const int n_val = static_cast<int>(std::llround(n_scenes * val_ratio));
    const int pool = n_scenes - n_val;
    if (pool < 1) throw ConfigError("val_ratio leaves no training scenes");
    const int n_train = static_cast<int>(std::llround(pool * pseudo_fraction));
    if (n_train < 1) throw ConfigError("pseudo_fraction leaves no training scenes");
    const int n_gt = static_cast<int>(std::llround(n_train * gt_fraction));

    DatasetSplit split;
    split.val.assign(ids.begin(), ids.begin() + n_val);
    split.train.assign(ids.begin() + n_val, ids.begin() + n_val + n_train);
    split.gt_scenes.assign(split.train.begin(), split.train.begin() + n_gt);
    split.gt_fraction = gt_fraction;
    split.pseudo_fraction = pseudo_fraction;
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.gt_scenes.begin(), split.gt_scenes.end());
    return split;
}

} // namespace codetect
