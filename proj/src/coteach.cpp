#include "codetect/coteach.hpp"

#include "codetect/common.hpp"
#include "codetect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace codetect {

namespace {

constexpr std::uint64_t kStreamShuffle = 0x50f1;

struct PreparedScene {
    const TrainScene* src = nullptr;
    Assignment asg;
    std::vector<bool> noisy; // per positive, label order; empty for gt scenes
    int n_pos = 0;
};

PreparedScene prepare_scene(const TrainScene& ts, const ArchConfig& arch) {
    PreparedScene ps;
    ps.src = &ts;
    std::vector<Box> boxes;
    boxes.reserve(ts.labels.size());
    for (const auto& l : ts.labels) boxes.push_back(l.box);
    ps.asg = assign_anchors(boxes, arch);
    ps.n_pos = ps.asg.n_assigned;
    if (!ts.gt_labelled) {
        if (ts.provenance.size() != ts.labels.size())
            throw UsageError("train: pseudo-labelled scene needs provenance per label");
        for (std::size_t j = 0; j < ts.labels.size(); ++j) {
            if (ps.asg.anchor_of_label[j] < 0) continue;
            ps.noisy.push_back(is_noisy(ts.provenance[j]));
        }
    }
    return ps;
}

std::vector<std::size_t> smallest_k(const std::vector<double>& losses, std::size_t k) {
    std::vector<std::size_t> order(losses.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (losses[a] != losses[b]) return losses[a] < losses[b];
        return a < b;
    });
    std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(kept.begin(), kept.end());
    return kept;
}

/// Weighted loss components of one scene under a keep mask.
struct Components {
    double box = 0.0;
    double cls = 0.0;
    double obj_pos = 0.0;
    double obj_neg = 0.0;

    double total() const { return box + cls + obj_pos + obj_neg; }
};

Components component_sums(const SceneLosses& sl, const std::vector<bool>& keep,
                          const LossWeights& w) {
    Components c;
    c.obj_neg = w.obj * sl.negative_obj;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        c.box += w.box * sl.positives[i].box;
        c.cls += w.cls * sl.positives[i].cls;
        c.obj_pos += w.obj * sl.positives[i].obj;
    }
    return c;
}

} // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::kBase: return "base";
        case Method::kPerImageCoteach: return "per_image_coteach";
        case Method::kPerObjectCoteach: return "per_object_coteach";
    }
    throw UsageError("unknown method");
}

Method method_from_name(const std::string& name) {
    if (name == "base") return Method::kBase;
    if (name == "per_image_coteach" || name == "per_image") return Method::kPerImageCoteach;
    if (name == "per_object_coteach" || name == "per_object") return Method::kPerObjectCoteach;
    throw ConfigError("unknown method: " + name);
}

void Schedule::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (rampup_epochs < 1) throw ConfigError("rampup_epochs must be >= 1");
    if (rampup_epochs > epochs) throw ConfigError("rampup_epochs must not exceed epochs");
    if (!(max_forget >= 0.0 && max_forget < 1.0))
        throw ConfigError("max_forget must lie in [0,1)");
}

double forget_rate(const Schedule& s, int epoch) {
    if (epoch < 1 || epoch > s.epochs) throw UsageError("forget_rate: epoch outside [1, epochs]");
    const double ramp = std::min(1.0, static_cast<double>(epoch) / s.rampup_epochs);
    return s.max_forget * ramp;
}

int keep_count(int n, double forget) {
    if (n < 0) throw UsageError("keep_count: negative n");
    if (!(forget >= 0.0 && forget < 1.0)) throw UsageError("keep_count: forget outside [0,1)");
    if (n == 0) return 0;
    // The nudge keeps exact products like 0.8*10 from rounding up to 9.
    return static_cast<int>(std::ceil((1.0 - forget) * n - 1e-9));
}

SelectedSets cross_select(const std::vector<double>& sel_f, const std::vector<double>& sel_g,
                          std::size_t k) {
    if (sel_f.size() != sel_g.size())
        throw UsageError("cross_select: peer loss lists differ in length");
    if (k > sel_f.size()) throw UsageError("cross_select: k exceeds the candidate count");
    return {smallest_k(sel_g, k), smallest_k(sel_f, k)};
}

void TrainParams::validate() const {
    weights.validate();
    schedule.validate();
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(predict.conf_threshold >= 0.0 && predict.conf_threshold <= 1.0))
        throw ConfigError("predict.conf_threshold must lie in [0,1]");
    if (!(predict.nms_iou > 0.0 && predict.nms_iou < 1.0))
        throw ConfigError("predict.nms_iou must lie in (0,1)");
}

EvalResult evaluate_detector(const Detector& det, const std::vector<EvalScene>& scenes,
                             const PredictParams& pp, const std::vector<double>& thresholds) {
    std::vector<std::vector<ScoredBox>> preds;
    std::vector<std::vector<ObjectLabel>> gts;
    preds.reserve(scenes.size());
    gts.reserve(scenes.size());
    for (const auto& s : scenes) {
        preds.push_back(predict(det, s.features, pp.conf_threshold, pp.nms_iou));
        gts.push_back(s.gt);
    }
    return evaluate(preds, gts, thresholds);
}

EvalResult evaluate_ensemble(const Detector& f, const Detector& g,
                             const std::vector<EvalScene>& scenes, const PredictParams& pp,
                             const std::vector<double>& thresholds) {
    std::vector<std::vector<ScoredBox>> preds;
    std::vector<std::vector<ObjectLabel>> gts;
    preds.reserve(scenes.size());
    gts.reserve(scenes.size());
    for (const auto& s : scenes) {
        std::vector<ScoredBox> merged = predict(f, s.features, pp.conf_threshold, pp.nms_iou);
        const std::vector<ScoredBox> from_g = predict(g, s.features, pp.conf_threshold, pp.nms_iou);
        merged.insert(merged.end(), from_g.begin(), from_g.end());
        preds.push_back(nms(merged, pp.nms_iou));
        gts.push_back(s.gt);
    }
    return evaluate(preds, gts, thresholds);
}

TrainResult train(const ArchConfig& arch, const std::vector<TrainScene>& train_scenes,
                  const std::vector<EvalScene>& val_scenes, const TrainParams& params,
                  const EpochCallback& on_epoch) {
    arch.validate();
    params.validate();
    if (train_scenes.empty()) throw ConfigError("train: no training scenes");

    std::vector<PreparedScene> prepared;
    prepared.reserve(train_scenes.size());
    for (const auto& ts : train_scenes) prepared.push_back(prepare_scene(ts, arch));

    const bool two_peers = params.method != Method::kBase;

    Detector f(arch), g(arch);
    f.init_params(params.init_seed_f);
    g.init_params(params.init_seed_g);
    SgdState state_f, state_g;
    std::vector<double> grad_f(f.num_params()), grad_g(g.num_params());

    TrainResult res{std::move(f), std::move(g), two_peers, {}, {}, 0.0, 0.0, 0.0, 0.0,
                    0.0,          0,            {},        0.0, 0, {}};
    const std::vector<double> thresholds = coco_thresholds();
    bool have_best_f = false, have_best_g = false;

    for (int epoch = 1; epoch <= params.schedule.epochs; ++epoch) {
        const double r =
            params.method == Method::kBase ? 0.0 : forget_rate(params.schedule, epoch);
        // Cosine decay from lr to 0.05*lr over the run; constant-lr SGD with
        // momentum never settles on this objective.
        const double lr_e =
            params.lr * (0.05 + 0.95 * 0.5 *
                                    (1.0 + std::cos(M_PI * (epoch - 1) /
                                                    std::max(1, params.schedule.epochs - 1))));

        std::vector<std::size_t> order(prepared.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(
            derive_seed(params.data_seed, kStreamShuffle, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        EpochStats stats;
        stats.epoch = epoch;
        stats.forget = r;
        Components epoch_comp_f, epoch_comp_g;

        for (std::size_t batch_start = 0; batch_start < order.size();
             batch_start += static_cast<std::size_t>(params.batch_size)) {
            const std::size_t batch_end =
                std::min(order.size(), batch_start + static_cast<std::size_t>(params.batch_size));
            const std::size_t bsz = batch_end - batch_start;

            std::vector<const PreparedScene*> batch(bsz);
            std::vector<Tensor3> out_f(bsz), out_g(bsz);
            std::vector<ForwardCache> cache_f(bsz), cache_g(bsz);
            std::vector<SceneLosses> losses_f(bsz), losses_g(bsz);

            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const PreparedScene& ps = prepared[order[batch_start + bi]];
                batch[bi] = &ps;
                out_f[bi] = res.f.forward(ps.src->features, &cache_f[bi]);
                losses_f[bi] = per_anchor_losses(out_f[bi], ps.src->labels, ps.asg, arch);
                if (two_peers) {
                    out_g[bi] = res.g.forward(ps.src->features, &cache_g[bi]);
                    losses_g[bi] = per_anchor_losses(out_g[bi], ps.src->labels, ps.asg, arch);
                }
            }

            // Keep masks; the only place the three methods differ. scene_on
            // marks scenes a peer trains on at all (per-image filtering drops
            // whole scenes, negatives included).
            std::vector<std::vector<bool>> keep_f(bsz), keep_g(bsz);
            std::vector<bool> scene_on_f(bsz, true), scene_on_g(bsz, true);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                keep_f[bi].assign(losses_f[bi].positives.size(), true);
                keep_g[bi].assign(losses_g[bi].positives.size(), true);
            }

            if (params.method == Method::kPerObjectCoteach) {
                // Pool the batch's positive anchors, rank by the peer's
                // selection loss, keep the smallest k.
                std::vector<std::pair<std::size_t, std::size_t>> pool; // (scene, local)
                std::vector<double> pooled_f, pooled_g;
                for (std::size_t bi = 0; bi < bsz; ++bi) {
                    for (std::size_t j = 0; j < losses_f[bi].positives.size(); ++j) {
                        pool.emplace_back(bi, j);
                        pooled_f.push_back(
                            selection_loss(losses_f[bi].positives[j], params.weights, params.variant));
                        pooled_g.push_back(
                            selection_loss(losses_g[bi].positives[j], params.weights, params.variant));
                    }
                    keep_f[bi].assign(losses_f[bi].positives.size(), false);
                    keep_g[bi].assign(losses_g[bi].positives.size(), false);
                }
                const int k = keep_count(static_cast<int>(pool.size()), r);
                const SelectedSets sets = cross_select(pooled_f, pooled_g, static_cast<std::size_t>(k));
                for (const std::size_t i : sets.keep_f) keep_f[pool[i].first][pool[i].second] = true;
                for (const std::size_t i : sets.keep_g) keep_g[pool[i].first][pool[i].second] = true;
            } else if (params.method == Method::kPerImageCoteach) {
                // Rank whole scenes by the peer's full image loss.
                std::vector<double> img_f(bsz), img_g(bsz);
                for (std::size_t bi = 0; bi < bsz; ++bi) {
                    img_f[bi] = masked_total_loss(losses_f[bi], keep_f[bi], params.weights);
                    img_g[bi] = masked_total_loss(losses_g[bi], keep_g[bi], params.weights);
                }
                const int k = keep_count(static_cast<int>(bsz), r);
                const SelectedSets sets = cross_select(img_f, img_g, static_cast<std::size_t>(k));
                scene_on_f.assign(bsz, false);
                scene_on_g.assign(bsz, false);
                for (const std::size_t i : sets.keep_f) scene_on_f[i] = true;
                for (const std::size_t i : sets.keep_g) scene_on_g[i] = true;
                for (std::size_t bi = 0; bi < bsz; ++bi) {
                    if (!scene_on_f[bi]) keep_f[bi].assign(keep_f[bi].size(), false);
                    if (!scene_on_g[bi]) keep_g[bi].assign(keep_g[bi].size(), false);
                }
            }

            // Gradient step: mean over the batch of per-scene losses.
            std::fill(grad_f.begin(), grad_f.end(), 0.0);
            if (two_peers) std::fill(grad_g.begin(), grad_g.end(), 0.0);
            const double inv_b = 1.0 / static_cast<double>(bsz);
            for (std::size_t bi = 0; bi < bsz; ++bi) {
                const PreparedScene& ps = *batch[bi];
                if (scene_on_f[bi]) {
                    const Components c = component_sums(losses_f[bi], keep_f[bi], params.weights);
                    epoch_comp_f.box += c.box;
                    epoch_comp_f.cls += c.cls;
                    epoch_comp_f.obj_pos += c.obj_pos;
                    epoch_comp_f.obj_neg += c.obj_neg;
                    Tensor3 dout = masked_loss_backward(out_f[bi], ps.src->labels, ps.asg,
                                                        keep_f[bi], params.weights, arch);
                    for (double& v : dout.data) v *= inv_b;
                    res.f.backward(ps.src->features, cache_f[bi], dout, grad_f);
                }
                if (two_peers && scene_on_g[bi]) {
                    const Components c = component_sums(losses_g[bi], keep_g[bi], params.weights);
                    epoch_comp_g.box += c.box;
                    epoch_comp_g.cls += c.cls;
                    epoch_comp_g.obj_pos += c.obj_pos;
                    epoch_comp_g.obj_neg += c.obj_neg;
                    Tensor3 dout = masked_loss_backward(out_g[bi], ps.src->labels, ps.asg,
                                                        keep_g[bi], params.weights, arch);
                    for (double& v : dout.data) v *= inv_b;
                    res.g.backward(ps.src->features, cache_g[bi], dout, grad_g);
                }

                stats.n_pos += ps.n_pos;
                for (std::size_t j = 0; j < keep_f[bi].size(); ++j) {
                    const bool kf = keep_f[bi][j];
                    const bool kg = two_peers ? keep_g[bi][j] : kf;
                    if (kf) ++stats.f.n_kept;
                    if (two_peers && kg) ++stats.g.n_kept;
                    if (kf && kg) ++stats.kept_both;
                }
                if (!ps.src->gt_labelled) {
                    stats.pos_pseudo += ps.n_pos;
                    for (std::size_t j = 0; j < ps.noisy.size(); ++j) {
                        if (ps.noisy[j]) ++stats.pos_noisy;
                        if (!keep_f[bi][j]) {
                            ++stats.f.discarded;
                            if (ps.noisy[j]) ++stats.f.discarded_noisy;
                        }
                        if (two_peers && !keep_g[bi][j]) {
                            ++stats.g.discarded;
                            if (ps.noisy[j]) ++stats.g.discarded_noisy;
                        }
                    }
                }
            }
            sgd_step(res.f, state_f, grad_f, lr_e, params.momentum);
            if (two_peers) sgd_step(res.g, state_g, grad_g, lr_e, params.momentum);
        }

        const double inv_n = 1.0 / static_cast<double>(prepared.size());
        stats.f.loss_box = epoch_comp_f.box * inv_n;
        stats.f.loss_cls = epoch_comp_f.cls * inv_n;
        stats.f.loss_obj_pos = epoch_comp_f.obj_pos * inv_n;
        stats.f.loss_obj_neg = epoch_comp_f.obj_neg * inv_n;
        stats.f.loss_total = epoch_comp_f.total() * inv_n;
        if (two_peers) {
            stats.g.loss_box = epoch_comp_g.box * inv_n;
            stats.g.loss_cls = epoch_comp_g.cls * inv_n;
            stats.g.loss_obj_pos = epoch_comp_g.obj_pos * inv_n;
            stats.g.loss_obj_neg = epoch_comp_g.obj_neg * inv_n;
            stats.g.loss_total = epoch_comp_g.total() * inv_n;
        }
        res.stats.push_back(stats);

        const bool is_last = epoch == params.schedule.epochs;
        const bool eval_now =
            is_last || (params.eval_interval > 0 && epoch % params.eval_interval == 0);
        const EvalPoint* ep_ptr = nullptr;
        EvalPoint ep;
        if (eval_now && !val_scenes.empty()) {
            const EvalResult er_f = evaluate_detector(res.f, val_scenes, params.predict, thresholds);
            ep.epoch = epoch;
            ep.map50_f = er_f.map50;
            ep.map5095_f = er_f.map5095;
            if (two_peers) {
                const EvalResult er_g =
                    evaluate_detector(res.g, val_scenes, params.predict, thresholds);
                ep.map50_g = er_g.map50;
                ep.map5095_g = er_g.map5095;
                ep.has_g = true;
            }
            res.evals.push_back(ep);
            ep_ptr = &ep;
            if (!have_best_f || ep.map50_f > res.best_map50) {
                have_best_f = true;
                res.best_map50 = ep.map50_f;
                res.best_epoch = epoch;
                res.best_params_f = res.f.params();
            }
            if (two_peers && (!have_best_g || ep.map50_g > res.best_map50_g)) {
                have_best_g = true;
                res.best_map50_g = ep.map50_g;
                res.best_epoch_g = epoch;
                res.best_params_g = res.g.params();
            }
            if (is_last) {
                res.final_map50 = ep.map50_f;
                res.final_map5095 = ep.map5095_f;
                res.final_map50_g = ep.map50_g;
                res.final_map5095_g = ep.map5095_g;
            }
        }
        if (on_epoch) on_epoch(stats, ep_ptr);
    }
    return res;
}

} // namespace codetect
