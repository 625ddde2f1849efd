#include "codetect/cli.hpp"

#include "codetect/common.hpp"
#include "codetect/config.hpp"
#include "codetect/coteach.hpp"
#include "codetect/dataset.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace codetect {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int prec = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << v;
    return ss.str();
}

/// Shortest exact representation, for axis values in file names and tables.
std::string fmt_g(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

double median(std::vector<double> v) {
    if (v.empty()) throw UsageError("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw RuntimeFailure("cannot write " + path.string());
    return f;
}

void print_audit(std::ostream& out, const DatasetConfig& cfg, const NoiseAudit& a) {
    out << "noise audit: " << a.n_scenes << " scenes, " << a.n_gt << " gt boxes, " << a.n_auto
        << " auto labels (" << a.n_hallucinated << " hallucinated, " << a.n_duplicated
        << " duplicated), " << a.n_pseudo << " pseudo labels after post-processing\n";
    out << "  " << std::left << std::setw(18) << "rate" << std::right << std::setw(12)
        << "configured" << std::setw(12) << "measured" << "\n";
    const auto row = [&](const char* name, double want, double got) {
        out << "  " << std::left << std::setw(18) << name << std::right << std::setw(12)
            << fmt(want) << std::setw(12) << fmt(got) << "\n";
    };
    row("drop", cfg.noise.drop_rate, a.drop_rate());
    row("flip", cfg.noise.flip_rate, a.flip_rate());
    row("jitter", cfg.noise.jitter_prob, a.jitter_rate());
    row("jitter_sigma", cfg.noise.jitter_sigma, a.measured_jitter_sigma);
    row("halluc_per_scene", cfg.noise.halluc_rate, a.halluc_per_scene());
    row("dup_per_scene", cfg.noise.dup_rate, a.dup_per_scene());
    out << "  noisy fraction of pseudo labels: " << fmt(a.pseudo_noisy_rate()) << " ("
        << a.n_pseudo_noisy << "/" << a.n_pseudo << ")\n";
}

// ---------------------------------------------------------------- build

void cmd_build_dataset(const std::string& config_path, const std::string& out_dir,
                       std::ostream& out) {
    const RunConfig cfg = load_run_config(config_path);
    const BuildSummary summary = build_dataset(out_dir, cfg.dataset);
    save_run_config((fs::path(out_dir) / "effective_config.json").string(), cfg);
    out << "dataset written to " << out_dir << "\n";
    out << "split: " << summary.split.train.size() << " train / " << summary.split.val.size()
        << " val, gt-labelled train scenes: " << summary.split.gt_scenes.size() << "\n";
    print_audit(out, cfg.dataset, summary.audit);
}

// ---------------------------------------------------------------- train

json peer_record(const EpochStats& st, const PeerEpochStats& p, const char* peer, long pos_noisy) {
    return json{{"epoch", st.epoch},
                {"peer", peer},
                {"forget_rate", st.forget},
                {"n_pos", st.n_pos},
                {"n_kept", p.n_kept},
                {"kept_both", st.kept_both},
                {"pos_pseudo", st.pos_pseudo},
                {"pos_noisy", st.pos_noisy},
                {"noisy_base_rate", st.noisy_base_rate()},
                {"discarded", p.discarded},
                {"discarded_noisy", p.discarded_noisy},
                {"discard_precision", p.discard_precision()},
                {"discard_recall", p.discard_recall(pos_noisy)},
                {"loss_box", p.loss_box},
                {"loss_cls", p.loss_cls},
                {"loss_obj_pos", p.loss_obj_pos},
                {"loss_obj_neg", p.loss_obj_neg},
                {"loss_total", p.loss_total}};
}

void cmd_train(const std::string& config_path, const std::string& dataset_dir,
               const std::string& out_dir, std::ostream& out) {
    const RunConfig cfg = load_run_config(config_path);
    const LoadedDataset ds = load_dataset(dataset_dir);
    if (dataset_config_to_json(cfg.dataset) != dataset_config_to_json(ds.cfg))
        throw ConfigError("config dataset section does not match the dataset directory " +
                          dataset_dir + " (it was built from a different recipe)");

    fs::create_directories(out_dir);
    save_run_config((fs::path(out_dir) / "effective_config.json").string(), cfg);
    std::ofstream metrics = open_out(fs::path(out_dir) / "metrics.jsonl");

    const bool coteach = cfg.train.method != Method::kBase;
    out << "training method=" << method_name(cfg.train.method)
        << " variant=" << selection_variant_name(cfg.train.variant) << " on "
        << ds.train.size() << " train / " << ds.val.size() << " val scenes, "
        << cfg.train.schedule.epochs << " epochs\n";

    const EpochCallback log = [&](const EpochStats& st, const EvalPoint* ev) {
        json rec_f = peer_record(st, st.f, "f", st.pos_noisy);
        if (ev) {
            rec_f["val_map50"] = ev->map50_f;
            rec_f["val_map5095"] = ev->map5095_f;
        }
        metrics << rec_f.dump() << "\n";
        if (coteach) {
            json rec_g = peer_record(st, st.g, "g", st.pos_noisy);
            if (ev) {
                rec_g["val_map50"] = ev->map50_g;
                rec_g["val_map5095"] = ev->map5095_g;
            }
            metrics << rec_g.dump() << "\n";
        }
        if (ev) {
            out << "epoch " << std::setw(4) << st.epoch << "  r " << fmt(st.forget, 3)
                << "  loss f " << fmt(st.f.loss_total) << "  val mAP@0.5 f " << fmt(ev->map50_f);
            if (ev->has_g) out << "  g " << fmt(ev->map50_g);
            out << "\n";
        }
    };

    TrainResult res = train(cfg.arch, ds.train, ds.val, cfg.train, log);
    metrics.close();
    if (!metrics) throw RuntimeFailure("failed writing metrics in " + out_dir);

    save_checkpoint((fs::path(out_dir) / "checkpoint_f.bin").string(), res.f);
    if (res.g_trained) save_checkpoint((fs::path(out_dir) / "checkpoint_g.bin").string(), res.g);
    if (!res.best_params_f.empty()) {
        Detector best(cfg.arch);
        best.params() = res.best_params_f;
        save_checkpoint((fs::path(out_dir) / "best_f.bin").string(), best);
    }
    if (res.g_trained && !res.best_params_g.empty()) {
        Detector best(cfg.arch);
        best.params() = res.best_params_g;
        save_checkpoint((fs::path(out_dir) / "best_g.bin").string(), best);
    }

    out << "\n" << std::left << std::setw(6) << "peer" << std::right << std::setw(14)
        << "final mAP@0.5" << std::setw(20) << "final mAP@0.5:0.95" << std::setw(14)
        << "best mAP@0.5" << std::setw(12) << "best epoch" << "\n";
    out << std::left << std::setw(6) << "f" << std::right << std::setw(14)
        << fmt(res.final_map50) << std::setw(20) << fmt(res.final_map5095) << std::setw(14)
        << fmt(res.best_map50) << std::setw(12) << res.best_epoch << "\n";
    if (res.g_trained)
        out << std::left << std::setw(6) << "g" << std::right << std::setw(14)
            << fmt(res.final_map50_g) << std::setw(20) << fmt(res.final_map5095_g)
            << std::setw(14) << fmt(res.best_map50_g) << std::setw(12) << res.best_epoch_g
            << "\n";
    out << "outputs in " << out_dir << "\n";
}

// ---------------------------------------------------------------- eval

void cmd_eval(const std::string& checkpoint, const std::string& dataset_dir,
              const std::string& split, const std::string& ensemble, double conf_threshold,
              double nms_iou, std::ostream& out) {
    const Detector det = load_checkpoint(checkpoint);
    const std::vector<EvalScene> scenes = load_eval_split(dataset_dir, split);
    const PredictParams pp{conf_threshold, nms_iou};
    const std::vector<double> thresholds = coco_thresholds();

    EvalResult er;
    if (ensemble.empty()) {
        er = evaluate_detector(det, scenes, pp, thresholds);
    } else {
        const Detector det2 = load_checkpoint(ensemble);
        er = evaluate_ensemble(det, det2, scenes, pp, thresholds);
    }

    out << "split " << split << ": " << scenes.size() << " scenes\n";
    out << std::left << std::setw(8) << "class" << std::right << std::setw(10) << "AP@0.5"
        << std::setw(16) << "AP@0.5:0.95" << std::setw(8) << "TP" << std::setw(8) << "FP"
        << std::setw(8) << "FN" << "\n";
    for (const auto& [cls, aps] : er.per_class_ap) {
        const double mean_ap =
            std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
        const ClassCounts& cc = er.counts.at(cls);
        out << std::left << std::setw(8) << cls << std::right << std::setw(10) << fmt(aps.front())
            << std::setw(16) << fmt(mean_ap) << std::setw(8) << cc.tp << std::setw(8) << cc.fp
            << std::setw(8) << cc.fn << "\n";
    }
    out << "mAP@0.5 " << fmt(er.map50) << "  mAP@0.5:0.95 " << fmt(er.map5095) << "\n";
}

// ---------------------------------------------------------------- sweep

struct SweepAxes {
    std::vector<std::string> methods;
    std::vector<std::string> variants;
    std::vector<double> pseudo_fractions;
    std::vector<double> gt_fractions;
    std::vector<std::uint64_t> seeds;
};

struct RunRecord {
    std::string method;
    std::string variant;
    double pf = 0.0;
    double gf = 0.0;
    std::uint64_t seed = 0;
    double final_map50 = 0.0;
    double final_map5095 = 0.0;
    double best_map50 = 0.0;
    int best_epoch = 0;
};

void cmd_sweep(const std::string& config_path, const std::string& out_dir, SweepAxes axes,
               std::ostream& out) {
    const RunConfig base = load_run_config(config_path);
    if (axes.methods.empty()) axes.methods = {method_name(base.train.method)};
    if (axes.variants.empty()) axes.variants = {selection_variant_name(base.train.variant)};
    if (axes.pseudo_fractions.empty()) axes.pseudo_fractions = {base.dataset.pseudo_fraction};
    if (axes.gt_fractions.empty()) axes.gt_fractions = {base.dataset.gt_fraction};
    if (axes.seeds.empty()) axes.seeds = {1, 2, 3};
    for (const auto& m : axes.methods) method_from_name(m);
    for (const auto& v : axes.variants) selection_variant_from_name(v);

    fs::create_directories(out_dir);
    save_run_config((fs::path(out_dir) / "effective_config.json").string(), base);
    {
        json ax{{"methods", axes.methods},
                {"variants", axes.variants},
                {"pseudo_fractions", axes.pseudo_fractions},
                {"gt_fractions", axes.gt_fractions},
                {"seeds", axes.seeds}};
        std::ofstream axf = open_out(fs::path(out_dir) / "sweep_axes.json");
        axf << ax.dump(2) << "\n";
    }

    // One dataset per (pseudo_fraction, gt_fraction, seed); methods and
    // variants share it.
    const auto dataset_dir = [&](double pf, double gf, std::uint64_t seed) {
        return fs::path(out_dir) / "datasets" /
               ("pf" + fmt_g(pf) + "_gf" + fmt_g(gf) + "_seed" + std::to_string(seed));
    };
    for (const double pf : axes.pseudo_fractions)
        for (const double gf : axes.gt_fractions)
            for (const std::uint64_t seed : axes.seeds) {
                const fs::path dir = dataset_dir(pf, gf, seed);
                if (fs::exists(dir / "manifest.json")) continue;
                DatasetConfig dc = base.dataset;
                dc.pseudo_fraction = pf;
                dc.gt_fraction = gf;
                dc.seed = seed;
                build_dataset(dir.string(), dc);
            }

    const std::size_t total = axes.methods.size() * axes.variants.size() *
                              axes.pseudo_fractions.size() * axes.gt_fractions.size() *
                              axes.seeds.size();
    std::vector<RunRecord> runs;
    runs.reserve(total);
    for (const std::string& m : axes.methods)
        for (const std::string& v : axes.variants)
            for (const double pf : axes.pseudo_fractions)
                for (const double gf : axes.gt_fractions)
                    for (const std::uint64_t seed : axes.seeds) {
                        const LoadedDataset ds = load_dataset(dataset_dir(pf, gf, seed).string());
                        TrainParams tp = base.train;
                        tp.method = method_from_name(m);
                        tp.variant = selection_variant_from_name(v);
                        tp.data_seed = seed;
                        tp.init_seed_f = 2 * seed + 1;
                        tp.init_seed_g = 2 * seed + 2;
                        const TrainResult res = train(base.arch, ds.train, ds.val, tp);
                        RunRecord r{m,    v,
                                    pf,   gf,
                                    seed, res.final_map50,
                                    res.final_map5095,   res.best_map50,
                                    res.best_epoch};
                        runs.push_back(r);
                        out << "[" << runs.size() << "/" << total << "] method=" << m
                            << " variant=" << v << " pf=" << fmt_g(pf) << " gf=" << fmt_g(gf)
                            << " seed=" << seed << "  best mAP@0.5 " << fmt(r.best_map50)
                            << " (epoch " << r.best_epoch << ")  final " << fmt(r.final_map50)
                            << "\n";
                    }

    {
        std::ofstream csv = open_out(fs::path(out_dir) / "runs.csv");
        csv << "method,variant,pseudo_fraction,gt_fraction,seed,final_map50,final_map5095,"
               "best_map50,best_epoch\n";
        for (const RunRecord& r : runs)
            csv << r.method << "," << r.variant << "," << fmt_g(r.pf) << "," << fmt_g(r.gf) << ","
                << r.seed << "," << fmt(r.final_map50, 6) << "," << fmt(r.final_map5095, 6) << ","
                << fmt(r.best_map50, 6) << "," << r.best_epoch << "\n";
    }

    std::ofstream csv = open_out(fs::path(out_dir) / "summary.csv");
    std::ofstream txt = open_out(fs::path(out_dir) / "summary.txt");
    csv << "method,variant,pseudo_fraction,gt_fraction,n_seeds,best_map50_median,best_map50_min,"
           "best_map50_max,final_map50_median\n";
    txt << std::left << std::setw(20) << "method" << std::setw(14) << "variant" << std::right
        << std::setw(8) << "pf" << std::setw(8) << "gf" << std::setw(8) << "seeds"
        << std::setw(14) << "mAP@0.5 med" << std::setw(11) << "min" << std::setw(11) << "max"
        << std::setw(14) << "final med" << "\n";
    out << "\n";
    for (const std::string& m : axes.methods)
        for (const std::string& v : axes.variants)
            for (const double pf : axes.pseudo_fractions)
                for (const double gf : axes.gt_fractions) {
                    std::vector<double> best, fin;
                    for (const RunRecord& r : runs)
                        if (r.method == m && r.variant == v && r.pf == pf && r.gf == gf) {
                            best.push_back(r.best_map50);
                            fin.push_back(r.final_map50);
                        }
                    csv << m << "," << v << "," << fmt_g(pf) << "," << fmt_g(gf) << ","
                        << best.size() << "," << fmt(median(best), 6) << ","
                        << fmt(*std::min_element(best.begin(), best.end()), 6) << ","
                        << fmt(*std::max_element(best.begin(), best.end()), 6) << ","
                        << fmt(median(fin), 6) << "\n";
                    txt << std::left << std::setw(20) << m << std::setw(14) << v << std::right
                        << std::setw(8) << fmt_g(pf) << std::setw(8) << fmt_g(gf) << std::setw(8)
                        << best.size() << std::setw(14) << fmt(median(best)) << std::setw(11)
                        << fmt(*std::min_element(best.begin(), best.end())) << std::setw(11)
                        << fmt(*std::max_element(best.begin(), best.end())) << std::setw(14)
                        << fmt(median(fin)) << "\n";
                }
    out << "sweep results in " << out_dir << " (runs.csv, summary.csv, summary.txt)\n";
}

// ---------------------------------------------------------------- audit

void cmd_audit_labels(const std::string& dataset_dir, std::ostream& out) {
    const DatasetConfig cfg = load_dataset_config(dataset_dir);
    const NoiseAudit audit = audit_dataset(dataset_dir);
    out << "dataset " << dataset_dir << "\n";
    print_audit(out, cfg, audit);
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"co-teaching trainer for grid detectors on noisy synthetic pseudo-labels"};
    app.name("codetect");
    app.require_subcommand(1);

    std::string config_path, out_dir, dataset_dir;
    CLI::App* build = app.add_subcommand(
        "build-dataset", "generate scenes, noisy labels and a manifest from a config");
    build->add_option("--config", config_path, "run config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    build->add_option("--out", out_dir, "output dataset directory")->required();
    build->callback([&] { cmd_build_dataset(config_path, out_dir, out); });

    CLI::App* tr = app.add_subcommand("train", "train on a built dataset per the config");
    tr->add_option("--config", config_path, "run config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    tr->add_option("--dataset", dataset_dir, "built dataset directory")->required();
    tr->add_option("--out", out_dir, "output directory for metrics and checkpoints")->required();
    tr->callback([&] { cmd_train(config_path, dataset_dir, out_dir, out); });

    std::string checkpoint, ensemble, split = "val";
    double conf_threshold = 0.25, nms_iou = 0.5;
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    ev->add_option("--dataset", dataset_dir, "built dataset directory")->required();
    ev->add_option("--split", split, "train or val (default val)");
    ev->add_option("--ensemble", ensemble, "second checkpoint; union of detections then NMS")
        ->check(CLI::ExistingFile);
    ev->add_option("--conf-threshold", conf_threshold, "detection confidence cutoff");
    ev->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
    ev->callback([&] {
        cmd_eval(checkpoint, dataset_dir, split, ensemble, conf_threshold, nms_iou, out);
    });

    SweepAxes axes;
    CLI::App* sw = app.add_subcommand(
        "sweep", "train the cross-product of methods/variants/fractions over seeds");
    sw->add_option("--config", config_path, "base run config (json)")
        ->required()
        ->check(CLI::ExistingFile);
    sw->add_option("--out", out_dir, "output directory")->required();
    sw->add_option("--methods", axes.methods, "comma-separated method list")->delimiter(',');
    sw->add_option("--variants", axes.variants, "comma-separated selection-variant list")
        ->delimiter(',');
    sw->add_option("--pseudo-fractions", axes.pseudo_fractions,
                   "comma-separated pseudo_fraction values")
        ->delimiter(',');
    sw->add_option("--gt-fractions", axes.gt_fractions, "comma-separated gt_fraction values")
        ->delimiter(',');
    sw->add_option("--seeds", axes.seeds, "comma-separated seed list (default 1,2,3)")
        ->delimiter(',');
    sw->callback([&] { cmd_sweep(config_path, out_dir, axes, out); });

    CLI::App* au = app.add_subcommand("audit-labels",
                                      "re-measure noise rates of a built dataset's labels");
    au->add_option("--dataset", dataset_dir, "built dataset directory")->required();
    au->callback([&] { cmd_audit_labels(dataset_dir, out); });

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(std::move(rev));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const RuntimeFailure& e) {
        err << "runtime failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace codetect
