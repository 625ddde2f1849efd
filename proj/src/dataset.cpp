#include "codetect/dataset.hpp"

#include "codetect/common.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace codetect {

namespace {

constexpr std::uint32_t kFeatureMagic = 0x43534443; // "CDSC"
constexpr std::uint32_t kCheckpointMagic = 0x4b434443; // "CDCK"
constexpr std::uint32_t kFormatVersion = 1;

std::string scene_stem(int id) {
    std::ostringstream os;
    os << "scene_" << std::setw(5) << std::setfill('0') << id;
    return os.str();
}

void write_label_line(std::ostream& out, int cls, const Box& b, const double* conf) {
    out << cls << " " << std::fixed << std::setprecision(6) << b.cx << " " << b.cy << " " << b.w
        << " " << b.h;
    if (conf) out << " " << *conf;
    out << "\n";
}

std::vector<ScoredBox> parse_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open label file: " + path);
    std::vector<ScoredBox> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::vector<std::string> fields;
        std::string tok;
        while (ls >> tok) fields.push_back(tok);
        if (fields.empty()) continue;
        const auto fail = [&](const std::string& what) {
            std::ostringstream os;
            os << path << ":" << lineno << ": " << what;
            throw ConfigError(os.str());
        };
        if (fields.size() != 5 && fields.size() != 6) fail("expected 5 or 6 fields");
        int cls = 0;
        double vals[5] = {0, 0, 0, 0, 1.0};
        try {
            std::size_t used = 0;
            cls = std::stoi(fields[0], &used);
            if (used != fields[0].size()) fail("class_id must be an integer");
            for (std::size_t i = 1; i < fields.size(); ++i) {
                vals[i - 1] = std::stod(fields[i], &used);
                if (used != fields[i].size()) fail("field " + std::to_string(i + 1) + " is not a number");
            }
        } catch (const std::logic_error&) {
            fail("fields must be numeric");
        }
        if (cls < 0) fail("class_id must be >= 0");
        if (!(vals[4] >= 0.0 && vals[4] <= 1.0)) fail("confidence must lie in [0,1]");
        try {
            out.emplace_back(Box(vals[0], vals[1], vals[2], vals[3]), cls, vals[4]);
        } catch (const ConfigError& e) {
            fail(e.what());
        }
    }
    return out;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw RuntimeFailure("truncated file: " + path);
}

} // namespace

void write_gt_labels(const std::string& path, const std::vector<ObjectLabel>& labels) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write label file: " + path);
    for (const auto& l : labels) write_label_line(out, l.class_id, l.box, nullptr);
}

void write_scored_labels(const std::string& path, const std::vector<ScoredBox>& labels) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write label file: " + path);
    for (const auto& l : labels) write_label_line(out, l.class_id, l.box, &l.confidence);
}

std::vector<ScoredBox> read_scored_labels(const std::string& path) { return parse_label_file(path); }

std::vector<ObjectLabel> read_gt_labels(const std::string& path) {
    std::vector<ObjectLabel> out;
    for (const auto& sb : parse_label_file(path)) out.push_back({sb.box, sb.class_id});
    return out;
}

void save_features(const std::string& path, const Tensor3& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write feature file: " + path);
    write_pod(out, kFeatureMagic);
    write_pod(out, kFormatVersion);
    write_pod(out, static_cast<std::int32_t>(t.c));
    write_pod(out, static_cast<std::int32_t>(t.h));
    write_pod(out, static_cast<std::int32_t>(t.w));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!out) throw RuntimeFailure("failed writing feature file: " + path);
}

Tensor3 load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open feature file: " + path);
    std::uint32_t magic = 0, version = 0;
    read_pod(in, magic, path);
    read_pod(in, version, path);
    if (magic != kFeatureMagic) throw RuntimeFailure("not a feature file: " + path);
    if (version != kFormatVersion) throw RuntimeFailure("unsupported feature file version: " + path);
    std::int32_t c = 0, h = 0, w = 0;
    read_pod(in, c, path);
    read_pod(in, h, path);
    read_pod(in, w, path);
    if (c < 1 || h < 1 || w < 1) throw RuntimeFailure("corrupt feature file header: " + path);
    Tensor3 t(c, h, w);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw RuntimeFailure("truncated file: " + path);
    return t;
}

void save_checkpoint(const std::string& path, const Detector& det) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write checkpoint: " + path);
    const std::string arch = arch_to_json(det.arch()).dump();
    write_pod(out, kCheckpointMagic);
    write_pod(out, kFormatVersion);
    write_pod(out, static_cast<std::uint32_t>(arch.size()));
    out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
    write_pod(out, static_cast<std::uint64_t>(det.num_params()));
    out.write(reinterpret_cast<const char*>(det.params().data()),
              static_cast<std::streamsize>(det.num_params() * sizeof(double)));
    if (!out) throw RuntimeFailure("failed writing checkpoint: " + path);
}

Detector load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open checkpoint: " + path);
    std::uint32_t magic = 0, version = 0, arch_len = 0;
    read_pod(in, magic, path);
    read_pod(in, version, path);
    if (magic != kCheckpointMagic) throw RuntimeFailure("not a checkpoint file: " + path);
    if (version != kFormatVersion) throw RuntimeFailure("unsupported checkpoint version: " + path);
    read_pod(in, arch_len, path);
    std::string arch_str(arch_len, '\0');
    in.read(arch_str.data(), arch_len);
    if (!in) throw RuntimeFailure("truncated file: " + path);
    json aj;
    try {
        aj = json::parse(arch_str);
    } catch (const json::exception&) {
        throw RuntimeFailure("corrupt architecture block in checkpoint: " + path);
    }
    Detector det(arch_from_json(aj, "checkpoint arch"));
    std::uint64_t n = 0;
    read_pod(in, n, path);
    if (n != det.num_params())
        throw RuntimeFailure("checkpoint parameter count does not match its architecture: " + path);
    in.read(reinterpret_cast<char*>(det.params().data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw RuntimeFailure("truncated file: " + path);
    return det;
}

NoiseAudit audit_scenes(const std::vector<LabeledScene>& scenes, double conf_threshold,
                        double nms_iou) {
    NoiseAudit a;
    double jitter_sq_sum = 0.0;
    long jitter_terms = 0;
    for (const auto& sc : scenes) {
        ++a.n_scenes;
        a.n_gt += static_cast<long>(sc.gt.size());
        for (const bool d : sc.gt_dropped)
            if (d) ++a.n_dropped;
        for (std::size_t i = 0; i < sc.pseudo.size(); ++i) {
            ++a.n_auto;
            switch (sc.provenance[i]) {
                case Provenance::kClean:
                    ++a.n_clean;
                    ++a.n_emitted;
                    break;
                case Provenance::kJittered: {
                    ++a.n_jittered;
                    ++a.n_emitted;
                    const Box& p = sc.pseudo[i].box;
                    const Box& g = sc.gt[static_cast<std::size_t>(sc.pseudo_source[i])].box;
                    const double d[4] = {(p.cx - g.cx) / g.w, (p.cy - g.cy) / g.h,
                                         (p.w - g.w) / g.w, (p.h - g.h) / g.h};
                    for (const double x : d) jitter_sq_sum += x * x;
                    jitter_terms += 4;
                    break;
                }
                case Provenance::kFlipped:
                    ++a.n_flipped;
                    ++a.n_emitted;
                    break;
                case Provenance::kHallucinated:
                    ++a.n_hallucinated;
                    break;
                case Provenance::kDuplicated:
                    ++a.n_duplicated;
                    break;
            }
        }
        for (const std::size_t k : postprocess_indices(sc.pseudo, conf_threshold, nms_iou)) {
            ++a.n_pseudo;
            if (is_noisy(sc.provenance[k])) ++a.n_pseudo_noisy;
        }
    }
    if (jitter_terms > 0) a.measured_jitter_sigma = std::sqrt(jitter_sq_sum / jitter_terms);
    return a;
}

BuildSummary build_dataset(const std::string& dir, const DatasetConfig& cfg) {
    cfg.validate();
    fs::create_directories(fs::path(dir) / "scenes");
    fs::create_directories(fs::path(dir) / "labels_gt");
    fs::create_directories(fs::path(dir) / "labels_auto");
    fs::create_directories(fs::path(dir) / "labels_pseudo");

    SceneSpec spec = cfg.scene;
    spec.render_seed = cfg.seed;

    const DatasetSplit split =
        make_split(cfg.n_scenes, cfg.val_ratio, cfg.pseudo_fraction, cfg.gt_fraction, cfg.seed);

    std::vector<LabeledScene> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.n_scenes));
    json scene_entries = json::array();
    for (int id = 0; id < cfg.n_scenes; ++id) {
        LabeledScene sc = generate_scene(id, spec);
        corrupt_labels(sc, cfg.noise, cfg.seed);
        const std::vector<std::size_t> kept =
            postprocess_indices(sc.pseudo, cfg.conf_threshold, cfg.nms_iou);

        const std::string stem = scene_stem(id);
        save_features((fs::path(dir) / "scenes" / (stem + ".bin")).string(), sc.features);

        std::vector<ObjectLabel> gt_out;
        for (const auto& g : sc.gt) gt_out.push_back(g);
        write_gt_labels((fs::path(dir) / "labels_gt" / (stem + ".txt")).string(), gt_out);
        write_scored_labels((fs::path(dir) / "labels_auto" / (stem + ".txt")).string(), sc.pseudo);
        std::vector<ScoredBox> pseudo_out;
        for (const std::size_t k : kept) pseudo_out.push_back(sc.pseudo[k]);
        write_scored_labels((fs::path(dir) / "labels_pseudo" / (stem + ".txt")).string(), pseudo_out);

        json prov = json::array();
        for (const auto p : sc.provenance) prov.push_back(provenance_name(p));
        json entry{{"id", id},
                   {"n_gt", sc.gt.size()},
                   {"dropped", sc.gt_dropped},
                   {"auto_provenance", prov},
                   {"auto_source", sc.pseudo_source},
                   {"pseudo_indices", kept}};
        scene_entries.push_back(std::move(entry));
        scenes.push_back(std::move(sc));
    }

    json manifest{{"format_version", kFormatVersion},
                  {"dataset", dataset_config_to_json(cfg)},
                  {"split",
                   {{"train", split.train}, {"val", split.val}, {"gt_scenes", split.gt_scenes}}},
                  {"scenes", scene_entries}};
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw RuntimeFailure("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    return {split, audit_scenes(scenes, cfg.conf_threshold, cfg.nms_iou)};
}

namespace {

json load_manifest(const std::string& dir) {
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot open dataset manifest: " + path);
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw RuntimeFailure("corrupt dataset manifest " + path + ": " + e.what());
    }
    if (m.value("format_version", 0u) != kFormatVersion)
        throw RuntimeFailure("unsupported dataset format version in " + path);
    return m;
}

} // namespace

LoadedDataset load_dataset(const std::string& dir) {
    const json m = load_manifest(dir);
    LoadedDataset ds;
    ds.cfg = dataset_config_from_json(m.at("dataset"), "manifest dataset");
    m.at("split").at("train").get_to(ds.split.train);
    m.at("split").at("val").get_to(ds.split.val);
    m.at("split").at("gt_scenes").get_to(ds.split.gt_scenes);
    ds.split.gt_fraction = ds.cfg.gt_fraction;
    ds.split.pseudo_fraction = ds.cfg.pseudo_fraction;

    const json& entries = m.at("scenes");

    auto scene_entry = [&](int id) -> const json& {
        if (id < 0 || id >= static_cast<int>(entries.size()))
            throw RuntimeFailure("dataset " + dir + ": scene id " + std::to_string(id) +
                                 " is outside the manifest");
        const json& e = entries.at(static_cast<std::size_t>(id));
        if (e.at("id").get<int>() != id)
            throw RuntimeFailure("dataset " + dir + ": manifest scene order is corrupt");
        return e;
    };

    for (const int id : ds.split.train) {
        const json& e = scene_entry(id);
        const std::string stem = scene_stem(id);
        TrainScene ts;
        ts.scene_id = id;
        ts.features = load_features((fs::path(dir) / "scenes" / (stem + ".bin")).string());
        ts.gt_labelled = std::find(ds.split.gt_scenes.begin(), ds.split.gt_scenes.end(), id) !=
                         ds.split.gt_scenes.end();
        if (ts.gt_labelled) {
            ts.labels = read_gt_labels((fs::path(dir) / "labels_gt" / (stem + ".txt")).string());
        } else {
            const auto pseudo =
                read_scored_labels((fs::path(dir) / "labels_pseudo" / (stem + ".txt")).string());
            std::vector<std::size_t> kept;
            e.at("pseudo_indices").get_to(kept);
            if (kept.size() != pseudo.size())
                throw RuntimeFailure("dataset " + dir + ": scene " + std::to_string(id) +
                                     " pseudo labels do not match the manifest");
            const json& prov = e.at("auto_provenance");
            for (std::size_t i = 0; i < pseudo.size(); ++i) {
                ts.labels.push_back({pseudo[i].box, pseudo[i].class_id});
                ts.provenance.push_back(
                    provenance_from_name(prov.at(kept[i]).get<std::string>()));
            }
        }
        ds.train.push_back(std::move(ts));
    }

    for (const int id : ds.split.val) {
        scene_entry(id);
        const std::string stem = scene_stem(id);
        EvalScene es;
        es.scene_id = id;
        es.features = load_features((fs::path(dir) / "scenes" / (stem + ".bin")).string());
        es.gt = read_gt_labels((fs::path(dir) / "labels_gt" / (stem + ".txt")).string());
        ds.val.push_back(std::move(es));
    }
    return ds;
}

DatasetConfig load_dataset_config(const std::string& dir) {
    const json m = load_manifest(dir);
    return dataset_config_from_json(m.at("dataset"), "manifest dataset");
}

std::vector<EvalScene> load_eval_split(const std::string& dir, const std::string& split) {
    if (split != "train" && split != "val")
        throw UsageError("unknown split '" + split + "' (expected train or val)");
    const json m = load_manifest(dir);
    std::vector<int> ids;
    m.at("split").at(split).get_to(ids);
    if (ids.empty()) throw UsageError("no scenes in split '" + split + "'");
    std::vector<EvalScene> scenes;
    scenes.reserve(ids.size());
    for (const int id : ids) {
        const std::string stem = scene_stem(id);
        EvalScene es;
        es.scene_id = id;
        es.features = load_features((fs::path(dir) / "scenes" / (stem + ".bin")).string());
        es.gt = read_gt_labels((fs::path(dir) / "labels_gt" / (stem + ".txt")).string());
        scenes.push_back(std::move(es));
    }
    return scenes;
}

NoiseAudit audit_dataset(const std::string& dir) {
    const json m = load_manifest(dir);
    const DatasetConfig cfg = dataset_config_from_json(m.at("dataset"), "manifest dataset");
    std::vector<LabeledScene> scenes;
    for (const json& e : m.at("scenes")) {
        const int id = e.at("id").get<int>();
        const std::string stem = scene_stem(id);
        LabeledScene sc;
        sc.scene_id = id;
        sc.num_classes = cfg.scene.num_classes;
        sc.gt = read_gt_labels((fs::path(dir) / "labels_gt" / (stem + ".txt")).string());
        sc.pseudo = read_scored_labels((fs::path(dir) / "labels_auto" / (stem + ".txt")).string());
        e.at("dropped").get_to(sc.gt_dropped);
        e.at("auto_source").get_to(sc.pseudo_source);
        for (const json& p : e.at("auto_provenance"))
            sc.provenance.push_back(provenance_from_name(p.get<std::string>()));
        if (sc.provenance.size() != sc.pseudo.size() || sc.pseudo_source.size() != sc.pseudo.size())
            throw RuntimeFailure("dataset " + dir + ": scene " + std::to_string(id) +
                                 " auto labels do not match the manifest");
        scenes.push_back(std::move(sc));
    }
    return audit_scenes(scenes, cfg.conf_threshold, cfg.nms_iou);
}

} // namespace codetect
