#include "codetect/config.hpp"

#include "codetect/common.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace codetect {

namespace {

/// Strict object reader: reads known fields, then done() rejects leftovers
/// with their dotted path.
class JsonReader {
public:
    JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
    }

    template <typename T>
    void field(const char* name, T& out) {
        seen_.insert(name);
        const auto it = j_.find(name);
        if (it == j_.end()) return;
        try {
            it->get_to(out);
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + name + " has the wrong type");
        }
    }

    void field_enum(const char* name, Method& out) {
        std::string s;
        bool present = false;
        read_string(name, s, present);
        if (present) out = method_from_name(s);
    }

    void field_enum(const char* name, SelectionVariant& out) {
        std::string s;
        bool present = false;
        read_string(name, s, present);
        if (present) out = selection_variant_from_name(s);
    }

    void field_beta(const char* name, BetaParams& out) {
        seen_.insert(name);
        const auto it = j_.find(name);
        if (it == j_.end()) return;
        if (!it->is_array() || it->size() != 2)
            throw ConfigError(path_ + "." + name + " must be a [a, b] pair");
        try {
            (*it)[0].get_to(out.a);
            (*it)[1].get_to(out.b);
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + name + " has the wrong type");
        }
    }

    bool has_object(const char* name) {
        const auto it = j_.find(name);
        if (it == j_.end()) {
            seen_.insert(name);
            return false;
        }
        return true;
    }

    JsonReader sub(const char* name) {
        seen_.insert(name);
        return JsonReader(j_.at(name), path_ + "." + name);
    }

    void done() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                throw ConfigError("unknown key: " + path_ + "." + item.key());
            }
        }
    }

private:
    void read_string(const char* name, std::string& s, bool& present) {
        seen_.insert(name);
        const auto it = j_.find(name);
        if (it == j_.end()) return;
        if (!it->is_string()) throw ConfigError(path_ + "." + name + " must be a string");
        s = it->get<std::string>();
        present = true;
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json beta_to_json(const BetaParams& b) { return json::array({b.a, b.b}); }

} // namespace

void DatasetConfig::validate() const {
    if (n_scenes < 1) throw ConfigError("dataset.n_scenes must be >= 1");
    if (!(val_ratio >= 0.0 && val_ratio < 1.0))
        throw ConfigError("dataset.val_ratio must lie in [0,1)");
    if (!(pseudo_fraction > 0.0 && pseudo_fraction <= 1.0))
        throw ConfigError("dataset.pseudo_fraction must lie in (0,1]");
    if (!(gt_fraction >= 0.0 && gt_fraction <= 1.0))
        throw ConfigError("dataset.gt_fraction must lie in [0,1]");
    if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0))
        throw ConfigError("dataset.conf_threshold must lie in [0,1]");
    if (!(nms_iou > 0.0 && nms_iou < 1.0))
        throw ConfigError("dataset.nms_iou must lie in (0,1)");
    scene.validate();
    noise.validate();
}

void RunConfig::validate() const {
    dataset.validate();
    arch.validate();
    train.validate();
    if (arch.img_size != dataset.scene.img_size)
        throw ConfigError("arch.img_size must match dataset.scene.img_size");
    if (arch.in_channels != dataset.scene.channels)
        throw ConfigError("arch.in_channels must match dataset.scene.channels");
    if (arch.num_classes != dataset.scene.num_classes)
        throw ConfigError("arch.num_classes must match dataset.scene.num_classes");
}

ArchConfig arch_from_json(const json& j, const std::string& path_prefix) {
    ArchConfig a;
    JsonReader r(j, path_prefix);
    r.field("in_channels", a.in_channels);
    r.field("img_size", a.img_size);
    r.field("grid", a.grid);
    r.field("num_classes", a.num_classes);
    r.field("stage_channels", a.stage_channels);
    r.field("priors", a.priors);
    r.field("leaky_slope", a.leaky_slope);
    r.done();
    return a;
}

json arch_to_json(const ArchConfig& a) {
    return json{{"in_channels", a.in_channels}, {"img_size", a.img_size},
                {"grid", a.grid},               {"num_classes", a.num_classes},
                {"stage_channels", a.stage_channels}, {"priors", a.priors},
                {"leaky_slope", a.leaky_slope}};
}

DatasetConfig dataset_config_from_json(const json& j, const std::string& path_prefix) {
    DatasetConfig out;
    JsonReader d(j, path_prefix);
    d.field("n_scenes", out.n_scenes);
    d.field("val_ratio", out.val_ratio);
    d.field("pseudo_fraction", out.pseudo_fraction);
    d.field("gt_fraction", out.gt_fraction);
    d.field("seed", out.seed);
    d.field("conf_threshold", out.conf_threshold);
    d.field("nms_iou", out.nms_iou);
    if (d.has_object("scene")) {
        JsonReader s = d.sub("scene");
        SceneSpec& sp = out.scene;
        s.field("num_classes", sp.num_classes);
        s.field("min_objects", sp.min_objects);
        s.field("max_objects", sp.max_objects);
        s.field("min_size", sp.min_size);
        s.field("max_size", sp.max_size);
        s.field("img_size", sp.img_size);
        s.field("channels", sp.channels);
        s.field("distractor_rate", sp.distractor_rate);
        s.field("max_overlap", sp.max_overlap);
        s.field("min_center_dist", sp.min_center_dist);
        s.field("class_prior", sp.class_prior);
        s.done();
    }
    if (d.has_object("noise")) {
        JsonReader n = d.sub("noise");
        NoiseModel& nm = out.noise;
        n.field("drop_rate", nm.drop_rate);
        n.field("flip_rate", nm.flip_rate);
        n.field("flip_nearest", nm.flip_nearest);
        n.field("jitter_prob", nm.jitter_prob);
        n.field("jitter_sigma", nm.jitter_sigma);
        n.field("halluc_rate", nm.halluc_rate);
        n.field("dup_rate", nm.dup_rate);
        n.field_beta("conf_clean", nm.conf_clean);
        n.field_beta("conf_jittered", nm.conf_jittered);
        n.field_beta("conf_flipped", nm.conf_flipped);
        n.field_beta("conf_hallucinated", nm.conf_hallucinated);
        n.field_beta("conf_duplicated", nm.conf_duplicated);
        n.done();
    }
    d.done();
    return out;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    JsonReader root(j, "config");

    if (root.has_object("dataset")) {
        root.sub("dataset"); // mark consumed; parsed below with its own reader
        c.dataset = dataset_config_from_json(j.at("dataset"), "dataset");
    }

    if (root.has_object("arch")) {
        JsonReader a = root.sub("arch");
        a.field("in_channels", c.arch.in_channels);
        a.field("img_size", c.arch.img_size);
        a.field("grid", c.arch.grid);
        a.field("num_classes", c.arch.num_classes);
        a.field("stage_channels", c.arch.stage_channels);
        a.field("priors", c.arch.priors);
        a.field("leaky_slope", c.arch.leaky_slope);
        a.done();
    }

    if (root.has_object("train")) {
        JsonReader t = root.sub("train");
        TrainParams& tp = c.train;
        t.field_enum("method", tp.method);
        t.field_enum("variant", tp.variant);
        t.field("epochs", tp.schedule.epochs);
        t.field("rampup_epochs", tp.schedule.rampup_epochs);
        t.field("max_forget", tp.schedule.max_forget);
        t.field("lr", tp.lr);
        t.field("momentum", tp.momentum);
        t.field("batch_size", tp.batch_size);
        t.field("eval_interval", tp.eval_interval);
        t.field("data_seed", tp.data_seed);
        t.field("init_seed_f", tp.init_seed_f);
        t.field("init_seed_g", tp.init_seed_g);
        if (t.has_object("weights")) {
            JsonReader w = t.sub("weights");
            w.field("box", tp.weights.box);
            w.field("cls", tp.weights.cls);
            w.field("obj", tp.weights.obj);
            w.done();
        }
        if (t.has_object("predict")) {
            JsonReader p = t.sub("predict");
            p.field("conf_threshold", tp.predict.conf_threshold);
            p.field("nms_iou", tp.predict.nms_iou);
            p.done();
        }
        t.done();
    }

    root.done();
    c.validate();
    return c;
}

json dataset_config_to_json(const DatasetConfig& d) {
    return json{{"n_scenes", d.n_scenes},
                {"val_ratio", d.val_ratio},
                {"pseudo_fraction", d.pseudo_fraction},
                {"gt_fraction", d.gt_fraction},
                {"seed", d.seed},
                {"conf_threshold", d.conf_threshold},
                {"nms_iou", d.nms_iou},
                {"scene",
                 {{"num_classes", d.scene.num_classes},
                  {"min_objects", d.scene.min_objects},
                  {"max_objects", d.scene.max_objects},
                  {"min_size", d.scene.min_size},
                  {"max_size", d.scene.max_size},
                  {"img_size", d.scene.img_size},
                  {"channels", d.scene.channels},
                  {"distractor_rate", d.scene.distractor_rate},
                  {"max_overlap", d.scene.max_overlap},
                  {"min_center_dist", d.scene.min_center_dist},
                  {"class_prior", d.scene.class_prior}}},
                {"noise",
                 {{"drop_rate", d.noise.drop_rate},
                  {"flip_rate", d.noise.flip_rate},
                  {"flip_nearest", d.noise.flip_nearest},
                  {"jitter_prob", d.noise.jitter_prob},
                  {"jitter_sigma", d.noise.jitter_sigma},
                  {"halluc_rate", d.noise.halluc_rate},
                  {"dup_rate", d.noise.dup_rate},
                  {"conf_clean", beta_to_json(d.noise.conf_clean)},
                  {"conf_jittered", beta_to_json(d.noise.conf_jittered)},
                  {"conf_flipped", beta_to_json(d.noise.conf_flipped)},
                  {"conf_hallucinated", beta_to_json(d.noise.conf_hallucinated)},
                  {"conf_duplicated", beta_to_json(d.noise.conf_duplicated)}}}};
}

json run_config_to_json(const RunConfig& c) {
    const TrainParams& t = c.train;
    return json{
        {"dataset", dataset_config_to_json(c.dataset)},
        {"arch", arch_to_json(c.arch)},
        {"train",
         {{"method", method_name(t.method)},
          {"variant", selection_variant_name(t.variant)},
          {"epochs", t.schedule.epochs},
          {"rampup_epochs", t.schedule.rampup_epochs},
          {"max_forget", t.schedule.max_forget},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"batch_size", t.batch_size},
          {"eval_interval", t.eval_interval},
          {"data_seed", t.data_seed},
          {"init_seed_f", t.init_seed_f},
          {"init_seed_g", t.init_seed_g},
          {"weights", {{"box", t.weights.box}, {"cls", t.weights.cls}, {"obj", t.weights.obj}}},
          {"predict",
           {{"conf_threshold", t.predict.conf_threshold}, {"nms_iou", t.predict.nms_iou}}}}}};
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::string& path, const RunConfig& c) {
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write config file: " + path);
    out << run_config_to_json(c).dump(2) << "\n";
}

} // namespace codetect
