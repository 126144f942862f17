#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mda/data.hpp"
#include "mda/gradcheck.hpp"
#include "mda/idx.hpp"
#include "mda/network.hpp"
#include "mda/train.hpp"

namespace mda {

using json = nlohmann::json;

/// Malformed configuration; `path()` names the offending field, e.g. "train.base_lr".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& message)
        : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

struct DataConfig {
    enum class Kind { Synthetic, Manifest };
    Kind kind = Kind::Synthetic;
    SynthConfig synthetic;
    std::string manifest;  // path to a manifest document
};

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    GradcheckConfig gradcheck;
};

namespace detail {

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_, "expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) const {
        seen_.push_back(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(child(key), std::string("wrong type (") + e.what() + ")");
        }
    }

    bool has(const char* key) const { return j_.contains(key); }
    void allow(const char* key) const { seen_.push_back(key); }
    const json& at(const char* key) const {
        seen_.push_back(key);
        return j_.at(key);
    }
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    /// Rejects keys that were never asked for.
    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) throw ConfigError(child(key), "unknown field");
        }
    }

private:
    const json& j_;
    std::string path_;
    mutable std::vector<std::string> seen_;
};

template <typename F>
void guarded(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

inline FeatureTransform parse_feature_transform(const json& j, const std::string& path) {
    Reader r(j, path);
    FeatureTransform t;
    r.get("rotation_deg", t.rotation_deg);
    r.get("translation", t.translation);
    r.get("scale", t.scale);
    r.get("noise_sigma", t.noise_sigma);
    r.get("permutation", t.permutation);
    r.finish();
    return t;
}

inline json to_json(const FeatureTransform& t) {
    return {{"rotation_deg", t.rotation_deg}, {"translation", t.translation}, {"scale", t.scale},
            {"noise_sigma", t.noise_sigma}, {"permutation", t.permutation}};
}

inline SynthConfig parse_synth(const json& j, const std::string& path) {
    Reader r(j, path);
    SynthConfig s;
    r.get("n_latent_domains", s.n_latent_domains);
    r.get("classes", s.classes);
    r.get("feature_dim", s.feature_dim);
    r.get("samples_per_domain", s.samples_per_domain);
    r.get("target_samples", s.target_samples);
    r.get("target_test_samples", s.target_test_samples);
    r.get("class_separation", s.class_separation);
    r.get("within_class_sigma", s.within_class_sigma);
    r.get("seed", s.seed);
    r.get("patch_mode", s.patch_mode);
    r.get("patch_h", s.patch_h);
    r.get("patch_w", s.patch_w);
    if (r.has("source_transforms")) {
        const json& arr = r.at("source_transforms");
        if (!arr.is_array()) throw ConfigError(r.child("source_transforms"), "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            s.source_transforms.push_back(
                parse_feature_transform(arr[i], r.child("source_transforms[" + std::to_string(i) + "]")));
        }
    }
    if (r.has("target_transform")) s.target_transform = parse_feature_transform(r.at("target_transform"), r.child("target_transform"));
    r.finish();
    guarded(path, [&] { s.validate(); });
    return s;
}

inline json to_json(const SynthConfig& s) {
    json src = json::array();
    for (const auto& t : s.source_transforms) src.push_back(to_json(t));
    return {{"n_latent_domains", s.n_latent_domains},
            {"classes", s.classes},
            {"feature_dim", s.feature_dim},
            {"samples_per_domain", s.samples_per_domain},
            {"target_samples", s.target_samples},
            {"target_test_samples", s.target_test_samples},
            {"class_separation", s.class_separation},
            {"within_class_sigma", s.within_class_sigma},
            {"seed", s.seed},
            {"patch_mode", s.patch_mode},
            {"patch_h", s.patch_h},
            {"patch_w", s.patch_w},
            {"source_transforms", src},
            {"target_transform", to_json(s.target_transform)}};
}

}  // namespace detail

inline ModelConfig parse_model_config(const json& j, const std::string& path = "model") {
    detail::Reader r(j, path);
    ModelConfig m;
    r.get("input_dim", m.input_dim);
    r.get("num_classes", m.num_classes);
    r.get("trunk_widths", m.trunk_widths);
    r.get("classifier_widths", m.classifier_widths);
    r.get("k", m.k);
    r.get("mda_after", m.mda_after);
    r.get("branch_hidden", m.branch_hidden);
    r.get("seed", m.seed);
    std::string norm = "domain_alignment";
    r.get("normalization", norm);
    if (norm == "domain_alignment") {
        m.normalization = NormalizationMode::DomainAlignment;
    } else if (norm == "pooled") {
        m.normalization = NormalizationMode::Pooled;
    } else {
        throw ConfigError(r.child("normalization"), "expected \"domain_alignment\" or \"pooled\"");
    }
    if (r.has("mda")) {
        detail::Reader mr(r.at("mda"), r.child("mda"));
        mr.get("epsilon", m.mda.epsilon);
        mr.get("affine", m.mda.affine);
        mr.get("running_momentum", m.mda.running_momentum);
        mr.get("zero_mass_threshold", m.mda.zero_mass_threshold);
        mr.finish();
    }
    r.finish();
    detail::guarded(path, [&] { m.validate(); });
    return m;
}

inline json to_json(const ModelConfig& m) {
    return {{"input_dim", m.input_dim},
            {"num_classes", m.num_classes},
            {"trunk_widths", m.trunk_widths},
            {"classifier_widths", m.classifier_widths},
            {"k", m.k},
            {"mda_after", m.mda_after},
            {"branch_hidden", m.branch_hidden},
            {"seed", m.seed},
            {"normalization", m.normalization == NormalizationMode::Pooled ? "pooled" : "domain_alignment"},
            {"mda",
             {{"epsilon", m.mda.epsilon},
              {"affine", m.mda.affine},
              {"running_momentum", m.mda.running_momentum},
              {"zero_mass_threshold", m.mda.zero_mass_threshold}}}};
}

inline TrainConfig parse_train_config(const json& j, const std::string& path = "train") {
    detail::Reader r(j, path);
    TrainConfig t;
    r.get("iterations", t.iterations);
    r.get("base_lr", t.base_lr);
    r.get("momentum", t.momentum);
    r.get("weight_decay", t.weight_decay);
    std::string schedule = "inverse";
    r.get("schedule", schedule);
    if (schedule == "inverse") {
        t.schedule = LrSchedule::Inverse;
    } else if (schedule == "step") {
        t.schedule = LrSchedule::Step;
    } else {
        throw ConfigError(r.child("schedule"), "expected \"inverse\" or \"step\"");
    }
    r.get("step_fraction", t.step_fraction);
    r.get("step_factor", t.step_factor);
    r.get("inverse_a", t.inverse_a);
    r.get("inverse_b", t.inverse_b);
    r.get("lambda_t", t.weights.domain);
    r.get("lambda_c", t.weights.class_entropy);
    r.get("lambda_d", t.weights.domain_entropy);
    r.get("source_quota", t.batch.source_quota);
    r.get("target_quota", t.batch.target_quota);
    r.get("with_replacement", t.batch.with_replacement);
    r.get("per_group", t.batch.per_group);
    r.get("seed", t.seed);
    r.get("eval_every", t.eval_every);
    r.get("freeze_trunk", t.freeze_trunk);
    r.finish();
    detail::guarded(path, [&] { t.validate(); });
    return t;
}

inline json to_json(const TrainConfig& t) {
    return {{"iterations", t.iterations},
            {"base_lr", t.base_lr},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"schedule", t.schedule == LrSchedule::Step ? "step" : "inverse"},
            {"step_fraction", t.step_fraction},
            {"step_factor", t.step_factor},
            {"inverse_a", t.inverse_a},
            {"inverse_b", t.inverse_b},
            {"lambda_t", t.weights.domain},
            {"lambda_c", t.weights.class_entropy},
            {"lambda_d", t.weights.domain_entropy},
            {"source_quota", t.batch.source_quota},
            {"target_quota", t.batch.target_quota},
            {"with_replacement", t.batch.with_replacement},
            {"per_group", t.batch.per_group},
            {"seed", t.seed},
            {"eval_every", t.eval_every},
            {"freeze_trunk", t.freeze_trunk}};
}

inline DataConfig parse_data_config(const json& j, const std::string& path = "data") {
    detail::Reader r(j, path);
    DataConfig d;
    std::string kind = "synthetic";
    r.get("kind", kind);
    if (kind == "synthetic") {
        d.kind = DataConfig::Kind::Synthetic;
        if (r.has("synthetic")) d.synthetic = detail::parse_synth(r.at("synthetic"), r.child("synthetic"));
    } else if (kind == "manifest") {
        d.kind = DataConfig::Kind::Manifest;
        r.get("manifest", d.manifest);
        if (d.manifest.empty()) throw ConfigError(r.child("manifest"), "manifest path required");
    } else {
        throw ConfigError(r.child("kind"), "expected \"synthetic\" or \"manifest\"");
    }
    r.allow("synthetic");
    r.finish();
    return d;
}

inline GradcheckConfig parse_gradcheck_config(const json& j, const std::string& path = "gradcheck") {
    detail::Reader r(j, path);
    GradcheckConfig g;
    r.get("configurations", g.configurations);
    r.get("step", g.step);
    r.get("layer_tolerance", g.layer_tolerance);
    r.get("model_tolerance", g.model_tolerance);
    r.get("seed", g.seed);
    std::string fault = "none";
    r.get("fault", fault);
    if (fault == "none") {
        g.fault = GradFault::None;
    } else if (fault == "mda_grad_x") {
        g.fault = GradFault::MdaGradX;
    } else if (fault == "mda_grad_w") {
        g.fault = GradFault::MdaGradW;
    } else if (fault == "branch") {
        g.fault = GradFault::Branch;
    } else {
        throw ConfigError(r.child("fault"), "expected none, mda_grad_x, mda_grad_w or branch");
    }
    r.finish();
    detail::guarded(path, [&] { g.validate(); });
    return g;
}

inline json to_json(const GradcheckConfig& g) {
    static const char* faults[] = {"none", "mda_grad_x", "mda_grad_w", "branch"};
    return {{"configurations", g.configurations},
            {"step", g.step},
            {"layer_tolerance", g.layer_tolerance},
            {"model_tolerance", g.model_tolerance},
            {"seed", g.seed},
            {"fault", faults[static_cast<int>(g.fault)]}};
}

inline json to_json(const DataConfig& d) {
    if (d.kind == DataConfig::Kind::Manifest) return {{"kind", "manifest"}, {"manifest", d.manifest}};
    return {{"kind", "synthetic"}, {"synthetic", detail::to_json(d.synthetic)}};
}

inline json to_json(const ExperimentConfig& c) {
    return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)}, {"gradcheck", to_json(c.gradcheck)}};
}

/// Parses a document with sections model / train / data / gradcheck; every section is optional.
inline ExperimentConfig parse_experiment_config(const json& j) {
    detail::Reader r(j, "");
    ExperimentConfig c;
    if (r.has("data")) c.data = parse_data_config(r.at("data"));
    if (r.has("model")) c.model = parse_model_config(r.at("model"));
    if (r.has("train")) c.train = parse_train_config(r.at("train"));
    if (r.has("gradcheck")) c.gradcheck = parse_gradcheck_config(r.at("gradcheck"));
    r.finish();
    return c;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", path + ": " + e.what());
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key.path=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError(key, "cannot descend into non-object");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError(key, "cannot descend into non-object");
    (*node)[parts.back()] = value;
}

// ---------------------------------------------------------------------------
// Manifests: IDX files with domain tags
// ---------------------------------------------------------------------------

namespace detail {

inline std::string resolve_data_path(const std::string& p, const std::filesystem::path& manifest_dir) {
    namespace fs = std::filesystem;
    if (fs::path(p).is_absolute()) return p;
    if (const char* env = std::getenv("MDA_DATA_DIR"); env && *env) return (fs::path(env) / p).string();
    return (manifest_dir / p).string();
}

inline ImageTransform parse_image_transform(const json& j, const std::string& path) {
    Reader r(j, path);
    ImageTransform t;
    std::string kind;
    r.get("kind", kind);
    if (kind == "invert") {
        t.kind = ImageTransform::Kind::Invert;
    } else if (kind == "noise") {
        t.kind = ImageTransform::Kind::Noise;
    } else if (kind == "rotate90") {
        t.kind = ImageTransform::Kind::Rotate90;
    } else if (kind == "affine") {
        t.kind = ImageTransform::Kind::AffineIntensity;
    } else {
        throw ConfigError(r.child("kind"), "expected invert | noise | rotate90 | affine");
    }
    r.get("sigma", t.sigma);
    r.get("seed", t.seed);
    r.get("turns", t.quarter_turns);
    r.get("gain", t.gain);
    r.get("offset", t.offset);
    r.finish();
    return t;
}

inline Dataset load_manifest_entry(const json& j, const std::string& path, const std::filesystem::path& dir,
                                   DomainTag tag, int latent) {
    Reader r(j, path);
    std::string images, labels;
    std::size_t limit = 0;
    r.get("images", images);
    r.get("labels", labels);
    r.get("limit", limit);
    bool domain_label = false;
    r.get("domain_label", domain_label);
    std::vector<ImageTransform> transforms;
    if (r.has("transforms")) {
        const json& arr = r.at("transforms");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            transforms.push_back(parse_image_transform(arr[i], r.child("transforms[" + std::to_string(i) + "]")));
        }
    }
    r.finish();
    if (images.empty() || labels.empty()) throw ConfigError(path, "images and labels are required");

    IdxDataset raw = idx_load(resolve_data_path(images, dir), resolve_data_path(labels, dir));
    Tensor x = raw.images;
    for (const auto& t : transforms) x = domain_transform(x, t);
    std::size_t n = raw.labels.size();
    if (limit > 0 && limit < n) n = limit;

    Dataset d;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    d.features = x.select_rows(idx);
    d.labels.assign(raw.labels.begin(), raw.labels.begin() + static_cast<std::ptrdiff_t>(n));
    if (domain_label && tag.is_unknown()) tag = DomainTag::known(latent);
    d.tags.assign(n, tag);
    d.groups.assign(n, latent);
    LatentDomains::assign(d, std::vector<int>(n, latent));
    return d;
}

}  // namespace detail

/// Loads a manifest of the form
///   {"sources": [{"images": ..., "labels": ..., "domain_label": bool, "transforms": [...], "limit": n}, ...],
///    "target": {...}, "target_test": {...}}
/// The i-th source entry is latent domain i. Relative paths resolve against $MDA_DATA_DIR, else the
/// manifest's directory.
inline ExperimentData load_manifest(const std::string& manifest_path) {
    const json j = read_json_file(manifest_path);
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    detail::Reader r(j, "manifest");
    if (!r.has("sources") || !r.has("target")) throw ConfigError("manifest", "sources and target are required");
    const json& sources = r.at("sources");
    std::vector<Dataset> parts;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        parts.push_back(detail::load_manifest_entry(sources[i], "manifest.sources[" + std::to_string(i) + "]", dir,
                                                    DomainTag::unknown(), static_cast<int>(i)));
    }
    std::vector<const Dataset*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    ExperimentData data;
    data.source = concat(ptrs);
    data.target = detail::load_manifest_entry(r.at("target"), "manifest.target", dir, DomainTag::target(), -1);
    data.target_test = r.has("target_test") ? detail::load_manifest_entry(r.at("target_test"), "manifest.target_test",
                                                                          dir, DomainTag::target(), -1)
                                            : data.target;
    r.finish();
    return data;
}

inline ExperimentData load_data(const DataConfig& d) {
    if (d.kind == DataConfig::Kind::Manifest) return load_manifest(d.manifest);
    SynthData s = synth_make(d.synthetic);
    return {std::move(s.source), std::move(s.target), std::move(s.target_test)};
}

inline std::size_t count_classes(const ExperimentData& data) {
    int hi = -1;
    for (int y : data.source.labels) hi = std::max(hi, y);
    for (int y : data.target_test.labels) hi = std::max(hi, y);
    return static_cast<std::size_t>(hi + 1);
}

/// Fills model.input_dim and model.num_classes from the data.
inline void bind_to_data(ExperimentConfig& cfg, const ExperimentData& data) {
    cfg.model.input_dim = data.source.features.row_size();
    cfg.model.num_classes = cfg.data.kind == DataConfig::Kind::Synthetic
                                ? static_cast<std::size_t>(cfg.data.synthetic.classes)
                                : std::max<std::size_t>(2, count_classes(data));
    detail::guarded("model", [&] { cfg.model.validate(); });
}

}  // namespace mda
