#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/assignment.hpp"
#include "mda/tensor.hpp"

namespace mda {

struct LatentDomains;

/// One sample as seen by training code. The ground-truth latent domain is private and only reachable
/// through LatentDomains.
class LabeledSample {
public:
    Tensor features;  // batchless shape
    std::optional<int> class_label;
    DomainTag tag;

private:
    std::optional<int> true_latent_domain_;
    friend struct LatentDomains;
    friend class Dataset;
};

/// Column-oriented collection of samples sharing one feature shape.
class Dataset {
public:
    Tensor features;              // [n, ...]
    std::vector<int> labels;      // -1 when absent
    std::vector<DomainTag> tags;
    std::vector<int> groups;      // provenance (source file / generator component), -1 when unknown

    std::size_t size() const { return tags.size(); }
    bool empty() const { return tags.empty(); }

    Tensor::Shape sample_shape() const {
        Tensor::Shape s(features.shape().begin() + 1, features.shape().end());
        return s;
    }

    LabeledSample at(std::size_t i) const {
        LabeledSample s;
        auto r = features.row(i);
        s.features = Tensor(sample_shape().empty() ? Tensor::Shape{1} : sample_shape(),
                            std::vector<double>(r.begin(), r.end()));
        if (labels[i] >= 0) s.class_label = labels[i];
        s.tag = tags[i];
        if (!latent_.empty() && latent_[i] >= 0) s.true_latent_domain_ = latent_[i];
        return s;
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset d;
        d.features = features.select_rows(indices);
        for (std::size_t i : indices) {
            d.labels.push_back(labels[i]);
            d.tags.push_back(tags[i]);
            d.groups.push_back(groups.empty() ? -1 : groups[i]);
            if (!latent_.empty()) d.latent_.push_back(latent_[i]);
        }
        return d;
    }

    void check() const {
        const std::size_t n = tags.size();
        if (features.rows() != n || labels.size() != n || (!groups.empty() && groups.size() != n) ||
            (!latent_.empty() && latent_.size() != n)) {
            throw std::logic_error("Dataset: column lengths disagree");
        }
    }

private:
    std::vector<int> latent_;  // ground truth, -1 when unknown
    friend struct LatentDomains;
};

/// Training batch: source rows first, then target rows.
class Batch {
public:
    Tensor features;
    std::vector<int> class_labels;  // -1 for target rows
    std::vector<DomainTag> tags;

    std::size_t size() const { return tags.size(); }

    std::vector<std::size_t> source_rows() const { return rows_where([](const DomainTag& t) { return t.is_source(); }); }
    std::vector<std::size_t> target_rows() const { return rows_where([](const DomainTag& t) { return t.is_target(); }); }
    std::vector<std::size_t> known_rows() const { return rows_where([](const DomainTag& t) { return t.is_known(); }); }
    std::vector<std::size_t> unknown_rows() const { return rows_where([](const DomainTag& t) { return t.is_unknown(); }); }

private:
    template <typename Pred>
    std::vector<std::size_t> rows_where(Pred pred) const {
        std::vector<std::size_t> r;
        for (std::size_t i = 0; i < tags.size(); ++i) {
            if (pred(tags[i])) r.push_back(i);
        }
        return r;
    }

    std::vector<int> latent_;
    friend struct LatentDomains;
};

/// The only route to ground-truth latent domains: generators write them, evaluation reads them.
struct LatentDomains {
    static const std::vector<int>& of(const Dataset& d) { return d.latent_; }
    static const std::vector<int>& of(const Batch& b) { return b.latent_; }
    static std::optional<int> of(const LabeledSample& s) { return s.true_latent_domain_; }
    static void assign(Dataset& d, std::vector<int> latent) {
        if (latent.size() != d.size()) throw std::invalid_argument("LatentDomains::assign: size mismatch");
        d.latent_ = std::move(latent);
    }
    static void assign(Batch& b, std::vector<int> latent) { b.latent_ = std::move(latent); }
};

/// Concatenates datasets with equal sample shapes.
inline Dataset concat(const std::vector<const Dataset*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: nothing to concatenate");
    Dataset out;
    Tensor::Shape shape = parts.front()->features.shape();
    shape[0] = 0;
    std::vector<double> values;
    std::vector<int> latent;
    bool any_latent = false;
    for (const Dataset* p : parts) {
        if (p->sample_shape() != parts.front()->sample_shape()) throw std::invalid_argument("concat: shape mismatch");
        shape[0] += p->size();
        values.insert(values.end(), p->features.values().begin(), p->features.values().end());
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
        out.tags.insert(out.tags.end(), p->tags.begin(), p->tags.end());
        for (std::size_t i = 0; i < p->size(); ++i) out.groups.push_back(p->groups.empty() ? -1 : p->groups[i]);
        const auto& l = LatentDomains::of(*p);
        any_latent = any_latent || !l.empty();
        for (std::size_t i = 0; i < p->size(); ++i) latent.push_back(l.empty() ? -1 : l[i]);
    }
    out.features = Tensor(shape, std::move(values));
    if (any_latent) LatentDomains::assign(out, std::move(latent));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic multi-domain generator
// ---------------------------------------------------------------------------

/// Feature-space transform of one domain: x = scale * R(theta) z + translation + noise, then a channel
/// permutation. R rotates every consecutive pair of coordinates by theta. Vectors of length 1 broadcast.
struct FeatureTransform {
    double rotation_deg = 0.0;
    std::vector<double> translation;
    std::vector<double> scale;
    double noise_sigma = 0.0;
    std::vector<int> permutation;
};

struct SynthConfig {
    int n_latent_domains = 2;
    int classes = 4;
    std::size_t feature_dim = 8;
    std::size_t samples_per_domain = 400;
    std::size_t target_samples = 400;
    std::size_t target_test_samples = 400;
    std::vector<FeatureTransform> source_transforms;  // one per latent domain; identity when missing
    FeatureTransform target_transform;
    double class_separation = 3.0;
    double within_class_sigma = 1.0;
    std::uint64_t seed = 1;
    // Patch mode emits [c, h, w] samples with c = feature_dim / (h * w).
    bool patch_mode = false;
    std::size_t patch_h = 2;
    std::size_t patch_w = 2;

    void validate() const {
        if (n_latent_domains < 1) throw std::invalid_argument("SynthConfig: n_latent_domains must be >= 1");
        if (classes < 2) throw std::invalid_argument("SynthConfig: classes must be >= 2");
        if (feature_dim == 0) throw std::invalid_argument("SynthConfig: feature_dim must be >= 1");
        if (samples_per_domain == 0 || target_samples == 0 || target_test_samples == 0) {
            throw std::invalid_argument("SynthConfig: sample counts must be >= 1");
        }
        if (source_transforms.size() > static_cast<std::size_t>(n_latent_domains)) {
            throw std::invalid_argument("SynthConfig: more transforms than latent domains");
        }
        if (patch_mode && (patch_h * patch_w == 0 || feature_dim % (patch_h * patch_w) != 0)) {
            throw std::invalid_argument("SynthConfig: feature_dim must be a multiple of patch_h * patch_w");
        }
        auto check = [&](const FeatureTransform& t) {
            auto ok = [&](std::size_t n) { return n == 0 || n == 1 || n == feature_dim; };
            if (!ok(t.translation.size()) || !ok(t.scale.size())) {
                throw std::invalid_argument("SynthConfig: transform vector length must be 0, 1 or feature_dim");
            }
            if (!t.permutation.empty()) {
                std::vector<int> p = t.permutation;
                std::sort(p.begin(), p.end());
                for (std::size_t i = 0; i < p.size(); ++i) {
                    if (p[i] != static_cast<int>(i) || p.size() != feature_dim) {
                        throw std::invalid_argument("SynthConfig: permutation is not a permutation of channels");
                    }
                }
            }
        };
        for (const auto& t : source_transforms) check(t);
        check(target_transform);
    }
};

struct SynthData {
    Dataset source;       // all UnknownSource, latent domains recorded
    Dataset target;       // unlabelled for training (labels kept for transductive evaluation only)
    Dataset target_test;  // labelled evaluation split
    Tensor prototypes;    // [classes, feature_dim]
};

inline std::vector<double> apply_feature_transform(const FeatureTransform& t, std::span<const double> z,
                                                   std::mt19937_64& gen) {
    const std::size_t n = z.size();
    std::vector<double> x(z.begin(), z.end());
    if (t.rotation_deg != 0.0) {
        const double th = t.rotation_deg * std::numbers::pi / 180.0;
        const double c = std::cos(th), s = std::sin(th);
        for (std::size_t j = 0; j + 1 < n; j += 2) {
            const double a = x[j], b = x[j + 1];
            x[j] = c * a - s * b;
            x[j + 1] = s * a + c * b;
        }
    }
    auto pick = [](const std::vector<double>& v, std::size_t j, double dflt) {
        if (v.empty()) return dflt;
        return v.size() == 1 ? v[0] : v[j];
    };
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t j = 0; j < n; ++j) {
        x[j] = pick(t.scale, j, 1.0) * x[j] + pick(t.translation, j, 0.0);
        if (t.noise_sigma > 0.0) x[j] += t.noise_sigma * noise(gen);
    }
    if (!t.permutation.empty()) {
        std::vector<double> y(n);
        for (std::size_t j = 0; j < n; ++j) y[j] = x[static_cast<std::size_t>(t.permutation[j])];
        x = std::move(y);
    }
    return x;
}

/// Class-conditional Gaussian prototypes shared by all domains; every domain applies its own transform.
inline SynthData synth_make(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t dim = cfg.feature_dim;
    const std::size_t classes = static_cast<std::size_t>(cfg.classes);
    std::mt19937_64 gen(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> pick_class(0, cfg.classes - 1);

    SynthData out;
    out.prototypes = Tensor({classes, dim});
    for (double& v : out.prototypes.values()) v = cfg.class_separation * normal(gen);

    Tensor::Shape sample_shape = cfg.patch_mode ? Tensor::Shape{dim / (cfg.patch_h * cfg.patch_w), cfg.patch_h, cfg.patch_w}
                                                : Tensor::Shape{dim};

    auto generate = [&](std::size_t count, const FeatureTransform& t, int latent, DomainTag tag, Dataset& ds,
                        std::vector<double>& values, std::vector<int>& latent_col) {
        for (std::size_t n = 0; n < count; ++n) {
            const int y = pick_class(gen);
            std::vector<double> z(dim);
            for (std::size_t j = 0; j < dim; ++j) z[j] = out.prototypes.at(y, j) + cfg.within_class_sigma * normal(gen);
            auto x = apply_feature_transform(t, z, gen);
            values.insert(values.end(), x.begin(), x.end());
            ds.labels.push_back(y);
            ds.tags.push_back(tag);
            ds.groups.push_back(latent);
            latent_col.push_back(latent);
        }
    };
    auto finish = [&](Dataset& ds, std::vector<double>& values, std::vector<int>& latent_col) {
        Tensor::Shape shape = sample_shape;
        shape.insert(shape.begin(), ds.size());
        ds.features = Tensor(shape, std::move(values));
        LatentDomains::assign(ds, std::move(latent_col));
    };

    {
        std::vector<double> values;
        std::vector<int> latent;
        for (int d = 0; d < cfg.n_latent_domains; ++d) {
            const FeatureTransform t = static_cast<std::size_t>(d) < cfg.source_transforms.size()
                                           ? cfg.source_transforms[d]
                                           : FeatureTransform{};
            generate(cfg.samples_per_domain, t, d, DomainTag::unknown(), out.source, values, latent);
        }
        finish(out.source, values, latent);
    }
    {
        std::vector<double> values;
        std::vector<int> latent;
        generate(cfg.target_samples, cfg.target_transform, -1, DomainTag::target(), out.target, values, latent);
        finish(out.target, values, latent);
    }
    {
        std::vector<double> values;
        std::vector<int> latent;
        generate(cfg.target_test_samples, cfg.target_transform, -1, DomainTag::target(), out.target_test, values,
                 latent);
        finish(out.target_test, values, latent);
    }
    return out;
}

/// Marks a seeded random `fraction` of source samples as KnownSource with their true latent domain.
inline Dataset reveal_domain_labels(const Dataset& source, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("reveal_domain_labels: fraction outside [0,1]");
    const auto& latent = LatentDomains::of(source);
    if (latent.size() != source.size()) throw std::invalid_argument("reveal_domain_labels: no ground truth");
    Dataset out = source;
    std::vector<std::size_t> order(source.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 gen(seed);
    std::shuffle(order.begin(), order.end(), gen);
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(source.size())));
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = order[j];
        if (latent[i] >= 0) out.tags[i] = DomainTag::known(latent[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Image pseudo-domain transforms
// ---------------------------------------------------------------------------

struct ImageTransform {
    enum class Kind { Invert, Noise, Rotate90, AffineIntensity };
    Kind kind = Kind::Invert;
    double sigma = 0.0;          // Noise
    int quarter_turns = 1;       // Rotate90, counter-clockwise
    double gain = 1.0;           // AffineIntensity: gain * x + offset
    double offset = 0.0;
    std::uint64_t seed = 0;      // Noise
};

/// Applies a per-sample transform to images shaped [n, c, h, w]. Noise is seeded per (seed, sample).
inline Tensor domain_transform(const Tensor& x, const ImageTransform& t) {
    if (x.rank() != 4) throw std::invalid_argument("domain_transform: expects [n, c, h, w]");
    const std::size_t n = x.dim(0), c = x.dim(1);
    switch (t.kind) {
        case ImageTransform::Kind::Invert: {
            Tensor y = x;
            for (double& v : y.values()) v = 1.0 - v;
            return y;
        }
        case ImageTransform::Kind::AffineIntensity: {
            Tensor y = x;
            for (double& v : y.values()) v = t.gain * v + t.offset;
            return y;
        }
        case ImageTransform::Kind::Noise: {
            Tensor y = x;
            if (t.sigma == 0.0) return y;
            for (std::size_t i = 0; i < n; ++i) {
                std::mt19937_64 gen(t.seed * 0x9E3779B97F4A7C15ULL + i);
                std::normal_distribution<double> noise(0.0, t.sigma);
                for (double& v : y.row(i)) v += noise(gen);
            }
            return y;
        }
        case ImageTransform::Kind::Rotate90: {
            const int turns = ((t.quarter_turns % 4) + 4) % 4;
            Tensor cur = x;
            for (int r = 0; r < turns; ++r) {
                const std::size_t H = cur.dim(2), W = cur.dim(3);
                Tensor next({n, c, W, H});
                for (std::size_t i = 0; i < n * c; ++i) {
                    const double* src = cur.data() + i * H * W;
                    double* dst = next.data() + i * H * W;
                    // counter-clockwise: dst[W-1-col][row] = src[row][col]
                    for (std::size_t row = 0; row < H; ++row) {
                        for (std::size_t col = 0; col < W; ++col) dst[(W - 1 - col) * H + row] = src[row * W + col];
                    }
                }
                cur = std::move(next);
            }
            return cur;
        }
    }
    return x;
}

// ---------------------------------------------------------------------------
// Batch sampler
// ---------------------------------------------------------------------------

struct BatchSpec {
    std::size_t source_quota = 64;
    std::size_t target_quota = 64;
    std::uint64_t seed = 0;
    bool with_replacement = false;
    bool per_group = false;  // draw source_quota from every provenance group instead of the pooled set
};

/// Epoch-wise shuffling sampler over a source and a target set. Reads tags, labels and provenance groups;
/// never ground-truth latent domains.
class BatchSampler {
public:
    BatchSampler(const Dataset& source, const Dataset& target, BatchSpec spec)
        : source_(&source), target_(&target), spec_(spec), gen_(spec.seed) {
        if (spec_.source_quota == 0 && spec_.target_quota == 0) throw std::invalid_argument("BatchSampler: empty quotas");
        if (spec_.per_group) {
            std::vector<int> ids;
            for (int g : source.groups) {
                if (std::find(ids.begin(), ids.end(), g) == ids.end()) ids.push_back(g);
            }
            std::sort(ids.begin(), ids.end());
            for (int g : ids) {
                Stream s;
                for (std::size_t i = 0; i < source.size(); ++i) {
                    if (source.groups[i] == g) s.pool.push_back(i);
                }
                source_streams_.push_back(std::move(s));
            }
        } else {
            Stream s;
            for (std::size_t i = 0; i < source.size(); ++i) s.pool.push_back(i);
            source_streams_.push_back(std::move(s));
        }
        target_stream_.pool.resize(target.size());
        for (std::size_t i = 0; i < target.size(); ++i) target_stream_.pool[i] = i;

        for (const auto& s : source_streams_) require(s.pool.size(), spec_.source_quota, "source");
        require(target_stream_.pool.size(), spec_.target_quota, "target");
    }

    Batch next() {
        std::vector<std::size_t> src, tgt;
        for (auto& s : source_streams_) draw(s, spec_.source_quota, src);
        draw(target_stream_, spec_.target_quota, tgt);

        Batch b;
        const Tensor::Shape sample_shape = source_->empty() ? target_->sample_shape() : source_->sample_shape();
        Tensor::Shape shape = sample_shape;
        shape.insert(shape.begin(), src.size() + tgt.size());
        std::vector<double> values;
        values.reserve((src.size() + tgt.size()) * (source_->empty() ? target_->features.row_size()
                                                                     : source_->features.row_size()));
        for (std::size_t i : src) {
            auto r = source_->features.row(i);
            values.insert(values.end(), r.begin(), r.end());
            b.class_labels.push_back(source_->labels[i]);
            b.tags.push_back(source_->tags[i]);
        }
        for (std::size_t i : tgt) {
            auto r = target_->features.row(i);
            values.insert(values.end(), r.begin(), r.end());
            b.class_labels.push_back(-1);
            b.tags.push_back(DomainTag::target());
        }
        b.features = Tensor(shape, std::move(values));
        return b;
    }

private:
    struct Stream {
        std::vector<std::size_t> pool;
        std::vector<std::size_t> order;
        std::size_t cursor = 0;
    };

    void require(std::size_t available, std::size_t quota, const char* what) const {
        if (quota > 0 && available == 0) {
            throw std::invalid_argument(std::string("BatchSampler: empty ") + what + " set with nonzero quota");
        }
        if (!spec_.with_replacement && quota > available) {
            throw std::invalid_argument(std::string("BatchSampler: ") + what + " quota " + std::to_string(quota) +
                                        " exceeds " + std::to_string(available) + " samples without replacement");
        }
    }

    void draw(Stream& s, std::size_t quota, std::vector<std::size_t>& out) {
        if (quota == 0) return;
        if (spec_.with_replacement) {
            std::uniform_int_distribution<std::size_t> pick(0, s.pool.size() - 1);
            for (std::size_t j = 0; j < quota; ++j) out.push_back(s.pool[pick(gen_)]);
            return;
        }
        if (s.order.empty() || s.cursor + quota > s.order.size()) {
            s.order = s.pool;
            std::shuffle(s.order.begin(), s.order.end(), gen_);
            s.cursor = 0;
        }
        out.insert(out.end(), s.order.begin() + static_cast<std::ptrdiff_t>(s.cursor),
                   s.order.begin() + static_cast<std::ptrdiff_t>(s.cursor + quota));
        s.cursor += quota;
    }

    const Dataset* source_;
    const Dataset* target_;
    BatchSpec spec_;
    std::mt19937_64 gen_;
    std::vector<Stream> source_streams_;
    Stream target_stream_;
};

inline Batch sample_batch(BatchSampler& sampler) { return sampler.next(); }

/// Whole dataset as one batch, e.g. for evaluation.
inline Batch as_batch(const Dataset& d) {
    Batch b;
    b.features = d.features;
    b.class_labels = d.labels;
    b.tags = d.tags;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b.tags[i].is_target()) b.class_labels[i] = -1;
    }
    LatentDomains::assign(b, LatentDomains::of(d));
    return b;
}

}  // namespace mda
