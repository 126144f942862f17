#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/assignment.hpp"
#include "mda/data.hpp"
#include "mda/mda_layer.hpp"
#include "mda/network.hpp"
#include "mda/objective.hpp"

namespace mda {

/// Perturbation applied to analytic gradients before comparison. Exists so the checker can be shown to fail.
enum class GradFault { None, MdaGradX, MdaGradW, Branch };

struct GradcheckConfig {
    std::size_t configurations = 24;
    double step = 1e-6;
    double layer_tolerance = 1e-5;
    double model_tolerance = 1e-4;
    std::uint64_t seed = 1;
    GradFault fault = GradFault::None;

    void validate() const {
        if (configurations < 1) throw std::invalid_argument("gradcheck.configurations must be >= 1");
        if (!(step > 0.0)) throw std::invalid_argument("gradcheck.step must be > 0");
        if (!(layer_tolerance > 0.0) || !(model_tolerance > 0.0)) {
            throw std::invalid_argument("gradcheck tolerances must be > 0");
        }
    }
};

/// ||a - n|| / max(||a|| + ||n||, floor). The floor keeps gradients that are exactly zero in theory (a bias
/// feeding a normalization layer) from turning rounding noise into a relative error of 1.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                             double floor = 1e-8) {
    if (analytic.size() != numeric.size()) throw std::invalid_argument("relative_error: size mismatch");
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

/// Central differences of f with respect to every entry of `v`, restoring v afterwards.
inline std::vector<double> numeric_gradient(std::vector<double>& v, const std::function<double()>& f, double h,
                                            const std::vector<bool>* skip = nullptr) {
    std::vector<double> g(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (skip && (*skip)[i]) continue;
        const double keep = v[i];
        v[i] = keep + h;
        const double up = f();
        v[i] = keep - h;
        const double down = f();
        v[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

struct GroupResult {
    std::string group;
    double max_error = 0.0;
    double tolerance = 0.0;
    std::size_t checks = 0;
    bool passed() const { return max_error <= tolerance; }
};

struct GradcheckReport {
    std::vector<GroupResult> groups;
    std::size_t layer_configurations = 0;

    bool passed() const {
        return std::all_of(groups.begin(), groups.end(), [](const GroupResult& g) { return g.passed(); });
    }
    const GroupResult& find(const std::string& name) const {
        for (const auto& g : groups) {
            if (g.group == name) return g;
        }
        throw std::out_of_range("GradcheckReport: no group " + name);
    }
};

/// Shape of one random mDA-layer case.
struct LayerCase {
    std::size_t batch = 4;
    std::size_t k = 1;
    std::size_t channels = 1;
    std::size_t rank = 2;
    bool mixed = false;  // some rows fixed one-hot, the rest soft
    std::uint64_t seed = 1;
};

/// Cycles b in {4,8}, k in {1,2,3}, c in {1,3}, rank in {2,4} and soft/mixed assignments.
inline std::vector<LayerCase> layer_cases(std::size_t n, std::uint64_t seed) {
    std::vector<LayerCase> out;
    for (std::size_t i = 0; i < n; ++i) {
        LayerCase c;
        c.batch = (i % 2) ? 8 : 4;
        c.k = 1 + (i / 2) % 3;
        c.channels = ((i / 6) % 2) ? 3 : 1;
        c.rank = ((i / 12) % 2) ? 4 : 2;
        c.mixed = (i % 5) % 2 == 1;
        c.seed = seed * 1000 + i;
        out.push_back(c);
    }
    return out;
}

/// Random assignment over k+1 domains. Soft rows draw strictly positive weights; in mixed mode every
/// third row is fixed one-hot, and the last row always sits in the target column.
inline AssignmentMatrix random_assignment(std::size_t b, std::size_t k, bool mixed, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    AssignmentMatrix w{Tensor({b, k + 1}), std::vector<bool>(b, false)};
    for (std::size_t i = 0; i < b; ++i) {
        if (mixed && (i % 3 == 0 || i + 1 == b)) {
            const std::size_t hot = i + 1 == b ? k : (i / 3) % (k + 1);
            w.probs.at(i, hot) = 1.0;
            w.fixed[i] = true;
            continue;
        }
        double s = 0.0;
        for (std::size_t d = 0; d <= k; ++d) s += (w.probs.at(i, d) = u(rng));
        for (std::size_t d = 0; d <= k; ++d) w.probs.at(i, d) /= s;
    }
    return w;
}

struct LayerCheck {
    double grad_x = 0.0;
    double grad_w = 0.0;
    double grad_gamma = 0.0;
    double grad_beta = 0.0;
};

/// Compares MdaLayer::backward with finite differences of L = sum(R * y) for a random R.
inline LayerCheck check_mda_layer(const LayerCase& c, double h, GradFault fault = GradFault::None) {
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Tensor::Shape shape = c.rank == 2 ? Tensor::Shape{c.batch, c.channels} : Tensor::Shape{c.batch, c.channels, 2, 3};
    Tensor x(shape);
    for (auto& v : x.values()) v = n01(rng);
    AssignmentMatrix w = random_assignment(c.batch, c.k, c.mixed, rng);
    MdaLayer layer(c.channels, c.k + 1);
    for (auto& v : layer.gamma.value.values()) v = 1.0 + 0.5 * n01(rng);
    for (auto& v : layer.beta.value.values()) v = 0.5 * n01(rng);
    Tensor r(shape);
    for (auto& v : r.values()) v = n01(rng);

    auto loss = [&]() {
        const Tensor y = layer.forward(x, w, false);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
        return s;
    };

    MdaLayer::Cache cache;
    layer.forward(x, w, cache, false);
    MdaGradients g = layer.backward(cache, r);
    if (fault == GradFault::MdaGradX) g.grad_x[0] *= 1.01;
    if (fault == GradFault::MdaGradW) {
        for (std::size_t i = 0; i < c.batch; ++i) {
            if (!w.fixed[i]) {
                g.grad_w.at(i, 0) += 1e-3;
                break;
            }
        }
    }

    LayerCheck out;
    std::vector<double> xv(x.values().begin(), x.values().end());
    auto sync_x = [&] { std::copy(xv.begin(), xv.end(), x.values().begin()); };
    out.grad_x = relative_error(g.grad_x.values(), numeric_gradient(xv, [&] { sync_x(); return loss(); }, h));
    sync_x();

    // Fixed rows have their assignment gradient masked; compare free entries only.
    std::vector<bool> skip(w.probs.size(), false);
    for (std::size_t i = 0; i < c.batch; ++i) {
        for (std::size_t d = 0; d <= c.k; ++d) skip[i * (c.k + 1) + d] = w.fixed[i];
    }
    std::vector<double> wv(w.probs.values().begin(), w.probs.values().end());
    auto sync_w = [&] { std::copy(wv.begin(), wv.end(), w.probs.values().begin()); };
    out.grad_w = relative_error(g.grad_w.values(), numeric_gradient(wv, [&] { sync_w(); return loss(); }, h, &skip));
    sync_w();

    auto check_param = [&](ParamBlock& p, const Tensor& analytic) {
        std::vector<double> pv(p.value.values().begin(), p.value.values().end());
        auto sync = [&] { std::copy(pv.begin(), pv.end(), p.value.values().begin()); };
        const double e = relative_error(analytic.values(), numeric_gradient(pv, [&] { sync(); return loss(); }, h));
        sync();
        return e;
    };
    out.grad_gamma = check_param(layer.gamma, g.grad_gamma);
    out.grad_beta = check_param(layer.beta, g.grad_beta);
    return out;
}

/// Small model and batch exercising known, unknown and target rows.
struct ModelCase {
    ModelConfig model;
    Batch batch;
    LossWeights weights;
};

inline ModelCase default_model_case(std::uint64_t seed) {
    ModelCase mc;
    mc.model.input_dim = 5;
    mc.model.trunk_widths = {6, 5};
    mc.model.classifier_widths = {4};
    mc.model.num_classes = 3;
    mc.model.k = 2;
    mc.model.branch_hidden = 4;
    mc.model.seed = seed;
    mc.weights = LossWeights{0.5, 0.2, 0.2};

    std::mt19937_64 rng(seed * 31 + 7);
    std::normal_distribution<double> n01(0.0, 1.0);
    const std::size_t b = 10;
    mc.batch.features = Tensor({b, mc.model.input_dim});
    for (auto& v : mc.batch.features.values()) v = n01(rng);
    for (std::size_t i = 0; i < b; ++i) {
        if (i < 2) {
            mc.batch.tags.push_back(DomainTag::known(static_cast<int>(i % 2)));
        } else if (i < 6) {
            mc.batch.tags.push_back(DomainTag::unknown());
        } else {
            mc.batch.tags.push_back(DomainTag::target());
        }
        mc.batch.class_labels.push_back(i < 6 ? static_cast<int>(i % 3) : -1);
    }
    return mc;
}

/// Loss of the training-mode forward pass without touching running statistics.
inline double model_loss(Model& m, const ModelCase& mc, const AssignmentMatrix* w = nullptr) {
    ForwardRecord r = m.forward_train(mc.batch, false, w);
    return total_loss(compute_loss_parts(r, mc.batch, mc.weights), mc.weights).total;
}

/// End-to-end check per parameter group plus the shared assignment matrix.
inline std::map<std::string, double> check_model(const ModelCase& mc, double h, GradFault fault = GradFault::None) {
    Model m(mc.model);
    m.zero_grad();
    ForwardRecord rec = m.forward_train(mc.batch, false);
    const LossParts parts = compute_loss_parts(rec, mc.batch, mc.weights);
    m.backward_train(rec, total_gradients(parts, mc.weights));

    std::map<std::string, double> err;
    for (auto& p : m.params()) {
        Tensor analytic = p.param->grad;
        if (fault == GradFault::Branch && p.group == "branch") analytic[0] += 1e-2 * (1.0 + std::abs(analytic[0]));
        std::vector<double> pv(p.param->value.values().begin(), p.param->value.values().end());
        auto sync = [&] { std::copy(pv.begin(), pv.end(), p.param->value.values().begin()); };
        const auto numeric = numeric_gradient(pv, [&] { sync(); return model_loss(m, mc); }, h);
        sync();
        err[p.group] = std::max(err[p.group], relative_error(analytic.values(), numeric));
    }

    // Loss as a function of the assignment matrix alone, holding the branch output fixed.
    // Fixed rows and the structurally zero target entry of unknown rows are not free variables.
    AssignmentMatrix w = rec.assignment->view();
    Tensor analytic_w = rec.assignment->grad();
    std::vector<bool> skip(w.probs.size(), false);
    for (std::size_t i = 0; i < w.probs.size(); ++i) {
        skip[i] = w.fixed[i / w.domains()] || w.probs[i] == 0.0;
        if (skip[i]) analytic_w[i] = 0.0;
    }
    std::vector<double> wv(w.probs.values().begin(), w.probs.values().end());
    auto sync_w = [&] { std::copy(wv.begin(), wv.end(), w.probs.values().begin()); };
    err["assignment"] =
        relative_error(analytic_w.values(), numeric_gradient(wv, [&] { sync_w(); return model_loss(m, mc, &w); }, h, &skip));
    return err;
}

inline const std::vector<std::string>& gradcheck_groups() {
    static const std::vector<std::string> g{"mda_layer.grad_x", "mda_layer.grad_w", "mda_layer.grad_gamma",
                                            "mda_layer.grad_beta", "trunk", "classifier", "mda_affine", "branch",
                                            "assignment"};
    return g;
}

/// Full suite: `configurations` random mDA-layer cases, then an end-to-end model case.
inline GradcheckReport run_gradcheck(const GradcheckConfig& cfg, const ModelCase& mc) {
    cfg.validate();
    GradcheckReport rep;
    std::map<std::string, GroupResult> acc;
    for (const auto& name : gradcheck_groups()) {
        const bool layer = name.rfind("mda_layer.", 0) == 0;
        acc[name] = {name, 0.0, layer ? cfg.layer_tolerance : cfg.model_tolerance, 0};
    }
    for (const auto& c : layer_cases(cfg.configurations, cfg.seed)) {
        const LayerCheck lc = check_mda_layer(c, cfg.step, cfg.fault);
        auto add = [&](const char* name, double e) {
            acc[name].max_error = std::max(acc[name].max_error, e);
            ++acc[name].checks;
        };
        add("mda_layer.grad_x", lc.grad_x);
        add("mda_layer.grad_w", lc.grad_w);
        add("mda_layer.grad_gamma", lc.grad_gamma);
        add("mda_layer.grad_beta", lc.grad_beta);
    }
    rep.layer_configurations = cfg.configurations;
    for (const auto& [group, e] : check_model(mc, cfg.step, cfg.fault)) {
        acc[group].max_error = std::max(acc[group].max_error, e);
        ++acc[group].checks;
    }
    for (const auto& name : gradcheck_groups()) rep.groups.push_back(acc[name]);
    return rep;
}

inline GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
    return run_gradcheck(cfg, default_model_case(cfg.seed));
}

}  // namespace mda
