#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/data.hpp"
#include "mda/metrics.hpp"
#include "mda/network.hpp"
#include "mda/objective.hpp"

namespace mda {

enum class LrSchedule { Step, Inverse };

struct TrainConfig {
    std::size_t iterations = 1000;
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    LrSchedule schedule = LrSchedule::Inverse;
    double step_fraction = 0.75;  // Step: multiply by step_factor from this fraction of the run on
    double step_factor = 0.1;
    double inverse_a = 10.0;      // Inverse: base_lr * (1 + a p)^(-b)
    double inverse_b = 0.75;
    LossWeights weights;
    BatchSpec batch;
    std::uint64_t seed = 1;
    std::size_t eval_every = 100;
    bool freeze_trunk = false;

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("train.iterations must be >= 1");
        if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be > 0");
        if (momentum < 0.0) throw std::invalid_argument("train.momentum must be >= 0");
        if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be >= 0");
        if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
        weights.validate();
    }
};

/// buf <- momentum * buf + grad + weight_decay * value;  value <- value - lr * buf
inline void sgd_step(ParamBlock& p, double lr, double momentum, double weight_decay) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        p.momentum[i] = momentum * p.momentum[i] + p.grad[i] + weight_decay * p.value[i];
        p.value[i] -= lr * p.momentum[i];
    }
}

inline double lr_at(const TrainConfig& cfg, std::size_t iteration) {
    const double p = static_cast<double>(iteration) / static_cast<double>(cfg.iterations);
    switch (cfg.schedule) {
        case LrSchedule::Step:
            return p < cfg.step_fraction ? cfg.base_lr : cfg.base_lr * cfg.step_factor;
        case LrSchedule::Inverse:
            return cfg.base_lr * std::pow(1.0 + cfg.inverse_a * p, -cfg.inverse_b);
    }
    return cfg.base_lr;
}

struct MetricsRow {
    std::size_t iteration = 0;
    double total = 0.0;
    double class_ce = 0.0;
    double domain_ce = 0.0;
    double h_c = 0.0;
    double h_d = 0.0;
    double acc = 0.0;
    double nmi = std::numeric_limits<double>::quiet_NaN();
    double purity = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
};

inline constexpr const char* kMetricsHeader = "iteration,total,class_ce,domain_ce,h_C,h_D,acc,nmi,purity,lr";

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << kMetricsHeader << '\n';
    for (const auto& r : rows) {
        os << r.iteration << ',' << format_metric(r.total) << ',' << format_metric(r.class_ce) << ','
           << format_metric(r.domain_ce) << ',' << format_metric(r.h_c) << ',' << format_metric(r.h_d) << ','
           << format_metric(r.acc) << ',' << format_metric(r.nmi) << ',' << format_metric(r.purity) << ','
           << format_metric(r.lr) << '\n';
    }
}

/// Source pool, unlabelled target pool used for training, and labelled target split for evaluation.
struct ExperimentData {
    Dataset source;
    Dataset target;
    Dataset target_test;
};

/// Thrown when the loss stops being finite.
class NumericalAbort : public std::runtime_error {
public:
    NumericalAbort(std::size_t iteration, const LossBreakdown& b)
        : std::runtime_error(describe(iteration, b)), iteration_(iteration), breakdown_(b) {}
    std::size_t iteration() const { return iteration_; }
    const LossBreakdown& breakdown() const { return breakdown_; }

private:
    static std::string describe(std::size_t it, const LossBreakdown& b) {
        std::ostringstream os;
        os << "non-finite loss at iteration " << it << " (total=" << b.total << ", class_ce=" << b.class_ce
           << ", domain_ce=" << b.domain_ce << ", h_C=" << b.h_c << ", h_D=" << b.h_d << ")";
        return os.str();
    }
    std::size_t iteration_;
    LossBreakdown breakdown_;
};

struct Evaluation {
    double accuracy = 0.0;
    double nmi = std::numeric_limits<double>::quiet_NaN();
    double purity = std::numeric_limits<double>::quiet_NaN();
};

/// Target accuracy on the labelled split, and discovery metrics of the branch on the source pool when
/// ground truth exists.
inline Evaluation evaluate(const Model& model, const ExperimentData& data) {
    Evaluation e;
    const Tensor probs = model.forward_eval(data.target_test.features, data.target_test.tags);
    e.accuracy = accuracy(probs, data.target_test.labels);
    const auto& truth = LatentDomains::of(data.source);
    if (!truth.empty() && std::none_of(truth.begin(), truth.end(), [](int d) { return d < 0; })) {
        const auto predicted = argmax_rows(model.predict_domains(data.source.features));
        const DiscoveryMetrics m = domain_discovery_metrics(predicted, truth);
        e.nmi = m.nmi;
        e.purity = m.purity;
    }
    return e;
}

struct TrainResult {
    std::vector<MetricsRow> metrics;
    Evaluation final_eval;
};

/// sample -> forward -> loss -> backward -> SGD, logging a MetricsRow every eval_every iterations and at
/// the end. Fully determined by the model seed and cfg.seed.
inline TrainResult train(Model& model, const ExperimentData& data, const TrainConfig& cfg) {
    cfg.validate();
    BatchSpec spec = cfg.batch;
    spec.seed = cfg.seed * 0x9E3779B97F4A7C15ULL + cfg.batch.seed;
    BatchSampler sampler(data.source, data.target, spec);

    TrainResult result;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const Batch batch = sampler.next();
        model.zero_grad();
        ForwardRecord rec = model.forward_train(batch);
        const LossParts parts = compute_loss_parts(rec, batch, cfg.weights);
        const LossBreakdown loss = total_loss(parts, cfg.weights);
        if (!std::isfinite(loss.total)) throw NumericalAbort(it, loss);
        model.backward_train(rec, total_gradients(parts, cfg.weights));

        const double lr = lr_at(cfg, it);
        for (auto& p : model.params()) {
            if (cfg.freeze_trunk && p.group == "trunk") continue;
            sgd_step(*p.param, lr, cfg.momentum, cfg.weight_decay);
        }

        if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations) {
            const Evaluation e = evaluate(model, data);
            result.metrics.push_back(
                {it + 1, loss.total, loss.class_ce, loss.domain_ce, loss.h_c, loss.h_d, e.accuracy, e.nmi, e.purity, lr});
            result.final_eval = e;
        }
    }
    return result;
}

}  // namespace mda
