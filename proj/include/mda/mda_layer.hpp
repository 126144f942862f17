#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/assignment.hpp"
#include "mda/tensor.hpp"

namespace mda {

/// Raised when a domain carries assignment weight but has neither batch nor running statistics.
class UninitializedDomainError : public std::runtime_error {
public:
    explicit UninitializedDomainError(std::size_t domain)
        : std::runtime_error("uninitialized domain statistics for domain " + std::to_string(domain)),
          domain_(domain) {}
    std::size_t domain() const { return domain_; }

private:
    std::size_t domain_;
};

struct MdaConfig {
    double epsilon = 1e-5;
    bool affine = true;
    double running_momentum = 0.1;
    double zero_mass_threshold = 1e-6;

    void validate() const {
        if (!(epsilon >= 0.0)) throw std::invalid_argument("MdaConfig: epsilon must be >= 0");
        if (!(running_momentum > 0.0 && running_momentum <= 1.0)) {
            throw std::invalid_argument("MdaConfig: running_momentum must be in (0, 1]");
        }
        if (!(zero_mass_threshold >= 0.0)) throw std::invalid_argument("MdaConfig: zero_mass_threshold < 0");
    }
};

/// Column-normalized assignment weights: alpha[i, d] = w[i, d] / sum_j w[j, d].
struct AlphaMatrix {
    Tensor alpha;                // [b, D]
    std::vector<double> mass;    // sum_j w[j, d]
    std::vector<bool> zero_mass; // mass <= threshold; alpha column left at zero
};

inline AlphaMatrix compute_alpha(const Tensor& w, double zero_mass_threshold = 1e-6) {
    if (w.rank() != 2) throw std::invalid_argument("compute_alpha: expects [b, D] weights");
    const std::size_t b = w.rows(), D = w.row_size();
    for (double v : w.values()) {
        if (v < 0.0) throw std::invalid_argument("compute_alpha: negative assignment weight");
    }
    AlphaMatrix a{Tensor(w.shape()), std::vector<double>(D, 0.0), std::vector<bool>(D, false)};
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t d = 0; d < D; ++d) a.mass[d] += w.at(i, d);
    }
    for (std::size_t d = 0; d < D; ++d) {
        if (a.mass[d] <= zero_mass_threshold) {
            a.zero_mass[d] = true;
            continue;
        }
        for (std::size_t i = 0; i < b; ++i) a.alpha.at(i, d) = w.at(i, d) / a.mass[d];
    }
    return a;
}

/// Per-domain, per-channel weighted mean and biased variance.
struct DomainStats {
    Tensor mean;                      // [D, C]
    Tensor var;                       // [D, C]
    std::vector<double> total_weight; // [D]
    std::vector<bool> valid;          // false for zero-mass domains

    std::size_t domains() const { return mean.rows(); }
    std::size_t channels() const { return mean.row_size(); }
};

namespace detail {

struct ActivationLayout {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t positions = 1;  // h * w, 1 for rank-2

    std::size_t index(std::size_t i, std::size_t c, std::size_t p) const {
        return (i * channels + c) * positions + p;
    }
};

inline ActivationLayout layout_of(const Tensor& x) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    throw std::invalid_argument("mDA-layer: activations must be [b, c] or [b, c, h, w], got " +
                                Tensor::describe(x.shape()));
}

}  // namespace detail

/// Each sample's alpha is spread uniformly over its spatial positions.
inline DomainStats weighted_moments(const Tensor& x, const AlphaMatrix& a) {
    const auto L = detail::layout_of(x);
    if (a.alpha.rows() != L.batch) {
        throw std::invalid_argument("weighted_moments: " + std::to_string(a.alpha.rows()) +
                                    " assignment rows for a batch of " + std::to_string(L.batch));
    }
    const std::size_t D = a.alpha.row_size();
    const double inv_p = 1.0 / static_cast<double>(L.positions);
    DomainStats s{Tensor({D, L.channels}), Tensor({D, L.channels}), a.mass, std::vector<bool>(D, false)};
    for (std::size_t d = 0; d < D; ++d) {
        if (a.zero_mass[d]) continue;
        s.valid[d] = true;
        for (std::size_t c = 0; c < L.channels; ++c) {
            double mu = 0.0;
            for (std::size_t i = 0; i < L.batch; ++i) {
                const double wi = a.alpha.at(i, d) * inv_p;
                if (wi == 0.0) continue;
                for (std::size_t p = 0; p < L.positions; ++p) mu += wi * x[L.index(i, c, p)];
            }
            double var = 0.0;
            for (std::size_t i = 0; i < L.batch; ++i) {
                const double wi = a.alpha.at(i, d) * inv_p;
                if (wi == 0.0) continue;
                for (std::size_t p = 0; p < L.positions; ++p) {
                    const double dx = x[L.index(i, c, p)] - mu;
                    var += wi * dx * dx;
                }
            }
            s.mean.at(d, c) = mu;
            s.var.at(d, c) = var;
        }
    }
    return s;
}

/// Exponential running averages per domain for inference. A domain is uninitialized until its first update,
/// which copies the batch statistics.
struct RunningStats {
    Tensor mean;                       // [D, C]
    Tensor var;                        // [D, C]
    std::vector<std::size_t> updates;  // [D]

    RunningStats() = default;
    RunningStats(std::size_t domains, std::size_t channels)
        : mean({domains, channels}), var({domains, channels}, 1.0), updates(domains, 0) {}

    bool initialized(std::size_t d) const { return updates.at(d) > 0; }

    void update(const DomainStats& batch, double momentum) {
        for (std::size_t d = 0; d < updates.size(); ++d) {
            if (!batch.valid[d]) continue;
            const double keep = updates[d] == 0 ? 0.0 : 1.0 - momentum;
            const double take = updates[d] == 0 ? 1.0 : momentum;
            for (std::size_t c = 0; c < mean.row_size(); ++c) {
                mean.at(d, c) = keep * mean.at(d, c) + take * batch.mean.at(d, c);
                var.at(d, c) = keep * var.at(d, c) + take * batch.var.at(d, c);
            }
            ++updates[d];
        }
    }

    /// Overwrites every valid domain with the given statistics.
    void assign(const DomainStats& batch) {
        for (std::size_t d = 0; d < updates.size(); ++d) {
            if (!batch.valid[d]) continue;
            for (std::size_t c = 0; c < mean.row_size(); ++c) {
                mean.at(d, c) = batch.mean.at(d, c);
                var.at(d, c) = batch.var.at(d, c);
            }
            updates[d] = std::max<std::size_t>(updates[d], 1);
        }
    }
};

struct MdaGradients {
    Tensor grad_x;      // shape of x
    Tensor grad_w;      // [b, D], zero on fixed rows
    Tensor grad_gamma;  // [C]
    Tensor grad_beta;   // [C]
};

/// Multi-domain alignment layer:
///   y_i = gamma * sum_d w[i,d] (x_i - mu_d) / sqrt(var_d + eps) + beta
/// with (mu_d, var_d) the alpha-weighted moments of the batch. Gradients flow through the statistics
/// to both x and w.
class MdaLayer {
public:
    struct Cache {
        Tensor x;
        Tensor w;
        std::vector<bool> fixed;
        AlphaMatrix alpha;
        Tensor mean;     // [D, C], statistics actually used
        Tensor inv_std;  // [D, C]
        std::vector<bool> active;      // domain contributes to y
        std::vector<bool> from_batch;  // statistics carry gradient
        Tensor normalized;             // pre-affine output
        Tensor gamma;
        DomainStats batch_stats;
    };

    ParamBlock gamma;
    ParamBlock beta;
    RunningStats running;

    MdaLayer() = default;
    MdaLayer(std::size_t channels, std::size_t domains, MdaConfig config = {})
        : gamma(Tensor({channels}, 1.0)), beta(Tensor({channels})), running(domains, channels), config_(config) {
        config_.validate();
    }

    const MdaConfig& config() const { return config_; }
    std::size_t channels() const { return gamma.value.size(); }
    std::size_t domains() const { return running.updates.size(); }

    /// Training-mode forward. Updates running statistics unless `update_running` is false.
    Tensor forward(const Tensor& x, const AssignmentMatrix& w, Cache& cache, bool update_running = true) {
        check_inputs(x, w.probs);
        const auto L = detail::layout_of(x);
        const std::size_t D = domains();

        cache.x = x;
        cache.w = w.probs;
        cache.fixed = w.fixed;
        cache.gamma = gamma.value;
        cache.alpha = compute_alpha(w.probs, config_.zero_mass_threshold);
        cache.batch_stats = weighted_moments(x, cache.alpha);
        cache.mean = Tensor({D, L.channels});
        cache.inv_std = Tensor({D, L.channels});
        cache.active.assign(D, false);
        cache.from_batch.assign(D, false);

        for (std::size_t d = 0; d < D; ++d) {
            const Tensor* mean = nullptr;
            const Tensor* var = nullptr;
            if (!cache.alpha.zero_mass[d]) {
                mean = &cache.batch_stats.mean;
                var = &cache.batch_stats.var;
                cache.from_batch[d] = true;
            } else if (column_has_weight(w.probs, d)) {
                if (!running.initialized(d)) throw UninitializedDomainError(d);
                mean = &running.mean;
                var = &running.var;
            } else {
                continue;
            }
            cache.active[d] = true;
            for (std::size_t c = 0; c < L.channels; ++c) {
                cache.mean.at(d, c) = mean->at(d, c);
                cache.inv_std.at(d, c) = 1.0 / std::sqrt(var->at(d, c) + config_.epsilon);
            }
        }

        cache.normalized = mix(x, w.probs, cache.mean, cache.inv_std, cache.active);
        if (update_running) running.update(cache.batch_stats, config_.running_momentum);
        return apply_affine(cache.normalized);
    }

    Tensor forward(const Tensor& x, const AssignmentMatrix& w, bool update_running = true) {
        Cache c;
        return forward(x, w, c, update_running);
    }

    /// Inference with running statistics; no state is touched.
    Tensor infer(const Tensor& x, const AssignmentMatrix& w) const {
        check_inputs(x, w.probs);
        const std::size_t D = domains();
        Tensor inv_std({D, channels()});
        std::vector<bool> active(D, false);
        for (std::size_t d = 0; d < D; ++d) {
            if (!column_has_weight(w.probs, d)) continue;
            if (!running.initialized(d)) throw UninitializedDomainError(d);
            active[d] = true;
            for (std::size_t c = 0; c < channels(); ++c) {
                inv_std.at(d, c) = 1.0 / std::sqrt(running.var.at(d, c) + config_.epsilon);
            }
        }
        return apply_affine(mix(x, w.probs, running.mean, inv_std, active));
    }

    MdaGradients backward(const Cache& cache, const Tensor& grad_y) const {
        Tensor::require_same_shape(cache.x, grad_y, "MdaLayer::backward");
        const auto L = detail::layout_of(cache.x);
        const std::size_t D = cache.w.row_size();
        const double inv_p = 1.0 / static_cast<double>(L.positions);
        const Tensor& x = cache.x;
        const Tensor& w = cache.w;
        const Tensor& alpha = cache.alpha.alpha;

        MdaGradients g{Tensor(x.shape()), Tensor(w.shape()), Tensor({L.channels}), Tensor({L.channels})};

        // Upstream gradient w.r.t. the pre-affine mixture.
        Tensor gz = grad_y;
        for (std::size_t i = 0; i < L.batch; ++i) {
            for (std::size_t c = 0; c < L.channels; ++c) {
                for (std::size_t p = 0; p < L.positions; ++p) {
                    const std::size_t idx = L.index(i, c, p);
                    g.grad_beta[c] += grad_y[idx];
                    g.grad_gamma[c] += grad_y[idx] * cache.normalized[idx];
                    if (config_.affine) gz[idx] *= cache.gamma[c];
                }
            }
        }
        if (!config_.affine) {
            g.grad_gamma.fill(0.0);
            g.grad_beta.fill(0.0);
        }

        Tensor grad_alpha(w.shape());
        for (std::size_t d = 0; d < D; ++d) {
            if (!cache.active[d]) continue;
            for (std::size_t c = 0; c < L.channels; ++c) {
                const double mu = cache.mean.at(d, c);
                const double inv = cache.inv_std.at(d, c);
                double sum_g = 0.0, sum_gxc = 0.0;
                for (std::size_t i = 0; i < L.batch; ++i) {
                    const double wi = w.at(i, d);
                    double direct = 0.0;
                    for (std::size_t p = 0; p < L.positions; ++p) {
                        const std::size_t idx = L.index(i, c, p);
                        const double xc = x[idx] - mu;
                        direct += gz[idx] * xc;
                        const double G = gz[idx] * wi;
                        g.grad_x[idx] += G * inv;
                        sum_g += G;
                        sum_gxc += G * xc;
                    }
                    g.grad_w.at(i, d) += direct * inv;
                }
                if (!cache.from_batch[d]) continue;
                const double d_mean = -inv * sum_g;
                const double d_var = -0.5 * inv * inv * inv * sum_gxc;
                for (std::size_t i = 0; i < L.batch; ++i) {
                    const double ai = alpha.at(i, d) * inv_p;
                    double da = 0.0;
                    for (std::size_t p = 0; p < L.positions; ++p) {
                        const std::size_t idx = L.index(i, c, p);
                        const double xc = x[idx] - mu;
                        g.grad_x[idx] += ai * (2.0 * d_var * xc + d_mean);
                        da += d_mean * x[idx] + d_var * xc * xc;
                    }
                    grad_alpha.at(i, d) += da * inv_p;
                }
            }
        }

        // alpha[i,d] = w[i,d] / s_d  =>  dL/dw[j,d] = (dL/dalpha[j,d] - sum_i alpha[i,d] dL/dalpha[i,d]) / s_d
        for (std::size_t d = 0; d < D; ++d) {
            if (!cache.from_batch[d]) continue;
            double avg = 0.0;
            for (std::size_t i = 0; i < L.batch; ++i) avg += alpha.at(i, d) * grad_alpha.at(i, d);
            const double inv_mass = 1.0 / cache.alpha.mass[d];
            for (std::size_t i = 0; i < L.batch; ++i) g.grad_w.at(i, d) += (grad_alpha.at(i, d) - avg) * inv_mass;
        }

        for (std::size_t i = 0; i < L.batch; ++i) {
            if (!cache.fixed.empty() && cache.fixed[i]) {
                for (double& v : g.grad_w.row(i)) v = 0.0;
            }
        }
        return g;
    }

private:
    void check_inputs(const Tensor& x, const Tensor& w) const {
        const auto L = detail::layout_of(x);
        if (L.channels != channels()) {
            throw std::invalid_argument("MdaLayer: expected " + std::to_string(channels()) + " channels, got " +
                                        std::to_string(L.channels));
        }
        if (w.rank() != 2 || w.rows() != L.batch || w.row_size() != domains()) {
            throw std::invalid_argument("MdaLayer: assignment " + Tensor::describe(w.shape()) +
                                        " does not match batch " + std::to_string(L.batch) + " x " +
                                        std::to_string(domains()) + " domains");
        }
    }

    static bool column_has_weight(const Tensor& w, std::size_t d) {
        for (std::size_t i = 0; i < w.rows(); ++i) {
            if (w.at(i, d) != 0.0) return true;
        }
        return false;
    }

    static Tensor mix(const Tensor& x, const Tensor& w, const Tensor& mean, const Tensor& inv_std,
                      const std::vector<bool>& active) {
        const auto L = detail::layout_of(x);
        Tensor z(x.shape());
        for (std::size_t i = 0; i < L.batch; ++i) {
            for (std::size_t d = 0; d < active.size(); ++d) {
                const double wi = w.at(i, d);
                if (!active[d] || wi == 0.0) continue;
                for (std::size_t c = 0; c < L.channels; ++c) {
                    const double mu = mean.at(d, c), inv = inv_std.at(d, c);
                    for (std::size_t p = 0; p < L.positions; ++p) {
                        const std::size_t idx = L.index(i, c, p);
                        z[idx] += wi * (x[idx] - mu) * inv;
                    }
                }
            }
        }
        return z;
    }

    Tensor apply_affine(Tensor z) const {
        if (!config_.affine) return z;
        const auto L = detail::layout_of(z);
        for (std::size_t i = 0; i < L.batch; ++i) {
            for (std::size_t c = 0; c < L.channels; ++c) {
                for (std::size_t p = 0; p < L.positions; ++p) {
                    double& v = z[L.index(i, c, p)];
                    v = gamma.value[c] * v + beta.value[c];
                }
            }
        }
        return z;
    }

    MdaConfig config_;
};

}  // namespace mda
