#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/ops.hpp"
#include "mda/tensor.hpp"

namespace mda {

/// Weights of the auxiliary terms: domain log-loss, class entropy on target, domain entropy on
/// unlabelled source.
struct LossWeights {
    double domain = 0.5;
    double class_entropy = 0.2;
    double domain_entropy = 0.2;

    void validate() const {
        if (domain < 0.0 || class_entropy < 0.0 || domain_entropy < 0.0) {
            throw std::invalid_argument("LossWeights: weights must be non-negative");
        }
    }
};

/// One loss term over a sub-batch. `grad_logits` covers every row of the probability tensor it was
/// computed from and is zero outside the sub-batch.
struct LossTerm {
    double value = 0.0;
    Tensor grad_logits;
    std::size_t count = 0;
};

namespace detail {

inline LossTerm log_loss(const Tensor& probs, std::span<const std::size_t> rows, std::span<const int> labels,
                         const char* where) {
    if (rows.size() != labels.size()) throw std::invalid_argument(std::string(where) + ": rows/labels mismatch");
    check_labels(labels, probs.row_size(), where);
    LossTerm t{0.0, Tensor(probs.shape()), rows.size()};
    if (rows.empty()) return t;
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const std::size_t i = rows[j];
        t.value -= safe_log(probs.at(i, labels[j]));
        auto p = probs.row(i);
        auto g = t.grad_logits.row(i);
        for (std::size_t c = 0; c < p.size(); ++c) g[c] = p[c] * inv_n;
        g[labels[j]] -= inv_n;
    }
    t.value *= inv_n;
    return t;
}

/// Mean row entropy; under softmax, dH_row/dz_l = -p_l (ln p_l + H_row).
inline LossTerm mean_entropy(const Tensor& probs, std::span<const std::size_t> rows) {
    LossTerm t{0.0, Tensor(probs.shape()), rows.size()};
    if (rows.empty()) return t;
    const double inv_m = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i : rows) {
        auto p = probs.row(i);
        double h = 0.0;
        for (double v : p) {
            if (v > 0.0) h -= v * safe_log(v);
        }
        t.value += h;
        auto g = t.grad_logits.row(i);
        for (std::size_t c = 0; c < p.size(); ++c) {
            g[c] = p[c] > 0.0 ? -p[c] * (safe_log(p[c]) + h) * inv_m : 0.0;
        }
    }
    t.value *= inv_m;
    return t;
}

inline std::vector<std::size_t> all_rows(const Tensor& t) {
    std::vector<std::size_t> r(t.rows());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
    return r;
}

}  // namespace detail

/// -(1/n) sum ln p[i, y_i] over the listed source rows.
inline LossTerm class_log_loss(const Tensor& probs, std::span<const std::size_t> rows, std::span<const int> labels) {
    if (rows.empty()) throw std::invalid_argument("class_log_loss: empty source batch");
    return detail::log_loss(probs, rows, labels, "class_log_loss");
}

inline LossTerm class_log_loss(const Tensor& probs, std::span<const int> labels) {
    const auto rows = detail::all_rows(probs);
    return class_log_loss(probs, rows, labels);
}

/// Log-loss of the domain branch on domain-labelled source rows; zero when there are none.
inline LossTerm domain_log_loss(const Tensor& probs, std::span<const std::size_t> rows, std::span<const int> labels) {
    return detail::log_loss(probs, rows, labels, "domain_log_loss");
}

inline LossTerm domain_log_loss(const Tensor& probs, std::span<const int> labels) {
    const auto rows = detail::all_rows(probs);
    return domain_log_loss(probs, rows, labels);
}

/// Mean class-prediction entropy over target rows.
inline LossTerm class_entropy(const Tensor& probs, std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("class_entropy: empty target batch");
    return detail::mean_entropy(probs, rows);
}

inline LossTerm class_entropy(const Tensor& probs) {
    const auto rows = detail::all_rows(probs);
    return class_entropy(probs, rows);
}

/// Mean domain-prediction entropy over unlabelled source rows; zero for an empty set or k = 1.
inline LossTerm domain_entropy(const Tensor& probs, std::span<const std::size_t> rows) {
    if (probs.row_size() <= 1) return LossTerm{0.0, Tensor(probs.shape()), rows.size()};
    return detail::mean_entropy(probs, rows);
}

inline LossTerm domain_entropy(const Tensor& probs) {
    const auto rows = detail::all_rows(probs);
    return domain_entropy(probs, rows);
}

/// The four terms computed on one batch. Class terms are over class probabilities, domain terms over
/// the branch's probabilities.
struct LossParts {
    LossTerm class_ce;
    LossTerm domain_ce;
    LossTerm h_c;
    LossTerm h_d;
};

struct LossBreakdown {
    double class_ce = 0.0;
    double domain_ce = 0.0;
    double h_c = 0.0;
    double h_d = 0.0;
    double total = 0.0;
    std::size_t n_source = 0;
    std::size_t n_domain_labelled = 0;
    std::size_t n_target = 0;
    std::size_t n_domain_unlabelled = 0;
};

inline LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights) {
    weights.validate();
    LossBreakdown b;
    b.class_ce = parts.class_ce.value;
    b.domain_ce = parts.domain_ce.value;
    b.h_c = parts.h_c.value;
    b.h_d = parts.h_d.value;
    b.total = b.class_ce + weights.domain * b.domain_ce + weights.class_entropy * b.h_c +
              weights.domain_entropy * b.h_d;
    b.n_source = parts.class_ce.count;
    b.n_domain_labelled = parts.domain_ce.count;
    b.n_target = parts.h_c.count;
    b.n_domain_unlabelled = parts.h_d.count;
    return b;
}

/// Gradient of the weighted total w.r.t. class logits and domain-branch logits.
struct LossGradients {
    Tensor class_logits;
    Tensor domain_logits;
};

inline LossGradients total_gradients(const LossParts& parts, const LossWeights& weights) {
    LossGradients g{parts.class_ce.grad_logits, Tensor(parts.domain_ce.grad_logits.shape())};
    auto axpy = [](Tensor& dst, double a, const Tensor& src) {
        if (a == 0.0) return;
        Tensor::require_same_shape(dst, src, "total_gradients");
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
    };
    axpy(g.class_logits, weights.class_entropy, parts.h_c.grad_logits);
    axpy(g.domain_logits, weights.domain, parts.domain_ce.grad_logits);
    axpy(g.domain_logits, weights.domain_entropy, parts.h_d.grad_logits);
    return g;
}

}  // namespace mda
