#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "mda/tensor.hpp"

namespace mda {

/// Floor applied to probabilities inside logarithms.
inline constexpr double kLogFloor = 1e-12;

inline double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

// ---------------------------------------------------------------------------
// Dense / affine
// ---------------------------------------------------------------------------

/// y = x W + bias, row-wise. Inputs of rank > 2 are flattened per sample.
inline Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
        throw std::invalid_argument("dense_forward: weight " + Tensor::describe(weight.shape()) + " and bias " +
                                    Tensor::describe(bias.shape()) + " are inconsistent");
    }
    const std::size_t in = weight.dim(0), out = weight.dim(1), b = x.rows();
    if (x.row_size() != in) {
        throw std::invalid_argument("dense_forward: input width " + std::to_string(x.row_size()) +
                                    " does not match weight rows " + std::to_string(in));
    }
    Tensor y({b, out});
    for (std::size_t i = 0; i < b; ++i) {
        auto xr = x.row(i);
        auto yr = y.row(i);
        std::copy(bias.values().begin(), bias.values().end(), yr.begin());
        for (std::size_t p = 0; p < in; ++p) {
            const double xv = xr[p];
            if (xv == 0.0) continue;
            const double* wr = weight.data() + p * out;
            for (std::size_t q = 0; q < out; ++q) yr[q] += xv * wr[q];
        }
    }
    return y;
}

struct DenseGrads {
    Tensor grad_x;  // same shape as the forward input
    Tensor grad_weight;
    Tensor grad_bias;
};

inline DenseGrads dense_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
    const std::size_t in = weight.dim(0), out = weight.dim(1), b = x.rows();
    if (x.row_size() != in || grad_out.rows() != b || grad_out.row_size() != out) {
        throw std::invalid_argument("dense_backward: shape mismatch (x " + Tensor::describe(x.shape()) + ", W " +
                                    Tensor::describe(weight.shape()) + ", grad " +
                                    Tensor::describe(grad_out.shape()) + ")");
    }
    DenseGrads g{Tensor(x.shape()), Tensor(weight.shape()), Tensor({out})};
    for (std::size_t i = 0; i < b; ++i) {
        auto xr = x.row(i);
        auto gr = grad_out.row(i);
        auto gx = g.grad_x.row(i);
        for (std::size_t q = 0; q < out; ++q) g.grad_bias[q] += gr[q];
        for (std::size_t p = 0; p < in; ++p) {
            const double* wr = weight.data() + p * out;
            double* gw = g.grad_weight.data() + p * out;
            double acc = 0.0;
            for (std::size_t q = 0; q < out; ++q) {
                acc += gr[q] * wr[q];
                gw[q] += xr[p] * gr[q];
            }
            gx[p] = acc;
        }
    }
    return g;
}

/// Dense layer owning its parameters; Kaiming-normal weights, zero bias.
struct DenseLayer {
    ParamBlock weight;
    ParamBlock bias;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out, std::uint64_t seed)
        : weight(kaiming_normal(seed, in, out)), bias(Tensor({out})) {}
    DenseLayer(std::size_t in, std::size_t out, std::uint64_t seed, double stddev)
        : weight(rng_normal(seed, {in, out}, stddev)), bias(Tensor({out})) {}

    std::size_t in_features() const { return weight.value.dim(0); }
    std::size_t out_features() const { return weight.value.dim(1); }

    Tensor forward(const Tensor& x) const { return dense_forward(x, weight.value, bias.value); }

    /// Accumulates parameter gradients and returns the input gradient.
    Tensor backward(const Tensor& x, const Tensor& grad_out) {
        DenseGrads g = dense_backward(x, weight.value, grad_out);
        weight.grad += g.grad_weight;
        bias.grad += g.grad_bias;
        return std::move(g.grad_x);
    }
};

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
}

/// Subgradient at 0 is 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    Tensor::require_same_shape(x, grad_out, "relu_backward");
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax: expects [b, c]");
    Tensor p(logits.shape());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto z = logits.row(i);
        auto out = p.row(i);
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            out[j] = std::exp(z[j] - m);
            sum += out[j];
        }
        for (double& v : out) v /= sum;
    }
    return p;
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits.
inline Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
    Tensor::require_same_shape(probs, grad_probs, "softmax_backward");
    Tensor g(probs.shape());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto p = probs.row(i);
        auto gp = grad_probs.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * gp[j];
        auto out = g.row(i);
        for (std::size_t j = 0; j < p.size(); ++j) out[j] = p[j] * (gp[j] - dot);
    }
    return g;
}

inline void check_labels(std::span<const int> labels, std::size_t classes, const char* where) {
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::out_of_range(std::string(where) + ": label " + std::to_string(y) + " outside [0," +
                                    std::to_string(classes) + ")");
        }
    }
}

/// Mean negative log-likelihood of the labelled entries.
inline double cross_entropy_forward(const Tensor& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) throw std::invalid_argument("cross_entropy_forward: label count mismatch");
    check_labels(labels, probs.row_size(), "cross_entropy_forward");
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) loss -= safe_log(probs.at(i, labels[i]));
    return loss / static_cast<double>(labels.size());
}

/// Gradient of softmax followed by mean cross-entropy, w.r.t. the logits: (p - onehot) / b.
inline Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) throw std::invalid_argument("softmax_cross_entropy_backward: label count");
    check_labels(labels, probs.row_size(), "softmax_cross_entropy_backward");
    Tensor g = probs;
    const double inv_b = 1.0 / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        g.at(i, labels[i]) -= 1.0;
        for (double& v : g.row(i)) v *= inv_b;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Global average pooling
// ---------------------------------------------------------------------------

inline Tensor spatial_mean(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("spatial_mean: expects [b, c, h, w]");
    const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y({b, c});
    for (std::size_t i = 0; i < b * c; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p) s += x[i * hw + p];
        y[i] = s / static_cast<double>(hw);
    }
    return y;
}

inline Tensor spatial_mean_backward(const Tensor::Shape& input_shape, const Tensor& grad_out) {
    Tensor g(input_shape);
    const std::size_t hw = input_shape.at(2) * input_shape.at(3);
    if (grad_out.size() * hw != g.size()) throw std::invalid_argument("spatial_mean_backward: shape mismatch");
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        const double v = grad_out[i] / static_cast<double>(hw);
        for (std::size_t p = 0; p < hw; ++p) g[i * hw + p] = v;
    }
    return g;
}

}  // namespace mda
