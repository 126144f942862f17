#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/ops.hpp"
#include "mda/tensor.hpp"

namespace mda {

/// Domain membership of one sample as seen by training.
struct DomainTag {
    enum class Kind { KnownSource, UnknownSource, Target };

    Kind kind = Kind::UnknownSource;
    int index = -1;  // source domain for KnownSource, -1 otherwise

    static DomainTag known(int source_index) {
        if (source_index < 0) throw std::invalid_argument("DomainTag::known: negative source index");
        return {Kind::KnownSource, source_index};
    }
    static DomainTag unknown() { return {Kind::UnknownSource, -1}; }
    static DomainTag target() { return {Kind::Target, -1}; }

    bool is_target() const { return kind == Kind::Target; }
    bool is_source() const { return kind != Kind::Target; }
    bool is_known() const { return kind == Kind::KnownSource; }
    bool is_unknown() const { return kind == Kind::UnknownSource; }

    friend bool operator==(const DomainTag&, const DomainTag&) = default;
};

inline std::string to_string(const DomainTag& tag) {
    switch (tag.kind) {
        case DomainTag::Kind::KnownSource: return "source:" + std::to_string(tag.index);
        case DomainTag::Kind::UnknownSource: return "source:?";
        case DomainTag::Kind::Target: return "target";
    }
    return "?";
}

/// Per-sample weights over (s_1..s_k, t). Fixed rows are hard assignments and never receive gradient.
struct AssignmentMatrix {
    Tensor probs;             // [b, k+1]
    std::vector<bool> fixed;  // [b]

    std::size_t batch() const { return probs.rows(); }
    std::size_t domains() const { return probs.row_size(); }
    std::size_t source_domains() const { return domains() - 1; }
    std::size_t target_column() const { return domains() - 1; }

    /// Throws std::logic_error naming the first violated invariant.
    void validate(std::span<const DomainTag> tags, double tol = 1e-9) const {
        if (probs.rank() != 2 || fixed.size() != probs.rows() || tags.size() != probs.rows()) {
            throw std::logic_error("AssignmentMatrix: inconsistent sizes");
        }
        const std::size_t t = target_column();
        for (std::size_t i = 0; i < batch(); ++i) {
            double sum = 0.0;
            for (double v : probs.row(i)) {
                if (v < 0.0 || v > 1.0) throw std::logic_error("AssignmentMatrix: entry outside [0,1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > tol) throw std::logic_error("AssignmentMatrix: row does not sum to 1");
            const DomainTag& tag = tags[i];
            if (tag.is_target() || tag.is_known()) {
                const std::size_t hot = tag.is_target() ? t : static_cast<std::size_t>(tag.index);
                for (std::size_t d = 0; d < domains(); ++d) {
                    if (probs.at(i, d) != (d == hot ? 1.0 : 0.0)) {
                        throw std::logic_error("AssignmentMatrix: hard row is not one-hot");
                    }
                }
                if (!fixed[i]) throw std::logic_error("AssignmentMatrix: hard row not marked fixed");
            } else {
                if (probs.at(i, t) != 0.0) throw std::logic_error("AssignmentMatrix: source row has target mass");
                if (fixed[i]) throw std::logic_error("AssignmentMatrix: free row marked fixed");
            }
        }
    }
};

/// Builds the shared assignment: target and known-source rows become fixed one-hots, unknown-source rows
/// take the predicted distribution with zero target mass.
inline AssignmentMatrix merge_assignments(const Tensor& pred, std::span<const DomainTag> tags) {
    if (pred.rank() != 2 || pred.rows() != tags.size()) {
        throw std::invalid_argument("merge_assignments: prediction rows do not match tags");
    }
    const std::size_t k = pred.row_size(), b = tags.size();
    AssignmentMatrix w{Tensor({b, k + 1}), std::vector<bool>(b, false)};
    for (std::size_t i = 0; i < b; ++i) {
        const DomainTag& tag = tags[i];
        switch (tag.kind) {
            case DomainTag::Kind::Target:
                w.probs.at(i, k) = 1.0;
                w.fixed[i] = true;
                break;
            case DomainTag::Kind::KnownSource:
                if (tag.index >= static_cast<int>(k)) {
                    throw std::out_of_range("merge_assignments: known source " + std::to_string(tag.index) +
                                            " outside k=" + std::to_string(k));
                }
                w.probs.at(i, tag.index) = 1.0;
                w.fixed[i] = true;
                break;
            case DomainTag::Kind::UnknownSource:
                for (std::size_t d = 0; d < k; ++d) w.probs.at(i, d) = pred.at(i, d);
                break;
        }
    }
    return w;
}

/// Every row on source column 0 and fixed; turns each mDA-layer into whole-batch normalization.
inline AssignmentMatrix pooled_assignment(std::size_t batch, std::size_t source_domains) {
    AssignmentMatrix w{Tensor({batch, source_domains + 1}), std::vector<bool>(batch, true)};
    for (std::size_t i = 0; i < batch; ++i) w.probs.at(i, 0) = 1.0;
    return w;
}

/// One assignment shared by all mDA-layers of a network, plus the single gradient buffer they feed.
class AssignmentBus {
public:
    explicit AssignmentBus(AssignmentMatrix w) : w_(std::move(w)), grad_(w_.probs.shape()) {}

    const AssignmentMatrix& view() const { return w_; }

    /// Adds one layer's grad_W; fixed rows are dropped.
    void accumulate(const Tensor& grad_w) {
        Tensor::require_same_shape(grad_w, grad_, "AssignmentBus::accumulate");
        for (std::size_t i = 0; i < w_.batch(); ++i) {
            if (w_.fixed[i]) continue;
            auto src = grad_w.row(i);
            auto dst = grad_.row(i);
            for (std::size_t d = 0; d < src.size(); ++d) dst[d] += src[d];
        }
        ++contributions_;
    }

    const Tensor& grad() const { return grad_; }
    std::size_t contributions() const { return contributions_; }
    void reset_grad() {
        grad_.fill(0.0);
        contributions_ = 0;
    }

private:
    AssignmentMatrix w_;
    Tensor grad_;
    std::size_t contributions_ = 0;
};

/// Per-layer handles onto the bus; all of them alias the same rows.
inline std::vector<std::reference_wrapper<const AssignmentMatrix>> broadcast_contract(const AssignmentBus& bus,
                                                                                      std::size_t layer_count) {
    return std::vector<std::reference_wrapper<const AssignmentMatrix>>(layer_count, std::cref(bus.view()));
}

/// Side branch predicting latent source domains: dense -> ReLU -> dense -> softmax over k.
class DomainBranch {
public:
    struct Cache {
        Tensor input;
        Tensor hidden_pre;
        Tensor hidden;
        Tensor probs;
    };

    DomainBranch() = default;
    DomainBranch(std::size_t in_features, std::size_t hidden, std::size_t k, std::uint64_t seed)
        : fc1_(in_features, hidden, seed), fc2_(hidden, k, seed + 1) {
        if (k == 0) throw std::invalid_argument("DomainBranch: k must be >= 1");
    }

    std::size_t k() const { return fc2_.out_features(); }
    std::size_t in_features() const { return fc1_.in_features(); }

    Tensor predict(const Tensor& features) const {
        Cache c;
        return forward(features, c);
    }

    Tensor forward(const Tensor& features, Cache& cache) const {
        if (features.row_size() != fc1_.in_features()) {
            throw std::invalid_argument("DomainBranch: feature width " + std::to_string(features.row_size()) +
                                        " != " + std::to_string(fc1_.in_features()));
        }
        cache.input = features;
        cache.hidden_pre = fc1_.forward(features);
        cache.hidden = relu_forward(cache.hidden_pre);
        cache.probs = softmax(fc2_.forward(cache.hidden));
        return cache.probs;
    }

    /// Takes the gradient w.r.t. branch logits; accumulates parameter grads and returns grad w.r.t. features.
    Tensor backward(const Cache& cache, const Tensor& grad_logits) {
        Tensor g = fc2_.backward(cache.hidden, grad_logits);
        g = relu_backward(cache.hidden_pre, g);
        return fc1_.backward(cache.input, g);
    }

    DenseLayer& fc1() { return fc1_; }
    DenseLayer& fc2() { return fc2_; }
    const DenseLayer& fc1() const { return fc1_; }
    const DenseLayer& fc2() const { return fc2_; }

private:
    DenseLayer fc1_;
    DenseLayer fc2_;
};

inline Tensor predict_domains(const DomainBranch& branch, const Tensor& trunk_features) {
    return branch.predict(trunk_features);
}

}  // namespace mda
