#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/assignment.hpp"
#include "mda/data.hpp"
#include "mda/mda_layer.hpp"
#include "mda/objective.hpp"
#include "mda/ops.hpp"

namespace mda {

/// How the shared assignment is formed.
enum class NormalizationMode {
    DomainAlignment,  // branch predictions merged with tags; one statistics set per domain
    Pooled,           // every sample in one domain: plain whole-batch normalization
};

struct ModelConfig {
    std::size_t input_dim = 8;
    std::vector<std::size_t> trunk_widths{64};
    std::vector<std::size_t> classifier_widths{64};  // hidden widths; the |Y|-wide output layer is appended
    std::size_t num_classes = 4;
    std::size_t k = 2;
    std::vector<std::size_t> mda_after;  // classifier layer indices followed by an mDA-layer; empty = all
    MdaConfig mda;
    std::size_t branch_hidden = 64;
    NormalizationMode normalization = NormalizationMode::DomainAlignment;
    std::uint64_t seed = 1;

    std::size_t classifier_layers() const { return classifier_widths.size() + 1; }

    std::vector<std::size_t> mda_placement() const {
        if (!mda_after.empty()) return mda_after;
        std::vector<std::size_t> all(classifier_layers());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }

    void validate() const {
        if (input_dim == 0) throw std::invalid_argument("model.input_dim must be >= 1");
        if (trunk_widths.empty()) throw std::invalid_argument("model.trunk_widths needs at least one block");
        if (num_classes < 2) throw std::invalid_argument("model.num_classes must be >= 2");
        if (k < 1) throw std::invalid_argument("model.k must be >= 1");
        if (branch_hidden == 0) throw std::invalid_argument("model.branch_hidden must be >= 1");
        for (std::size_t w : trunk_widths) {
            if (w == 0) throw std::invalid_argument("model.trunk_widths entries must be >= 1");
        }
        for (std::size_t w : classifier_widths) {
            if (w == 0) throw std::invalid_argument("model.classifier_widths entries must be >= 1");
        }
        for (std::size_t l : mda_after) {
            if (l >= classifier_layers()) throw std::invalid_argument("model.mda_after index out of range");
        }
        mda.validate();
    }
};

struct NamedParam {
    std::string name;
    std::string group;  // trunk | classifier | mda_affine | branch
    ParamBlock* param;
};

/// Everything backward_train needs from one training-mode forward pass.
struct ForwardRecord {
    Tensor class_probs;   // [b, |Y|]
    Tensor domain_probs;  // [b, k]; meaningful on source rows
    std::vector<DomainTag> tags;
    std::optional<AssignmentBus> assignment;

    std::vector<Tensor> trunk_inputs;
    std::vector<Tensor> trunk_pre;
    Tensor branch_input;
    DomainBranch::Cache branch;
    std::vector<Tensor> classifier_inputs;
    std::vector<Tensor> classifier_outputs;  // after the optional mDA-layer, before ReLU
    std::vector<std::optional<MdaLayer::Cache>> mda;
};

/// Shared trunk, classification branch with interleaved mDA-layers, and the domain prediction branch
/// attached after the first trunk block.
class Model {
public:
    Model() = default;
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::uint64_t s = cfg_.seed * 7919;
        std::size_t in = cfg_.input_dim;
        for (std::size_t w : cfg_.trunk_widths) {
            trunk_.emplace_back(in, w, ++s);
            in = w;
        }
        branch_ = DomainBranch(cfg_.trunk_widths.front(), cfg_.branch_hidden, cfg_.k, s += 2);
        const auto placement = cfg_.mda_placement();
        for (std::size_t l = 0; l < cfg_.classifier_layers(); ++l) {
            const std::size_t out = l < cfg_.classifier_widths.size() ? cfg_.classifier_widths[l] : cfg_.num_classes;
            classifier_.emplace_back(in, out, ++s);
            if (std::find(placement.begin(), placement.end(), l) != placement.end()) {
                mda_.emplace_back(MdaLayer(out, cfg_.k + 1, cfg_.mda));
            } else {
                mda_.emplace_back(std::nullopt);
            }
            in = out;
        }
    }

    const ModelConfig& config() const { return cfg_; }

    /// `assignment`, when given, replaces the merged branch/tag assignment (used by gradient checks).
    ForwardRecord forward_train(const Batch& batch, bool update_running = true,
                                const AssignmentMatrix* assignment = nullptr) {
        if (batch.source_rows().empty()) throw std::invalid_argument("forward_train: batch has no source samples");
        ForwardRecord r;
        r.tags = batch.tags;
        Tensor h = flatten(batch.features);
        for (std::size_t j = 0; j < trunk_.size(); ++j) {
            r.trunk_inputs.push_back(h);
            r.trunk_pre.push_back(trunk_[j].forward(h));
            h = relu_forward(r.trunk_pre.back());
            if (j == 0) r.branch_input = h;
        }
        r.domain_probs = branch_.forward(r.branch_input, r.branch);
        r.assignment.emplace(assignment ? *assignment : assignment_for(r.domain_probs, batch.tags));

        const AssignmentMatrix& w = r.assignment->view();
        r.mda.resize(classifier_.size());
        for (std::size_t l = 0; l < classifier_.size(); ++l) {
            r.classifier_inputs.push_back(h);
            Tensor a = classifier_[l].forward(h);
            if (mda_[l]) {
                r.mda[l].emplace();
                a = mda_[l]->forward(a, w, *r.mda[l], update_running);
            }
            r.classifier_outputs.push_back(a);
            h = l + 1 < classifier_.size() ? relu_forward(a) : a;
        }
        r.class_probs = softmax(h);
        return r;
    }

    /// Accumulates gradients into every ParamBlock given the loss gradients w.r.t. class and domain logits.
    void backward_train(ForwardRecord& r, const LossGradients& g) {
        Tensor grad = g.class_logits;
        r.assignment->reset_grad();
        for (std::size_t l = classifier_.size(); l-- > 0;) {
            if (l + 1 < classifier_.size()) grad = relu_backward(r.classifier_outputs[l], grad);
            if (mda_[l]) {
                MdaGradients mg = mda_[l]->backward(*r.mda[l], grad);
                mda_[l]->gamma.grad += mg.grad_gamma;
                mda_[l]->beta.grad += mg.grad_beta;
                r.assignment->accumulate(mg.grad_w);
                grad = std::move(mg.grad_x);
            }
            grad = classifier_[l].backward(r.classifier_inputs[l], grad);
        }

        // Only free rows carry assignment gradient; their first k columns are the branch probabilities.
        const Tensor& gw = r.assignment->grad();
        Tensor grad_domain_probs(r.domain_probs.shape());
        for (std::size_t i = 0; i < r.tags.size(); ++i) {
            if (!r.tags[i].is_unknown() || cfg_.normalization == NormalizationMode::Pooled) continue;
            for (std::size_t d = 0; d < cfg_.k; ++d) grad_domain_probs.at(i, d) = gw.at(i, d);
        }
        Tensor grad_branch_logits = softmax_backward(r.domain_probs, grad_domain_probs);
        grad_branch_logits += g.domain_logits;
        Tensor grad_branch_in = branch_.backward(r.branch, grad_branch_logits);

        for (std::size_t j = trunk_.size(); j-- > 0;) {
            if (j == 0) grad += grad_branch_in;
            grad = relu_backward(r.trunk_pre[j], grad);
            grad = trunk_[j].backward(r.trunk_inputs[j], grad);
        }
    }

    /// Inference with running statistics. Target rows use the target column, every other row the
    /// branch's soft assignment.
    Tensor forward_eval(const Tensor& features, std::span<const DomainTag> tags) const {
        Tensor h = flatten(features);
        Tensor branch_in;
        for (std::size_t j = 0; j < trunk_.size(); ++j) {
            h = relu_forward(trunk_[j].forward(h));
            if (j == 0) branch_in = h;
        }
        std::vector<DomainTag> eval_tags(tags.begin(), tags.end());
        for (auto& t : eval_tags) {
            if (!t.is_target()) t = DomainTag::unknown();
        }
        const AssignmentMatrix w = assignment_for(branch_.predict(branch_in), eval_tags);
        for (std::size_t l = 0; l < classifier_.size(); ++l) {
            Tensor a = classifier_[l].forward(h);
            if (mda_[l]) a = mda_[l]->infer(a, w);
            h = l + 1 < classifier_.size() ? relu_forward(a) : a;
        }
        return softmax(h);
    }

    Tensor forward_eval(const Batch& batch) const { return forward_eval(batch.features, batch.tags); }

    /// Branch probabilities over the k latent source domains.
    Tensor predict_domains(const Tensor& features) const {
        Tensor h = relu_forward(trunk_.front().forward(flatten(features)));
        return branch_.predict(h);
    }

    std::vector<NamedParam> params() {
        std::vector<NamedParam> p;
        for (std::size_t j = 0; j < trunk_.size(); ++j) {
            p.push_back({"trunk." + std::to_string(j) + ".weight", "trunk", &trunk_[j].weight});
            p.push_back({"trunk." + std::to_string(j) + ".bias", "trunk", &trunk_[j].bias});
        }
        for (std::size_t l = 0; l < classifier_.size(); ++l) {
            p.push_back({"classifier." + std::to_string(l) + ".weight", "classifier", &classifier_[l].weight});
            p.push_back({"classifier." + std::to_string(l) + ".bias", "classifier", &classifier_[l].bias});
            if (mda_[l] && cfg_.mda.affine) {
                p.push_back({"mda." + std::to_string(l) + ".gamma", "mda_affine", &mda_[l]->gamma});
                p.push_back({"mda." + std::to_string(l) + ".beta", "mda_affine", &mda_[l]->beta});
            }
        }
        p.push_back({"branch.0.weight", "branch", &branch_.fc1().weight});
        p.push_back({"branch.0.bias", "branch", &branch_.fc1().bias});
        p.push_back({"branch.1.weight", "branch", &branch_.fc2().weight});
        p.push_back({"branch.1.bias", "branch", &branch_.fc2().bias});
        return p;
    }

    void zero_grad() {
        for (auto& p : params()) p.param->zero_grad();
    }

    /// mDA-layers in classifier order (absent slots skipped).
    std::vector<MdaLayer*> mda_layers() {
        std::vector<MdaLayer*> out;
        for (auto& m : mda_) {
            if (m) out.push_back(&*m);
        }
        return out;
    }
    std::vector<const MdaLayer*> mda_layers() const {
        std::vector<const MdaLayer*> out;
        for (const auto& m : mda_) {
            if (m) out.push_back(&*m);
        }
        return out;
    }

private:
    static Tensor flatten(const Tensor& x) {
        if (x.rank() == 2) return x;
        return x.reshaped({x.rows(), x.row_size()});
    }

    AssignmentMatrix assignment_for(const Tensor& domain_probs, std::span<const DomainTag> tags) const {
        if (cfg_.normalization == NormalizationMode::Pooled) return pooled_assignment(tags.size(), cfg_.k);
        return merge_assignments(domain_probs, tags);
    }

    ModelConfig cfg_;
    std::vector<DenseLayer> trunk_;
    DomainBranch branch_;
    std::vector<DenseLayer> classifier_;
    std::vector<std::optional<MdaLayer>> mda_;
};

/// Loss parts for a training batch: class log-loss on source rows, domain log-loss on known rows,
/// class entropy on target rows (when weighted), domain entropy on unknown rows.
inline LossParts compute_loss_parts(const ForwardRecord& r, const Batch& batch, const LossWeights& weights) {
    LossParts parts;
    const auto src = batch.source_rows();
    std::vector<int> src_labels;
    for (std::size_t i : src) src_labels.push_back(batch.class_labels[i]);
    parts.class_ce = class_log_loss(r.class_probs, src, src_labels);

    const auto known = batch.known_rows();
    std::vector<int> dom_labels;
    for (std::size_t i : known) dom_labels.push_back(batch.tags[i].index);
    parts.domain_ce = domain_log_loss(r.domain_probs, known, dom_labels);

    const auto tgt = batch.target_rows();
    if (!tgt.empty() || weights.class_entropy > 0.0) {
        parts.h_c = class_entropy(r.class_probs, tgt);  // throws on an empty target set
    } else {
        parts.h_c = LossTerm{0.0, Tensor(r.class_probs.shape()), 0};
    }
    parts.h_d = domain_entropy(r.domain_probs, batch.unknown_rows());
    return parts;
}

}  // namespace mda
