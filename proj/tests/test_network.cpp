#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "mda/checkpoint.hpp"
#include "mda/gradcheck.hpp"
#include "mda/network.hpp"
#include "mda/train.hpp"
#include "test_util.hpp"

using namespace mda;
using mda::testing::random_tensor;

namespace {

ModelConfig small_model(std::size_t k, std::uint64_t seed = 3) {
    ModelConfig m;
    m.input_dim = 4;
    m.trunk_widths = {6};
    m.classifier_widths = {5};
    m.num_classes = 3;
    m.k = k;
    m.branch_hidden = 4;
    m.seed = seed;
    return m;
}

Batch make_batch(std::vector<DomainTag> tags, std::uint64_t seed) {
    Batch b;
    b.features = random_tensor({tags.size(), 4}, seed, -2.0, 2.0);
    for (std::size_t i = 0; i < tags.size(); ++i) b.class_labels.push_back(tags[i].is_target() ? -1 : int(i % 3));
    b.tags = std::move(tags);
    return b;
}

std::vector<DomainTag> repeat(DomainTag t, std::size_t n) { return std::vector<DomainTag>(n, t); }

std::vector<DomainTag> mixed_tags() {
    auto t = repeat(DomainTag::unknown(), 6);
    for (int i = 0; i < 4; ++i) t.push_back(DomainTag::target());
    return t;
}

}  // namespace

TEST(Model, SingleKnownDomainIsBatchNorm) {
    Model m(small_model(1));
    Batch b = make_batch(repeat(DomainTag::known(0), 8), 1);
    ForwardRecord r = m.forward_train(b);
    ParamBlock* w = nullptr;
    ParamBlock* bias = nullptr;
    for (auto& p : m.params()) {
        if (p.name == "classifier.0.weight") w = p.param;
        if (p.name == "classifier.0.bias") bias = p.param;
    }
    ASSERT_TRUE(w && bias);
    Tensor a = dense_forward(r.classifier_inputs[0], w->value, bias->value);
    for (std::size_t c = 0; c < a.row_size(); ++c) {
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) mu += a.at(i, c) / 8.0;
        for (std::size_t i = 0; i < a.rows(); ++i) var += (a.at(i, c) - mu) * (a.at(i, c) - mu) / 8.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            EXPECT_NEAR(r.classifier_outputs[0].at(i, c), (a.at(i, c) - mu) / std::sqrt(var + 1e-5), 1e-12);
        }
    }

    ModelConfig pooled = small_model(1);
    pooled.normalization = NormalizationMode::Pooled;
    Model p(pooled);
    EXPECT_EQ(p.forward_train(b).class_probs, r.class_probs);
}

TEST(Model, ProbabilityRowsSumToOne) {
    Model m(small_model(3));
    Batch b = make_batch(mixed_tags(), 2);
    ForwardRecord r = m.forward_train(b);
    for (const Tensor* t : {&r.class_probs, &r.domain_probs}) {
        for (std::size_t i = 0; i < t->rows(); ++i) {
            double s = 0.0;
            for (double v : t->row(i)) s += v;
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
    EXPECT_EQ(r.domain_probs.shape(), (Tensor::Shape{10, 3}));
    EXPECT_NO_THROW(r.assignment->view().validate(b.tags));
}

TEST(Model, TargetRowsDoNotLeakIntoSourceStatistics) {
    Batch full = make_batch(mixed_tags(), 4);
    std::vector<std::size_t> src{0, 1, 2, 3, 4, 5};
    Batch only;
    only.features = full.features.select_rows(src);
    only.tags = repeat(DomainTag::unknown(), 6);
    only.class_labels.assign(full.class_labels.begin(), full.class_labels.begin() + 6);

    Model m(small_model(2));
    Tensor with = m.forward_train(full, false).class_probs;
    Tensor without = m.forward_train(only, false).class_probs;
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(with.at(i, c), without.at(i, c), 1e-12);
    }

    ModelConfig pc = small_model(2);
    pc.normalization = NormalizationMode::Pooled;
    Model p(pc);
    Tensor pw = p.forward_train(full, false).class_probs, po = p.forward_train(only, false).class_probs;
    double diff = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t c = 0; c < 3; ++c) diff = std::max(diff, std::abs(pw.at(i, c) - po.at(i, c)));
    }
    EXPECT_GT(diff, 1e-6);
}

TEST(Model, EndToEndGradientsMatchFiniteDifferences) {
    for (std::uint64_t seed : {1, 2, 3}) {
        for (const auto& [group, e] : check_model(default_model_case(seed), 1e-6)) {
            EXPECT_LE(e, 1e-4) << group << " seed " << seed;
        }
    }
}

TEST(Model, BranchIdleWithoutUnknownRowsOrDomainTerms) {
    Model m(small_model(2));
    std::vector<DomainTag> tags{DomainTag::known(0), DomainTag::known(1), DomainTag::known(0), DomainTag::known(1),
                                DomainTag::target(), DomainTag::target()};
    Batch b = make_batch(tags, 5);
    LossWeights w{0.0, 0.2, 0.0};
    m.zero_grad();
    ForwardRecord r = m.forward_train(b);
    m.backward_train(r, total_gradients(compute_loss_parts(r, b, w), w));
    double branch = 0.0, trunk = 0.0;
    for (auto& p : m.params()) {
        for (double v : p.param->grad.values()) {
            if (p.group == "branch") branch = std::max(branch, std::abs(v));
            if (p.group == "trunk") trunk = std::max(trunk, std::abs(v));
        }
    }
    EXPECT_EQ(branch, 0.0);
    EXPECT_GT(trunk, 0.0);
}

TEST(Model, EvalMatchesTrainingWhenRunningEqualsBatch) {
    Model m(small_model(2));
    Batch b = make_batch(mixed_tags(), 6);
    Tensor train = m.forward_train(b, true).class_probs;  // first update copies batch statistics
    Tensor eval = m.forward_eval(b);
    for (std::size_t i = 0; i < train.size(); ++i) EXPECT_NEAR(train[i], eval[i], 1e-9);
}

TEST(Model, EvalIsPureAndHandlesSingleSamples) {
    Model m(small_model(2));
    Batch b = make_batch(mixed_tags(), 7);
    m.forward_train(b);
    const Tensor first = m.forward_eval(b);
    EXPECT_EQ(m.forward_eval(b), first);

    std::vector<std::size_t> one{7};
    Tensor x = b.features.select_rows(one);
    std::vector<DomainTag> t{DomainTag::target()};
    Tensor single = m.forward_eval(x, t);
    ASSERT_EQ(single.shape(), (Tensor::Shape{1, 3}));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(single[c], first.at(7, c), 1e-12);

    Model fresh(small_model(2));
    EXPECT_THROW(fresh.forward_eval(b), UninitializedDomainError);
}

TEST(Model, RejectsBatchWithoutSource) {
    Model m(small_model(2));
    EXPECT_THROW(m.forward_train(make_batch(repeat(DomainTag::target(), 3), 8)), std::invalid_argument);
    ModelConfig bad = small_model(2);
    bad.mda_after = {5};
    EXPECT_THROW(Model{bad}, std::invalid_argument);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
    Model m(small_model(2, 9));
    Batch b = make_batch(mixed_tags(), 10);
    for (int i = 0; i < 3; ++i) {
        ForwardRecord r = m.forward_train(b);
        LossWeights w;
        m.zero_grad();
        m.backward_train(r, total_gradients(compute_loss_parts(r, b, w), w));
        for (auto& p : m.params()) sgd_step(*p.param, 0.1, 0.9, 0.0);
    }
    Model back = checkpoint_from_json(checkpoint_to_json(m));
    EXPECT_EQ(back.forward_eval(b), m.forward_eval(b));

    const auto path = (std::filesystem::temp_directory_path() / "mda_ckpt_test.json").string();
    save_checkpoint(path, m);
    Model loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.forward_eval(b), m.forward_eval(b));
    std::filesystem::remove(path);
}
