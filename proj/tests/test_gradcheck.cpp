#include <gtest/gtest.h>

#include "mda/gradcheck.hpp"

using namespace mda;

TEST(Gradcheck, EveryGroupReportedAndPassing) {
    GradcheckConfig cfg;
    const GradcheckReport rep = run_gradcheck(cfg);
    ASSERT_EQ(rep.groups.size(), gradcheck_groups().size());
    for (const auto& g : rep.groups) {
        EXPECT_TRUE(g.passed()) << g.group << " " << g.max_error;
        EXPECT_GT(g.checks, 0u) << g.group;
    }
    EXPECT_EQ(rep.find("mda_layer.grad_x").checks, 24u);
    EXPECT_LE(rep.find("mda_layer.grad_w").max_error, 1e-5);
    EXPECT_LE(rep.find("assignment").max_error, 1e-4);
    EXPECT_TRUE(rep.passed());
}

TEST(Gradcheck, LayerCasesCoverTheSpace) {
    const auto cases = layer_cases(24, 1);
    bool k1 = false, k3 = false, spatial = false, mixed = false, soft = false;
    for (const auto& c : cases) {
        k1 = k1 || c.k == 1;
        k3 = k3 || c.k >= 3;
        spatial = spatial || c.rank == 4;
        mixed = mixed || c.mixed;
        soft = soft || !c.mixed;
    }
    EXPECT_TRUE(k1 && k3 && spatial && mixed && soft);
}

TEST(Gradcheck, InjectedFaultsAreCaught) {
    const std::pair<GradFault, const char*> faults[] = {{GradFault::MdaGradX, "mda_layer.grad_x"},
                                                        {GradFault::MdaGradW, "mda_layer.grad_w"},
                                                        {GradFault::Branch, "branch"}};
    for (const auto& [fault, group] : faults) {
        GradcheckConfig cfg;
        cfg.configurations = 6;
        cfg.fault = fault;
        const GradcheckReport rep = run_gradcheck(cfg);
        EXPECT_FALSE(rep.passed()) << group;
        EXPECT_FALSE(rep.find(group).passed()) << group;
    }
}

TEST(Gradcheck, ConfigValidation) {
    GradcheckConfig cfg;
    cfg.configurations = 0;
    EXPECT_THROW(run_gradcheck(cfg), std::invalid_argument);
    cfg = GradcheckConfig{};
    cfg.step = 0.0;
    EXPECT_THROW(run_gradcheck(cfg), std::invalid_argument);
}
