#include "ofield/autodiff.hpp"
#include "ofield/checkpoint.hpp"
#include "ofield/optim.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

namespace ad = ofield::ad;
using ad::Tensor;
using ad::Tensor64;

namespace {

class AutodiffTest : public ::testing::Test {
protected:
    void TearDown() override {
        ad::Tape<float>::current().clear();
        ad::Tape<double>::current().clear();
    }
};

TEST_F(AutodiffTest, ExpOfZeroIsOne) {
    EXPECT_EQ(ad::exp(Tensor::scalar(0.0f)).item(), 1.0f);
}

TEST_F(AutodiffTest, CumsumIsPrefixSum) {
    auto c = ad::cumsum(Tensor({3}, {1, 2, 3}), 0);
    EXPECT_EQ(std::vector<float>(c.values().begin(), c.values().end()), (std::vector<float>{1, 3, 6}));
}

TEST_F(AutodiffTest, IdentityKernelConvolutionReturnsInput) {
    std::mt19937_64 rng(3);
    auto x = ofield::testing::random_leaves(rng, {{2, 3, 5, 6}})[0];
    std::vector<double> w(9, 0.0);
    Tensor64 weight({3, 3, 1, 1}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = ad::conv2d(x, weight, Tensor64::zeros({0}), 1);
    ASSERT_EQ(y.shape(), x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST_F(AutodiffTest, StrideTwoConvolutionHalvesSpatialSize) {
    auto x = Tensor::zeros({1, 2, 8, 6});
    auto w = Tensor::zeros({4, 2, 3, 3});
    auto y = ad::conv2d(x, w, Tensor::zeros({4}), 2);
    EXPECT_EQ(y.shape(), (ad::Shape{1, 4, 4, 3}));
}

TEST_F(AutodiffTest, SumOfSquaresGradient) {
    Tensor64 x({2}, {1.0, 2.0}, true);
    ad::backward(ad::sum(ad::mul(x, x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST_F(AutodiffTest, ExpGradientAtZero) {
    Tensor64 x({}, {0.0}, true);
    ad::backward(ad::exp(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST_F(AutodiffTest, NonScalarLossIsRejected) {
    Tensor64 x({2}, {1.0, 2.0}, true);
    EXPECT_THROW(ad::backward(ad::mul(x, x)), ad::ShapeError);
}

TEST_F(AutodiffTest, ShapeMismatchNamesOpAndShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 3});
    try {
        ad::add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ad::ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[4,3]"), std::string::npos);
    }
    EXPECT_THROW(ad::matmul(a, b), ad::ShapeError);
}

TEST_F(AutodiffTest, BroadcastRowVector) {
    Tensor64 m({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor64 b({3}, {10, 20, 30}, true);
    auto y = ad::add(m, b);
    EXPECT_DOUBLE_EQ(y.at({1, 2}), 36.0);
    ad::backward(ad::sum(y));
    EXPECT_DOUBLE_EQ(b.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(m.grad()[4], 1.0);
}

TEST_F(AutodiffTest, UnreachedTensorHasZeroGrad) {
    Tensor64 x({2}, {1.0, 2.0}, true);
    Tensor64 unused({2}, {3.0, 4.0}, true);
    auto side = ad::mul(unused, unused);
    (void)side;
    ad::backward(ad::sum(ad::exp(x)));
    for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
    for (double g : side.grad()) EXPECT_EQ(g, 0.0);
}

TEST_F(AutodiffTest, GradientsAccumulateAcrossUses) {
    Tensor64 x({}, {3.0}, true);
    ad::backward(ad::add(ad::mul(x, x), ad::scale(x, 2.0)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST_F(AutodiffTest, RandomGraphsMatchFiniteDifferences) {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (uint64_t g = 0; g < 20; ++g) {
        auto leaves = ofield::testing::random_leaves(rng, ofield::testing::random_graph_shapes());
        {
            auto loss = ofield::testing::random_graph(g, leaves);
            EXPECT_LE(ad::Tape<double>::current().size(), 50u);
            ad::Tape<double>::current().clear();
        }
        auto r = ofield::testing::gradcheck<double>(
            [g](const std::vector<Tensor64>& l) { return ofield::testing::random_graph(g, l); }, leaves, 1e-5);
        worst = std::max(worst, r.max_rel_error);
    }
    EXPECT_LT(worst, 1e-4);
}

TEST_F(AutodiffTest, BackwardIsLinearInTheLoss) {
    std::mt19937_64 rng(5);
    auto leaves = ofield::testing::random_leaves(rng, ofield::testing::random_graph_shapes());
    auto grads_of = [&](double a, double b) {
        for (auto& l : leaves) l.zero_grad();
        ad::Tape<double>::current().clear();
        auto l1 = ofield::testing::random_graph(11, leaves);
        auto l2 = ofield::testing::random_graph(12, leaves);
        ad::backward(ad::add(ad::scale(l1, a), ad::scale(l2, b)));
        std::vector<double> out;
        for (auto& l : leaves) out.insert(out.end(), l.grad().begin(), l.grad().end());
        return out;
    };
    const auto combined = grads_of(0.3, -1.7);
    const auto g1 = grads_of(1.0, 0.0);
    const auto g2 = grads_of(0.0, 1.0);
    for (std::size_t i = 0; i < combined.size(); ++i)
        EXPECT_NEAR(combined[i], 0.3 * g1[i] - 1.7 * g2[i], 1e-12 * (1.0 + std::abs(combined[i])));
}

TEST_F(AutodiffTest, DeterministicForwardAndBackward) {
    auto run = [] {
        std::mt19937_64 rng(77);
        auto leaves = ofield::testing::random_leaves(rng, ofield::testing::random_graph_shapes());
        ad::Tape<double>::current().clear();
        auto loss = ofield::testing::random_graph(9, leaves);
        ad::backward(loss);
        std::vector<double> out{loss.item()};
        for (auto& l : leaves) out.insert(out.end(), l.grad().begin(), l.grad().end());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST_F(AutodiffTest, ConvolutionGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(8);
    auto leaves = ofield::testing::random_leaves(rng, {{2, 3, 6, 5}, {4, 3, 3, 3}, {4}});
    for (int stride : {1, 2}) {
        auto r = ofield::testing::gradcheck<double>(
            [stride](const std::vector<Tensor64>& l) {
                auto y = ad::conv2d(l[0], l[1], l[2], stride);
                return ad::sum(ad::square(ad::upsample2x(y)));
            },
            // Quadratic loss: central differences are exact, so a wide step only trims roundoff.
            leaves, 1e-2);
        EXPECT_LT(r.max_rel_error, 1e-6) << "stride " << stride;
    }
}

TEST_F(AutodiffTest, PermuteConcatSliceGradients) {
    std::mt19937_64 rng(9);
    auto leaves = ofield::testing::random_leaves(rng, {{2, 3, 4}, {2, 5, 4}});
    auto r = ofield::testing::gradcheck<double>(
        [](const std::vector<Tensor64>& l) {
            auto c = ad::concat<double>({l[0], l[1]}, 1);
            auto p = ad::permute(c, {2, 0, 1});
            auto s = ad::slice(p, 2, 1, 7);
            return ad::sum(ad::mul(ad::cumsum(s, 2), ad::sigmoid(s)));
        },
        leaves, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST_F(AutodiffTest, AffineMatchesMatmulPlusBias) {
    std::mt19937_64 rng(10);
    auto leaves = ofield::testing::random_leaves(rng, {{5, 4}, {4, 3}, {3}});
    const auto fused = ad::affine(leaves[0], leaves[1], leaves[2]);
    const auto plain = ad::add(ad::matmul(leaves[0], leaves[1]), leaves[2]);
    for (std::size_t i = 0; i < fused.values().size(); ++i) EXPECT_NEAR(fused.values()[i], plain.values()[i], 1e-14);
    auto r = ofield::testing::gradcheck<double>(
        [](const std::vector<Tensor64>& l) { return ad::sum(ad::tanh(ad::affine(l[0], l[1], l[2]))); }, leaves, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(OptimizerTest, ZeroGradientLeavesParametersUnchanged) {
    Tensor p({3}, {1.0f, -2.0f, 0.5f}, true);
    p.mutable_grad();
    auto opt = ad::Optimizer<float>::adam();
    opt.step({p});
    EXPECT_EQ(std::vector<float>(p.values().begin(), p.values().end()), (std::vector<float>{1.0f, -2.0f, 0.5f}));
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(OptimizerTest, SgdStep) {
    Tensor64 p({}, {1.0}, true);
    p.mutable_grad()[0] = 1.0;
    auto opt = ad::Optimizer<double>::sgd(0.1);
    opt.step({p});
    EXPECT_DOUBLE_EQ(p.item(), 0.9);
    EXPECT_EQ(p.grad()[0], 0.0);
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(OptimizerTest, MissingGradientIsAnError) {
    Tensor p({2}, {1.0f, 2.0f}, true);
    auto opt = ad::Optimizer<float>::adam();
    EXPECT_THROW(opt.step({p}), std::logic_error);
}

TEST(OptimizerTest, AdamConvergesOnQuadraticBowl) {
    const std::vector<double> target{0.3, -1.2, 2.5, 0.0};
    Tensor64 w({4}, {0.0, 0.0, 0.0, 0.0}, true);
    Tensor64 t({4}, target);
    auto opt = ad::Optimizer<double>::adam(0.05);
    int steps = 0;
    double err = 1.0;
    for (; steps < 2000 && err > 1e-6; ++steps) {
        ad::Tape<double>::current().clear();
        ad::backward(ad::sum(ad::square(ad::sub(w, t))));
        opt.step({w});
        err = 0.0;
        for (std::size_t i = 0; i < 4; ++i) err = std::max(err, std::abs(w.values()[i] - target[i]));
    }
    ad::Tape<double>::current().clear();
    EXPECT_LE(err, 1e-6);
    EXPECT_LE(steps, 2000);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
    std::vector<ofield::NamedTensor> tensors{
        {"field.fine.w0", {2, 3}, {1.5f, -0.0f, 3.25e-20f, 7.0f, -1e30f, 0.1f}},
        {"renderer.radiance.b", {4}, {0.f, 1.f, 2.f, 3.f}},
        {"scalar", {}, {42.0f}}};
    const auto path = std::filesystem::temp_directory_path() / "ofield_ckpt_test.bin";
    ofield::save_checkpoint(path, tensors);
    const auto loaded = ofield::load_checkpoint(path);
    ASSERT_EQ(loaded.size(), tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        EXPECT_EQ(loaded[i].name, tensors[i].name);
        EXPECT_EQ(loaded[i].shape, tensors[i].shape);
        ASSERT_EQ(loaded[i].values.size(), tensors[i].values.size());
        EXPECT_EQ(std::memcmp(loaded[i].values.data(), tensors[i].values.data(),
                              tensors[i].values.size() * sizeof(float)),
                  0);
    }
    std::filesystem::remove(path);
}

TEST(CheckpointTest, RejectsBadMagic) {
    const auto path = std::filesystem::temp_directory_path() / "ofield_bad_ckpt.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE0000";
    }
    EXPECT_THROW(ofield::load_checkpoint(path), ofield::CheckpointError);
    std::filesystem::remove(path);
}

}  // namespace
