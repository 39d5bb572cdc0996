#include "ofield/model.hpp"
#include "ofield/camera.hpp"

#include "support/small_dataset.hpp"

#include <gtest/gtest.h>

using namespace ofield;
using ofield::testing::fuzzy_views;
using ofield::testing::tiny_config;

TEST(ModeTest, NamesRoundTrip) {
    for (Mode m : {Mode::kFullRange, Mode::kBypass, Mode::kNoGan, Mode::kFull}) EXPECT_EQ(mode_from_string(to_string(m)), m);
    EXPECT_EQ(mode_from_string("a"), Mode::kFullRange);
    EXPECT_EQ(mode_from_string("d"), Mode::kFull);
    EXPECT_THROW(mode_from_string("e"), ConfigError);
}

TEST(ConfigTest, JsonRoundTrip) {
    TrainConfig c = tiny_config(Mode::kBypass);
    c.loss.alpha_weight = 0.0;
    c.learning_rate = 1e-3;
    c.scene_bounds = Aabb{{-0.5, -0.6, -0.7}, {0.5, 0.6, 0.7}};
    const auto j = config_to_json(c);
    const TrainConfig d = config_from_json(j);
    EXPECT_EQ(config_to_json(d), j);
    EXPECT_EQ(d.mode, Mode::kBypass);
    EXPECT_EQ(d.patch_size, 8);
    EXPECT_EQ(d.field.width, 32);
    EXPECT_EQ(d.loss.alpha_weight, 0.0);
}

TEST(ConfigTest, MissingKeysKeepDefaults) {
    const TrainConfig d = config_from_json(nlohmann::json::object());
    EXPECT_EQ(config_to_json(d), config_to_json(TrainConfig{}));
}

TEST(ConfigTest, UnknownKeysRejectedWithPath) {
    auto j = config_to_json(TrainConfig{});
    j["sampler"]["KK"] = 4;
    try {
        config_from_json(j);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("sampler.KK"), std::string::npos);
    }
    auto k = config_to_json(TrainConfig{});
    k["bogus"] = 1;
    EXPECT_THROW(config_from_json(k), ConfigError);
}

TEST(ConfigTest, ValidationNamesKey) {
    auto j = config_to_json(TrainConfig{});
    j["loss"]["a"] = 3.0;
    try {
        config_from_json(j).validate();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("loss.a"), std::string::npos);
    }
    TrainConfig c;
    c.patch_size = 6;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.learning_rate = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ConfigTest, DottedOverrides) {
    auto j = config_to_json(TrainConfig{});
    apply_override(j, "sampler.K=32");
    apply_override(j, "mode=no-gan");
    apply_override(j, "optim.lr=0.001");
    const TrainConfig c = config_from_json(j);
    EXPECT_EQ(c.patch_size, 32);
    EXPECT_EQ(c.mode, Mode::kNoGan);
    EXPECT_DOUBLE_EQ(c.learning_rate, 0.001);
    EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
}

class ModelTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        config_ = tiny_config();
        config_.patch_size = 16;
        proxy_ = build_proxy(fuzzy_views(32), config_);
    }
    static TrainConfig config_;
    static Proxy proxy_;
};
TrainConfig ModelTest::config_;
Proxy ModelTest::proxy_;

TEST_F(ModelTest, ResidualAtInitKeepsCoarseAlpha) {
    OpacityFieldModel model(config_);
    const auto& view = fuzzy_views(32)[0].view;
    auto patches = partition_patches(view, proxy_.depth_bounds(view), config_.patch_size);
    ASSERT_FALSE(patches.empty());
    ad::NoGradGuard guard;
    const auto f = model.forward(patches, 0, false);
    ASSERT_EQ(f.alpha.shape(), f.features.coarse_alpha.shape());
    for (std::size_t i = 0; i < f.alpha.values().size(); ++i)
        ASSERT_EQ(f.alpha.values()[i], f.features.coarse_alpha.values()[i]);
}

TEST_F(ModelTest, BypassModeUsesColorHead) {
    TrainConfig c = config_;
    c.mode = Mode::kBypass;
    OpacityFieldModel model(c);
    const auto& view = fuzzy_views(32)[1].view;
    auto patches = partition_patches(view, proxy_.depth_bounds(view), c.patch_size);
    ad::NoGradGuard guard;
    const auto f = model.forward(patches, 0, false);
    EXPECT_TRUE(std::equal(f.image.values().begin(), f.image.values().end(), f.mlp_image.values().begin()));
    EXPECT_EQ(model.generator_parameters().count() + model.renderer().parameters().count(),
              OpacityFieldModel(config_).generator_parameters().count());
}

TEST_F(ModelTest, FullFrameMatchesPatchwiseInInterior) {
    TrainConfig c = config_;
    c.patch_size = 32;
    Proxy proxy = build_proxy(fuzzy_views(64), c);
    OpacityFieldModel model(c);
    // Give the residual head some weight so the opacity branch is exercised too.
    for (auto& [name, t] : model.all_parameters().entries)
        if (name == "renderer.opacity.out.weight")
            for (float& v : t.mutable_values()) v = 0.05f;
    const auto& view = fuzzy_views(64)[2].view;
    const auto bounds = proxy.depth_bounds(view);
    const FrameRender full = render_image(model, view, bounds);
    const FrameRender patch = render_patchwise(model, view, bounds);
    const int K = c.patch_size, margin = Renderer<float>::kReceptiveRadius;
    double worst = 0.0;
    int checked = 0;
    for (int r = 0; r < view.height; ++r)
        for (int col = 0; col < view.width; ++col) {
            const int pr = r % K, pc = col % K;
            if (pr < margin || pr >= K - margin || pc < margin || pc >= K - margin) continue;
            if (!full.valid.at(r, col)) continue;
            ++checked;
            worst = std::max(worst, static_cast<double>(std::abs(full.alpha.at(r, col) - patch.alpha.at(r, col))));
            for (int k = 0; k < 3; ++k)
                worst = std::max(worst, static_cast<double>(std::abs(full.foreground.at(r, col, k) -
                                                                      patch.foreground.at(r, col, k))));
        }
    EXPECT_GT(checked, 0);
    EXPECT_LT(worst, 1e-3);
}

TEST_F(ModelTest, RenderIsMaskedAndDeterministic) {
    OpacityFieldModel model(config_);
    const auto& view = fuzzy_views(32)[3].view;
    const auto bounds = proxy_.depth_bounds(view);
    const FrameRender a = render_image(model, view, bounds);
    const FrameRender b = render_image(model, view, bounds);
    EXPECT_EQ(a.alpha.data, b.alpha.data);
    EXPECT_EQ(a.foreground.data, b.foreground.data);
    std::size_t outside = 0;
    for (std::size_t p = 0; p < a.alpha.pixels(); ++p)
        if (!a.valid.data[p]) {
            ++outside;
            ASSERT_EQ(a.alpha.data[p], 0.0f);
        }
    EXPECT_GT(outside, 0u);
    for (float v : a.alpha.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : a.foreground.data) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST_F(ModelTest, ProxyModes) {
    const auto& view = fuzzy_views(32)[0].view;
    const DepthBounds tight = proxy_.depth_bounds(view);
    Proxy loose = proxy_;
    loose.efficient = false;
    const DepthBounds box = loose.depth_bounds(view);
    std::size_t tight_rays = 0, box_rays = 0;
    for (std::size_t p = 0; p < tight.valid.data.size(); ++p) {
        tight_rays += tight.valid.data[p];
        box_rays += box.valid.data[p];
        if (tight.valid.data[p]) {
            EXPECT_TRUE(box.valid.data[p]);
        }
    }
    EXPECT_LT(tight_rays, box_rays);
}

TEST_F(ModelTest, EmptySilhouettesFailToCarve) {
    std::vector<GroundTruthView> views = fuzzy_views(32);
    for (auto& v : views) std::fill(v.alpha.data.begin(), v.alpha.data.end(), 0.0f);
    EXPECT_THROW(build_proxy(views, config_), EmptyProxyError);
}
