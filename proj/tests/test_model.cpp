#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "chroma/checkpoint.hpp"
#include "chroma/error.hpp"
#include "chroma/model.hpp"
#include "chroma/model_config.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

using namespace chroma;

namespace {

ModelConfig tiny_chroma() {
    ModelConfig cfg;
    cfg.family = "chromaformer";
    cfg.name = "test-chroma";
    cfg.in_bands = 4;
    cfg.num_classes = 3;
    cfg.embed_dim = 8;
    cfg.stage_depths = {2};
    cfg.head_counts = {2};
    cfg.window_side = 4;
    cfg.mlp_ratio = 2.0;
    cfg.patch_embed_side = 2;
    sdm::SdmConfig s;
    s.num_bands = 4;
    s.patch_side = 4;
    s.embed_dim = 8;
    s.key_dim = 8;
    s.value_dim = 8;
    cfg.sdm = s;
    return cfg;
}

ModelConfig tiny_swin() {
    ModelConfig cfg = tiny_chroma();
    cfg.family = "swin";
    cfg.name = "test-swin";
    cfg.sdm.reset();
    return cfg;
}

std::filesystem::path scratch_dir(const std::string& leaf) {
    std::filesystem::path dir = std::filesystem::path(CHROMA_TEST_SCRATCH) / leaf;
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter walker and model allocation agree") {
    for (const auto& cfg : {tiny_chroma(), tiny_swin()}) {
        Model<float> model(cfg, 7);
        CHECK(model.parameter_count() == param_count(cfg));
    }
    ModelConfig cnn;
    cnn.family = "resnet_like";
    cnn.in_bands = 4;
    cnn.num_classes = 3;
    cnn.cnn_width = 8;
    cnn.cnn_blocks = 2;
    Model<float> resnet(cnn, 7);
    CHECK(resnet.parameter_count() == param_count(cnn));
    cnn.family = "unetpp_like";
    Model<float> unet(cnn, 7);
    CHECK(unet.parameter_count() == param_count(cnn));
}

TEST_CASE("a fresh band-attention model starts at its plain twin") {
    Model<double> chroma(tiny_chroma(), 9);
    Model<double> swin(tiny_swin(), 9);
    Rng rng(10);
    TensorD x = TensorD::gaussian({4, 16, 16}, rng, 0.5, 0.2);
    TensorD a = chroma.forward(x);
    TensorD b = swin.forward(x);
    REQUIRE(a.shape() == Shape{3, 16, 16});
    REQUIRE(b.shape() == a.shape());
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::fabs(a.data()[static_cast<std::size_t>(i)] -
                                          b.data()[static_cast<std::size_t>(i)]));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("band attention probe is row-stochastic; plain models have none") {
    Model<double> chroma(tiny_chroma(), 13);
    Rng rng(14);
    TensorD x = TensorD::gaussian({4, 16, 16}, rng, 0.5, 0.2);
    TensorD stack = chroma.band_attention(x);
    REQUIRE(stack.shape() == Shape{16, 4, 4});
    for (std::int64_t row = 0; row < 16 * 4; ++row) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < 4; ++j) sum += stack.data()[static_cast<std::size_t>(row * 4 + j)];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    Model<double> swin(tiny_swin(), 13);
    CHECK_THROWS_AS(swin.band_attention(x), ConfigError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const auto dir = scratch_dir("ckpt");
    Model<float> model(tiny_chroma(), 3);
    ckpt::CheckpointMeta meta{.epoch = 2, .step = 34, .seed = 3};
    ckpt::save_model_checkpoint(dir / "model", model, meta);

    auto loaded = ckpt::load_checkpoint(dir / "model");
    CHECK(loaded.meta.epoch == 2);
    CHECK(loaded.meta.step == 34);
    CHECK(loaded.meta.seed == 3);
    CHECK(loaded.config.family == "chromaformer");
    CHECK(loaded.config.embed_dim == 8);
    REQUIRE(loaded.config.sdm.has_value());
    CHECK(loaded.config.sdm->patch_side == 4);

    Model<float> restored = ckpt::restore_model(loaded);
    for (auto& [name, tensor] : model.parameters()) {
        const TensorF& other = restored.param(name);
        REQUIRE(other.shape() == tensor->shape());
        for (std::int64_t i = 0; i < tensor->numel(); ++i) {
            CHECK(other.data()[static_cast<std::size_t>(i)] == tensor->data()[static_cast<std::size_t>(i)]);
        }
    }
}

TEST_CASE("restoring rejects missing, misshapen, and unknown parameters") {
    const auto dir = scratch_dir("ckpt_bad");
    Model<float> model(tiny_swin(), 5);
    ckpt::save_model_checkpoint(dir / "model", model, {});

    auto missing = ckpt::load_checkpoint(dir / "model");
    missing.params.erase("patch_embed.w");
    CHECK_THROWS_AS(ckpt::restore_model(missing), ValueError);

    auto misshapen = ckpt::load_checkpoint(dir / "model");
    misshapen.params.at("patch_embed.b") = TensorF::zeros({3});
    CHECK_THROWS_AS(ckpt::restore_model(misshapen), ShapeError);

    auto extra = ckpt::load_checkpoint(dir / "model");
    extra.params.emplace("not.a.param", TensorF::zeros({1}));
    CHECK_THROWS_AS(ckpt::restore_model(extra), ValueError);
}

TEST_CASE("model config json round trip") {
    ModelConfig cfg = tiny_chroma();
    cfg.shift = 1;
    ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.family == cfg.family);
    CHECK(back.name == cfg.name);
    CHECK(back.in_bands == cfg.in_bands);
    CHECK(back.num_classes == cfg.num_classes);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.stage_depths == cfg.stage_depths);
    CHECK(back.head_counts == cfg.head_counts);
    CHECK(back.window_side == cfg.window_side);
    CHECK(back.shift == 1);
    CHECK(back.mlp_ratio == cfg.mlp_ratio);
    CHECK(back.patch_embed_side == cfg.patch_embed_side);
    REQUIRE(back.sdm.has_value());
    CHECK(back.sdm->num_bands == 4);
    CHECK(back.sdm->patch_side == 4);
    CHECK(back.sdm->embed_dim == 8);

    ModelConfig cnn;
    cnn.family = "resnet_like";
    cnn.cnn_width = 24;
    cnn.cnn_blocks = 3;
    ModelConfig cnn_back = model_config_from_json(model_config_to_json(cnn));
    CHECK(cnn_back.family == "resnet_like");
    CHECK(cnn_back.cnn_width == 24);
    CHECK(cnn_back.cnn_blocks == 3);
    CHECK(!cnn_back.sdm.has_value());
}

TEST_CASE("config validation rejects inconsistent settings") {
    ModelConfig cfg = tiny_chroma();
    cfg.family = "mystery";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_chroma();
    cfg.sdm.reset();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // chromaformer needs band attention

    cfg = tiny_swin();
    cfg.sdm = tiny_chroma().sdm;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // plain swin must not carry it

    cfg = tiny_swin();
    cfg.head_counts = {2, 4};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // one stage, two head counts

    cfg = tiny_swin();
    cfg.head_counts = {3};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // 3 does not divide width 8

    cfg = tiny_swin();
    cfg.shift = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // shift must stay below window_side

    cfg = tiny_chroma();
    cfg.sdm->num_bands = 5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // band attention runs on the raw input

    CHECK(tiny_swin().effective_shift() == 2);  // -1 resolves to window_side / 2
}

TEST_CASE("forward validates the input image") {
    Model<float> model(tiny_swin(), 11);
    Rng rng(12);
    CHECK_THROWS_AS(model.forward(TensorF::gaussian({3, 16, 16}, rng)), ShapeError);
    CHECK_THROWS_AS(model.forward(TensorF::gaussian({4, 15, 16}, rng)), ShapeError);
}

TEST_CASE("desk variants and the full-scale reference are well-formed") {
    ModelConfig tiny = desk_variant("chromaformer", 't', 12, 6);
    CHECK(tiny.family == "chromaformer");
    CHECK(tiny.sdm.has_value());
    tiny.validate();

    ModelConfig ref_swin = full_scale_reference("swin", 12, 6);
    ModelConfig ref_chroma = full_scale_reference("chromaformer", 12, 6);
    ref_swin.validate();
    ref_chroma.validate();
    CHECK(ref_swin.embed_dim == 96);
    CHECK(!ref_swin.sdm.has_value());
    CHECK(param_count(ref_chroma) - param_count(ref_swin) == sdm_fusion_param_count(ref_chroma));
}

}  // TEST_SUITE
