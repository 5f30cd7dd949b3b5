#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/sdm.hpp"
#include "chroma/tensor.hpp"

using namespace chroma;

namespace {

sdm::SdmWeights<double> random_weights(const sdm::SdmConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    sdm::SdmWeights<double> w;
    w.embed_w = TensorD::gaussian({cfg.patch_values(), cfg.embed_dim}, rng, 0.0, 0.5);
    w.embed_b = TensorD::gaussian({cfg.embed_dim}, rng, 0.0, 0.1);
    w.wq = TensorD::gaussian({cfg.embed_dim, cfg.key_dim}, rng, 0.0, 0.5);
    w.wk = TensorD::gaussian({cfg.embed_dim, cfg.key_dim}, rng, 0.0, 0.5);
    w.wv = TensorD::gaussian({cfg.embed_dim, cfg.value_dim}, rng, 0.0, 0.5);
    return w;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::fabs(a.data()[static_cast<std::size_t>(i)] -
                                          b.data()[static_cast<std::size_t>(i)]));
    }
    return worst;
}

}  // namespace

TEST_SUITE("sdm") {

TEST_CASE("patchify and unpatchify are a lossless round trip") {
    Rng rng(3);
    TensorD x = TensorD::gaussian({5, 8, 8}, rng);
    TensorD patches = sdm::patchify_bands(x, 4);
    CHECK(patches.shape() == Shape{4, 5, 16});
    TensorD back = sdm::unpatchify_bands(patches, 8, 8);
    CHECK(max_abs_diff(back, x) == 0.0);
}

TEST_CASE("attention rows are stochastic") {
    sdm::SdmConfig cfg{.num_bands = 6, .patch_side = 2, .embed_dim = 8, .key_dim = 8, .value_dim = 8};
    cfg.keep_attention = true;
    Rng rng(11);
    TensorD x = TensorD::gaussian({6, 8, 8}, rng, 0.4, 0.3);
    auto result = sdm::sdm_forward(x, cfg, random_weights(cfg, 5));
    REQUIRE(result.attention.shape() == Shape{16, 6, 6});
    const auto a = result.attention.data();
    for (std::int64_t row = 0; row < 16 * 6; ++row) {
        double sum = 0.0;
        double low = 1.0;
        for (std::int64_t j = 0; j < 6; ++j) {
            const double v = a[static_cast<std::size_t>(row * 6 + j)];
            sum += v;
            low = std::min(low, v);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(low >= 0.0);
    }
}

TEST_CASE("permuting the input bands permutes the output rows") {
    sdm::SdmConfig cfg{.num_bands = 5, .patch_side = 2, .embed_dim = 7, .key_dim = 7, .value_dim = 4};
    auto weights = random_weights(cfg, 21);
    Rng rng(22);
    TensorD x = TensorD::gaussian({5, 4, 4}, rng, 0.5, 0.25);
    const std::vector<std::int64_t> perm = {3, 0, 4, 1, 2};

    auto idx = std::make_shared<std::vector<std::int64_t>>();
    for (std::int64_t c = 0; c < 5; ++c) {
        for (std::int64_t p = 0; p < 16; ++p) idx->push_back(perm[static_cast<std::size_t>(c)] * 16 + p);
    }
    TensorD x_perm = ops::gather(x, idx, x.shape());

    TensorD o = sdm::sdm_forward(x, cfg, weights).o;
    TensorD o_perm = sdm::sdm_forward(x_perm, cfg, weights).o;
    for (std::int64_t c = 0; c < 5; ++c) {
        for (std::int64_t j = 0; j < 4; ++j) {
            const double want = o.at({perm[static_cast<std::size_t>(c)], j});
            const double got = o_perm.at({c, j});
            CHECK(std::fabs(want - got) <= 1e-5 * std::max(1.0, std::fabs(want)));
        }
    }
}

TEST_CASE("swapping spatial patches leaves the aggregate unchanged") {
    sdm::SdmConfig cfg{.num_bands = 4, .patch_side = 4, .embed_dim = 6, .key_dim = 6, .value_dim = 6};
    auto weights = random_weights(cfg, 31);
    Rng rng(32);
    TensorD x = TensorD::gaussian({4, 8, 8}, rng, 0.5, 0.25);

    // swap the top-left and bottom-right 4x4 patches in every band
    std::vector<double> buf(x.data().begin(), x.data().end());
    for (std::int64_t c = 0; c < 4; ++c) {
        for (std::int64_t y = 0; y < 4; ++y) {
            for (std::int64_t xx = 0; xx < 4; ++xx) {
                const std::size_t tl = static_cast<std::size_t>((c * 8 + y) * 8 + xx);
                const std::size_t br = static_cast<std::size_t>((c * 8 + y + 4) * 8 + xx + 4);
                std::swap(buf[tl], buf[br]);
            }
        }
    }
    TensorD x_swapped(x.shape(), std::move(buf));

    TensorD o = sdm::sdm_forward(x, cfg, weights).o;
    TensorD o_swapped = sdm::sdm_forward(x_swapped, cfg, weights).o;
    CHECK(max_abs_diff(o, o_swapped) <= 1e-12);
}

TEST_CASE("the fused forward matches per-patch spectral attention") {
    sdm::SdmConfig cfg{.num_bands = 3, .patch_side = 2, .embed_dim = 5, .key_dim = 5, .value_dim = 5};
    auto weights = random_weights(cfg, 41);
    Rng rng(42);
    TensorD x = TensorD::gaussian({3, 4, 4}, rng, 0.5, 0.25);

    TensorD patches = sdm::patchify_bands(x, 2);
    TensorD expect = TensorD::zeros({3, 5});
    for (std::int64_t p = 0; p < 4; ++p) {
        TensorD patch = ops::slice_rows(ops::reshape(patches, {4 * 3, 4}), p * 3, (p + 1) * 3);
        TensorD z = sdm::embed_patches(ops::reshape(patch, {1, 3, 4}), weights, cfg.embed_bias);
        auto attn = sdm::spectral_attention(ops::reshape(z, {3, 5}), weights);
        expect = ops::add(expect, attn.out);
    }
    expect = ops::scale(expect, 0.25);

    TensorD got = sdm::sdm_forward(x, cfg, weights).o;
    CHECK(max_abs_diff(expect, got) <= 1e-12);
}

TEST_CASE("shape validation") {
    sdm::SdmConfig cfg{.num_bands = 4, .patch_side = 3, .embed_dim = 4, .key_dim = 4, .value_dim = 4};
    auto weights = random_weights(cfg, 51);
    Rng rng(52);
    CHECK_THROWS_AS(sdm::sdm_forward(TensorD::gaussian({4, 8, 8}, rng), cfg, weights), ShapeError);
    CHECK_THROWS_AS(sdm::sdm_forward(TensorD::gaussian({5, 9, 9}, rng), cfg, weights), ShapeError);
    CHECK_THROWS_AS(sdm::patchify_bands(TensorD::gaussian({4, 4}, rng), 2), ShapeError);
}

}  // TEST_SUITE
