#include "chroma/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/grad_check.hpp"
#include "chroma/model.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/sdm.hpp"
#include "chroma/tensor.hpp"
#include "chroma/window.hpp"

namespace chroma::gradcheck {

namespace {

using Params = std::vector<std::pair<std::string, TensorD*>>;

constexpr double kAnchor = 0.01; // quadratic penalty weight on composite targets

TensorD anchored(TensorD loss, const Params& params) {
    for (const auto& [name, p] : params) {
        loss = ops::add(loss, ops::scale(ops::sum_all(ops::mul(*p, *p)), kAnchor));
    }
    return loss;
}

template <typename LossFn>
GradCheckReport run_fd(const LossFn& loss_fn, const Params& params, std::uint64_t seed, double tol,
                       std::int64_t max_coords = -1) {
    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.tolerance = tol;
    opt.max_coords_per_tensor = max_coords;
    Rng sub(seed + 99);
    if (max_coords >= 0) opt.rng = &sub;
    return finite_difference_check<double>(loss_fn, params, opt);
}

// ---------------------------------------------------------------- primitives
//
// Each op is probed through an elementwise product with fixed random weights
// before the reduction, so the scalar loss distinguishes every output
// coordinate; a plain sum would pass ops that permute or transpose their
// output. The weights are drawn once, outside the loss closure, keeping the
// loss deterministic across the finite-difference evaluations.

GradCheckReport t_add(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD a = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD b = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 4}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::add(a, b), w)); };
    return run_fd(loss, {{"a", &a}, {"b", &b}}, seed, tol);
}

GradCheckReport t_scale(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD a = TensorD::gaussian({2, 5}, rng).with_grad();
    TensorD w = TensorD::gaussian({2, 5}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::scale(a, 0.7), w)); };
    return run_fd(loss, {{"a", &a}}, seed, tol);
}

GradCheckReport t_sub(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD a = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD b = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 4}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::sub(a, b), w)); };
    return run_fd(loss, {{"a", &a}, {"b", &b}}, seed, tol);
}

GradCheckReport t_mul(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD a = TensorD::gaussian({4, 3}, rng).with_grad();
    TensorD b = TensorD::gaussian({4, 3}, rng).with_grad();
    TensorD w = TensorD::gaussian({4, 3}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::mul(a, b), w)); };
    return run_fd(loss, {{"a", &a}, {"b", &b}}, seed, tol);
}

GradCheckReport t_add_row_broadcast(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({5, 3}, rng).with_grad();
    TensorD b = TensorD::gaussian({3}, rng).with_grad();
    TensorD w = TensorD::gaussian({5, 3}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::add_row_broadcast(x, b), w)); };
    return run_fd(loss, {{"x", &x}, {"b", &b}}, seed, tol);
}

GradCheckReport t_reductions(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD a = TensorD::gaussian({3, 3}, rng).with_grad();
    TensorD b = TensorD::gaussian({2, 4}, rng).with_grad();
    auto loss = [&] { return ops::add(ops::scale(ops::sum_all(a), 1.7), ops::scale(ops::mean_all(b), -2.3)); };
    return run_fd(loss, {{"a", &a}, {"b", &b}}, seed, tol);
}

GradCheckReport t_matmul(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD a = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD b = TensorD::gaussian({4, 2}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 2}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::matmul(a, b), w)); };
    return run_fd(loss, {{"a", &a}, {"b", &b}}, seed, tol);
}

GradCheckReport t_transpose(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({3, 5}, rng).with_grad();
    TensorD w = TensorD::gaussian({5, 3}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::transpose(x), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_reshape(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({2, 6}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 4}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::reshape(x, {3, 4}), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_gather(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({4, 3}, rng).with_grad();
    auto idx = std::make_shared<std::vector<std::int64_t>>(10);
    for (auto& i : *idx) i = static_cast<std::int64_t>(rng.uniform_index(12));
    (*idx)[1] = (*idx)[0]; // force a duplicate so the scatter-add path runs
    ops::IndexMap map = idx;
    TensorD w = TensorD::gaussian({2, 5}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::gather(x, map, {2, 5}), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_slice_concat(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({5, 4}, rng).with_grad();
    TensorD w = TensorD::gaussian({6, 3}, rng);
    auto loss = [&] {
        TensorD s = ops::slice_rows(x, 1, 4);                            // [3 x 4]
        TensorD c = ops::concat_cols<double>({ops::slice_cols(s, 1, 2),  // [3 x 2]
                                              ops::slice_cols(s, 3, 1)}); // [3 x 1]
        return ops::sum_all(ops::mul(ops::concat_axis0(c, c), w));       // [6 x 3]
    };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_softmax_rows(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({4, 5}, rng, 0.0, 2.0).with_grad();
    TensorD w = TensorD::gaussian({4, 5}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::softmax_rows(x), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_masked_softmax_rows(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({4, 5}, rng, 0.0, 2.0).with_grad();
    ops::AttnMask mask;
    mask.rows = 4;
    mask.cols = 5;
    mask.allowed.resize(20);
    for (auto& m : mask.allowed) m = rng.uniform() < 0.5 ? 1 : 0;
    for (std::int64_t i = 0; i < 4; ++i) mask.allowed[static_cast<std::size_t>(i * 5 + i)] = 1;
    TensorD w = TensorD::gaussian({4, 5}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::masked_softmax_rows(x, mask), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_mean_over_axis(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({3, 4, 2}, rng).with_grad();
    TensorD w0 = TensorD::gaussian({4, 2}, rng);
    TensorD w1 = TensorD::gaussian({3, 2}, rng);
    auto loss = [&] {
        return ops::add(ops::sum_all(ops::mul(ops::mean_over_axis(x, 0), w0)),
                        ops::sum_all(ops::mul(ops::mean_over_axis(x, 1), w1)));
    };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_layer_norm(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({4, 6}, rng).with_grad();
    TensorD g = TensorD::gaussian({6}, rng, 1.0, 0.2).with_grad();
    TensorD b = TensorD::gaussian({6}, rng, 0.0, 0.2).with_grad();
    TensorD w = TensorD::gaussian({4, 6}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::layer_norm(x, g, b), w)); };
    return run_fd(loss, {{"x", &x}, {"gain", &g}, {"bias", &b}}, seed, tol);
}

GradCheckReport t_gelu(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 4}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::gelu(x), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_relu(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({3, 4}, rng).with_grad();
    // Central differences straddle the kink when |x| < eps, so keep every
    // input a safe distance from zero; that is a property of the check, not
    // of the derivative.
    for (auto& v : x.mutable_data()) {
        if (std::fabs(v) < 0.05) v += v >= 0.0 ? 0.1 : -0.1;
    }
    TensorD w = TensorD::gaussian({3, 4}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::relu(x), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_linear(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({4, 3}, rng).with_grad();
    TensorD wm = TensorD::gaussian({3, 5}, rng).with_grad();
    TensorD b = TensorD::gaussian({5}, rng).with_grad();
    TensorD w = TensorD::gaussian({4, 5}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::linear(x, wm, b), w)); };
    return run_fd(loss, {{"x", &x}, {"w", &wm}, {"b", &b}}, seed, tol);
}

GradCheckReport t_conv2d(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({2, 5, 5}, rng).with_grad();
    TensorD k = TensorD::gaussian({3, 2, 3, 3}, rng, 0.0, 0.4).with_grad();
    TensorD b = TensorD::gaussian({3}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 5, 5}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::conv2d(x, k, b, {.stride = 1, .pad = 1}), w)); };
    return run_fd(loss, {{"x", &x}, {"kernel", &k}, {"bias", &b}}, seed, tol);
}

GradCheckReport t_conv2d_strided(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({2, 6, 6}, rng).with_grad();
    TensorD k = TensorD::gaussian({3, 2, 2, 2}, rng, 0.0, 0.4).with_grad();
    TensorD b = TensorD::gaussian({3}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 3, 3}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::conv2d(x, k, b, {.stride = 2, .pad = 0}), w)); };
    return run_fd(loss, {{"x", &x}, {"kernel", &k}, {"bias", &b}}, seed, tol);
}

GradCheckReport t_upsample_nearest(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({2, 3, 3}, rng).with_grad();
    TensorD w = TensorD::gaussian({2, 6, 6}, rng);
    auto loss = [&] { return ops::sum_all(ops::mul(ops::upsample_nearest(x, 2), w)); };
    return run_fd(loss, {{"x", &x}}, seed, tol);
}

GradCheckReport t_cross_entropy(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD logits = TensorD::gaussian({6, 4}, rng).with_grad();
    std::vector<std::int32_t> labels(6);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_index(4));
    labels[2] = 255; // one ignored row must not receive gradient
    auto loss = [&] {
        return ops::cross_entropy_logits(logits, std::span<const std::int32_t>(labels), 255);
    };
    return run_fd(loss, {{"logits", &logits}}, seed, tol);
}

GradCheckReport t_cross_entropy_weighted(std::uint64_t seed, double tol) {
    Rng rng(seed);
    TensorD logits = TensorD::gaussian({6, 4}, rng).with_grad();
    std::vector<std::int32_t> labels(6);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_index(4));
    labels[4] = 255;
    auto loss = [&] {
        return ops::cross_entropy_logits(logits, std::span<const std::int32_t>(labels), 255, 0.25);
    };
    return run_fd(loss, {{"logits", &logits}}, seed, tol);
}

// ----------------------------------------------------------------------- sdm

// Band attention end to end (patchify, shared embed, per-patch attention,
// patch mean), read out through a linear head and cross entropy so the
// downstream gradient is non-uniform across bands and value columns.
GradCheckReport t_sdm_end_to_end(std::uint64_t seed, double tol) {
    Rng rng(seed);
    sdm::SdmConfig cfg;
    cfg.num_bands = 5;
    cfg.patch_side = 2;
    cfg.embed_dim = 6;
    cfg.key_dim = 4;
    cfg.value_dim = 3;
    sdm::SdmWeights<double> w;
    w.embed_w = TensorD::gaussian({cfg.patch_values(), cfg.embed_dim}, rng, 0.0, 0.5).with_grad();
    w.embed_b = TensorD::gaussian({cfg.embed_dim}, rng, 0.0, 0.5).with_grad();
    w.wq = TensorD::gaussian({cfg.embed_dim, cfg.key_dim}, rng, 0.0, 0.5).with_grad();
    w.wk = TensorD::gaussian({cfg.embed_dim, cfg.key_dim}, rng, 0.0, 0.5).with_grad();
    w.wv = TensorD::gaussian({cfg.embed_dim, cfg.value_dim}, rng, 0.0, 0.5).with_grad();
    TensorD x = TensorD::gaussian({5, 4, 4}, rng, 0.5, 0.25).with_grad();
    TensorD head = TensorD::gaussian({cfg.value_dim, 4}, rng);
    std::vector<std::int32_t> labels(5);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_index(4));

    Params params = {{"x", &x},           {"embed_w", &w.embed_w}, {"embed_b", &w.embed_b},
                     {"wq", &w.wq},       {"wk", &w.wk},           {"wv", &w.wv}};
    auto loss = [&] {
        TensorD rows = ops::matmul(sdm::sdm_forward(x, cfg, w).o, head); // [C x 4]
        TensorD ce = ops::cross_entropy_logits(rows, std::span<const std::int32_t>(labels));
        return anchored(ce, params);
    };
    return run_fd(loss, params, seed, tol);
}

// --------------------------------------------------------------------- block

// One fused transformer block assembled directly from ops: band-attention
// context added onto embedded tokens, shifted windowed attention with masks
// and relative-position bias, then the MLP, a linear head, and cross entropy.
// Deliberately re-built by hand rather than through Model so the two
// constructions are independent witnesses of the same gradient.
struct BlockSetup {
    static constexpr std::int64_t kGrid = 4;   // 4x4 token grid
    static constexpr std::int64_t kDim = 6;    // token width
    static constexpr std::int64_t kHeads = 2;  // head width 3
    static constexpr std::int64_t kWin = 2;    // window side, shift 1
    static constexpr std::int64_t kShift = 1;
    static constexpr std::int64_t kClasses = 3;

    sdm::SdmConfig sdm_cfg;
    sdm::SdmWeights<double> sdm_w;
    TensorD image;  // [3 x 8 x 8] band-attention input
    TensorD tokens; // [16 x 6]
    TensorD fuse_w, fuse_b;
    TensorD ln1_g, ln1_b, ln2_g, ln2_b;
    TensorD q_w, q_b, k_w, k_b, v_w, v_b, proj_w, proj_b, relpos;
    TensorD fc1_w, fc1_b, fc2_w, fc2_b;
    TensorD head_w, head_b;
    std::vector<std::int32_t> labels;

    explicit BlockSetup(std::uint64_t seed) {
        Rng rng(seed);
        sdm_cfg.num_bands = 3;
        sdm_cfg.patch_side = 2;
        sdm_cfg.embed_dim = 4;
        sdm_cfg.key_dim = 4;
        sdm_cfg.value_dim = 3;
        auto draw = [&rng](Shape shape, double sd = 0.4) {
            return TensorD::gaussian(std::move(shape), rng, 0.0, sd).with_grad();
        };
        sdm_w.embed_w = draw({4, 4});
        sdm_w.embed_b = draw({4});
        sdm_w.wq = draw({4, 4});
        sdm_w.wk = draw({4, 4});
        sdm_w.wv = draw({4, 3});
        image = TensorD::gaussian({3, 8, 8}, rng, 0.5, 0.25).with_grad();
        tokens = draw({kGrid * kGrid, kDim}, 0.6);
        fuse_w = draw({sdm_cfg.num_bands * sdm_cfg.value_dim, kDim});
        fuse_b = draw({kDim});
        ln1_g = TensorD::gaussian({kDim}, rng, 1.0, 0.2).with_grad();
        ln1_b = draw({kDim});
        q_w = draw({kDim, kDim});
        q_b = draw({kDim});
        k_w = draw({kDim, kDim});
        k_b = draw({kDim});
        v_w = draw({kDim, kDim});
        v_b = draw({kDim});
        proj_w = draw({kDim, kDim});
        proj_b = draw({kDim});
        relpos = draw({(2 * kWin - 1) * (2 * kWin - 1), kHeads});
        ln2_g = TensorD::gaussian({kDim}, rng, 1.0, 0.2).with_grad();
        ln2_b = draw({kDim});
        fc1_w = draw({kDim, 2 * kDim});
        fc1_b = draw({2 * kDim});
        fc2_w = draw({2 * kDim, kDim});
        fc2_b = draw({kDim});
        head_w = draw({kDim, kClasses});
        head_b = draw({kClasses});
        labels.resize(static_cast<std::size_t>(kGrid * kGrid));
        for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_index(kClasses));
    }

    Params params() {
        return {{"image", &image},          {"tokens", &tokens},
                {"sdm.embed_w", &sdm_w.embed_w}, {"sdm.embed_b", &sdm_w.embed_b},
                {"sdm.wq", &sdm_w.wq},      {"sdm.wk", &sdm_w.wk},
                {"sdm.wv", &sdm_w.wv},      {"fuse_w", &fuse_w},
                {"fuse_b", &fuse_b},        {"ln1.gain", &ln1_g},
                {"ln1.bias", &ln1_b},       {"attn.q_w", &q_w},
                {"attn.q_b", &q_b},         {"attn.k_w", &k_w},
                {"attn.k_b", &k_b},         {"attn.v_w", &v_w},
                {"attn.v_b", &v_b},         {"attn.proj_w", &proj_w},
                {"attn.proj_b", &proj_b},   {"attn.relpos", &relpos},
                {"ln2.gain", &ln2_g},       {"ln2.bias", &ln2_b},
                {"mlp.fc1_w", &fc1_w},      {"mlp.fc1_b", &fc1_b},
                {"mlp.fc2_w", &fc2_w},      {"mlp.fc2_b", &fc2_b},
                {"head_w", &head_w},        {"head_b", &head_b}};
    }

    TensorD attention(const TensorD& x) const {
        const std::int64_t dh = kDim / kHeads;
        const std::int64_t wt = kWin * kWin;
        const std::int64_t n_win = (kGrid * kGrid) / wt;
        TensorD grid = ops::gather(x, win::cyclic_shift_map(kGrid, kGrid, kDim, kShift, kShift), x.shape());
        TensorD xw = win::window_partition(grid, kGrid, kGrid, kWin);
        TensorD q = ops::linear(xw, q_w, q_b);
        TensorD k = ops::linear(xw, k_w, k_b);
        TensorD v = ops::linear(xw, v_w, v_b);
        std::vector<ops::AttnMask> masks = win::window_masks_from_ids(
            win::attention_region_ids(kGrid, kGrid, kGrid, kGrid, kWin, kShift), kGrid, kGrid, kWin);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        TensorD stacked;
        for (std::int64_t wi = 0; wi < n_win; ++wi) {
            std::vector<TensorD> head_outs;
            for (std::int64_t hd = 0; hd < kHeads; ++hd) {
                auto rows = [&](const TensorD& m) {
                    return ops::slice_rows(ops::slice_cols(m, hd * dh, dh), wi * wt, (wi + 1) * wt);
                };
                TensorD scores = ops::scale(ops::matmul(rows(q), ops::transpose(rows(k))), inv_sqrt);
                scores = ops::add(scores, ops::gather(relpos, win::relpos_index_map(kWin, kHeads, hd), {wt, wt}));
                head_outs.push_back(ops::matmul(ops::masked_softmax_rows(scores, masks[static_cast<std::size_t>(wi)]),
                                                rows(v)));
            }
            TensorD merged = ops::concat_cols(head_outs);
            stacked = wi == 0 ? merged : ops::concat_axis0(stacked, merged);
        }
        TensorD out = ops::linear(stacked, proj_w, proj_b);
        out = win::window_reverse(out, kGrid, kGrid, kWin);
        return ops::gather(out, win::cyclic_shift_map(kGrid, kGrid, kDim, -kShift, -kShift), out.shape());
    }

    TensorD loss(const Params& params_list) {
        TensorD o = sdm::sdm_forward(image, sdm_cfg, sdm_w).o; // [3 x 3]
        TensorD fuse = ops::reshape(
            ops::linear(ops::reshape(o, {1, sdm_cfg.num_bands * sdm_cfg.value_dim}), fuse_w, fuse_b), {kDim});
        TensorD t = ops::add_row_broadcast(tokens, fuse);
        TensorD y = ops::add(t, attention(ops::layer_norm(t, ln1_g, ln1_b)));
        TensorD mid = ops::gelu(ops::linear(ops::layer_norm(y, ln2_g, ln2_b), fc1_w, fc1_b));
        TensorD out = ops::add(y, ops::linear(mid, fc2_w, fc2_b));
        TensorD logits = ops::linear(out, head_w, head_b);
        TensorD ce = ops::cross_entropy_logits(logits, std::span<const std::int32_t>(labels));
        return anchored(ce, params_list);
    }
};

GradCheckReport t_chroma_block(std::uint64_t seed, double tol) {
    BlockSetup setup(seed);
    Params params = setup.params();
    auto loss = [&] { return setup.loss(params); };
    return run_fd(loss, params, seed, tol, 4);
}

// --------------------------------------------------------------------- model

// Whole tiny network: patch embed, band-attention fusion, two blocks (the
// second shifted), segmentation head, pixel cross entropy. Parameters are
// nudged off their init values first; zero-init fusion weights and ones-init
// gains are special points where several gradients vanish or coincide, and
// the check should see a generic configuration.
GradCheckReport t_tiny_model(std::uint64_t seed, double tol) {
    ModelConfig tiny;
    tiny.family = "chromaformer";
    tiny.name = "gradcheck-tiny";
    tiny.in_bands = 4;
    tiny.num_classes = 3;
    tiny.embed_dim = 8;
    tiny.stage_depths = {2};
    tiny.head_counts = {2};
    tiny.window_side = 4;
    tiny.mlp_ratio = 2.0;
    tiny.patch_embed_side = 2;
    sdm::SdmConfig s;
    s.num_bands = 4;
    s.patch_side = 4;
    s.embed_dim = 4;
    s.key_dim = 4;
    s.value_dim = 4;
    tiny.sdm = s;

    Model<double> model(tiny, seed);
    Rng jiggle(seed ^ 0xabcdef);
    for (auto& [name, p] : model.parameters()) {
        for (auto& v : p->mutable_data()) v += jiggle.gaussian(0.0, 0.3);
    }
    Rng rng(seed * 17 + 5);
    TensorD image = TensorD::gaussian({4, 16, 16}, rng, 0.5, 0.2);
    std::vector<std::int32_t> labels(16 * 16);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_index(3));

    Params params = model.parameters();
    auto loss = [&] {
        TensorD logits = model.forward(image);
        TensorD rows = ops::transpose(ops::reshape(logits, {3, 16 * 16}));
        TensorD ce = ops::cross_entropy_logits(rows, std::span<const std::int32_t>(labels), 255);
        return anchored(ce, params);
    };
    return run_fd(loss, params, seed, tol, 3);
}

// ------------------------------------------------------------------ registry

struct TargetDef {
    const char* name;
    const char* scope;
    GradCheckReport (*run)(std::uint64_t, double);
};

constexpr TargetDef kTargets[] = {
    {"add", "primitives", t_add},
    {"scale", "primitives", t_scale},
    {"sub", "primitives", t_sub},
    {"mul", "primitives", t_mul},
    {"add_row_broadcast", "primitives", t_add_row_broadcast},
    {"sum_mean", "primitives", t_reductions},
    {"matmul", "primitives", t_matmul},
    {"transpose", "primitives", t_transpose},
    {"reshape", "primitives", t_reshape},
    {"gather", "primitives", t_gather},
    {"slice_concat", "primitives", t_slice_concat},
    {"softmax_rows", "primitives", t_softmax_rows},
    {"masked_softmax_rows", "primitives", t_masked_softmax_rows},
    {"mean_over_axis", "primitives", t_mean_over_axis},
    {"layer_norm", "primitives", t_layer_norm},
    {"gelu", "primitives", t_gelu},
    {"relu", "primitives", t_relu},
    {"linear", "primitives", t_linear},
    {"conv2d", "primitives", t_conv2d},
    {"conv2d_strided", "primitives", t_conv2d_strided},
    {"upsample_nearest", "primitives", t_upsample_nearest},
    {"cross_entropy", "primitives", t_cross_entropy},
    {"cross_entropy_weighted", "primitives", t_cross_entropy_weighted},
    {"sdm_end_to_end", "sdm", t_sdm_end_to_end},
    {"chroma_block", "block", t_chroma_block},
    {"tiny_model", "model", t_tiny_model},
};

}  // namespace

std::vector<std::string> suite_scopes() { return {"primitives", "sdm", "block", "model"}; }

std::vector<TargetResult> run_suite(const std::string& scope, const SuiteOptions& options) {
    if (options.seeds < 1) throw ConfigError("gradcheck: seeds must be >= 1");
    if (options.tolerance <= 0.0) throw ConfigError("gradcheck: tolerance must be positive");
    bool known = scope == "all";
    for (const auto& s : suite_scopes()) known = known || scope == s;
    if (!known) {
        throw ConfigError("gradcheck: unknown scope '" + scope + "' (use primitives, sdm, block, model, or all)");
    }

    std::vector<TargetResult> results;
    for (const TargetDef& target : kTargets) {
        if (scope != "all" && scope != target.scope) continue;
        TargetResult res;
        res.name = target.name;
        res.scope = target.scope;
        res.seeds = options.seeds;
        res.tolerance = options.tolerance;
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < options.seeds; ++i) {
            const std::uint64_t seed = static_cast<std::uint64_t>(i) + 1;
            GradCheckReport report = target.run(seed, options.tolerance);
            res.coords += report.coords_checked;
            if (report.max_rel_err >= res.max_rel_err) {
                res.max_rel_err = report.max_rel_err;
                res.worst = report.worst_param + "[" + std::to_string(report.worst_coord) + "] seed " +
                            std::to_string(seed);
            }
        }
        res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.passed = res.coords > 0 && res.max_rel_err < res.tolerance;
        results.push_back(std::move(res));
    }
    return results;
}

double negative_control_rel_err(std::uint64_t seed) {
    Rng rng(seed);
    TensorD x = TensorD::gaussian({3, 4}, rng).with_grad();
    TensorD w = TensorD::gaussian({3, 4}, rng);
    auto loss = [&] {
        TensorD y = ops::gelu(x);
        // Splice in an identity node whose backward multiplies by 1.05. The
        // forward value is untouched, so the numeric derivative stays honest
        // while the analytic one is off by five percent.
        if (Tape<double>* tape = Tape<double>::active(); tape && tape->tracks(y)) {
            TensorD bad(y.shape(), std::vector<double>(y.data().begin(), y.data().end()));
            auto pb = [](std::span<const double> g, std::span<std::span<double>> gin) {
                if (gin[0].empty()) return;
                for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += 1.05 * g[i];
            };
            bad.set_node(tape->add_node(bad.shape(), {tape->node_of(y)}, pb, "skewed_identity"), tape->epoch());
            y = bad;
        }
        return ops::sum_all(ops::mul(y, w));
    };
    GradCheckOptions opt;
    opt.eps = 1e-5;
    return finite_difference_check<double>(loss, {{"x", &x}}, opt).max_rel_err;
}

}  // namespace chroma::gradcheck
