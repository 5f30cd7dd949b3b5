#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "chroma/ops.hpp"
#include "chroma/tensor.hpp"

// Spectral dependency module: attention where the spectral bands are the
// attention units. The image is cut into non-overlapping spatial patches;
// within each patch every band becomes one embedded token, bands attend to
// each other through a shared C x C attention map, and the per-patch results
// are averaged into a single C x d_v spectral context. Weight tying across
// patches and bands is what makes the band-permutation equivariance and
// patch-permutation invariance properties hold.

namespace chroma::sdm {

struct SdmConfig {
    std::int64_t num_bands = 12;    // C
    std::int64_t patch_side = 4;    // patch holds P = patch_side^2 values per band
    std::int64_t embed_dim = 16;    // d
    std::int64_t key_dim = 16;      // d_k, defaults to d
    std::int64_t value_dim = 16;    // d_v, defaults to d
    bool embed_bias = true;
    bool keep_attention = false;    // retain the per-patch attention stack

    std::int64_t patch_values() const { return patch_side * patch_side; }

    void validate() const {
        if (num_bands < 1) throw ConfigError("sdm: num_bands must be >= 1");
        if (patch_side < 1) throw ConfigError("sdm: patch_side must be >= 1");
        if (embed_dim < 1 || key_dim < 1 || value_dim < 1) {
            throw ConfigError("sdm: embed/key/value dims must be >= 1");
        }
    }
};

// Shared across all patches and all bands.
template <typename T>
struct SdmWeights {
    Tensor<T> embed_w;  // [P x d]
    Tensor<T> embed_b;  // [d], used when config.embed_bias
    Tensor<T> wq;       // [d x d_k]
    Tensor<T> wk;       // [d x d_k]
    Tensor<T> wv;       // [d x d_v]
};

// Index map for cutting [C x H x W] into [N_p x C x P] row-major patches.
inline ops::IndexMap patchify_map(std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t ps) {
    const std::int64_t ph = h / ps, pw = w / ps;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(c * h * w));
    for (std::int64_t py = 0; py < ph; ++py) {
        for (std::int64_t px = 0; px < pw; ++px) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                for (std::int64_t iy = 0; iy < ps; ++iy) {
                    for (std::int64_t ix = 0; ix < ps; ++ix) {
                        idx->push_back((ci * h + py * ps + iy) * w + px * ps + ix);
                    }
                }
            }
        }
    }
    return idx;
}

template <typename T>
Tensor<T> patchify_bands(const Tensor<T>& x, std::int64_t patch_side) {
    if (x.rank() != 3) throw ShapeError("patchify_bands: need [C x H x W], got " + shape_str(x.shape()));
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (patch_side < 1 || h % patch_side != 0 || w % patch_side != 0) {
        throw ShapeError("patchify_bands: patch_side " + std::to_string(patch_side) + " must divide " +
                         std::to_string(h) + " and " + std::to_string(w));
    }
    const std::int64_t np = (h / patch_side) * (w / patch_side);
    return ops::gather(x, patchify_map(c, h, w, patch_side), {np, c, patch_side * patch_side});
}

// Inverse of patchify_bands; together they are a lossless round trip.
template <typename T>
Tensor<T> unpatchify_bands(const Tensor<T>& patches, std::int64_t h, std::int64_t w) {
    if (patches.rank() != 3) throw ShapeError("unpatchify_bands: need [N_p x C x P]");
    const std::int64_t np = patches.extent(0), c = patches.extent(1), p = patches.extent(2);
    const auto ps = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(p))));
    if (ps * ps != p) throw ShapeError("unpatchify_bands: patch values are not a square");
    if (np * p != h * w) throw ShapeError("unpatchify_bands: patch count does not tile the target extents");
    const std::int64_t pw = w / ps;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(c * h * w));
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int64_t patch = (y / ps) * pw + x / ps;
                const std::int64_t within = (y % ps) * ps + x % ps;
                idx->push_back((patch * c + ci) * p + within);
            }
        }
    }
    return ops::gather(patches, idx, {c, h, w});
}

// Same linear map applied to every (patch, band) slice.
template <typename T>
Tensor<T> embed_patches(const Tensor<T>& patches, const SdmWeights<T>& weights, bool use_bias) {
    if (patches.rank() != 3) throw ShapeError("embed_patches: need [N_p x C x P]");
    const std::int64_t np = patches.extent(0), c = patches.extent(1), p = patches.extent(2);
    if (weights.embed_w.extent(0) != p) {
        throw ShapeError("embed_patches: embedding expects " + std::to_string(weights.embed_w.extent(0)) +
                         " values per band, got " + std::to_string(p));
    }
    Tensor<T> flat = ops::reshape(patches, {np * c, p});
    Tensor<T> z = use_bias ? ops::linear(flat, weights.embed_w, weights.embed_b)
                           : ops::matmul(flat, weights.embed_w);
    return ops::reshape(z, {np, c, weights.embed_w.extent(1)});
}

template <typename T>
struct SpectralAttention {
    Tensor<T> scores;     // [C x C], pre-softmax (already scaled by 1/sqrt(d_k))
    Tensor<T> attention;  // [C x C], row-stochastic
    Tensor<T> out;        // [C x d_v]
};

// Scaled dot-product attention over the band axis of one patch.
template <typename T>
SpectralAttention<T> spectral_attention(const Tensor<T>& z, const SdmWeights<T>& weights) {
    if (z.rank() != 2) throw ShapeError("spectral_attention: need [C x d]");
    if (z.extent(0) < 1) throw ShapeError("spectral_attention: no bands");
    if (z.extent(1) != weights.wq.extent(0)) throw ShapeError("spectral_attention: embedding width mismatch");
    Tensor<T> q = ops::matmul(z, weights.wq);
    Tensor<T> k = ops::matmul(z, weights.wk);
    Tensor<T> v = ops::matmul(z, weights.wv);
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(weights.wq.extent(1))));
    SpectralAttention<T> result;
    result.scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_dk);
    result.attention = ops::softmax_rows(result.scores);
    result.out = ops::matmul(result.attention, v);
    return result;
}

template <typename T>
struct SdmResult {
    Tensor<T> o;          // [C x d_v], mean over patches
    Tensor<T> attention;  // [N_p x C x C], detached; empty unless keep_attention
};

template <typename T>
Tensor<T> aggregate_patches(const Tensor<T>& o_stack) {
    if (o_stack.rank() != 3) throw ShapeError("aggregate_patches: need [N_p x C x d_v]");
    if (o_stack.extent(0) < 1) throw ShapeError("aggregate_patches: empty patch axis");
    return ops::mean_over_axis(o_stack, 0);
}

template <typename T>
SdmResult<T> sdm_forward(const Tensor<T>& x, const SdmConfig& config, const SdmWeights<T>& weights) {
    config.validate();
    if (x.rank() != 3 || x.extent(0) != config.num_bands) {
        throw ShapeError("sdm_forward: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(config.num_bands) + " configured bands");
    }
    const std::int64_t c = config.num_bands;
    Tensor<T> patches = patchify_bands(x, config.patch_side);
    const std::int64_t np = patches.extent(0);
    Tensor<T> z = embed_patches(patches, weights, config.embed_bias);
    Tensor<T> z_flat = ops::reshape(z, {np * c, config.embed_dim});

    // Projections are shared, so one matmul covers all patches; attention
    // itself is per patch over that patch's C rows.
    Tensor<T> q_all = ops::matmul(z_flat, weights.wq);
    Tensor<T> k_all = ops::matmul(z_flat, weights.wk);
    Tensor<T> v_all = ops::matmul(z_flat, weights.wv);
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(config.key_dim)));

    SdmResult<T> result;
    std::vector<T> attn_dump;
    if (config.keep_attention) attn_dump.reserve(static_cast<std::size_t>(np * c * c));
    Tensor<T> o_sum;
    for (std::int64_t p = 0; p < np; ++p) {
        Tensor<T> q = ops::slice_rows(q_all, p * c, (p + 1) * c);
        Tensor<T> k = ops::slice_rows(k_all, p * c, (p + 1) * c);
        Tensor<T> v = ops::slice_rows(v_all, p * c, (p + 1) * c);
        Tensor<T> scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_dk);
        Tensor<T> a = ops::softmax_rows(scores);
        Tensor<T> o_p = ops::matmul(a, v);
        o_sum = (p == 0) ? o_p : ops::add(o_sum, o_p);
        if (config.keep_attention) attn_dump.insert(attn_dump.end(), a.data().begin(), a.data().end());
    }
    result.o = ops::scale(o_sum, static_cast<T>(1.0 / static_cast<double>(np)));
    if (config.keep_attention) result.attention = Tensor<T>({np, c, c}, std::move(attn_dump));
    return result;
}

}  // namespace chroma::sdm
