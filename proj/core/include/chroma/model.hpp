#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chroma/model_config.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/sdm.hpp"
#include "chroma/window.hpp"

// The four model families behind one forward() contract: [C x H x W] image
// in, [K x H x W] logits out, recorded on the active tape. Parameters are
// held in a name-ordered map; initial values are derived from (seed, name),
// so two families built from the same seed share bit-identical values for
// every parameter name they have in common — the basis of the zeroed-fusion
// ablation comparison.

namespace chroma {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
class Model {
  public:
    Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)), seed_(seed) {
        cfg_.validate();
        Rng root(seed_);
        for_each_parameter(cfg_, [&](const std::string& name, const Shape& shape) {
            Rng stream = root.fork(fnv1a(name));
            params_.emplace(name, init_param(name, shape, stream));
        });
    }

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    Tensor<T>& param(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValueError("model has no parameter '" + name + "'");
        return it->second;
    }
    const Tensor<T>& param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValueError("model has no parameter '" + name + "'");
        return it->second;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        out.reserve(params_.size());
        for (auto& [name, tensor] : params_) out.emplace_back(name, &tensor);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t total = 0;
        for (const auto& [name, tensor] : params_) total += tensor.numel();
        return total;
    }

    Tensor<T> forward(const Tensor<T>& image) {
        if (image.rank() != 3 || image.extent(0) != cfg_.in_bands) {
            throw ShapeError("forward: expected [" + std::to_string(cfg_.in_bands) + " x H x W], got " +
                             shape_str(image.shape()));
        }
        if (cfg_.is_transformer()) return forward_transformer(image);
        if (cfg_.family == "resnet_like") return forward_resnet(image);
        return forward_unetpp(image);
    }

    // Per-patch band-attention stack [N_p x C x C] under the current weights.
    Tensor<T> band_attention(const Tensor<T>& image) {
        if (!cfg_.sdm) throw ConfigError("band_attention: model has no band-attention module");
        sdm::SdmConfig probe = *cfg_.sdm;
        probe.keep_attention = true;
        return sdm::sdm_forward(image, probe, sdm_weights()).attention;
    }

  private:
    static Tensor<T> init_param(const std::string& name, const Shape& shape, Rng& stream) {
        auto ends_with = [&](std::string_view suffix) {
            return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        Tensor<T> t;
        if (ends_with(".gain")) {
            t = Tensor<T>::full(shape, T(1));
        } else if (name.rfind("sdm.fuse", 0) == 0) {
            // Zero fusion projection: a fresh chromaformer starts exactly at
            // its swin twin and learns the band-attention contribution.
            t = Tensor<T>::zeros(shape);
        } else if (ends_with("_b") || ends_with(".b") || ends_with(".bias")) {
            t = Tensor<T>::zeros(shape);
        } else {
            t = TensorD::gaussian(shape, stream, 0.0, 0.02).template cast<T>();
        }
        t.set_requires_grad(true);
        return t;
    }

    sdm::SdmWeights<T> sdm_weights() const {
        sdm::SdmWeights<T> w;
        w.embed_w = param("sdm.embed_w");
        if (cfg_.sdm->embed_bias) w.embed_b = param("sdm.embed_b");
        w.wq = param("sdm.wq");
        w.wk = param("sdm.wk");
        w.wv = param("sdm.wv");
        return w;
    }

    // --- transformer families ---------------------------------------------

    Tensor<T> forward_transformer(const Tensor<T>& image) {
        const std::int64_t h_img = image.extent(1), w_img = image.extent(2);
        const std::int64_t ps = cfg_.patch_embed_side;
        if (h_img % ps != 0 || w_img % ps != 0) {
            throw ShapeError("forward: image extents must be multiples of patch_embed_side " + std::to_string(ps));
        }
        std::int64_t gh = h_img / ps, gw = w_img / ps;

        Tensor<T> tokens = ops::reshape(sdm::patchify_bands(image, ps), {gh * gw, cfg_.in_bands * ps * ps});
        tokens = ops::linear(tokens, param("patch_embed.w"), param("patch_embed.b"));
        tokens = ops::layer_norm(tokens, param("patch_embed.ln.gain"), param("patch_embed.ln.bias"));

        Tensor<T> fuse_vec;
        if (cfg_.sdm) {
            sdm::SdmResult<T> ctx = sdm::sdm_forward(image, *cfg_.sdm, sdm_weights());
            Tensor<T> flat = ops::reshape(ctx.o, {1, cfg_.sdm->num_bands * cfg_.sdm->value_dim});
            fuse_vec = ops::reshape(ops::linear(flat, param("sdm.fuse_w"), param("sdm.fuse_b")), {cfg_.embed_dim});
        }

        std::vector<Tensor<T>> stage_out;
        std::vector<std::pair<std::int64_t, std::int64_t>> stage_grid;
        for (std::int64_t i = 0; i < cfg_.num_stages(); ++i) {
            const std::string stage_prefix = "stage" + std::to_string(i) + ".block";
            for (std::int64_t j = 0; j < cfg_.stage_depths[static_cast<std::size_t>(i)]; ++j) {
                const std::string p = stage_prefix + std::to_string(j) + ".";
                const std::int64_t shift = (j % 2 == 1) ? cfg_.effective_shift() : 0;
                Tensor<T> normed = ops::layer_norm(tokens, param(p + "ln1.gain"), param(p + "ln1.bias"));
                Tensor<T> y = ops::add(tokens, windowed_attention(normed, gh, gw, i, p, shift));
                if (cfg_.sdm && i == 0) y = ops::add_row_broadcast(y, fuse_vec);
                Tensor<T> normed2 = ops::layer_norm(y, param(p + "ln2.gain"), param(p + "ln2.bias"));
                Tensor<T> mid = ops::gelu(ops::linear(normed2, param(p + "mlp.fc1_w"), param(p + "mlp.fc1_b")));
                tokens = ops::add(y, ops::linear(mid, param(p + "mlp.fc2_w"), param(p + "mlp.fc2_b")));
            }
            stage_out.push_back(tokens);
            stage_grid.emplace_back(gh, gw);
            if (i + 1 < cfg_.num_stages()) {
                tokens = patch_merge(tokens, gh, gw, i);
                gh /= 2;
                gw /= 2;
            }
        }
        return segmentation_head(stage_out, stage_grid, h_img, w_img);
    }

    Tensor<T> windowed_attention(const Tensor<T>& x, std::int64_t h, std::int64_t w, std::int64_t stage,
                                 const std::string& prefix, std::int64_t shift) {
        const std::int64_t d = cfg_.stage_width(stage);
        const std::int64_t heads = cfg_.head_counts[static_cast<std::size_t>(stage)];
        const std::int64_t dh = d / heads;
        const std::int64_t win = cfg_.window_side;
        const std::int64_t hp = (h + win - 1) / win * win;
        const std::int64_t wp = (w + win - 1) / win * win;
        const bool padded = hp != h || wp != w;

        Tensor<T> grid = padded ? win::pad_grid(x, h, w, hp, wp) : x;
        if (shift > 0) {
            grid = ops::gather(grid, win::cyclic_shift_map(hp, wp, d, shift, shift), grid.shape());
        }
        Tensor<T> xw = win::window_partition(grid, hp, wp, win);

        Tensor<T> q = ops::linear(xw, param(prefix + "attn.q_w"), param(prefix + "attn.q_b"));
        Tensor<T> k = ops::linear(xw, param(prefix + "attn.k_w"), param(prefix + "attn.k_b"));
        Tensor<T> v = ops::linear(xw, param(prefix + "attn.v_w"), param(prefix + "attn.v_b"));

        std::vector<Tensor<T>> bias;
        if (cfg_.relpos_bias) {
            const Tensor<T>& table = param(prefix + "attn.relpos");
            for (std::int64_t hd = 0; hd < heads; ++hd) {
                bias.push_back(ops::gather(table, win::relpos_index_map(win, heads, hd), {win * win, win * win}));
            }
        }
        std::vector<ops::AttnMask> masks;
        if (shift > 0 || padded) {
            masks = win::window_masks_from_ids(win::attention_region_ids(h, w, hp, wp, win, shift), hp, wp, win);
        }

        std::vector<Tensor<T>> q_heads, k_heads, v_heads;
        for (std::int64_t hd = 0; hd < heads; ++hd) {
            q_heads.push_back(ops::slice_cols(q, hd * dh, dh));
            k_heads.push_back(ops::slice_cols(k, hd * dh, dh));
            v_heads.push_back(ops::slice_cols(v, hd * dh, dh));
        }

        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        const std::int64_t wt = win * win;
        const std::int64_t n_win = (hp * wp) / wt;
        Tensor<T> stacked;
        for (std::int64_t wi = 0; wi < n_win; ++wi) {
            std::vector<Tensor<T>> head_outs;
            for (std::int64_t hd = 0; hd < heads; ++hd) {
                Tensor<T> qw = ops::slice_rows(q_heads[static_cast<std::size_t>(hd)], wi * wt, (wi + 1) * wt);
                Tensor<T> kw = ops::slice_rows(k_heads[static_cast<std::size_t>(hd)], wi * wt, (wi + 1) * wt);
                Tensor<T> vw = ops::slice_rows(v_heads[static_cast<std::size_t>(hd)], wi * wt, (wi + 1) * wt);
                Tensor<T> scores = ops::scale(ops::matmul(qw, ops::transpose(kw)), inv_sqrt);
                if (cfg_.relpos_bias) scores = ops::add(scores, bias[static_cast<std::size_t>(hd)]);
                Tensor<T> attn = masks.empty() ? ops::softmax_rows(scores)
                                               : ops::masked_softmax_rows(scores, masks[static_cast<std::size_t>(wi)]);
                head_outs.push_back(ops::matmul(attn, vw));
            }
            Tensor<T> merged = heads == 1 ? head_outs[0] : ops::concat_cols(head_outs);
            stacked = (wi == 0) ? merged : ops::concat_axis0(stacked, merged);
        }

        Tensor<T> out = ops::linear(stacked, param(prefix + "attn.proj_w"), param(prefix + "attn.proj_b"));
        out = win::window_reverse(out, hp, wp, win);
        if (shift > 0) {
            out = ops::gather(out, win::cyclic_shift_map(hp, wp, d, -shift, -shift), out.shape());
        }
        if (padded) out = win::crop_grid(out, hp, wp, h, w);
        return out;
    }

    Tensor<T> patch_merge(const Tensor<T>& tokens, std::int64_t h, std::int64_t w, std::int64_t stage) {
        if (h % 2 != 0 || w % 2 != 0) {
            throw ShapeError("patch merging needs an even token grid, have " + std::to_string(h) + "x" +
                             std::to_string(w));
        }
        const std::int64_t d = cfg_.stage_width(stage);
        auto idx = std::make_shared<std::vector<std::int64_t>>();
        idx->reserve(static_cast<std::size_t>(h * w * d));
        for (std::int64_t y = 0; y < h / 2; ++y) {
            for (std::int64_t x = 0; x < w / 2; ++x) {
                const std::int64_t corners[4] = {(2 * y) * w + 2 * x, (2 * y + 1) * w + 2 * x,
                                                 (2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x + 1};
                for (const std::int64_t c : corners) {
                    for (std::int64_t kk = 0; kk < d; ++kk) idx->push_back(c * d + kk);
                }
            }
        }
        const std::string p = "merge" + std::to_string(stage) + ".";
        Tensor<T> merged = ops::gather(tokens, idx, {h / 2 * (w / 2), 4 * d});
        merged = ops::layer_norm(merged, param(p + "ln.gain"), param(p + "ln.bias"));
        return ops::matmul(merged, param(p + "w"));
    }

    Tensor<T> segmentation_head(const std::vector<Tensor<T>>& stage_out,
                                const std::vector<std::pair<std::int64_t, std::int64_t>>& stage_grid,
                                std::int64_t h_img, std::int64_t w_img) {
        const std::int64_t f = cfg_.seg_head_width();
        Tensor<T> fused;
        for (std::size_t i = 0; i < stage_out.size(); ++i) {
            const auto [gh, gw] = stage_grid[i];
            Tensor<T> proj = ops::linear(stage_out[i], param("head.stage" + std::to_string(i) + "_w"),
                                         param("head.stage" + std::to_string(i) + "_b"));
            Tensor<T> spatial = ops::reshape(ops::transpose(proj), {f, gh, gw});
            Tensor<T> up = ops::upsample_nearest(spatial, h_img / gh);
            fused = (i == 0) ? up : ops::add(fused, up);
        }
        Tensor<T> rows = ops::transpose(ops::reshape(fused, {f, h_img * w_img}));
        Tensor<T> logits = ops::linear(rows, param("head.final_w"), param("head.final_b"));
        return ops::reshape(ops::transpose(logits), {cfg_.num_classes, h_img, w_img});
    }

    // --- cnn families -------------------------------------------------------

    Tensor<T> forward_resnet(const Tensor<T>& image) {
        Tensor<T> x = ops::relu(ops::conv2d(image, param("stem.w"), param("stem.b"), {1, 1}));
        for (std::int64_t j = 0; j < cfg_.cnn_blocks; ++j) {
            const std::string p = "block" + std::to_string(j) + ".";
            Tensor<T> y = ops::relu(ops::conv2d(x, param(p + "conv1.w"), param(p + "conv1.b"), {1, 1}));
            y = ops::conv2d(y, param(p + "conv2.w"), param(p + "conv2.b"), {1, 1});
            x = ops::relu(ops::add(x, y));
        }
        return ops::conv2d(x, param("head.final_w"), param("head.final_b"), {1, 0});
    }

    Tensor<T> forward_unetpp(const Tensor<T>& image) {
        if (image.extent(1) % 4 != 0 || image.extent(2) % 4 != 0) {
            throw ShapeError("unetpp forward needs extents divisible by 4");
        }
        auto conv = [&](const Tensor<T>& in, const std::string& name, std::int64_t stride) {
            return ops::relu(ops::conv2d(in, param(name + ".w"), param(name + ".b"), {stride, 1}));
        };
        Tensor<T> x00 = conv(image, "node00", 1);
        Tensor<T> x10 = conv(x00, "node10", 2);
        Tensor<T> x20 = conv(x10, "node20", 2);
        Tensor<T> x01 = conv(ops::concat_axis0(x00, ops::upsample_nearest(x10, 2)), "node01", 1);
        Tensor<T> x11 = conv(ops::concat_axis0(x10, ops::upsample_nearest(x20, 2)), "node11", 1);
        Tensor<T> x02 =
            conv(ops::concat_axis0(ops::concat_axis0(x00, x01), ops::upsample_nearest(x11, 2)), "node02", 1);
        return ops::conv2d(x02, param("head.final_w"), param("head.final_b"), {1, 0});
    }

    ModelConfig cfg_;
    std::uint64_t seed_;
    std::map<std::string, Tensor<T>> params_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace chroma
