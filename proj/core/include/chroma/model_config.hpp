#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/sdm.hpp"
#include "chroma/tensor.hpp"

// Architecture description for all four model families plus the parameter
// walker. for_each_parameter is the single source of truth for the learnable
// parameter set: the model builder allocates exactly what it enumerates, and
// param_count sums exactly the same shapes, so the two can never drift.

namespace chroma {

struct ModelConfig {
    std::string family;  // chromaformer | swin | resnet_like | unetpp_like
    std::string name;    // free-form label used in reports

    std::int64_t in_bands = 12;
    std::int64_t num_classes = 6;

    // transformer families
    std::int64_t embed_dim = 24;
    std::vector<std::int64_t> stage_depths = {2, 2};
    std::vector<std::int64_t> head_counts = {2, 4};
    std::int64_t window_side = 4;
    std::int64_t shift = -1;  // -1 means window_side / 2
    double mlp_ratio = 4.0;
    std::int64_t patch_embed_side = 2;
    bool relpos_bias = true;
    std::int64_t head_width = 0;  // segmentation-head common width; 0 means embed_dim

    std::optional<sdm::SdmConfig> sdm;  // present iff family == chromaformer

    // cnn families
    std::int64_t cnn_width = 16;
    std::int64_t cnn_blocks = 2;

    bool is_transformer() const { return family == "chromaformer" || family == "swin"; }
    std::int64_t num_stages() const { return static_cast<std::int64_t>(stage_depths.size()); }
    std::int64_t stage_width(std::int64_t stage) const { return embed_dim << stage; }
    std::int64_t mlp_hidden(std::int64_t stage) const {
        return static_cast<std::int64_t>(mlp_ratio * static_cast<double>(stage_width(stage)) + 0.5);
    }
    std::int64_t effective_shift() const { return shift < 0 ? window_side / 2 : shift; }
    std::int64_t seg_head_width() const { return head_width > 0 ? head_width : embed_dim; }

    void validate() const;
};

// Desk-size variant ladder: the t/s/b/l/h scale steps re-expressed at
// workstation scale (embed widths 24/32/48/64/96) so a whole family can be
// trained and compared on one machine.
ModelConfig desk_variant(const std::string& family, char scale, std::int64_t bands, std::int64_t classes);

// Full-size reference configuration (embed 96, depths 2/2/6/2, heads
// 3/6/12/24, window 7) used for parameter-count accounting.
ModelConfig full_scale_reference(const std::string& family, std::int64_t bands, std::int64_t classes);

void for_each_parameter(const ModelConfig& config,
                        const std::function<void(const std::string&, const Shape&)>& fn);

std::int64_t param_count(const ModelConfig& config);

// Closed-form size of everything a chromaformer carries beyond its swin
// twin: the band-attention weights plus the fusion projection.
std::int64_t sdm_fusion_param_count(const ModelConfig& config);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace chroma
