#include "chroma/model_config.hpp"

#include <json.hpp>

namespace chroma {

void ModelConfig::validate() const {
    if (family != "chromaformer" && family != "swin" && family != "resnet_like" && family != "unetpp_like") {
        throw ConfigError("unknown model family '" + family + "'");
    }
    if (in_bands < 1) throw ConfigError("in_bands must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (sdm.has_value() != (family == "chromaformer")) {
        throw ConfigError(family == "chromaformer" ? "chromaformer requires an sdm section"
                                                   : "sdm section is only valid for family chromaformer");
    }
    if (is_transformer()) {
        if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
        if (stage_depths.empty()) throw ConfigError("stage_depths must be non-empty");
        if (head_counts.size() != stage_depths.size()) {
            throw ConfigError("head_counts and stage_depths must have the same length");
        }
        for (std::size_t i = 0; i < stage_depths.size(); ++i) {
            if (stage_depths[i] < 1) throw ConfigError("stage depths must be >= 1");
            const std::int64_t width = stage_width(static_cast<std::int64_t>(i));
            if (head_counts[i] < 1 || width % head_counts[i] != 0) {
                throw ConfigError("head count " + std::to_string(head_counts[i]) +
                                  " must divide stage width " + std::to_string(width));
            }
            if (mlp_hidden(static_cast<std::int64_t>(i)) < 1) throw ConfigError("mlp_ratio too small");
        }
        if (window_side < 2) throw ConfigError("window_side must be >= 2");
        const std::int64_t s = effective_shift();
        if (s <= 0 || s >= window_side) throw ConfigError("shift must satisfy 0 < shift < window_side");
        if (patch_embed_side < 1) throw ConfigError("patch_embed_side must be >= 1");
        if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
    } else {
        if (cnn_width < 1) throw ConfigError("cnn_width must be >= 1");
        if (cnn_blocks < 1) throw ConfigError("cnn_blocks must be >= 1");
    }
    if (sdm) {
        sdm->validate();
        if (sdm->num_bands != in_bands) {
            throw ConfigError("sdm.num_bands must equal in_bands (band attention runs on the raw input)");
        }
    }
}

ModelConfig desk_variant(const std::string& family, char scale, std::int64_t bands, std::int64_t classes) {
    std::int64_t embed = 0;
    switch (scale) {
        case 't': embed = 24; break;
        case 's': embed = 32; break;
        case 'b': embed = 48; break;
        case 'l': embed = 64; break;
        case 'h': embed = 96; break;
        default: throw ConfigError(std::string("unknown variant scale '") + scale + "' (want t/s/b/l/h)");
    }
    ModelConfig cfg;
    cfg.family = family;
    cfg.name = family + "-" + scale;
    cfg.in_bands = bands;
    cfg.num_classes = classes;
    if (family == "resnet_like") {
        cfg.cnn_width = embed;
        cfg.cnn_blocks = 2;
        return cfg;
    }
    if (family == "unetpp_like") {
        cfg.cnn_width = 16;  // fixed single-member family
        return cfg;
    }
    cfg.embed_dim = embed;
    cfg.stage_depths = {2, 2};
    cfg.head_counts = {2, 4};
    cfg.window_side = 4;
    cfg.mlp_ratio = 2.0;
    cfg.patch_embed_side = 2;
    if (family == "chromaformer") {
        sdm::SdmConfig s;
        s.num_bands = bands;
        s.patch_side = 4;
        s.embed_dim = 16;
        s.key_dim = 16;
        s.value_dim = 16;
        cfg.sdm = s;
    }
    return cfg;
}

ModelConfig full_scale_reference(const std::string& family, std::int64_t bands, std::int64_t classes) {
    ModelConfig cfg;
    cfg.family = family;
    cfg.name = family + "-fullscale";
    cfg.in_bands = bands;
    cfg.num_classes = classes;
    cfg.embed_dim = 96;
    cfg.stage_depths = {2, 2, 6, 2};
    cfg.head_counts = {3, 6, 12, 24};
    cfg.window_side = 7;
    cfg.mlp_ratio = 4.0;
    cfg.patch_embed_side = 4;
    if (family == "chromaformer") {
        sdm::SdmConfig s;
        s.num_bands = bands;
        s.patch_side = 4;
        s.embed_dim = 96;
        s.key_dim = 96;
        s.value_dim = 96;
        cfg.sdm = s;
    }
    return cfg;
}

namespace {

void walk_transformer(const ModelConfig& c, const std::function<void(const std::string&, const Shape&)>& fn) {
    const std::int64_t d0 = c.embed_dim;
    fn("patch_embed.w", {c.in_bands * c.patch_embed_side * c.patch_embed_side, d0});
    fn("patch_embed.b", {d0});
    fn("patch_embed.ln.gain", {d0});
    fn("patch_embed.ln.bias", {d0});

    if (c.sdm) {
        const auto& s = *c.sdm;
        fn("sdm.embed_w", {s.patch_values(), s.embed_dim});
        if (s.embed_bias) fn("sdm.embed_b", {s.embed_dim});
        fn("sdm.wq", {s.embed_dim, s.key_dim});
        fn("sdm.wk", {s.embed_dim, s.key_dim});
        fn("sdm.wv", {s.embed_dim, s.value_dim});
        fn("sdm.fuse_w", {s.num_bands * s.value_dim, d0});
        fn("sdm.fuse_b", {d0});
    }

    const std::int64_t span = (2 * c.window_side - 1) * (2 * c.window_side - 1);
    for (std::int64_t i = 0; i < c.num_stages(); ++i) {
        const std::int64_t d = c.stage_width(i);
        const std::int64_t m = c.mlp_hidden(i);
        for (std::int64_t j = 0; j < c.stage_depths[static_cast<std::size_t>(i)]; ++j) {
            const std::string p = "stage" + std::to_string(i) + ".block" + std::to_string(j) + ".";
            fn(p + "ln1.gain", {d});
            fn(p + "ln1.bias", {d});
            fn(p + "attn.q_w", {d, d});
            fn(p + "attn.q_b", {d});
            fn(p + "attn.k_w", {d, d});
            fn(p + "attn.k_b", {d});
            fn(p + "attn.v_w", {d, d});
            fn(p + "attn.v_b", {d});
            fn(p + "attn.proj_w", {d, d});
            fn(p + "attn.proj_b", {d});
            if (c.relpos_bias) fn(p + "attn.relpos", {span, c.head_counts[static_cast<std::size_t>(i)]});
            fn(p + "ln2.gain", {d});
            fn(p + "ln2.bias", {d});
            fn(p + "mlp.fc1_w", {d, m});
            fn(p + "mlp.fc1_b", {m});
            fn(p + "mlp.fc2_w", {m, d});
            fn(p + "mlp.fc2_b", {d});
        }
        if (i + 1 < c.num_stages()) {
            const std::string p = "merge" + std::to_string(i) + ".";
            fn(p + "ln.gain", {4 * d});
            fn(p + "ln.bias", {4 * d});
            fn(p + "w", {4 * d, 2 * d});
        }
    }

    const std::int64_t f = c.seg_head_width();
    for (std::int64_t i = 0; i < c.num_stages(); ++i) {
        fn("head.stage" + std::to_string(i) + "_w", {c.stage_width(i), f});
        fn("head.stage" + std::to_string(i) + "_b", {f});
    }
    fn("head.final_w", {f, c.num_classes});
    fn("head.final_b", {c.num_classes});
}

void walk_resnet(const ModelConfig& c, const std::function<void(const std::string&, const Shape&)>& fn) {
    const std::int64_t w = c.cnn_width;
    fn("stem.w", {w, c.in_bands, 3, 3});
    fn("stem.b", {w});
    for (std::int64_t j = 0; j < c.cnn_blocks; ++j) {
        const std::string p = "block" + std::to_string(j) + ".";
        fn(p + "conv1.w", {w, w, 3, 3});
        fn(p + "conv1.b", {w});
        fn(p + "conv2.w", {w, w, 3, 3});
        fn(p + "conv2.b", {w});
    }
    fn("head.final_w", {c.num_classes, w, 1, 1});
    fn("head.final_b", {c.num_classes});
}

void walk_unetpp(const ModelConfig& c, const std::function<void(const std::string&, const Shape&)>& fn) {
    const std::int64_t w0 = c.cnn_width, w1 = 2 * c.cnn_width, w2 = 4 * c.cnn_width;
    auto conv = [&](const std::string& name, std::int64_t cin, std::int64_t cout) {
        fn(name + ".w", {cout, cin, 3, 3});
        fn(name + ".b", {cout});
    };
    conv("node00", c.in_bands, w0);
    conv("node10", w0, w1);         // stride-2 encoder step
    conv("node20", w1, w2);         // stride-2 encoder step
    conv("node01", w0 + w1, w0);    // skip(X00) + up(X10)
    conv("node11", w1 + w2, w1);    // skip(X10) + up(X20)
    conv("node02", w0 + w0 + w1, w0);  // skip(X00) + skip(X01) + up(X11)
    fn("head.final_w", {c.num_classes, w0, 1, 1});
    fn("head.final_b", {c.num_classes});
}

}  // namespace

void for_each_parameter(const ModelConfig& config,
                        const std::function<void(const std::string&, const Shape&)>& fn) {
    config.validate();
    if (config.is_transformer()) {
        walk_transformer(config, fn);
    } else if (config.family == "resnet_like") {
        walk_resnet(config, fn);
    } else {
        walk_unetpp(config, fn);
    }
}

std::int64_t param_count(const ModelConfig& config) {
    std::int64_t total = 0;
    for_each_parameter(config, [&](const std::string&, const Shape& shape) { total += numel_of(shape); });
    return total;
}

std::int64_t sdm_fusion_param_count(const ModelConfig& config) {
    if (!config.sdm) throw ConfigError("sdm_fusion_param_count: config has no sdm section");
    const auto& s = *config.sdm;
    std::int64_t total = s.patch_values() * s.embed_dim;               // embedding
    if (s.embed_bias) total += s.embed_dim;
    total += s.embed_dim * s.key_dim * 2 + s.embed_dim * s.value_dim;  // W_Q, W_K, W_V
    total += s.num_bands * s.value_dim * config.embed_dim + config.embed_dim;  // fusion projection
    return total;
}

namespace {

nlohmann::json sdm_to_json(const sdm::SdmConfig& s) {
    return {{"num_bands", s.num_bands},   {"patch_side", s.patch_side}, {"embed_dim", s.embed_dim},
            {"key_dim", s.key_dim},       {"value_dim", s.value_dim},   {"embed_bias", s.embed_bias}};
}

sdm::SdmConfig sdm_from_json(const nlohmann::json& j) {
    sdm::SdmConfig s;
    s.num_bands = j.value("num_bands", s.num_bands);
    s.patch_side = j.value("patch_side", s.patch_side);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    s.key_dim = j.value("key_dim", s.embed_dim);
    s.value_dim = j.value("value_dim", s.embed_dim);
    s.embed_bias = j.value("embed_bias", s.embed_bias);
    return s;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::json j{{"family", c.family},
                     {"name", c.name},
                     {"in_bands", c.in_bands},
                     {"num_classes", c.num_classes},
                     {"embed_dim", c.embed_dim},
                     {"stage_depths", c.stage_depths},
                     {"head_counts", c.head_counts},
                     {"window_side", c.window_side},
                     {"shift", c.shift},
                     {"mlp_ratio", c.mlp_ratio},
                     {"patch_embed_side", c.patch_embed_side},
                     {"relpos_bias", c.relpos_bias},
                     {"head_width", c.head_width},
                     {"cnn_width", c.cnn_width},
                     {"cnn_blocks", c.cnn_blocks}};
    if (c.sdm) j["sdm"] = sdm_to_json(*c.sdm);
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        c.family = j.at("family").get<std::string>();
        c.name = j.value("name", c.family);
        c.in_bands = j.value("in_bands", c.in_bands);
        c.num_classes = j.value("num_classes", c.num_classes);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        if (j.contains("stage_depths")) c.stage_depths = j["stage_depths"].get<std::vector<std::int64_t>>();
        if (j.contains("head_counts")) c.head_counts = j["head_counts"].get<std::vector<std::int64_t>>();
        c.window_side = j.value("window_side", c.window_side);
        c.shift = j.value("shift", c.shift);
        c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
        c.patch_embed_side = j.value("patch_embed_side", c.patch_embed_side);
        c.relpos_bias = j.value("relpos_bias", c.relpos_bias);
        c.head_width = j.value("head_width", c.head_width);
        c.cnn_width = j.value("cnn_width", c.cnn_width);
        c.cnn_blocks = j.value("cnn_blocks", c.cnn_blocks);
        if (j.contains("sdm") && !j["sdm"].is_null()) c.sdm = sdm_from_json(j["sdm"]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config field error: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace chroma
