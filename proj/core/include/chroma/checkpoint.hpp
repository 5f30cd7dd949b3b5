#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "chroma/model.hpp"
#include "chroma/model_config.hpp"
#include "chroma/tensor.hpp"

// Checkpoints are a pair of files sharing a stem: <stem>.json holds the
// manifest (model config, run metadata, and a per-parameter name/shape/offset
// table) and <stem>.bin holds every parameter as float32 little-endian,
// concatenated in table order. Round-trips are bit-exact.

namespace chroma::ckpt {

struct CheckpointMeta {
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
};

struct LoadedCheckpoint {
    ModelConfig config;
    CheckpointMeta meta;
    std::map<std::string, TensorF> params;
};

void save_checkpoint(const std::filesystem::path& stem, const ModelConfig& config,
                     const std::vector<std::pair<std::string, const TensorF*>>& params,
                     const CheckpointMeta& meta);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem);

inline void save_model_checkpoint(const std::filesystem::path& stem, Model<float>& model,
                                  const CheckpointMeta& meta) {
    std::vector<std::pair<std::string, const TensorF*>> params;
    for (auto& [name, tensor] : model.parameters()) params.emplace_back(name, tensor);
    save_checkpoint(stem, model.config(), params, meta);
}

// Builds a model from the stored config and overwrites its parameters with
// the stored values. The stored table must cover the parameter set exactly.
inline Model<float> restore_model(const LoadedCheckpoint& loaded) {
    Model<float> model(loaded.config, loaded.meta.seed);
    std::size_t used = 0;
    for (auto& [name, tensor] : model.parameters()) {
        auto it = loaded.params.find(name);
        if (it == loaded.params.end()) throw ValueError("checkpoint is missing parameter '" + name + "'");
        if (it->second.shape() != tensor->shape()) {
            throw ShapeError("checkpoint parameter '" + name + "' has the wrong shape");
        }
        auto dst = tensor->mutable_data();
        const float* src = it->second.raw();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
        ++used;
    }
    if (used != loaded.params.size()) {
        throw ValueError("checkpoint contains " + std::to_string(loaded.params.size() - used) +
                         " parameter(s) unknown to the model");
    }
    return model;
}

inline Model<float> load_model(const std::filesystem::path& stem) { return restore_model(load_checkpoint(stem)); }

}  // namespace chroma::ckpt
