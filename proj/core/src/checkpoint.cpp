#include "chroma/checkpoint.hpp"

#include <json.hpp>

#include "chroma/binio.hpp"

namespace chroma::ckpt {

namespace {

constexpr const char* kFormat = "chroma-checkpoint-v1";

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ModelConfig& config,
                     const std::vector<std::pair<std::string, const TensorF*>>& params,
                     const CheckpointMeta& meta) {
    std::vector<std::uint8_t> blob;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [name, tensor] : params) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = tensor->shape();
        entry["offset"] = blob.size();
        entry["numel"] = tensor->numel();
        table.push_back(std::move(entry));
        const float* values = tensor->raw();
        for (std::int64_t i = 0; i < tensor->numel(); ++i) binio::put_f32(blob, values[i]);
    }

    const std::string blob_name = stem.filename().string() + ".bin";
    nlohmann::json manifest;
    manifest["format"] = kFormat;
    manifest["dtype"] = "f32";
    manifest["blob"] = blob_name;
    manifest["blob_bytes"] = blob.size();
    manifest["model"] = nlohmann::json::parse(model_config_to_json(config));
    manifest["meta"] = {{"epoch", meta.epoch}, {"step", meta.step}, {"seed", meta.seed}};
    manifest["params"] = std::move(table);

    binio::write_file(stem.parent_path() / blob_name, blob);
    binio::write_text_file(stem.string() + ".json", manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem) {
    const std::filesystem::path manifest_path = stem.string() + ".json";
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(binio::read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint manifest '" + manifest_path.string() + "' is not valid JSON: " + e.what());
    }

    LoadedCheckpoint loaded;
    try {
        if (manifest.at("format").get<std::string>() != kFormat) {
            throw IoError("checkpoint '" + manifest_path.string() + "' has an unknown format tag");
        }
        if (manifest.at("dtype").get<std::string>() != "f32") {
            throw IoError("checkpoint '" + manifest_path.string() + "' has an unsupported dtype");
        }
        loaded.config = model_config_from_json(manifest.at("model").dump());
        const auto& meta = manifest.at("meta");
        loaded.meta.epoch = meta.at("epoch").get<std::int64_t>();
        loaded.meta.step = meta.at("step").get<std::int64_t>();
        loaded.meta.seed = meta.at("seed").get<std::uint64_t>();

        const std::filesystem::path blob_path =
            stem.parent_path() / manifest.at("blob").get<std::string>();
        const std::vector<std::uint8_t> blob = binio::read_file(blob_path);
        if (blob.size() != manifest.at("blob_bytes").get<std::size_t>()) {
            throw IoError("checkpoint blob '" + blob_path.string() + "' has " + std::to_string(blob.size()) +
                          " bytes, manifest declares " +
                          std::to_string(manifest.at("blob_bytes").get<std::size_t>()));
        }

        for (const auto& entry : manifest.at("params")) {
            const std::string name = entry.at("name").get<std::string>();
            const Shape shape = entry.at("shape").get<Shape>();
            const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
            const std::int64_t numel = entry.at("numel").get<std::int64_t>();
            TensorF tensor = TensorF::zeros(shape);
            if (tensor.numel() != numel) {
                throw IoError("checkpoint parameter '" + name + "' declares numel " + std::to_string(numel) +
                              " but its shape holds " + std::to_string(tensor.numel()));
            }
            if (offset + static_cast<std::uint64_t>(numel) * 4 > blob.size()) {
                throw IoError("checkpoint parameter '" + name + "' runs past the end of the blob");
            }
            binio::Reader reader(std::span<const std::uint8_t>(blob.data() + offset,
                                                               static_cast<std::size_t>(numel) * 4),
                                 "checkpoint blob entry '" + name + "'");
            auto dst = tensor.mutable_data();
            for (std::int64_t i = 0; i < numel; ++i) dst[static_cast<std::size_t>(i)] = reader.f32();
            if (!loaded.params.emplace(name, std::move(tensor)).second) {
                throw IoError("checkpoint lists parameter '" + name + "' twice");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint manifest '" + manifest_path.string() + "' is malformed: " + e.what());
    }
    return loaded;
}

}  // namespace chroma::ckpt
