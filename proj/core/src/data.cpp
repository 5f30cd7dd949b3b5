#include "chroma/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "chroma/binio.hpp"

namespace chroma::data {

namespace {

constexpr std::uint32_t kTagLabeledTile = 1;
constexpr std::uint32_t kTagVolume = 2;
constexpr const char* kMagic = "CFT1";

std::string format_fraction(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw ValueError("unreachable split value");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ValueError("unknown split '" + name + "' (expected train, val, or test)");
}

const std::array<std::string, 16>& sub_sheet_layout() {
    static const std::array<std::string, 16> layout = {
        "1N", "2N", "3N", "4N",  //
        "1Z", "2Z", "3Z", "4Z",  //
        "5N", "6N", "7N", "8N",  //
        "5Z", "6Z", "7Z", "8Z",
    };
    return layout;
}

void SheetIndex::validate() const {
    if (block < 1 || block > 43) {
        throw ValueError("sheet block " + std::to_string(block) + " outside 1..43");
    }
    const auto& layout = sub_sheet_layout();
    if (std::find(layout.begin(), layout.end(), sub_sheet) == layout.end()) {
        throw ValueError("unknown sub-sheet code '" + sub_sheet + "'");
    }
}

Split assign_split(const SheetIndex& sheet) {
    sheet.validate();
    const char digit = sheet.sub_sheet[0];
    if (digit == '1' || digit == '2' || digit == '5' || digit == '6') return Split::train;
    if (digit == '3' || digit == '4') return Split::val;
    return Split::test;  // 7 or 8
}

void write_tile(const std::filesystem::path& path, const SpectralTile& tile) {
    if (tile.image.rank() != 3) throw ShapeError("write_tile: image must be [C x H x W]");
    const std::int64_t c = tile.bands(), h = tile.height(), w = tile.width();
    if (static_cast<std::int64_t>(tile.labels.size()) != h * w) {
        throw ShapeError("write_tile: " + std::to_string(tile.labels.size()) + " labels for " +
                         std::to_string(h * w) + " pixels");
    }
    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<std::size_t>(20 + c * h * w * 4 + h * w));
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    binio::put_u32(bytes, static_cast<std::uint32_t>(c));
    binio::put_u32(bytes, static_cast<std::uint32_t>(h));
    binio::put_u32(bytes, static_cast<std::uint32_t>(w));
    binio::put_u32(bytes, kTagLabeledTile);
    const float* values = tile.image.raw();
    for (std::int64_t i = 0; i < c * h * w; ++i) binio::put_f32(bytes, values[i]);
    bytes.insert(bytes.end(), tile.labels.begin(), tile.labels.end());
    binio::write_file(path, bytes);
}

namespace {

struct TileHeader {
    std::int64_t bands = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::uint32_t tag = 0;
};

TileHeader parse_header(binio::Reader& reader, const std::filesystem::path& path) {
    if (reader.tag(4) != kMagic) throw IoError("'" + path.string() + "' is not a CFT1 file");
    TileHeader header;
    header.bands = reader.u32();
    header.height = reader.u32();
    header.width = reader.u32();
    header.tag = reader.u32();
    if (header.bands < 1 || header.height < 1 || header.width < 1) {
        throw IoError("'" + path.string() + "' declares degenerate extents");
    }
    return header;
}

TileHeader read_tile_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::array<std::uint8_t, 20> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("'" + path.string() + "' is shorter than a CFT1 header");
    }
    binio::Reader reader(bytes, path.string());
    return parse_header(reader, path);
}

TensorF read_payload_volume(binio::Reader& reader, const TileHeader& header) {
    TensorF volume = TensorF::zeros({header.bands, header.height, header.width});
    auto dst = volume.mutable_data();
    for (auto& v : dst) v = reader.f32();
    return volume;
}

}  // namespace

SpectralTile read_tile(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::Reader reader(bytes, path.string());
    const TileHeader header = parse_header(reader, path);
    if (header.tag != kTagLabeledTile) {
        throw IoError("'" + path.string() + "' has dtype tag " + std::to_string(header.tag) +
                      ", expected a labeled tile");
    }
    SpectralTile tile;
    tile.image = read_payload_volume(reader, header);
    tile.labels.resize(static_cast<std::size_t>(header.height * header.width));
    reader.raw(tile.labels.data(), tile.labels.size());
    if (reader.remaining() != 0) throw IoError("'" + path.string() + "' has trailing bytes");
    return tile;
}

void write_volume(const std::filesystem::path& path, const TensorF& volume) {
    if (volume.rank() != 3) throw ShapeError("write_volume: need a rank-3 tensor");
    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<std::size_t>(20 + volume.numel() * 4));
    bytes.insert(bytes.end(), kMagic, kMagic + 4);
    binio::put_u32(bytes, static_cast<std::uint32_t>(volume.extent(0)));
    binio::put_u32(bytes, static_cast<std::uint32_t>(volume.extent(1)));
    binio::put_u32(bytes, static_cast<std::uint32_t>(volume.extent(2)));
    binio::put_u32(bytes, kTagVolume);
    const float* values = volume.raw();
    for (std::int64_t i = 0; i < volume.numel(); ++i) binio::put_f32(bytes, values[i]);
    binio::write_file(path, bytes);
}

TensorF read_volume(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::Reader reader(bytes, path.string());
    const TileHeader header = parse_header(reader, path);
    if (header.tag != kTagVolume) {
        throw IoError("'" + path.string() + "' has dtype tag " + std::to_string(header.tag) +
                      ", expected a bare volume");
    }
    TensorF volume = read_payload_volume(reader, header);
    if (reader.remaining() != 0) throw IoError("'" + path.string() + "' has trailing bytes");
    return volume;
}

std::vector<std::size_t> DatasetManifest::split_tile_indices(Split split) const {
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (assign_split(tiles[i].sheet) == split) indices.push_back(i);
    }
    return indices;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
    nlohmann::json doc;
    doc["format"] = "chroma-dataset-v1";
    doc["bands"] = manifest.bands;
    doc["class_names"] = manifest.class_names;
    doc["seed"] = manifest.seed;
    nlohmann::json tiles = nlohmann::json::array();
    for (const TileRecord& record : manifest.tiles) {
        tiles.push_back({{"path", record.path},
                         {"block", record.sheet.block},
                         {"sub_sheet", record.sheet.sub_sheet},
                         {"bands", record.bands},
                         {"height", record.height},
                         {"width", record.width}});
    }
    doc["tiles"] = std::move(tiles);
    if (!manifest.generator_json.empty()) {
        doc["generator"] = nlohmann::json::parse(manifest.generator_json);
    }
    binio::write_text_file(file, doc.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(binio::read_text_file(file));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest '" + file.string() + "' is not valid JSON: " + e.what());
    }
    DatasetManifest manifest;
    manifest.root = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
    try {
        if (doc.at("format").get<std::string>() != "chroma-dataset-v1") {
            throw IoError("manifest '" + file.string() + "' has an unknown format tag");
        }
        manifest.bands = doc.at("bands").get<std::int64_t>();
        manifest.class_names = doc.at("class_names").get<std::vector<std::string>>();
        manifest.seed = doc.at("seed").get<std::uint64_t>();
        for (const auto& entry : doc.at("tiles")) {
            TileRecord record;
            record.path = entry.at("path").get<std::string>();
            record.sheet.block = entry.at("block").get<int>();
            record.sheet.sub_sheet = entry.at("sub_sheet").get<std::string>();
            record.bands = entry.at("bands").get<std::int64_t>();
            record.height = entry.at("height").get<std::int64_t>();
            record.width = entry.at("width").get<std::int64_t>();
            record.sheet.validate();
            manifest.tiles.push_back(std::move(record));
        }
        if (doc.contains("generator")) manifest.generator_json = doc.at("generator").dump();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest '" + file.string() + "' is malformed: " + e.what());
    }
    for (const TileRecord& record : manifest.tiles) {
        const std::filesystem::path tile_path = manifest.root / record.path;
        if (!std::filesystem::exists(tile_path)) {
            throw IoError("manifest references missing tile '" + tile_path.string() + "'");
        }
        const TileHeader header = read_tile_header(tile_path);
        if (header.bands != record.bands || header.height != record.height || header.width != record.width) {
            throw IoError("tile '" + tile_path.string() + "' extents do not match the manifest");
        }
    }
    return manifest;
}

std::vector<SpectralTile> load_tiles(const DatasetManifest& manifest, const std::vector<std::size_t>& indices) {
    std::vector<SpectralTile> tiles;
    tiles.reserve(indices.size());
    for (std::size_t index : indices) {
        if (index >= manifest.tiles.size()) {
            throw ValueError("tile index " + std::to_string(index) + " outside the manifest");
        }
        const TileRecord& record = manifest.tiles[index];
        SpectralTile tile = read_tile(manifest.root / record.path);
        tile.sheet = record.sheet;
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

std::vector<SpectralTile> load_split(const DatasetManifest& manifest, Split split) {
    return load_tiles(manifest, manifest.split_tile_indices(split));
}

ClassDistribution class_distribution(const std::vector<const SpectralTile*>& tiles, std::int64_t classes) {
    if (classes < 1) throw ValueError("class_distribution: need at least one class");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
    std::int64_t total = 0;
    for (const SpectralTile* tile : tiles) {
        for (std::uint8_t label : tile->labels) {
            if (label == kIgnoreLabel) continue;
            if (label >= classes) {
                throw ValueError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) +
                                 ") in sheet " + std::to_string(tile->sheet.block) + "/" + tile->sheet.sub_sheet);
            }
            ++counts[label];
            ++total;
        }
    }
    if (total == 0) throw ValueError("class_distribution: every pixel carries the ignore marker");
    ClassDistribution dist;
    dist.fractions.resize(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
        dist.fractions[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
    }
    return dist;
}

ClassDistribution class_distribution(const std::vector<SpectralTile>& tiles, std::int64_t classes) {
    std::vector<const SpectralTile*> refs;
    refs.reserve(tiles.size());
    for (const SpectralTile& tile : tiles) refs.push_back(&tile);
    return class_distribution(refs, classes);
}

double chi_squared_distance(const ClassDistribution& p, const ClassDistribution& q) {
    if (p.fractions.size() != q.fractions.size()) {
        throw ShapeError("chi_squared_distance: " + std::to_string(p.fractions.size()) + " vs " +
                         std::to_string(q.fractions.size()) + " classes");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < p.fractions.size(); ++k) {
        const double denom = p.fractions[k] + q.fractions[k];
        if (denom == 0.0) continue;
        const double diff = p.fractions[k] - q.fractions[k];
        total += diff * diff / denom;
    }
    return total;
}

void GenConfig::validate() const {
    if (bands < 4) throw ConfigError("generator needs at least 4 bands");
    if (classes < 3) throw ConfigError("generator needs at least 3 classes");
    if (tile_side < 16) throw ConfigError("tile_side must be at least 16");
    if (blocks.empty()) throw ConfigError("need at least one block");
    for (int block : blocks) {
        if (block < 1 || block > 43) throw ConfigError("block " + std::to_string(block) + " outside 1..43");
    }
    std::vector<int> sorted = blocks;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("duplicate block number");
    }
    if (!mixture.empty()) {
        if (static_cast<std::int64_t>(mixture.size()) != classes) {
            throw ConfigError("mixture must list one weight per class");
        }
        double sum = 0.0;
        for (double m : mixture) {
            if (m < 0.0) throw ConfigError("mixture weights must be non-negative");
            sum += m;
        }
        if (sum <= 0.0) throw ConfigError("mixture weights sum to zero");
    }
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
    if (noise_cell < 2) throw ConfigError("noise_cell must be at least 2");
    if (band_coupling < 0.0) throw ConfigError("band_coupling must be non-negative");
    if (coupling_cell < 2) throw ConfigError("coupling_cell must be at least 2");
    if (tile_side % noise_cell != 0) throw ConfigError("noise_cell must divide tile_side");
    if (tile_side % coupling_cell != 0) throw ConfigError("coupling_cell must divide tile_side");
    if (gain_jitter < 0.0) throw ConfigError("gain_jitter must be non-negative");
    if (sites_per_tile < 1) throw ConfigError("sites_per_tile must be at least 1");
    if (unlabeled_fraction < 0.0 || unlabeled_fraction > 0.5) {
        throw ConfigError("unlabeled_fraction must lie in [0, 0.5]");
    }
    if (!class_names.empty() && static_cast<std::int64_t>(class_names.size()) != classes) {
        throw ConfigError("class_names must list one name per class");
    }
}

namespace {

double angle_between(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return std::acos(cosine);
}

// Signatures live in [0.15, 0.85]^C with a minimum pairwise angular
// separation (learnability). Classes then come in confusable pairs that
// differ in exactly one band from index 3 upward, so the discriminative
// signal is spread beyond the low bands and spectral mixing pays off.
std::vector<std::vector<double>> sample_signatures(Rng rng, std::int64_t bands, std::int64_t classes) {
    constexpr double kLo = 0.15, kHi = 0.85;
    std::vector<std::vector<double>> sigs;
    double min_angle = 0.12;
    int failures = 0;
    int draws = 0;
    while (static_cast<std::int64_t>(sigs.size()) < classes) {
        if (++draws > 20000) throw ValueError("signature sampling failed to converge");
        std::vector<double> cand(static_cast<std::size_t>(bands));
        for (double& v : cand) v = rng.uniform(kLo, kHi);
        bool ok = true;
        for (const auto& s : sigs) {
            if (angle_between(cand, s) < min_angle) {
                ok = false;
                break;
            }
        }
        if (ok) {
            sigs.push_back(std::move(cand));
            failures = 0;
        } else if (++failures >= 200) {
            min_angle *= 0.9;
            failures = 0;
        }
    }
    for (std::int64_t i = 0; 2 * i + 1 < classes; ++i) {
        const std::size_t hi_band = static_cast<std::size_t>(3 + (i % (bands - 3)));
        const std::size_t a = static_cast<std::size_t>(2 * i);
        sigs[a + 1] = sigs[a];
        const double base = sigs[a][hi_band];
        sigs[a + 1][hi_band] = base + 0.3 <= kHi ? base + 0.3 : base - 0.3;
    }
    return sigs;
}

// Each class couples min(3, C/2) bands; the two halves of a confusable pair
// draw from one shuffled band order so their sets never overlap, making
// "which bands move together" a cue that separates the pair even when gain
// jitter washes out the single-band signature difference.
std::vector<std::vector<int>> sample_coupled_bands(Rng rng, std::int64_t bands, std::int64_t classes) {
    const std::int64_t per_class = std::min<std::int64_t>(3, bands / 2);
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(classes));
    std::vector<int> order(static_cast<std::size_t>(bands));
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t k = 0; k < classes; k += 2) {
        rng.shuffle(order);
        for (std::int64_t i = 0; i < per_class; ++i) {
            sets[static_cast<std::size_t>(k)].push_back(order[static_cast<std::size_t>(i)]);
        }
        for (std::int64_t i = 0; k + 1 < classes && i < per_class; ++i) {
            sets[static_cast<std::size_t>(k + 1)].push_back(order[static_cast<std::size_t>(per_class + i)]);
        }
    }
    for (auto& s : sets) std::sort(s.begin(), s.end());
    return sets;
}

std::vector<std::int64_t> largest_remainder_counts(const std::vector<double>& mixture, std::int64_t total) {
    const std::size_t k = mixture.size();
    std::vector<std::int64_t> counts(k);
    std::vector<std::pair<double, std::size_t>> remainders(k);
    std::int64_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = mixture[i] * static_cast<double>(total);
        counts[i] = static_cast<std::int64_t>(std::floor(exact));
        assigned += counts[i];
        remainders[i] = {exact - std::floor(exact), i};
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::int64_t i = 0; i < total - assigned; ++i) {
        ++counts[remainders[static_cast<std::size_t>(i)].second];
    }
    return counts;
}

// Spatially correlated field: unit gaussians on a coarse grid, bilinearly
// interpolated to pixel resolution.
struct NoiseField {
    std::int64_t cells = 0;  // nodes per axis - 1
    std::int64_t cell_px = 0;
    std::vector<double> nodes;  // (cells + 1)^2

    static NoiseField make(Rng& rng, std::int64_t side, std::int64_t cell_px) {
        NoiseField field;
        field.cells = side / cell_px;
        field.cell_px = cell_px;
        field.nodes.resize(static_cast<std::size_t>((field.cells + 1) * (field.cells + 1)));
        for (double& v : field.nodes) v = rng.gaussian(0.0, 1.0);
        return field;
    }

    double at(std::int64_t y, std::int64_t x) const {
        const std::int64_t cy = y / cell_px, cx = x / cell_px;
        const double u = static_cast<double>(y - cy * cell_px) / static_cast<double>(cell_px);
        const double v = static_cast<double>(x - cx * cell_px) / static_cast<double>(cell_px);
        const std::int64_t stride = cells + 1;
        const double n00 = nodes[static_cast<std::size_t>(cy * stride + cx)];
        const double n01 = nodes[static_cast<std::size_t>(cy * stride + cx + 1)];
        const double n10 = nodes[static_cast<std::size_t>((cy + 1) * stride + cx)];
        const double n11 = nodes[static_cast<std::size_t>((cy + 1) * stride + cx + 1)];
        return (1 - u) * ((1 - v) * n00 + v * n01) + u * ((1 - v) * n10 + v * n11);
    }
};

nlohmann::json gen_config_doc(const GenConfig& config) {
    return nlohmann::json{{"seed", config.seed},
                          {"blocks", config.blocks},
                          {"tile_side", config.tile_side},
                          {"bands", config.bands},
                          {"classes", config.classes},
                          {"mixture", config.mixture},
                          {"noise_sigma", config.noise_sigma},
                          {"noise_cell", config.noise_cell},
                          {"gain_jitter", config.gain_jitter},
                          {"band_coupling", config.band_coupling},
                          {"coupling_cell", config.coupling_cell},
                          {"sites_per_tile", config.sites_per_tile},
                          {"unlabeled_fraction", config.unlabeled_fraction},
                          {"class_names", config.class_names}};
}

GenConfig gen_config_from_doc(const nlohmann::json& doc) {
    GenConfig config;
    config.seed = doc.at("seed").get<std::uint64_t>();
    config.blocks = doc.at("blocks").get<std::vector<int>>();
    config.tile_side = doc.at("tile_side").get<std::int64_t>();
    config.bands = doc.at("bands").get<std::int64_t>();
    config.classes = doc.at("classes").get<std::int64_t>();
    config.mixture = doc.at("mixture").get<std::vector<double>>();
    config.noise_sigma = doc.at("noise_sigma").get<double>();
    config.noise_cell = doc.at("noise_cell").get<std::int64_t>();
    config.gain_jitter = doc.at("gain_jitter").get<double>();
    config.band_coupling = doc.at("band_coupling").get<double>();
    config.coupling_cell = doc.at("coupling_cell").get<std::int64_t>();
    config.sites_per_tile = doc.at("sites_per_tile").get<std::int64_t>();
    config.unlabeled_fraction = doc.at("unlabeled_fraction").get<double>();
    config.class_names = doc.at("class_names").get<std::vector<std::string>>();
    return config;
}

}  // namespace

DatasetManifest generate_synthetic_region(const GenConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);

    const std::int64_t bands = config.bands, classes = config.classes, tile = config.tile_side;
    const std::int64_t scene = 4 * tile;

    Rng master(config.seed);
    const auto signatures = sample_signatures(master.fork(1), bands, classes);

    std::vector<std::vector<int>> coupled;
    std::vector<std::vector<char>> coupled_mask;
    if (config.band_coupling > 0.0) {
        coupled = sample_coupled_bands(master.fork(2), bands, classes);
        coupled_mask.assign(static_cast<std::size_t>(classes),
                            std::vector<char>(static_cast<std::size_t>(bands), 0));
        for (std::int64_t k = 0; k < classes; ++k) {
            for (int c : coupled[static_cast<std::size_t>(k)]) {
                coupled_mask[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] = 1;
            }
        }
    }

    std::vector<double> mixture = config.mixture;
    if (mixture.empty()) mixture.assign(static_cast<std::size_t>(classes), 1.0);
    const double mix_sum = std::accumulate(mixture.begin(), mixture.end(), 0.0);
    for (double& m : mixture) m /= mix_sum;

    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.bands = bands;
    manifest.seed = config.seed;
    manifest.class_names = config.class_names;
    if (manifest.class_names.empty()) {
        for (std::int64_t k = 0; k < classes; ++k) manifest.class_names.push_back("class_" + std::to_string(k));
    }

    for (int block : config.blocks) {
        // per-block streams are forked from the master seed by block number,
        // so the block set can change without disturbing existing blocks
        Rng brng = Rng(config.seed).fork(0x10000u + static_cast<std::uint64_t>(block));

        const std::int64_t n_sites = config.sites_per_tile * 16;
        std::vector<double> site_y(static_cast<std::size_t>(n_sites));
        std::vector<double> site_x(static_cast<std::size_t>(n_sites));
        for (std::int64_t i = 0; i < n_sites; ++i) {
            site_y[static_cast<std::size_t>(i)] = brng.uniform(0.0, static_cast<double>(scene));
            site_x[static_cast<std::size_t>(i)] = brng.uniform(0.0, static_cast<double>(scene));
        }
        const auto class_counts = largest_remainder_counts(mixture, n_sites);
        std::vector<std::uint8_t> site_class;
        site_class.reserve(static_cast<std::size_t>(n_sites));
        for (std::int64_t k = 0; k < classes; ++k) {
            for (std::int64_t i = 0; i < class_counts[static_cast<std::size_t>(k)]; ++i) {
                site_class.push_back(static_cast<std::uint8_t>(k));
            }
        }
        brng.shuffle(site_class);

        std::vector<std::uint8_t> scene_labels(static_cast<std::size_t>(scene * scene));
        for (std::int64_t y = 0; y < scene; ++y) {
            for (std::int64_t x = 0; x < scene; ++x) {
                double best = std::numeric_limits<double>::max();
                std::int64_t best_site = 0;
                for (std::int64_t s = 0; s < n_sites; ++s) {
                    const double dy = static_cast<double>(y) - site_y[static_cast<std::size_t>(s)];
                    const double dx = static_cast<double>(x) - site_x[static_cast<std::size_t>(s)];
                    const double d2 = dy * dy + dx * dx;
                    if (d2 < best) {
                        best = d2;
                        best_site = s;
                    }
                }
                scene_labels[static_cast<std::size_t>(y * scene + x)] =
                    site_class[static_cast<std::size_t>(best_site)];
            }
        }

        std::vector<NoiseField> fields;
        fields.reserve(static_cast<std::size_t>(bands));
        Rng frng = Rng(config.seed).fork(0x20000u + static_cast<std::uint64_t>(block));
        for (std::int64_t c = 0; c < bands; ++c) {
            fields.push_back(NoiseField::make(frng, scene, config.noise_cell));
        }

        std::optional<NoiseField> coupling_field;
        if (config.band_coupling > 0.0) {
            Rng crng = Rng(config.seed).fork(0x40000u + static_cast<std::uint64_t>(block));
            coupling_field = NoiseField::make(crng, scene, config.coupling_cell);
        }

        const std::string block_dir = "block_" + std::to_string(block);
        for (std::int64_t cell = 0; cell < 16; ++cell) {
            const std::int64_t row = cell / 4, col = cell % 4;
            const std::string& code = sub_sheet_layout()[static_cast<std::size_t>(cell)];
            Rng trng = Rng(config.seed).fork(0x30000u + static_cast<std::uint64_t>(block) * 16 +
                                             static_cast<std::uint64_t>(cell));

            std::vector<double> gains(static_cast<std::size_t>(bands));
            for (double& g : gains) g = 1.0 + config.gain_jitter * trng.gaussian(0.0, 1.0);

            SpectralTile out;
            out.sheet = SheetIndex{block, code};
            out.image = TensorF::zeros({bands, tile, tile});
            out.labels.resize(static_cast<std::size_t>(tile * tile));
            auto img = out.image.mutable_data();
            const std::int64_t oy = row * tile, ox = col * tile;
            for (std::int64_t y = 0; y < tile; ++y) {
                for (std::int64_t x = 0; x < tile; ++x) {
                    const std::uint8_t k = scene_labels[static_cast<std::size_t>((oy + y) * scene + ox + x)];
                    out.labels[static_cast<std::size_t>(y * tile + x)] = k;
                    for (std::int64_t c = 0; c < bands; ++c) {
                        double v = signatures[k][static_cast<std::size_t>(c)];
                        if (config.noise_sigma > 0.0) {
                            v += config.noise_sigma * fields[static_cast<std::size_t>(c)].at(oy + y, ox + x);
                        }
                        if (coupling_field && coupled_mask[k][static_cast<std::size_t>(c)]) {
                            v += config.band_coupling * coupling_field->at(oy + y, ox + x);
                        }
                        v *= gains[static_cast<std::size_t>(c)];
                        img[static_cast<std::size_t>((c * tile + y) * tile + x)] =
                            static_cast<float>(std::clamp(v, 0.0, 1.0));
                    }
                }
            }

            if (config.unlabeled_fraction > 0.0) {
                const std::int64_t target =
                    static_cast<std::int64_t>(std::lround(config.unlabeled_fraction * static_cast<double>(tile * tile)));
                std::int64_t masked = 0;
                for (int attempt = 0; attempt < 64 && masked < target; ++attempt) {
                    const double cy = trng.uniform(0.0, static_cast<double>(tile));
                    const double cx = trng.uniform(0.0, static_cast<double>(tile));
                    const double r = trng.uniform(3.0, static_cast<double>(tile) / 6.0);
                    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy - r));
                    const std::int64_t y1 = std::min<std::int64_t>(tile - 1, static_cast<std::int64_t>(cy + r));
                    for (std::int64_t y = y0; y <= y1; ++y) {
                        for (std::int64_t x = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx - r));
                             x <= std::min<std::int64_t>(tile - 1, static_cast<std::int64_t>(cx + r)); ++x) {
                            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                            if (dy * dy + dx * dx > r * r) continue;
                            std::uint8_t& label = out.labels[static_cast<std::size_t>(y * tile + x)];
                            if (label != kIgnoreLabel) {
                                label = kIgnoreLabel;
                                ++masked;
                            }
                        }
                    }
                }
            }

            const std::string rel_path = block_dir + "/" + code + ".cft";
            write_tile(out_dir / rel_path, out);
            manifest.tiles.push_back(TileRecord{rel_path, out.sheet, bands, tile, tile});
        }
    }

    nlohmann::json provenance;
    provenance["config"] = gen_config_doc(config);
    provenance["signatures"] = signatures;
    if (!coupled.empty()) provenance["coupled_bands"] = coupled;
    manifest.generator_json = provenance.dump();

    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

std::optional<GeneratorProvenance> generator_provenance(const DatasetManifest& manifest) {
    if (manifest.generator_json.empty()) return std::nullopt;
    try {
        const nlohmann::json doc = nlohmann::json::parse(manifest.generator_json);
        GeneratorProvenance prov;
        prov.config = gen_config_from_doc(doc.at("config"));
        prov.signatures = doc.at("signatures").get<std::vector<std::vector<double>>>();
        prov.coupled_bands = doc.value("coupled_bands", std::vector<std::vector<int>>{});
        return prov;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("generator provenance is malformed: ") + e.what());
    }
}

std::string gen_config_to_json(const GenConfig& config) { return gen_config_doc(config).dump(2) + "\n"; }

GenConfig gen_config_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("generator config must be a JSON object");

    GenConfig config; // start from defaults; the document only overrides
    const nlohmann::json known = gen_config_doc(config);
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key)) throw ConfigError("generator config has unknown key '" + key + "'");
    }
    try {
        config.seed = doc.value("seed", config.seed);
        config.blocks = doc.value("blocks", config.blocks);
        config.tile_side = doc.value("tile_side", config.tile_side);
        config.bands = doc.value("bands", config.bands);
        config.classes = doc.value("classes", config.classes);
        config.mixture = doc.value("mixture", config.mixture);
        config.noise_sigma = doc.value("noise_sigma", config.noise_sigma);
        config.noise_cell = doc.value("noise_cell", config.noise_cell);
        config.gain_jitter = doc.value("gain_jitter", config.gain_jitter);
        config.band_coupling = doc.value("band_coupling", config.band_coupling);
        config.coupling_cell = doc.value("coupling_cell", config.coupling_cell);
        config.sites_per_tile = doc.value("sites_per_tile", config.sites_per_tile);
        config.unlabeled_fraction = doc.value("unlabeled_fraction", config.unlabeled_fraction);
        config.class_names = doc.value("class_names", config.class_names);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator config has a mistyped value: ") + e.what());
    }
    return config;
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw ValueError("fraction must lie in (0, 1]");
    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    Rng rng = Rng(seed).fork(0xf7ac); // dedicated stream so other seed uses don't shift the pick
    rng.shuffle(indices);
    indices.resize(static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
    std::sort(indices.begin(), indices.end());
    return indices;
}

GridPatchSampler::GridPatchSampler(const std::vector<SpectralTile>& tiles, SamplerConfig config)
    : config_(config) {
    if (config_.cell_side < 1) throw ConfigError("cell_side must be at least 1");
    if (config_.patch_cells < 1) throw ConfigError("patch_cells must be at least 1");
    const std::int64_t side = patch_side();
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const std::int64_t h = tiles[t].height(), w = tiles[t].width();
        if (h % config_.cell_side != 0 || w % config_.cell_side != 0) {
            throw ShapeError("cell side " + std::to_string(config_.cell_side) + " must divide tile extents " +
                             std::to_string(h) + "x" + std::to_string(w));
        }
        if (side > h || side > w) {
            throw ValueError("patch side " + std::to_string(side) + " larger than tile " + std::to_string(h) +
                             "x" + std::to_string(w));
        }
        const std::int64_t ny = h / side, nx = w / side;
        for (std::int64_t iy = 0; iy < ny; ++iy) {
            for (std::int64_t ix = 0; ix < nx; ++ix) {
                positions_.push_back(PatchRef{t, iy * side, ix * side, side});
            }
        }
    }
    if (config_.n_patches == 0 || config_.n_patches < -1) {
        throw ConfigError("n_patches must be positive or -1 for all");
    }
    if (config_.n_patches > total_positions()) {
        throw ConfigError("n_patches " + std::to_string(config_.n_patches) + " exceeds the " +
                          std::to_string(total_positions()) + " available positions");
    }
}

std::int64_t GridPatchSampler::patches_per_epoch() const {
    return config_.n_patches < 0 ? total_positions() : config_.n_patches;
}

std::vector<PatchRef> GridPatchSampler::epoch_order(std::int64_t epoch) const {
    std::vector<PatchRef> order = positions_;
    Rng rng = Rng(config_.seed).fork(0x5a3fu).fork(static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(patches_per_epoch()));
    return order;
}

std::pair<TensorF, std::vector<std::int32_t>> extract_patch(const SpectralTile& tile, const PatchRef& ref) {
    const std::int64_t c = tile.bands(), h = tile.height(), w = tile.width(), side = ref.side;
    if (ref.y0 < 0 || ref.x0 < 0 || ref.y0 + side > h || ref.x0 + side > w) {
        throw ValueError("patch window runs outside the tile");
    }
    TensorF image = TensorF::zeros({c, side, side});
    auto img = image.mutable_data();
    const float* src = tile.image.raw();
    for (std::int64_t b = 0; b < c; ++b) {
        for (std::int64_t y = 0; y < side; ++y) {
            const float* row = src + (b * h + ref.y0 + y) * w + ref.x0;
            float* dst = img.data() + (b * side + y) * side;
            for (std::int64_t x = 0; x < side; ++x) dst[x] = row[x];
        }
    }
    std::vector<std::int32_t> labels(static_cast<std::size_t>(side * side));
    for (std::int64_t y = 0; y < side; ++y) {
        for (std::int64_t x = 0; x < side; ++x) {
            labels[static_cast<std::size_t>(y * side + x)] =
                static_cast<std::int32_t>(tile.label_at(ref.y0 + y, ref.x0 + x));
        }
    }
    return {std::move(image), std::move(labels)};
}

SplitAudit make_audit(const ClassDistribution& train, const ClassDistribution& val,
                      const ClassDistribution& test) {
    SplitAudit audit;
    audit.train = train;
    audit.val = val;
    audit.test = test;
    audit.train_val = chi_squared_distance(train, val);
    audit.train_test = chi_squared_distance(train, test);
    audit.val_test = chi_squared_distance(val, test);
    return audit;
}

SplitAudit audit_splits(const DatasetManifest& manifest) {
    std::array<std::vector<SpectralTile>, 3> tiles;
    for (Split split : {Split::train, Split::val, Split::test}) {
        auto loaded = load_split(manifest, split);
        if (loaded.empty()) {
            throw ValueError("split audit needs all three splits; '" + split_name(split) + "' has no tiles");
        }
        tiles[static_cast<std::size_t>(split)] = std::move(loaded);
    }
    return make_audit(class_distribution(tiles[0], manifest.classes()),
                      class_distribution(tiles[1], manifest.classes()),
                      class_distribution(tiles[2], manifest.classes()));
}

std::string render_split_audit_csv(const std::vector<std::string>& class_names, const SplitAudit& audit) {
    const std::size_t k = audit.train.fractions.size();
    if (class_names.size() != k || audit.val.fractions.size() != k || audit.test.fractions.size() != k) {
        throw ShapeError("audit CSV: class name and fraction counts disagree");
    }
    std::string csv = "class,train_frac,val_frac,test_frac\n";
    for (std::size_t i = 0; i < k; ++i) {
        csv += class_names[i] + "," + format_fraction(audit.train.fractions[i]) + "," +
               format_fraction(audit.val.fractions[i]) + "," + format_fraction(audit.test.fractions[i]) + "\n";
    }
    csv += "chi_squared_distance," + format_fraction(audit.train_val) + "," + format_fraction(audit.train_test) +
           "," + format_fraction(audit.val_test) + "\n";
    return csv;
}

SplitAudit audit_from_fractions_csv(const std::filesystem::path& file, std::vector<std::string>* class_names) {
    std::istringstream in(binio::read_text_file(file));
    std::string line;
    if (!std::getline(in, line)) throw IoError("fractions CSV '" + file.string() + "' is empty");
    if (line.rfind("class,train_frac,val_frac,test_frac", 0) != 0) {
        throw ValueError("fractions CSV must start with header class,train_frac,val_frac,test_frac");
    }
    if (class_names) class_names->clear();
    ClassDistribution train, val, test;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string name, a, b, c;
        if (!std::getline(row, name, ',') || !std::getline(row, a, ',') || !std::getline(row, b, ',') ||
            !std::getline(row, c, ',')) {
            throw ValueError("fractions CSV row '" + line + "' needs 4 columns");
        }
        if (name == "chi_squared_distance") continue;  // footer of a previously rendered audit
        try {
            train.fractions.push_back(std::stod(a));
            val.fractions.push_back(std::stod(b));
            test.fractions.push_back(std::stod(c));
        } catch (const std::exception&) {
            throw ValueError("fractions CSV row '" + line + "' holds a non-numeric fraction");
        }
        if (class_names) class_names->push_back(name);
    }
    if (train.fractions.empty()) throw ValueError("fractions CSV lists no classes");
    // normalize each column so percentage tables and fraction tables audit identically
    for (ClassDistribution* dist : {&train, &val, &test}) {
        const double sum = std::accumulate(dist->fractions.begin(), dist->fractions.end(), 0.0);
        if (sum <= 0.0) throw ValueError("fractions CSV column sums to zero");
        for (double& f : dist->fractions) f /= sum;
    }
    return make_audit(train, val, test);
}

}  // namespace chroma::data
