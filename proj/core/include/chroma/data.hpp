#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

// Synthetic multi-spectral dataset plumbing: the map-sheet split, the CFT1
// tile format, class-distribution auditing, and the cell-aligned patch
// sampler that feeds training.
//
// A region is a set of numbered blocks. Every block is a 4 x 4 grid of
// sub-sheet tiles laid out as
//
//     1N 2N 3N 4N
//     1Z 2Z 3Z 4Z
//     5N 6N 7N 8N
//     5Z 6Z 7Z 8Z
//
// and split column-wise/quadrant-wise: the left half {1,2,5,6}{N,Z} trains,
// the upper right {3,4}{N,Z} validates, the lower right {7,8}{N,Z} tests.

namespace chroma::data {

constexpr std::uint8_t kIgnoreLabel = 255;

enum class Split { train, val, test };

std::string split_name(Split split);
Split split_from_name(const std::string& name);

struct SheetIndex {
    int block = 1;                 // 1..43
    std::string sub_sheet = "1N";  // one of {1..8}{N,Z}

    void validate() const;
};

// The 16 sub-sheet codes in scene layout order (row-major over the 4x4 grid).
const std::array<std::string, 16>& sub_sheet_layout();

Split assign_split(const SheetIndex& sheet);

struct SpectralTile {
    TensorF image;                     // [C x H x W], reflectance-like values
    std::vector<std::uint8_t> labels;  // H*W class ids, kIgnoreLabel = unlabeled
    SheetIndex sheet;

    std::int64_t bands() const { return image.extent(0); }
    std::int64_t height() const { return image.extent(1); }
    std::int64_t width() const { return image.extent(2); }
    std::uint8_t label_at(std::int64_t y, std::int64_t x) const {
        return labels[static_cast<std::size_t>(y * width() + x)];
    }
};

// CFT1 container: magic "CFT1", little-endian u32 bands/height/width/dtype
// tag, then the payload. Tag 1 is a labeled tile (f32 image + u8 labels),
// tag 2 a bare f32 volume (used for attention dumps).
void write_tile(const std::filesystem::path& path, const SpectralTile& tile);
SpectralTile read_tile(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const TensorF& volume);
TensorF read_volume(const std::filesystem::path& path);

struct TileRecord {
    std::string path;  // relative to the manifest directory
    SheetIndex sheet;
    std::int64_t bands = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
};

struct DatasetManifest {
    std::filesystem::path root;  // directory holding the manifest file
    std::int64_t bands = 0;
    std::vector<std::string> class_names;
    std::uint64_t seed = 0;
    std::vector<TileRecord> tiles;
    std::string generator_json;  // provenance blob written by the generator

    std::int64_t classes() const { return static_cast<std::int64_t>(class_names.size()); }
    std::vector<std::size_t> split_tile_indices(Split split) const;
};

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

// Parses the manifest and verifies that every referenced tile exists with
// the declared extents (header check only; payloads are read on demand).
DatasetManifest load_manifest(const std::filesystem::path& file);

std::vector<SpectralTile> load_tiles(const DatasetManifest& manifest, const std::vector<std::size_t>& indices);
std::vector<SpectralTile> load_split(const DatasetManifest& manifest, Split split);

struct ClassDistribution {
    std::vector<double> fractions;
};

// Normalized per-class pixel counts over every non-ignore pixel.
ClassDistribution class_distribution(const std::vector<const SpectralTile*>& tiles, std::int64_t classes);
ClassDistribution class_distribution(const std::vector<SpectralTile>& tiles, std::int64_t classes);

// Sum of (P_i - Q_i)^2 / (P_i + Q_i); terms with a zero denominator
// contribute zero. Symmetric, zero iff P = Q, at most 2 for distributions.
double chi_squared_distance(const ClassDistribution& p, const ClassDistribution& q);

struct GenConfig {
    std::uint64_t seed = 7;
    std::vector<int> blocks = {17, 18};
    std::int64_t tile_side = 64;
    std::int64_t bands = 12;
    std::int64_t classes = 5;
    std::vector<double> mixture;  // target class mixture; empty = uniform
    double noise_sigma = 0.05;    // amplitude of the correlated noise field
    std::int64_t noise_cell = 16; // coarse noise grid cell, in pixels
    double gain_jitter = 0.05;    // per-tile per-band multiplicative jitter
    double band_coupling = 0.0;   // amplitude of the shared modulation on each class's coupled bands
    std::int64_t coupling_cell = 8;   // modulation grid cell, in pixels
    std::int64_t sites_per_tile = 24; // region granularity; fewer sites raise split-imbalance variance
    double unlabeled_fraction = 0.0;
    std::vector<std::string> class_names;  // empty = class_0..class_{K-1}

    void validate() const;
};

// Builds one scene per block from seeded Voronoi class regions, cuts it into
// the 16 sub-sheet tiles, writes them plus the manifest under out_dir, and
// returns the manifest. Byte-identical output for identical config.
//
// With band_coupling > 0 each class additionally gets a small set of coupled
// bands that ride a shared smooth modulation field; confusable-pair classes
// get disjoint sets. Per pixel the modulation is indistinguishable from noise
// or gain drift — the discriminative cue is which bands co-vary across a
// neighbourhood, i.e. genuine inter-band dependency structure.
DatasetManifest generate_synthetic_region(const GenConfig& config, const std::filesystem::path& out_dir);

// The generator's class signatures and config, as recorded in the manifest.
struct GeneratorProvenance {
    GenConfig config;
    std::vector<std::vector<double>> signatures;    // K vectors of length C
    std::vector<std::vector<int>> coupled_bands;    // per class; empty when band_coupling = 0
};

std::optional<GeneratorProvenance> generator_provenance(const DatasetManifest& manifest);

// Generator config as a single JSON document. Reading fills defaults for
// missing keys and rejects unknown ones, so a typo fails loudly instead of
// silently running with defaults.
std::string gen_config_to_json(const GenConfig& config);
GenConfig gen_config_from_json(const std::string& text);

// Seed-stable subsample of floor(fraction * n) indices out of [0, n).
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);

struct SamplerConfig {
    std::int64_t cell_side = 8;    // grid cell, must divide every tile side
    std::int64_t patch_cells = 4;  // patch covers patch_cells x patch_cells cells
    std::int64_t n_patches = -1;   // per epoch; -1 = every position
    std::uint64_t seed = 0;
};

struct PatchRef {
    std::size_t tile = 0;
    std::int64_t y0 = 0;
    std::int64_t x0 = 0;
    std::int64_t side = 0;
};

// Grids every tile into cells, enumerates the patch-aligned (non-overlapping)
// patch positions, and deals them out in a deterministic per-(seed, epoch)
// order without replacement.
class GridPatchSampler {
  public:
    GridPatchSampler(const std::vector<SpectralTile>& tiles, SamplerConfig config);

    std::int64_t patch_side() const { return config_.cell_side * config_.patch_cells; }
    std::int64_t total_positions() const { return static_cast<std::int64_t>(positions_.size()); }
    std::int64_t patches_per_epoch() const;

    std::vector<PatchRef> epoch_order(std::int64_t epoch) const;

  private:
    SamplerConfig config_;
    std::vector<PatchRef> positions_;
};

// Cuts out an aligned image/label window; labels come back as int32 with the
// ignore marker passed through.
std::pair<TensorF, std::vector<std::int32_t>> extract_patch(const SpectralTile& tile, const PatchRef& ref);

struct SplitAudit {
    ClassDistribution train;
    ClassDistribution val;
    ClassDistribution test;
    double train_val = 0.0;
    double train_test = 0.0;
    double val_test = 0.0;
};

SplitAudit make_audit(const ClassDistribution& train, const ClassDistribution& val,
                      const ClassDistribution& test);
SplitAudit audit_splits(const DatasetManifest& manifest);

// CSV with one row per class (class, train_frac, val_frac, test_frac) and a
// footer row carrying the pairwise chi-squared distances in the order
// train/val, train/test, val/test.
std::string render_split_audit_csv(const std::vector<std::string>& class_names, const SplitAudit& audit);

// Parses a CSV in the audit layout (footer optional) back into fractions;
// used to audit externally supplied distribution tables.
SplitAudit audit_from_fractions_csv(const std::filesystem::path& file,
                                    std::vector<std::string>* class_names = nullptr);

}  // namespace chroma::data
