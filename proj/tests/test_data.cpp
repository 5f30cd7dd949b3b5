#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "chroma/data.hpp"
#include "chroma/error.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

using namespace chroma;

namespace {

std::filesystem::path scratch_dir(const std::string& leaf) {
    std::filesystem::path dir = std::filesystem::path(CHROMA_TEST_SCRATCH) / leaf;
    std::filesystem::create_directories(dir);
    return dir;
}

// Smallest config the generator accepts; one 64x64 scene cut into 16x16 tiles.
data::GenConfig small_gen(std::uint64_t seed) {
    data::GenConfig cfg;
    cfg.seed = seed;
    cfg.blocks = {17};
    cfg.tile_side = 16;
    cfg.bands = 4;
    cfg.classes = 3;
    cfg.noise_cell = 16;
    cfg.coupling_cell = 8;
    cfg.sites_per_tile = 6;
    return cfg;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

data::SpectralTile make_tile(std::uint64_t seed) {
    Rng rng(seed);
    data::SpectralTile tile;
    tile.image = TensorF::gaussian({3, 8, 8}, rng, 0.5f, 0.2f);
    tile.labels.assign(64, 0);
    for (std::size_t i = 0; i < 64; ++i) tile.labels[i] = static_cast<std::uint8_t>(i % 3);
    tile.labels[5] = data::kIgnoreLabel;
    tile.sheet = {17, "3N"};
    return tile;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("sub-sheets split 8/4/4 by layout half and quadrant") {
    std::int64_t train = 0, val = 0, test = 0;
    for (const std::string& code : data::sub_sheet_layout()) {
        switch (data::assign_split({17, code})) {
            case data::Split::train: ++train; break;
            case data::Split::val: ++val; break;
            case data::Split::test: ++test; break;
        }
    }
    CHECK(train == 8);
    CHECK(val == 4);
    CHECK(test == 4);
    // left half trains
    for (const char* code : {"1N", "2N", "5N", "6N", "1Z", "2Z", "5Z", "6Z"}) {
        CHECK(data::assign_split({3, code}) == data::Split::train);
    }
    // upper right validates, lower right tests
    for (const char* code : {"3N", "4N", "3Z", "4Z"}) CHECK(data::assign_split({3, code}) == data::Split::val);
    for (const char* code : {"7N", "8N", "7Z", "8Z"}) CHECK(data::assign_split({3, code}) == data::Split::test);

    CHECK(data::split_from_name("train") == data::Split::train);
    CHECK(data::split_name(data::Split::test) == "test");
    CHECK_THROWS_AS(data::split_from_name("holdout"), ValueError);
    CHECK_THROWS_AS(data::SheetIndex({0, "1N"}).validate(), ValueError);
    CHECK_THROWS_AS(data::SheetIndex({17, "9N"}).validate(), ValueError);
}

TEST_CASE("tile container round-trips bit-exactly") {
    const auto dir = scratch_dir("cft");
    data::SpectralTile tile = make_tile(3);
    data::write_tile(dir / "tile.cft", tile);
    data::SpectralTile back = data::read_tile(dir / "tile.cft");
    REQUIRE(back.image.shape() == tile.image.shape());
    for (std::int64_t i = 0; i < tile.image.numel(); ++i) {
        CHECK(back.image.data()[static_cast<std::size_t>(i)] == tile.image.data()[static_cast<std::size_t>(i)]);
    }
    CHECK(back.labels == tile.labels);
    CHECK(back.sheet.block == 17);
    CHECK(back.sheet.sub_sheet == "3N");

    Rng rng(9);
    TensorF volume = TensorF::gaussian({2, 5, 7}, rng);
    data::write_volume(dir / "vol.cft", volume);
    TensorF vback = data::read_volume(dir / "vol.cft");
    REQUIRE(vback.shape() == volume.shape());
    for (std::int64_t i = 0; i < volume.numel(); ++i) {
        CHECK(vback.data()[static_cast<std::size_t>(i)] == volume.data()[static_cast<std::size_t>(i)]);
    }

    std::ofstream bad(dir / "bad.cft", std::ios::binary);
    bad << "NOPE.....................";
    bad.close();
    CHECK_THROWS_AS(data::read_tile(dir / "bad.cft"), IoError);
    CHECK_THROWS_AS(data::read_tile(dir / "absent.cft"), IoError);
}

TEST_CASE("generator output is byte-identical across runs") {
    const auto dir_a = scratch_dir("gen_a");
    const auto dir_b = scratch_dir("gen_b");
    data::DatasetManifest a = data::generate_synthetic_region(small_gen(5), dir_a);
    data::DatasetManifest b = data::generate_synthetic_region(small_gen(5), dir_b);
    REQUIRE(a.tiles.size() == 16);
    REQUIRE(b.tiles.size() == 16);
    for (std::size_t i = 0; i < a.tiles.size(); ++i) {
        CHECK(a.tiles[i].path == b.tiles[i].path);
        CHECK(file_bytes(dir_a / a.tiles[i].path) == file_bytes(dir_b / b.tiles[i].path));
    }
    CHECK(file_bytes(dir_a / "manifest.json") == file_bytes(dir_b / "manifest.json"));

    // a different seed must change the pixels
    const auto dir_c = scratch_dir("gen_c");
    data::DatasetManifest c = data::generate_synthetic_region(small_gen(6), dir_c);
    CHECK(file_bytes(dir_a / a.tiles[0].path) != file_bytes(dir_c / c.tiles[0].path));
}

TEST_CASE("clean-limit pixels sit exactly on their class signature") {
    data::GenConfig cfg = small_gen(11);
    cfg.noise_sigma = 0.0;
    cfg.gain_jitter = 0.0;
    const auto dir = scratch_dir("gen_clean");
    data::DatasetManifest manifest = data::generate_synthetic_region(cfg, dir);
    auto prov = data::generator_provenance(manifest);
    REQUIRE(prov.has_value());
    REQUIRE(prov->signatures.size() == 3);
    REQUIRE(prov->signatures[0].size() == 4);
    CHECK(prov->coupled_bands.empty());

    auto tiles = data::load_tiles(manifest, {0, 7});
    for (const auto& tile : tiles) {
        for (std::int64_t y = 0; y < tile.height(); ++y) {
            for (std::int64_t x = 0; x < tile.width(); ++x) {
                const std::uint8_t label = tile.label_at(y, x);
                if (label == data::kIgnoreLabel) continue;
                for (std::int64_t b = 0; b < tile.bands(); ++b) {
                    const double want = prov->signatures[label][static_cast<std::size_t>(b)];
                    const double got = tile.image.at({b, y, x});
                    REQUIRE(std::fabs(want - got) <= 1e-6);
                }
            }
        }
    }
}

TEST_CASE("splits cover the same classes with close distributions") {
    data::GenConfig cfg = small_gen(13);
    cfg.blocks = {17, 18};
    const auto dir = scratch_dir("gen_audit");
    data::DatasetManifest manifest = data::generate_synthetic_region(cfg, dir);
    REQUIRE(manifest.tiles.size() == 32);
    CHECK(manifest.classes() == 3);

    data::SplitAudit audit = data::audit_splits(manifest);
    for (const auto* dist : {&audit.train, &audit.val, &audit.test}) {
        REQUIRE(dist->fractions.size() == 3);
        double sum = 0.0;
        for (double f : dist->fractions) {
            CHECK(f > 0.05);  // every class visible in every split
            sum += f;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(audit.train_val < 0.05);
    CHECK(audit.train_test < 0.05);
    CHECK(audit.val_test < 0.05);

    // the audit is just the distribution arithmetic over the loaded splits
    auto train_tiles = data::load_split(manifest, data::Split::train);
    CHECK(train_tiles.size() == 16);
    data::ClassDistribution direct = data::class_distribution(train_tiles, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(direct.fractions[i] == doctest::Approx(audit.train.fractions[i]).epsilon(1e-12));
    }
}

TEST_CASE("chi-squared distance is symmetric, bounded, zero at equality") {
    data::ClassDistribution p{{1.0, 0.0}};
    data::ClassDistribution q{{0.0, 1.0}};
    CHECK(data::chi_squared_distance(p, q) == doctest::Approx(2.0));
    CHECK(data::chi_squared_distance(q, p) == doctest::Approx(2.0));
    CHECK(data::chi_squared_distance(p, p) == 0.0);
    data::ClassDistribution r{{0.25, 0.75}};
    data::ClassDistribution s{{0.5, 0.5}};
    const double d = data::chi_squared_distance(r, s);
    CHECK(d == doctest::Approx((0.25 * 0.25) / 0.75 + (0.25 * 0.25) / 1.25));
    CHECK_THROWS_AS(data::chi_squared_distance(p, data::ClassDistribution{{1.0, 0.0, 0.0}}), ShapeError);
}

TEST_CASE("coupled bands are recorded and disjoint within a confusable pair") {
    data::GenConfig cfg = small_gen(17);
    cfg.band_coupling = 0.3;
    const auto dir = scratch_dir("gen_coupled");
    data::DatasetManifest manifest = data::generate_synthetic_region(cfg, dir);
    auto prov = data::generator_provenance(manifest);
    REQUIRE(prov.has_value());
    CHECK(prov->config.band_coupling == doctest::Approx(0.3));
    REQUIRE(prov->coupled_bands.size() == 3);
    for (const auto& set : prov->coupled_bands) {
        REQUIRE(set.size() == 2);  // min(3, bands / 2) with 4 bands
        CHECK(std::is_sorted(set.begin(), set.end()));
        for (int band : set) {
            CHECK(band >= 0);
            CHECK(band < 4);
        }
    }
    // classes 0 and 1 form a confusable pair: their sets must not overlap
    std::vector<int> overlap;
    std::set_intersection(prov->coupled_bands[0].begin(), prov->coupled_bands[0].end(),
                          prov->coupled_bands[1].begin(), prov->coupled_bands[1].end(),
                          std::back_inserter(overlap));
    CHECK(overlap.empty());
}

TEST_CASE("generator config json round trip") {
    data::GenConfig cfg = small_gen(23);
    cfg.mixture = {0.5, 0.3, 0.2};
    cfg.band_coupling = 0.35;
    cfg.unlabeled_fraction = 0.1;
    cfg.class_names = {"water", "forest", "field"};
    data::GenConfig back = data::gen_config_from_json(data::gen_config_to_json(cfg));
    CHECK(back.seed == 23);
    CHECK(back.blocks == cfg.blocks);
    CHECK(back.tile_side == 16);
    CHECK(back.bands == 4);
    CHECK(back.classes == 3);
    CHECK(back.mixture == cfg.mixture);
    CHECK(back.noise_sigma == cfg.noise_sigma);
    CHECK(back.noise_cell == cfg.noise_cell);
    CHECK(back.gain_jitter == cfg.gain_jitter);
    CHECK(back.band_coupling == 0.35);
    CHECK(back.coupling_cell == 8);
    CHECK(back.sites_per_tile == 6);
    CHECK(back.unlabeled_fraction == 0.1);
    CHECK(back.class_names == cfg.class_names);

    // missing keys take defaults; unknown or mistyped keys fail loudly
    data::GenConfig sparse = data::gen_config_from_json(R"({"seed": 4, "bands": 6})");
    CHECK(sparse.seed == 4);
    CHECK(sparse.bands == 6);
    CHECK(sparse.tile_side == 64);
    CHECK_THROWS_AS(data::gen_config_from_json(R"({"bandz": 6})"), ConfigError);
    CHECK_THROWS_AS(data::gen_config_from_json(R"({"bands": "six"})"), ConfigError);
    CHECK_THROWS_AS(data::gen_config_from_json("not json"), ConfigError);
}

TEST_CASE("subsampling is an exact floor and seed-stable") {
    auto picks = data::subsample_indices(10, 0.34, 77);
    CHECK(picks.size() == 3);
    CHECK(picks == data::subsample_indices(10, 0.34, 77));
    CHECK(std::is_sorted(picks.begin(), picks.end()));
    for (std::size_t index : picks) CHECK(index < 10);

    auto all = data::subsample_indices(10, 1.0, 77);
    REQUIRE(all.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);
    CHECK(data::subsample_indices(10, 0.05, 77).empty());

    // a different seed deals a different hand (for this n and fraction)
    CHECK(data::subsample_indices(1000, 0.5, 1) != data::subsample_indices(1000, 0.5, 2));
}

TEST_CASE("patch sampler deals every aligned position once per epoch") {
    std::vector<data::SpectralTile> tiles;
    for (std::uint64_t s = 0; s < 2; ++s) {
        Rng rng(s + 40);
        data::SpectralTile tile;
        tile.image = TensorF::gaussian({2, 16, 16}, rng);
        tile.labels.assign(256, 1);
        tile.sheet = {17, "1N"};
        tiles.push_back(std::move(tile));
    }
    data::SamplerConfig sc{.cell_side = 4, .patch_cells = 2, .n_patches = -1, .seed = 3};
    data::GridPatchSampler sampler(tiles, sc);
    CHECK(sampler.patch_side() == 8);
    CHECK(sampler.total_positions() == 8);  // 2x2 per 16x16 tile, two tiles
    CHECK(sampler.patches_per_epoch() == 8);

    auto order = sampler.epoch_order(0);
    REQUIRE(order.size() == 8);
    std::set<std::tuple<std::size_t, std::int64_t, std::int64_t>> seen;
    for (const auto& ref : order) {
        CHECK(ref.side == 8);
        CHECK(ref.y0 % 8 == 0);
        CHECK(ref.x0 % 8 == 0);
        seen.insert({ref.tile, ref.y0, ref.x0});
    }
    CHECK(seen.size() == 8);  // exact cover, no repeats

    // same epoch replays identically; the next epoch reshuffles
    auto replay = sampler.epoch_order(0);
    bool same = true;
    bool differs_next = false;
    auto next = sampler.epoch_order(1);
    for (std::size_t i = 0; i < 8; ++i) {
        same = same && replay[i].tile == order[i].tile && replay[i].y0 == order[i].y0 && replay[i].x0 == order[i].x0;
        differs_next = differs_next || next[i].tile != order[i].tile || next[i].y0 != order[i].y0 ||
                       next[i].x0 != order[i].x0;
    }
    CHECK(same);
    CHECK(differs_next);

    data::SamplerConfig capped = sc;
    capped.n_patches = 3;
    CHECK(data::GridPatchSampler(tiles, capped).epoch_order(0).size() == 3);
    capped.n_patches = 9;
    CHECK_THROWS_AS(data::GridPatchSampler(tiles, capped), ConfigError);
    data::SamplerConfig misaligned = sc;
    misaligned.cell_side = 5;
    CHECK_THROWS_AS(data::GridPatchSampler(tiles, misaligned), ShapeError);
}

TEST_CASE("patch extraction cuts the window and widens the labels") {
    data::SpectralTile tile = make_tile(50);
    auto [image, labels] = data::extract_patch(tile, {0, 4, 2, 4});
    REQUIRE(image.shape() == Shape{3, 4, 4});
    REQUIRE(labels.size() == 16);
    for (std::int64_t b = 0; b < 3; ++b) {
        for (std::int64_t y = 0; y < 4; ++y) {
            for (std::int64_t x = 0; x < 4; ++x) {
                CHECK(image.at({b, y, x}) == tile.image.at({b, 4 + y, 2 + x}));
            }
        }
    }
    for (std::int64_t y = 0; y < 4; ++y) {
        for (std::int64_t x = 0; x < 4; ++x) {
            CHECK(labels[static_cast<std::size_t>(y * 4 + x)] ==
                  static_cast<std::int32_t>(tile.label_at(4 + y, 2 + x)));
        }
    }
    CHECK_THROWS_AS(data::extract_patch(tile, {0, 6, 6, 4}), ValueError);
}

TEST_CASE("audit of an external fractions table, in percent") {
    // three-split class distribution table of a large-region land-cover survey
    const std::vector<double> train = {0.10, 34.27, 23.07, 0.54, 0.24, 0.26, 0.69,
                                       0.05, 0.14,  0.63,  0.01, 26.27, 2.08, 11.65};
    const std::vector<double> val = {0.06, 33.92, 22.92, 1.08, 0.23, 0.04, 0.65,
                                     0.06, 0.13,  0.58,  0.007, 27.05, 2.05, 11.22};
    const std::vector<double> test = {0.25, 32.85, 22.14, 0.95, 0.22, 0.34, 0.56,
                                      0.07, 0.12,  0.73,  0.006, 28.56, 1.74, 11.47};
    const auto dir = scratch_dir("audit_csv");
    std::ofstream out(dir / "fractions.csv");
    out << "class,train_frac,val_frac,test_frac\n";
    for (std::size_t i = 0; i < train.size(); ++i) {
        out << "c" << i << "," << train[i] << "," << val[i] << "," << test[i] << "\n";
    }
    out.close();

    std::vector<std::string> names;
    data::SplitAudit audit = data::audit_from_fractions_csv(dir / "fractions.csv", &names);
    REQUIRE(names.size() == 14);
    CHECK(names[0] == "c0");
    // columns are normalized, so percent tables audit like fraction tables
    double sum = 0.0;
    for (double f : audit.train.fractions) sum += f;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(audit.train_val == doctest::Approx(0.0038).epsilon(0.13));
    CHECK(audit.train_test == doctest::Approx(0.0039).epsilon(0.13));
    CHECK(audit.val_test == doctest::Approx(0.0048).epsilon(0.13));

    // round trip through the rendered audit layout, footer included
    std::ofstream round(dir / "rendered.csv");
    round << data::render_split_audit_csv(names, audit);
    round.close();
    data::SplitAudit again = data::audit_from_fractions_csv(dir / "rendered.csv");
    CHECK(again.train_val == doctest::Approx(audit.train_val).epsilon(1e-6));

    std::ofstream bad(dir / "bad.csv");
    bad << "wrong,header\n";
    bad.close();
    CHECK_THROWS_AS(data::audit_from_fractions_csv(dir / "bad.csv"), ValueError);
}

}  // TEST_SUITE
