#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"
#include "chroma/window.hpp"

using namespace chroma;

namespace {

// Token grid where row t carries (t, t + 0.5, ...) so gathers are traceable.
TensorD numbered_tokens(std::int64_t h, std::int64_t w, std::int64_t d) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(h * w * d));
    for (std::int64_t t = 0; t < h * w; ++t) {
        for (std::int64_t k = 0; k < d; ++k) values.push_back(static_cast<double>(t) + 0.1 * static_cast<double>(k));
    }
    return TensorD({h * w, d}, std::move(values));
}

}  // namespace

TEST_SUITE("window") {

TEST_CASE("partition groups tokens window by window") {
    TensorD tokens = numbered_tokens(4, 4, 1);
    TensorD parts = win::window_partition(tokens, 4, 4, 2);
    // first window is the top-left 2x2 block: tokens 0, 1, 4, 5
    CHECK(parts.at({0, 0}) == 0.0);
    CHECK(parts.at({1, 0}) == 1.0);
    CHECK(parts.at({2, 0}) == 4.0);
    CHECK(parts.at({3, 0}) == 5.0);
    // last window is the bottom-right block: tokens 10, 11, 14, 15
    CHECK(parts.at({12, 0}) == 10.0);
    CHECK(parts.at({15, 0}) == 15.0);
}

TEST_CASE("partition then reverse is the identity") {
    TensorD tokens = numbered_tokens(8, 8, 3);
    TensorD back = win::window_reverse(win::window_partition(tokens, 8, 8, 4), 8, 8, 4);
    REQUIRE(back.shape() == tokens.shape());
    for (std::int64_t i = 0; i < tokens.numel(); ++i) {
        CHECK(back.data()[static_cast<std::size_t>(i)] == tokens.data()[static_cast<std::size_t>(i)]);
    }
    CHECK_THROWS_AS(win::window_partition(tokens, 8, 8, 3), ShapeError);
}

TEST_CASE("cyclic shift rolls the grid and the opposite shift undoes it") {
    TensorD tokens = numbered_tokens(4, 6, 2);
    TensorD rolled = ops::gather(tokens, win::cyclic_shift_map(4, 6, 2, 1, 2), tokens.shape());
    // out(0, 0) = in(1, 2) = token 8
    CHECK(rolled.at({0, 0}) == 8.0);
    // wrap-around: out(3, 5) = in(0, 1) = token 1
    CHECK(rolled.at({3 * 6 + 5, 0}) == 1.0);
    TensorD back = ops::gather(rolled, win::cyclic_shift_map(4, 6, 2, -1, -2), rolled.shape());
    for (std::int64_t i = 0; i < tokens.numel(); ++i) {
        CHECK(back.data()[static_cast<std::size_t>(i)] == tokens.data()[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("shift region ids form the nine-slice layout") {
    const auto ids = win::shift_region_ids(8, 8, 4, 2);
    REQUIRE(ids.size() == 64);
    // cuts at h - win = 4 and h - shift = 6 on both axes
    CHECK(ids[0] == 0);                       // (0, 0)
    CHECK(ids[3 * 8 + 3] == 0);               // (3, 3)
    CHECK(ids[3 * 8 + 4] == 1);               // (3, 4)
    CHECK(ids[3 * 8 + 7] == 2);               // (3, 7)
    CHECK(ids[5 * 8 + 2] == 3);               // (5, 2)
    CHECK(ids[5 * 8 + 5] == 4);               // (5, 5)
    CHECK(ids[5 * 8 + 7] == 5);               // (5, 7)
    CHECK(ids[7 * 8 + 0] == 6);               // (7, 0)
    CHECK(ids[6 * 8 + 4] == 7);               // (6, 4)
    CHECK(ids[7 * 8 + 7] == 8);               // (7, 7)
    CHECK_THROWS_AS(win::shift_region_ids(8, 8, 4, 0), ShapeError);
    CHECK_THROWS_AS(win::shift_region_ids(8, 8, 4, 4), ShapeError);
}

TEST_CASE("window masks allow attention only within a region") {
    const auto masks = win::shift_masks(8, 8, 4, 2);
    REQUIRE(masks.size() == 4);
    // top-left window sits entirely in region 0: everything allowed
    for (std::uint8_t allowed : masks[0].allowed) CHECK(allowed == 1);
    // bottom-right window mixes regions 4, 5, 7, 8
    const auto& mask = masks[3];
    REQUIRE(mask.rows == 16);
    REQUIRE(mask.cols == 16);
    // in-window (0,0) -> grid (4,4) region 4; in-window (0,2) -> grid (4,6) region 5
    CHECK(mask.allowed[0 * 16 + 1] == 1);   // (4,4) and (4,5) share region 4
    CHECK(mask.allowed[0 * 16 + 2] == 0);   // (4,4) vs (4,6) crosses the seam
    CHECK(mask.allowed[2 * 16 + 3] == 1);   // (4,6) and (4,7) share region 5
    // every row keeps at least itself
    for (std::int64_t i = 0; i < 16; ++i) CHECK(mask.allowed[static_cast<std::size_t>(i * 16 + i)] == 1);
}

TEST_CASE("relative position indices encode the coordinate offset") {
    const auto idx = win::relpos_index_map(2, 1, 0);
    REQUIRE(idx->size() == 16);
    const std::int64_t span = 3;  // 2 * win - 1
    // zero offset maps to the centre of the table
    CHECK((*idx)[0] == (0 + 1) * span + (0 + 1));
    // token (0,0) vs token (1,1): offset (-1,-1), the table corner
    CHECK((*idx)[3] == 0);
    // token (1,1) vs token (0,0): offset (+1,+1), the opposite corner
    CHECK((*idx)[12] == span * span - 1);
    // a second head interleaves: same offsets, odd slots
    const auto head1 = win::relpos_index_map(2, 2, 1);
    for (std::size_t i = 0; i < head1->size(); ++i) {
        CHECK((*head1)[i] == (*idx)[i] * 2 + 1);
    }
}

TEST_CASE("pad extends with zeros and crop restores the original") {
    TensorD tokens = numbered_tokens(3, 5, 2);
    TensorD padded = win::pad_grid(tokens, 3, 5, 4, 8);
    REQUIRE(padded.shape() == Shape{32, 2});
    CHECK(padded.at({0 * 8 + 4, 0}) == 4.0);   // real token survives
    CHECK(padded.at({0 * 8 + 5, 0}) == 0.0);   // column padding
    CHECK(padded.at({3 * 8 + 0, 1}) == 0.0);   // row padding
    TensorD back = win::crop_grid(padded, 4, 8, 3, 5);
    REQUIRE(back.shape() == tokens.shape());
    for (std::int64_t i = 0; i < tokens.numel(); ++i) {
        CHECK(back.data()[static_cast<std::size_t>(i)] == tokens.data()[static_cast<std::size_t>(i)]);
    }
    CHECK_THROWS_AS(win::pad_grid(tokens, 3, 5, 2, 5), ShapeError);
}

TEST_CASE("combined region ids flag padding with a sentinel") {
    // 6x6 grid padded to 8x8, shifted windows
    const auto ids = win::attention_region_ids(6, 6, 8, 8, 4, 2);
    REQUIRE(ids.size() == 64);
    std::int64_t sentinels = 0;
    for (std::int32_t id : ids) sentinels += id == -1 ? 1 : 0;
    CHECK(sentinels == 64 - 36);
    // post-roll (0,0) came from pre-roll (2,2): real, keeps its slice id
    CHECK(ids[0] == 0);
    // post-roll (4,4) came from pre-roll (6,6): padding
    CHECK(ids[4 * 8 + 4] == -1);
    // unshifted and unpadded: a single region covering everything
    const auto plain = win::attention_region_ids(8, 8, 8, 8, 4, 0);
    for (std::int32_t id : plain) CHECK(id == 0);
}

}  // TEST_SUITE
