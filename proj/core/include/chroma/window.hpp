#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "chroma/ops.hpp"
#include "chroma/tensor.hpp"

// Window machinery for shifted-window attention on a token grid stored as
// [H*W x D] (row-major over y, x). Everything here is expressed as gather
// index maps and masks so the attention code stays a plain composition of
// differentiable primitives:
//   - partition/reverse: lossless regrouping into [n_win * w^2 x D]
//   - cyclic shift: torus roll of the grid
//   - shift mask: region-id inequality mask that stops shifted windows from
//     mixing tokens across the original image seams
//   - relative position bias: (2w-1)^2-entry table indexed by the in-window
//     coordinate offset of each query/key pair

namespace chroma::win {

// Tokens regrouped window-by-window: window (wy, wx), then in-window (iy, ix).
inline ops::IndexMap partition_map(std::int64_t h, std::int64_t w, std::int64_t d, std::int64_t win) {
    if (win < 1 || h % win != 0 || w % win != 0) {
        throw ShapeError("window partition: window side " + std::to_string(win) + " must divide grid " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(h * w * d));
    for (std::int64_t wy = 0; wy < h / win; ++wy) {
        for (std::int64_t wx = 0; wx < w / win; ++wx) {
            for (std::int64_t iy = 0; iy < win; ++iy) {
                for (std::int64_t ix = 0; ix < win; ++ix) {
                    const std::int64_t token = (wy * win + iy) * w + wx * win + ix;
                    for (std::int64_t k = 0; k < d; ++k) idx->push_back(token * d + k);
                }
            }
        }
    }
    return idx;
}

inline ops::IndexMap inverse_map(const ops::IndexMap& forward) {
    auto inv = std::make_shared<std::vector<std::int64_t>>(forward->size());
    for (std::size_t i = 0; i < forward->size(); ++i) {
        (*inv)[static_cast<std::size_t>((*forward)[i])] = static_cast<std::int64_t>(i);
    }
    return inv;
}

// out(y, x) = in((y + dy) mod h, (x + dx) mod w).
inline ops::IndexMap cyclic_shift_map(std::int64_t h, std::int64_t w, std::int64_t d, std::int64_t dy,
                                      std::int64_t dx) {
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(h * w * d));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t sy = ((y + dy) % h + h) % h;
            const std::int64_t sx = ((x + dx) % w + w) % w;
            for (std::int64_t k = 0; k < d; ++k) idx->push_back((sy * w + sx) * d + k);
        }
    }
    return idx;
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& tokens, std::int64_t h, std::int64_t w, std::int64_t win) {
    if (tokens.rank() != 2 || tokens.extent(0) != h * w) {
        throw ShapeError("window_partition: tokens must be [H*W x D] for the given grid");
    }
    return ops::gather(tokens, partition_map(h, w, tokens.extent(1), win), tokens.shape());
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::int64_t h, std::int64_t w, std::int64_t win) {
    if (windows.rank() != 2 || windows.extent(0) != h * w) {
        throw ShapeError("window_reverse: tokens must be [H*W x D] for the given grid");
    }
    return ops::gather(windows, inverse_map(partition_map(h, w, windows.extent(1), win)), windows.shape());
}

// Region ids for the shifted grid: the classic three-slice construction.
// After rolling by (-shift, -shift), tokens whose pre-shift positions were
// separated by an image seam land in the same window; giving each slice
// rectangle its own id and masking id mismatches forbids exactly those pairs.
inline std::vector<std::int32_t> shift_region_ids(std::int64_t h, std::int64_t w, std::int64_t win,
                                                  std::int64_t shift) {
    if (shift <= 0 || shift >= win) {
        throw ShapeError("shift_region_ids: shift must satisfy 0 < shift < window side");
    }
    std::vector<std::int32_t> ids(static_cast<std::size_t>(h * w), 0);
    const std::int64_t y_cuts[2] = {h - win, h - shift};
    const std::int64_t x_cuts[2] = {w - win, w - shift};
    std::int32_t region = 0;
    for (int ys = 0; ys < 3; ++ys) {
        const std::int64_t y0 = ys == 0 ? 0 : y_cuts[ys - 1];
        const std::int64_t y1 = ys == 2 ? h : y_cuts[ys];
        for (int xs = 0; xs < 3; ++xs) {
            const std::int64_t x0 = xs == 0 ? 0 : x_cuts[xs - 1];
            const std::int64_t x1 = xs == 2 ? w : x_cuts[xs];
            for (std::int64_t y = y0; y < y1; ++y) {
                for (std::int64_t x = x0; x < x1; ++x) ids[static_cast<std::size_t>(y * w + x)] = region;
            }
            ++region;
        }
    }
    return ids;
}

// Per-window attention masks from arbitrary region ids laid out on the grid;
// window order matches partition_map. Entry (i, j) allows attention iff the
// two tokens share a region id.
inline std::vector<ops::AttnMask> window_masks_from_ids(const std::vector<std::int32_t>& ids, std::int64_t h,
                                                        std::int64_t w, std::int64_t win) {
    const std::int64_t tokens = win * win;
    std::vector<ops::AttnMask> masks;
    masks.reserve(static_cast<std::size_t>((h / win) * (w / win)));
    for (std::int64_t wy = 0; wy < h / win; ++wy) {
        for (std::int64_t wx = 0; wx < w / win; ++wx) {
            ops::AttnMask mask;
            mask.rows = tokens;
            mask.cols = tokens;
            mask.allowed.resize(static_cast<std::size_t>(tokens * tokens));
            std::vector<std::int32_t> local(static_cast<std::size_t>(tokens));
            for (std::int64_t iy = 0; iy < win; ++iy) {
                for (std::int64_t ix = 0; ix < win; ++ix) {
                    local[static_cast<std::size_t>(iy * win + ix)] =
                        ids[static_cast<std::size_t>((wy * win + iy) * w + wx * win + ix)];
                }
            }
            for (std::int64_t i = 0; i < tokens; ++i) {
                for (std::int64_t j = 0; j < tokens; ++j) {
                    mask.allowed[static_cast<std::size_t>(i * tokens + j)] = local[static_cast<std::size_t>(i)] ==
                                                                                     local[static_cast<std::size_t>(j)]
                                                                                 ? 1
                                                                                 : 0;
                }
            }
            masks.push_back(std::move(mask));
        }
    }
    return masks;
}

inline std::vector<ops::AttnMask> shift_masks(std::int64_t h, std::int64_t w, std::int64_t win, std::int64_t shift) {
    return window_masks_from_ids(shift_region_ids(h, w, win, shift), h, w, win);
}

// Flat indices into the (2w-1)^2 x heads bias table for one head: entry
// (i, j) of a w^2 x w^2 score matrix looks up the relative offset of token i
// to token j.
inline ops::IndexMap relpos_index_map(std::int64_t win, std::int64_t heads, std::int64_t head) {
    const std::int64_t span = 2 * win - 1;
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(win * win * win * win));
    for (std::int64_t yi = 0; yi < win; ++yi) {
        for (std::int64_t xi = 0; xi < win; ++xi) {
            for (std::int64_t yj = 0; yj < win; ++yj) {
                for (std::int64_t xj = 0; xj < win; ++xj) {
                    const std::int64_t rel = (yi - yj + win - 1) * span + (xi - xj + win - 1);
                    idx->push_back(rel * heads + head);
                }
            }
        }
    }
    return idx;
}

// Zero-padding of a token grid up to window multiples, expressed as a gather
// over the concatenation of the real tokens and a block of constant zeros
// (gradient flows only into the real part). Returns the padded grid.
template <typename T>
Tensor<T> pad_grid(const Tensor<T>& tokens, std::int64_t h, std::int64_t w, std::int64_t hp, std::int64_t wp) {
    if (hp == h && wp == w) return tokens;
    if (hp < h || wp < w) throw ShapeError("pad_grid: padded extents smaller than grid");
    const std::int64_t d = tokens.extent(1);
    Tensor<T> zeros = Tensor<T>::zeros({hp * wp - h * w, d});
    Tensor<T> joined = ops::concat_axis0(tokens, zeros);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(hp * wp * d));
    std::int64_t pad_row = h * w;  // rows of `joined` past the real tokens
    for (std::int64_t y = 0; y < hp; ++y) {
        for (std::int64_t x = 0; x < wp; ++x) {
            const std::int64_t src = (y < h && x < w) ? y * w + x : pad_row++;
            for (std::int64_t k = 0; k < d; ++k) idx->push_back(src * d + k);
        }
    }
    return ops::gather(joined, idx, {hp * wp, d});
}

template <typename T>
Tensor<T> crop_grid(const Tensor<T>& tokens, std::int64_t hp, std::int64_t wp, std::int64_t h, std::int64_t w) {
    if (hp == h && wp == w) return tokens;
    const std::int64_t d = tokens.extent(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(h * w * d));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t k = 0; k < d; ++k) idx->push_back((y * wp + x) * d + k);
        }
    }
    return ops::gather(tokens, idx, {h * w, d});
}

// Combined region ids for one attention pass over a real h x w grid padded
// to hp x wp, in the coordinates the windows actually see (i.e., after the
// cyclic roll when shift > 0). Padded cells get a sentinel id so no real
// token attends into padding; each pad cell still attends itself, keeping
// every mask row non-empty (pad outputs are cropped away afterwards).
inline std::vector<std::int32_t> attention_region_ids(std::int64_t h, std::int64_t w, std::int64_t hp,
                                                      std::int64_t wp, std::int64_t win, std::int64_t shift) {
    std::vector<std::int32_t> ids = shift > 0
                                        ? shift_region_ids(hp, wp, win, shift)
                                        : std::vector<std::int32_t>(static_cast<std::size_t>(hp * wp), 0);
    if (hp != h || wp != w) {
        for (std::int64_t y = 0; y < hp; ++y) {
            for (std::int64_t x = 0; x < wp; ++x) {
                const std::int64_t sy = shift > 0 ? (y + shift) % hp : y;
                const std::int64_t sx = shift > 0 ? (x + shift) % wp : x;
                if (sy >= h || sx >= w) ids[static_cast<std::size_t>(y * wp + x)] = -1;
            }
        }
    }
    return ids;
}

}  // namespace chroma::win
