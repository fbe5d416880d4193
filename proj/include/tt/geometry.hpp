// Spatial bookkeeping for the hierarchical backbone: laying tokens on a
// square grid, cutting the grid into non-overlapping windows, the cyclic
// shift used by the shifted-window ablation, the convolutional stem, and the
// between-stage downsampling step.
//
// Layout conventions (fixed; several modules depend on them):
//   - a token grid stores tokens row-major: token index = row * grid_w + col
//   - windows are ordered row-major over the window grid, and tokens inside
//     a window are row-major over the window's local rows/cols
//   - images and feature maps are [batch, channels, height, width]
// All functions here are pure and build on the differentiable ops, so data
// movement participates in the tape like any other op.
#pragma once

#include <string>
#include <vector>

#include "tt/errors.hpp"
#include "tt/ops.hpp"
#include "tt/tensor.hpp"

namespace tt {

// Tokens arranged on a square spatial grid, stored as [batch, grid_h*grid_w,
// dim] with row-major token order.
template <typename T>
struct TokenGrid {
  int batch = 0;
  int grid_h = 0;
  int grid_w = 0;
  int dim = 0;
  Tensor<T> tokens;  // [batch, grid_h * grid_w, dim]
};

template <typename T>
TokenGrid<T> make_token_grid(Tensor<T> tokens, int grid_h, int grid_w) {
  if (tokens.rank() != 3)
    throw ShapeError("token grid expects rank-3 tokens, got shape " +
                     format_shape(tokens.shape()));
  if (grid_h <= 0 || grid_w <= 0 ||
      tokens.dim(1) != static_cast<Index>(grid_h) * grid_w)
    throw ShapeError("token count " + std::to_string(tokens.dim(1)) +
                     " does not tile a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " grid");
  return TokenGrid<T>{static_cast<int>(tokens.dim(0)), grid_h, grid_w,
                      static_cast<int>(tokens.dim(2)), std::move(tokens)};
}

// A grid cut into T non-overlapping windows of side w, plus one summary
// (CLS) token per window.  win_tokens folds batch and window into the
// leading axis so attention can treat every window as an independent
// sequence; cls_tokens keeps batch and window separate because the global
// CLS path mixes across windows.
template <typename T>
struct WindowSet {
  int batch = 0;
  int num_windows = 0;      // T = (grid_side / w)^2
  int window_side = 0;      // w
  int tokens_per_window = 0;  // M = w^2
  int dim = 0;
  Tensor<T> win_tokens;  // [batch * T, M, dim]
  Tensor<T> cls_tokens;  // [batch, T, dim]
};

namespace detail {

template <typename T>
void require_divisible(const TokenGrid<T>& g, int w) {
  if (w <= 0 || g.grid_h != g.grid_w || g.grid_h % w != 0)
    throw ConfigError("window side " + std::to_string(w) +
                      " does not evenly tile a " + std::to_string(g.grid_h) +
                      "x" + std::to_string(g.grid_w) + " grid");
}

}  // namespace detail

// Cuts the grid into (g/w)^2 windows of w*w tokens each; pure data movement
// (reshape + transpose), so it is exactly invertible by window_reverse.
// Returns [batch * T, M, dim].
template <typename T>
Tensor<T> window_partition(const TokenGrid<T>& g, int w) {
  detail::require_divisible(g, w);
  const int n = g.grid_h / w;  // windows per side
  Tensor<T> x = reshape(g.tokens, {g.batch, n, w, n, w, g.dim});
  x = transpose(x, {0, 1, 3, 2, 4, 5});  // [b, n, n, w, w, dim]
  return reshape(x, {g.batch * n * n, w * w, g.dim});
}

// Inverse of window_partition for the given batch/grid extents.
template <typename T>
TokenGrid<T> window_reverse(const Tensor<T>& win_tokens, int batch,
                            int grid_side, int w) {
  if (w <= 0 || grid_side % w != 0)
    throw ConfigError("window side " + std::to_string(w) +
                      " does not evenly tile a " + std::to_string(grid_side) +
                      "x" + std::to_string(grid_side) + " grid");
  const int n = grid_side / w;
  const int dim = static_cast<int>(win_tokens.dim(2));
  if (win_tokens.dim(0) != static_cast<Index>(batch) * n * n ||
      win_tokens.dim(1) != static_cast<Index>(w) * w)
    throw ShapeError("window tokens of shape " +
                     format_shape(win_tokens.shape()) +
                     " do not reassemble a " + std::to_string(grid_side) +
                     "x" + std::to_string(grid_side) + " grid with w=" +
                     std::to_string(w));
  Tensor<T> x = reshape(win_tokens, {batch, n, n, w, w, dim});
  x = transpose(x, {0, 1, 3, 2, 4, 5});  // [b, n, w, n, w, dim]
  return make_token_grid(reshape(x, {batch, grid_side * grid_side, dim}),
                         grid_side, grid_side);
}

// Torus roll of the grid by `offset` up and left (negative offset rolls
// down/right); cyclic_shift(g, off) then cyclic_shift(., -off) is the
// identity.  Built from slice + concat so gradients flow through.
template <typename T>
TokenGrid<T> cyclic_shift(const TokenGrid<T>& g, int offset) {
  const int gh = g.grid_h, gw = g.grid_w;
  const int oy = ((offset % gh) + gh) % gh;
  const int ox = ((offset % gw) + gw) % gw;
  Tensor<T> x = reshape(g.tokens, {g.batch, gh, gw, g.dim});
  if (oy != 0)
    x = concat<T>({slice(x, 1, oy, gh - oy), slice(x, 1, 0, oy)}, 1);
  if (ox != 0)
    x = concat<T>({slice(x, 2, ox, gw - ox), slice(x, 2, 0, ox)}, 2);
  return make_token_grid(reshape(x, {g.batch, gh * gw, g.dim}), gh, gw);
}

// Additive attention mask for shifted-window attention: [T, M, M] with 0
// where two tokens of a window may attend and -1e9 where the cyclic shift
// glued together tokens from opposite edges of the original grid.  Tokens
// i, j of a shifted window belong together exactly when, along each axis,
// both wrapped around the torus or neither did; equivalently this is the
// standard three-band region labelling.
template <typename T>
Tensor<T> build_shift_mask(int grid_side, int w, int offset) {
  if (w <= 0 || grid_side % w != 0)
    throw ConfigError("window side " + std::to_string(w) +
                      " does not evenly tile a " + std::to_string(grid_side) +
                      "x" + std::to_string(grid_side) + " grid");
  if (offset < 0 || offset >= w)
    throw ConfigError("shift offset " + std::to_string(offset) +
                      " outside [0, " + std::to_string(w) + ")");
  const int g = grid_side, n = g / w, m = w * w;
  // Region id per grid cell in the shifted frame: band 0 before the seam,
  // band 1 between seam and wrap point, band 2 for wrapped-around cells.
  auto band = [&](int v) { return v < g - w ? 0 : (v < g - offset ? 1 : 2); };
  std::vector<int> id(static_cast<size_t>(g) * g);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) id[static_cast<size_t>(r) * g + c] = band(r) * 3 + band(c);

  Tensor<T> mask = Tensor<T>::zeros({n * n, m, m});
  auto& md = mask.data_mut();
  for (int wr = 0; wr < n; ++wr)
    for (int wc = 0; wc < n; ++wc) {
      const int t = wr * n + wc;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          const int ri = wr * w + i / w, ci = wc * w + i % w;
          const int rj = wr * w + j / w, cj = wc * w + j % w;
          if (id[static_cast<size_t>(ri) * g + ci] !=
              id[static_cast<size_t>(rj) * g + cj])
            md[(static_cast<size_t>(t) * m + i) * m + j] = T(-1e9);
        }
    }
  return mask;
}

// Convolutional stem: k=patch, s=patch convolution to an (h/patch)^2 grid,
// then adaptive average pooling down to the stage-1 grid.  stem_w is
// [dim, channels, patch, patch]; stem_b is [dim].
template <typename T>
TokenGrid<T> patch_embed(const Tensor<T>& image, const Tensor<T>& stem_w,
                         const Tensor<T>& stem_b, int patch, int target_grid) {
  if (image.rank() != 4 || image.dim(2) != image.dim(3))
    throw ContractError("patch_embed expects square [b, c, h, w] images, got " +
                        format_shape(image.shape()));
  const int raw = static_cast<int>(image.dim(2)) / patch;
  if (raw < target_grid)
    throw ConfigError("input size " + std::to_string(image.dim(2)) +
                      " with patch " + std::to_string(patch) + " yields a " +
                      std::to_string(raw) + "-wide grid, smaller than the stage-1 grid " +
                      std::to_string(target_grid));
  Tensor<T> fmap = conv2d(image, stem_w, stem_b, patch, 0);  // [b, C, raw, raw]
  if (raw != target_grid)
    fmap = adaptive_pool2d(fmap, target_grid, target_grid, PoolMode::avg);
  const int b = static_cast<int>(image.dim(0));
  const int dim = static_cast<int>(stem_w.dim(0));
  Tensor<T> tok = transpose(fmap, {0, 2, 3, 1});  // [b, g, g, C]
  return make_token_grid(reshape(tok, {b, target_grid * target_grid, dim}),
                         target_grid, target_grid);
}

// Between-stage reduction: 3x3 stride-2 pad-1 convolution doubling the
// channel dim, adaptive average pooling to the exact next-stage grid (the
// stage grids are not exact halvings), then layernorm over channels.
// conv_w is [2C, C, 3, 3]; conv_b is [2C]; ln_gain/ln_bias are [2C].
template <typename T>
TokenGrid<T> downsample(const TokenGrid<T>& g, const Tensor<T>& conv_w,
                        const Tensor<T>& conv_b, const Tensor<T>& ln_gain,
                        const Tensor<T>& ln_bias, int target_grid) {
  Tensor<T> x = reshape(g.tokens, {g.batch, g.grid_h, g.grid_w, g.dim});
  x = transpose(x, {0, 3, 1, 2});  // [b, C, gh, gw]
  x = conv2d(x, conv_w, conv_b, 2, 1);
  if (x.dim(2) != target_grid || x.dim(3) != target_grid)
    x = adaptive_pool2d(x, target_grid, target_grid, PoolMode::avg);
  const int dim = static_cast<int>(conv_w.dim(0));
  x = transpose(x, {0, 2, 3, 1});  // [b, g, g, 2C]
  x = reshape(x, {g.batch, target_grid * target_grid, dim});
  x = layernorm(x, ln_gain, ln_bias);
  return make_token_grid(x, target_grid, target_grid);
}

}  // namespace tt
