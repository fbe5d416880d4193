// Feature inheritance between stages: the previous stage's per-window CLS
// tokens are laid out on their window grid, max-pooled down to the next
// stage's window grid, and fused with the next stage's fresh CLS tokens by
// a bias-free linear map over the concatenated channels.
//
// Channel order into the projection is [inherited, fresh]: rows
// 0..C_prev-1 of proj_w act on the pooled previous-stage channels, rows
// C_prev..C_prev+C_new-1 on the new ones.  Pooling uses the
// [channels, grid_h, grid_w] layout.
#pragma once

#include <cmath>
#include <string>

#include "tt/errors.hpp"
#include "tt/ops.hpp"
#include "tt/tensor.hpp"

namespace tt {

template <typename T>
struct FimParams {
  Tensor<T> proj_w;  // [C_prev + C_new, C_new], no bias
};

namespace detail {

inline int require_square(int n, const char* what) {
  const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (s * s != n)
    throw ContractError(std::string(what) + " count " + std::to_string(n) +
                        " is not a perfect square");
  return s;
}

}  // namespace detail

// old_cls: [b, T_prev, C_prev]; new_cls: [b, T_new, C_new]
// returns [b, T_new, C_new]
template <typename T>
Tensor<T> fim_fuse(const Tensor<T>& old_cls, const Tensor<T>& new_cls,
                   const FimParams<T>& p) {
  const int b = old_cls.dim(0);
  const int sp = detail::require_square(static_cast<int>(old_cls.dim(1)),
                                        "previous-stage window");
  const int sn = detail::require_square(static_cast<int>(new_cls.dim(1)),
                                        "next-stage window");
  const int cp = static_cast<int>(old_cls.dim(2));
  const int cn = static_cast<int>(new_cls.dim(2));

  Tensor<T> grid = transpose(reshape(old_cls, {b, sp, sp, cp}), {0, 3, 1, 2});
  grid = adaptive_pool2d(grid, sn, sn, PoolMode::max);  // [b, C_prev, sn, sn]
  Tensor<T> pooled =
      reshape(transpose(grid, {0, 2, 3, 1}), {b, sn * sn, cp});
  Tensor<T> fused = concat<T>({pooled, new_cls}, 2);  // [b, T_new, Cp+Cn]
  if (p.proj_w.dim(0) != cp + cn || p.proj_w.dim(1) != cn)
    throw ShapeError("fim projection " + format_shape(p.proj_w.shape()) +
                     " does not map " + std::to_string(cp + cn) +
                     " fused channels to " + std::to_string(cn));
  return matmul(fused, p.proj_w);
}

}  // namespace tt
