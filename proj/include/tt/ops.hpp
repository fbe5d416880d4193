#pragma once

// Differentiable operator set: elementwise math, matmul, softmax, layernorm,
// conv2d, pooling, shape surgery and the loss.  Every op is a pure free
// function; when a Tape is active and any input participates in the graph the
// op records a closure that scatters d(out) back into its inputs' gradient
// buffers.  All kernels are plain loops with a pinned accumulation order
// (k-ascending per output element), so results are bitwise deterministic and
// match naive reference implementations exactly in 64-bit.
//
// FLOP accounting (reported through FlopCounter when one is active):
//   matmul            2*m*n*k per batch matrix
//   conv2d            2*Cout*Cin*kh*kw per output cell, +1 per cell for bias
//   linear bias add   1 per output element
//   softmax, layernorm, gelu, cross-entropy   5 per element
//   elementwise add/sub/mul/scale/dropout     1 per element
//   reductions        1 per input element
//   pooling           1 per visited input cell
//   reshape/transpose/concat/slice/gather     0 (data movement)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "tt/tensor.hpp"

namespace tt {
namespace detail {

inline int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  return a;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
    const int db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + format_shape(a) + " and " +
                       format_shape(b) + " are not broadcastable");
    out[static_cast<size_t>(i)] = std::max(da, db);
  }
  return out;
}

// Strides of `in` aligned (right-justified) to `out`'s rank, with stride 0 on
// broadcast dimensions.
inline std::vector<Index> aligned_strides(const Shape& in, const Shape& out) {
  const int r = static_cast<int>(out.size());
  const int off = r - static_cast<int>(in.size());
  auto own = row_major_strides(in);
  std::vector<Index> st(static_cast<size_t>(r), 0);
  for (size_t i = 0; i < in.size(); ++i)
    st[static_cast<size_t>(off) + i] = (in[i] == 1 && out[static_cast<size_t>(off) + i] != 1)
                                           ? 0
                                           : own[i];
  return st;
}

// Iterate all coordinates of `shape` in row-major order, maintaining one
// offset per stride set.  fn(flat_index, offsets_array).
template <size_t N, typename Fn>
void iterate(const Shape& shape, const std::array<const std::vector<Index>*, N>& strides,
             Fn&& fn) {
  const int r = static_cast<int>(shape.size());
  const Index n = numel(shape);
  std::vector<int> coord(static_cast<size_t>(r), 0);
  std::array<Index, N> off{};
  for (Index i = 0; i < n; ++i) {
    fn(i, off);
    for (int d = r - 1; d >= 0; --d) {
      ++coord[static_cast<size_t>(d)];
      for (size_t s = 0; s < N; ++s) off[s] += (*strides[s])[static_cast<size_t>(d)];
      if (coord[static_cast<size_t>(d)] < shape[static_cast<size_t>(d)]) break;
      for (size_t s = 0; s < N; ++s)
        off[s] -= (*strides[s])[static_cast<size_t>(d)] * shape[static_cast<size_t>(d)];
      coord[static_cast<size_t>(d)] = 0;
    }
  }
}

// C[m,n] += A[m,k] * B[k,n].  The sum over k ascends for every C element.
template <typename T>
void gemm_nn(Index m, Index n, Index k, const T* a, const T* b, T* c) {
  for (Index i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (Index p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(Index m, Index n, Index k, const T* a, const T* b, T* c) {
  for (Index i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (Index j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = 0;
      for (Index p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[m,n] += A[p,m]^T * B[p,n]
template <typename T>
void gemm_tn(Index pdim, Index m, Index n, const T* a, const T* b, T* c) {
  for (Index p = 0; p < pdim; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (Index i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Record a backward closure if a tape is active and any input participates.
template <typename T, typename Fn>
void maybe_record(const char* op, std::initializer_list<const Tensor<T>*> inputs,
                  Tensor<T>& out, Fn&& backward) {
  auto* tape = Tape<T>::active();
  if (!tape) return;
  bool track = false;
  for (const auto* in : inputs) track = track || in->entangled();
  if (!track) return;
  out.mark_tracked();
  tape->record(op, out, std::forward<Fn>(backward));
}

// Split a shape around `axis` into (outer, extent, inner) products.
struct AxisSplit {
  Index outer, extent, inner;
};
inline AxisSplit axis_split(const Shape& s, int axis) {
  AxisSplit sp{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

// Adaptive pooling region along one dimension: [start, end).
inline std::pair<int, int> adaptive_span(int i, int in, int out) {
  const int start = static_cast<int>((static_cast<Index>(i) * in) / out);
  const int end = static_cast<int>((static_cast<Index>(i + 1) * in + out - 1) / out);
  return {start, end};
}

}  // namespace detail

// Total input cells visited by an adaptive pool over one [H,W] plane.  Shared
// with the analytic cost model so both routes use identical region arithmetic.
inline std::uint64_t adaptive_pool_cells(int in_h, int in_w, int out_h, int out_w) {
  std::uint64_t rows = 0, cols = 0;
  for (int i = 0; i < out_h; ++i) {
    auto [s, e] = detail::adaptive_span(i, in_h, out_h);
    rows += static_cast<std::uint64_t>(e - s);
  }
  for (int j = 0; j < out_w; ++j) {
    auto [s, e] = detail::adaptive_span(j, in_w, out_w);
    cols += static_cast<std::uint64_t>(e - s);
  }
  return rows * cols;
}

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(os);
  const auto sa = detail::aligned_strides(a.shape(), os);
  const auto sb = detail::aligned_strides(b.shape(), os);
  auto& od = out.data_mut();
  const auto& ad = a.data();
  const auto& bd = b.data();
  detail::iterate<2>(os, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
    od[static_cast<size_t>(i)] =
        ad[static_cast<size_t>(off[0])] + bd[static_cast<size_t>(off[1])];
  });
  FlopCounter::add(static_cast<std::uint64_t>(out.size()));
  ensure_finite("add", out);
  detail::maybe_record("add", {&a, &b}, out, [a, b, out, os, sa, sb]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    if (a.entangled()) {
      auto& ga = a.grad_accum();
      detail::iterate<1>(os, {&sa}, [&](Index i, const std::array<Index, 1>& off) {
        ga[static_cast<size_t>(off[0])] += (*g)[static_cast<size_t>(i)];
      });
    }
    if (b.entangled()) {
      auto& gb = b.grad_accum();
      detail::iterate<1>(os, {&sb}, [&](Index i, const std::array<Index, 1>& off) {
        gb[static_cast<size_t>(off[0])] += (*g)[static_cast<size_t>(i)];
      });
    }
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(os);
  const auto sa = detail::aligned_strides(a.shape(), os);
  const auto sb = detail::aligned_strides(b.shape(), os);
  auto& od = out.data_mut();
  const auto& ad = a.data();
  const auto& bd = b.data();
  detail::iterate<2>(os, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
    od[static_cast<size_t>(i)] =
        ad[static_cast<size_t>(off[0])] - bd[static_cast<size_t>(off[1])];
  });
  FlopCounter::add(static_cast<std::uint64_t>(out.size()));
  ensure_finite("sub", out);
  detail::maybe_record("sub", {&a, &b}, out, [a, b, out, os, sa, sb]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    if (a.entangled()) {
      auto& ga = a.grad_accum();
      detail::iterate<1>(os, {&sa}, [&](Index i, const std::array<Index, 1>& off) {
        ga[static_cast<size_t>(off[0])] += (*g)[static_cast<size_t>(i)];
      });
    }
    if (b.entangled()) {
      auto& gb = b.grad_accum();
      detail::iterate<1>(os, {&sb}, [&](Index i, const std::array<Index, 1>& off) {
        gb[static_cast<size_t>(off[0])] -= (*g)[static_cast<size_t>(i)];
      });
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(os);
  const auto sa = detail::aligned_strides(a.shape(), os);
  const auto sb = detail::aligned_strides(b.shape(), os);
  auto& od = out.data_mut();
  const auto& ad = a.data();
  const auto& bd = b.data();
  detail::iterate<2>(os, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
    od[static_cast<size_t>(i)] =
        ad[static_cast<size_t>(off[0])] * bd[static_cast<size_t>(off[1])];
  });
  FlopCounter::add(static_cast<std::uint64_t>(out.size()));
  ensure_finite("mul", out);
  detail::maybe_record("mul", {&a, &b}, out, [a, b, out, os, sa, sb]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    const auto& ad2 = a.data();
    const auto& bd2 = b.data();
    if (a.entangled()) {
      auto& ga = a.grad_accum();
      detail::iterate<2>(os, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
        ga[static_cast<size_t>(off[0])] +=
            (*g)[static_cast<size_t>(i)] * bd2[static_cast<size_t>(off[1])];
      });
    }
    if (b.entangled()) {
      auto& gb = b.grad_accum();
      detail::iterate<2>(os, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
        gb[static_cast<size_t>(off[1])] +=
            (*g)[static_cast<size_t>(i)] * ad2[static_cast<size_t>(off[0])];
      });
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  auto& od = out.data_mut();
  const auto& ad = a.data();
  for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * c;
  FlopCounter::add(static_cast<std::uint64_t>(out.size()));
  ensure_finite("scale", out);
  detail::maybe_record("scale", {&a}, out, [a, out, c]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& ga = a.grad_accum();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * c;
  });
  return out;
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto& od = out.data_mut();
  const auto& xd = x.data();
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (size_t i = 0; i < xd.size(); ++i) {
    const double v = static_cast<double>(xd[i]);
    od[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  FlopCounter::add(5u * static_cast<std::uint64_t>(out.size()));
  ensure_finite("gelu", out);
  detail::maybe_record("gelu", {&x}, out, [x, out]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    const auto& xd2 = x.data();
    constexpr double inv_sqrt2b = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < xd2.size(); ++i) {
      const double v = static_cast<double>(xd2[i]);
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2b));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx[i] += (*g)[i] * static_cast<T>(cdf + v * pdf);
    }
  });
  return out;
}

// Inverted dropout, deterministic under `seed`.  Identity when not training or
// when p == 0 (returns the input tensor itself).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Tensor<T> out(x.shape());
  RandomStream rs(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> factor(x.data().size());
  for (auto& f : factor) f = rs.uniform() >= p ? keep_scale : T(0);
  auto& od = out.data_mut();
  const auto& xd = x.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] * factor[i];
  FlopCounter::add(static_cast<std::uint64_t>(out.size()));
  ensure_finite("dropout", out);
  detail::maybe_record("dropout", {&x}, out, [x, out, factor]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i] * factor[i];
  });
  return out;
}

// ---- shape surgery ----

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r)
    throw ShapeError("transpose: permutation size " + std::to_string(perm.size()) +
                     " does not match rank " + std::to_string(r));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
      throw ShapeError("transpose: invalid permutation for rank " + std::to_string(r));
    seen[static_cast<size_t>(p)] = true;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  Tensor<T> out(os);
  const auto xstr = row_major_strides(x.shape());
  std::vector<Index> src(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) src[static_cast<size_t>(i)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  auto& od = out.data_mut();
  const auto& xd = x.data();
  detail::iterate<1>(os, {&src}, [&](Index i, const std::array<Index, 1>& off) {
    od[static_cast<size_t>(i)] = xd[static_cast<size_t>(off[0])];
  });
  detail::maybe_record("transpose", {&x}, out, [x, out, os, src]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    detail::iterate<1>(os, {&src}, [&](Index i, const std::array<Index, 1>& off) {
      gx[static_cast<size_t>(off[0])] += (*g)[static_cast<size_t>(i)];
    });
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + format_shape(x.shape()) + " as " +
                     format_shape(shape) + " (element counts differ)");
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), x.data());
  detail::maybe_record("reshape", {&x}, out, [x, out]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: needs at least one input");
  const int r = parts[0].rank();
  const int ax = detail::normalize_axis(axis, r, "concat");
  Shape os = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r)
      throw ShapeError("concat: rank mismatch between " + format_shape(parts[0].shape()) +
                       " and " + format_shape(p.shape()));
    for (int d = 0; d < r; ++d)
      if (d != ax && p.dim(d) != os[static_cast<size_t>(d)])
        throw ShapeError("concat: shapes " + format_shape(parts[0].shape()) + " and " +
                         format_shape(p.shape()) + " differ off the concat axis");
    total += p.dim(ax);
  }
  os[static_cast<size_t>(ax)] = static_cast<int>(total);
  Tensor<T> out(os);
  const auto sp = detail::axis_split(os, ax);
  auto& od = out.data_mut();
  Index prefix = 0;
  for (const auto& p : parts) {
    const Index dp = p.dim(ax);
    const auto& pd = p.data();
    for (Index o = 0; o < sp.outer; ++o)
      std::memcpy(od.data() + (o * total + prefix) * sp.inner,
                  pd.data() + o * dp * sp.inner,
                  static_cast<size_t>(dp * sp.inner) * sizeof(T));
    prefix += dp;
  }
  auto* tape = Tape<T>::active();
  bool track = false;
  for (const auto& p : parts) track = track || p.entangled();
  if (tape && track) {
    out.mark_tracked();
    std::vector<Index> dims;
    for (const auto& p : parts) dims.push_back(p.dim(ax));
    auto parts_copy = parts;
    tape->record("concat", out, [parts_copy, out, sp, total, dims]() mutable {
      const auto* g = out.grad_if();
      if (!g) return;
      Index prefix2 = 0;
      for (size_t pi = 0; pi < parts_copy.size(); ++pi) {
        const Index dp = dims[pi];
        auto& p = parts_copy[pi];
        if (p.entangled()) {
          auto& gp = p.grad_accum();
          for (Index o = 0; o < sp.outer; ++o) {
            const T* src = g->data() + (o * total + prefix2) * sp.inner;
            T* dst = gp.data() + o * dp * sp.inner;
            for (Index i = 0; i < dp * sp.inner; ++i) dst[i] += src[i];
          }
        }
        prefix2 += dp;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int length) {
  const int ax = detail::normalize_axis(axis, x.rank(), "slice");
  const int d = x.dim(ax);
  if (start < 0 || length <= 0 || start + length > d)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for extent " +
                     std::to_string(d));
  Shape os = x.shape();
  os[static_cast<size_t>(ax)] = length;
  Tensor<T> out(os);
  const auto sp = detail::axis_split(x.shape(), ax);
  auto& od = out.data_mut();
  const auto& xd = x.data();
  for (Index o = 0; o < sp.outer; ++o)
    std::memcpy(od.data() + o * length * sp.inner,
                xd.data() + (o * sp.extent + start) * sp.inner,
                static_cast<size_t>(length) * static_cast<size_t>(sp.inner) * sizeof(T));
  detail::maybe_record("slice", {&x}, out, [x, out, sp, start, length]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    for (Index o = 0; o < sp.outer; ++o) {
      const T* src = g->data() + o * length * sp.inner;
      T* dst = gx.data() + (o * sp.extent + start) * sp.inner;
      for (Index i = 0; i < static_cast<Index>(length) * sp.inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

// Materialized broadcast of x to `shape` (numpy alignment rules).
template <typename T>
Tensor<T> expand(const Tensor<T>& x, const Shape& shape) {
  const Shape check = detail::broadcast_shape(x.shape(), shape, "expand");
  if (check != shape)
    throw ShapeError("expand: cannot broadcast " + format_shape(x.shape()) + " to " +
                     format_shape(shape));
  Tensor<T> out(shape);
  const auto sx = detail::aligned_strides(x.shape(), shape);
  auto& od = out.data_mut();
  const auto& xd = x.data();
  detail::iterate<1>(shape, {&sx}, [&](Index i, const std::array<Index, 1>& off) {
    od[static_cast<size_t>(i)] = xd[static_cast<size_t>(off[0])];
  });
  detail::maybe_record("expand", {&x}, out, [x, out, shape, sx]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    detail::iterate<1>(shape, {&sx}, [&](Index i, const std::array<Index, 1>& off) {
      gx[static_cast<size_t>(off[0])] += (*g)[static_cast<size_t>(i)];
    });
  });
  return out;
}

// out[l, :] = table[indices[l], :]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& indices) {
  if (table.rank() != 2)
    throw ShapeError("gather_rows: table must be rank 2, got " + format_shape(table.shape()));
  const int k = table.dim(0), d = table.dim(1);
  for (int i : indices)
    if (i < 0 || i >= k)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(k) + ")");
  if (indices.empty()) throw ContractError("gather_rows: empty index list");
  Tensor<T> out({static_cast<int>(indices.size()), d});
  auto& od = out.data_mut();
  const auto& td = table.data();
  for (size_t l = 0; l < indices.size(); ++l)
    std::memcpy(od.data() + l * static_cast<size_t>(d),
                td.data() + static_cast<size_t>(indices[l]) * static_cast<size_t>(d),
                static_cast<size_t>(d) * sizeof(T));
  detail::maybe_record("gather_rows", {&table}, out, [table, out, indices, d]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gt = table.grad_accum();
    for (size_t l = 0; l < indices.size(); ++l) {
      const T* src = g->data() + l * static_cast<size_t>(d);
      T* dst = gt.data() + static_cast<size_t>(indices[l]) * static_cast<size_t>(d);
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

// ---- matmul ----

// Batched matrix product with numpy-style broadcasting over batch dims:
// [..., m, k] x [..., k, n] -> [..., m, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: both operands need rank >= 2, got " + format_shape(a.shape()) +
                     " and " + format_shape(b.shape()));
  const Index m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
  const Index kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions disagree: " + format_shape(a.shape()) + " x " +
                     format_shape(b.shape()));
  const Shape ba(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  const Shape bo = detail::broadcast_shape(ba, bb, "matmul");
  Shape os = bo;
  os.push_back(static_cast<int>(m));
  os.push_back(static_cast<int>(n));
  Tensor<T> out(os);

  // Batch strides in units of whole matrices.
  auto sa = detail::aligned_strides(ba, bo);
  auto sb = detail::aligned_strides(bb, bo);
  const Index nb = bo.empty() ? 1 : numel(bo);
  const Index asz = m * ka, bsz = ka * n, osz = m * n;

  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data_mut();
  if (bo.empty()) {
    detail::gemm_nn(m, n, ka, ad.data(), bd.data(), od.data());
  } else {
    detail::iterate<2>(bo, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
      detail::gemm_nn(m, n, ka, ad.data() + off[0] * asz, bd.data() + off[1] * bsz,
                      od.data() + i * osz);
    });
  }
  FlopCounter::add(2ull * static_cast<std::uint64_t>(nb) * static_cast<std::uint64_t>(m) *
                   static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(ka));
  ensure_finite("matmul", out);
  detail::maybe_record("matmul", {&a, &b}, out,
                       [a, b, out, bo, sa, sb, m, n, ka, asz, bsz, osz]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    const auto& ad2 = a.data();
    const auto& bd2 = b.data();
    const bool wa = a.entangled(), wb = b.entangled();
    T* ga = wa ? a.grad_accum().data() : nullptr;
    T* gb = wb ? b.grad_accum().data() : nullptr;
    auto run = [&](Index i, Index oa, Index ob) {
      const T* gd = g->data() + i * osz;
      if (wa) detail::gemm_nt(m, ka, n, gd, bd2.data() + ob * bsz, ga + oa * asz);
      if (wb) detail::gemm_tn(m, ka, n, ad2.data() + oa * asz, gd, gb + ob * bsz);
    };
    if (bo.empty()) {
      run(0, 0, 0);
    } else {
      detail::iterate<2>(bo, {&sa, &sb}, [&](Index i, const std::array<Index, 2>& off) {
        run(i, off[0], off[1]);
      });
    }
  });
  return out;
}

// ---- normalization and softmax ----

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto sp = detail::axis_split(x.shape(), ax);
  Tensor<T> out(x.shape());
  auto& od = out.data_mut();
  const auto& xd = x.data();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index in = 0; in < sp.inner; ++in) {
      const Index base = o * sp.extent * sp.inner + in;
      T mx = xd[static_cast<size_t>(base)];
      for (Index e = 1; e < sp.extent; ++e)
        mx = std::max(mx, xd[static_cast<size_t>(base + e * sp.inner)]);
      T denom = 0;
      for (Index e = 0; e < sp.extent; ++e) {
        const T v = std::exp(xd[static_cast<size_t>(base + e * sp.inner)] - mx);
        od[static_cast<size_t>(base + e * sp.inner)] = v;
        denom += v;
      }
      for (Index e = 0; e < sp.extent; ++e) od[static_cast<size_t>(base + e * sp.inner)] /= denom;
    }
  }
  FlopCounter::add(5u * static_cast<std::uint64_t>(out.size()));
  ensure_finite("softmax", out);
  detail::maybe_record("softmax", {&x}, out, [x, out, sp]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    const auto& sd = out.data();
    for (Index o = 0; o < sp.outer; ++o) {
      for (Index in = 0; in < sp.inner; ++in) {
        const Index base = o * sp.extent * sp.inner + in;
        T dot = 0;
        for (Index e = 0; e < sp.extent; ++e) {
          const size_t idx = static_cast<size_t>(base + e * sp.inner);
          dot += (*g)[idx] * sd[idx];
        }
        for (Index e = 0; e < sp.extent; ++e) {
          const size_t idx = static_cast<size_t>(base + e * sp.inner);
          gx[idx] += sd[idx] * ((*g)[idx] - dot);
        }
      }
    }
  });
  return out;
}

// Layer normalization over the last axis.  gain/bias are optional; pass
// default-constructed tensors for the affine-free form.  A constant row
// normalizes to zero (variance 0 is stabilized by eps).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    double eps = 1e-5) {
  const int d = x.dim(x.rank() - 1);
  const bool affine = gain.defined();
  if (affine) {
    if (gain.shape() != Shape{d} || !bias.defined() || bias.shape() != Shape{d})
      throw ShapeError("layernorm: affine params must be shape [" + std::to_string(d) +
                       "], got gain " + format_shape(gain.shape()));
  } else if (bias.defined()) {
    throw ContractError("layernorm: bias given without gain");
  }
  const Index rows = x.size() / d;
  Tensor<T> out(x.shape());
  std::vector<T> norm(static_cast<size_t>(x.size()));  // pre-affine values, saved for backward
  std::vector<T> inv(static_cast<size_t>(rows));
  auto& od = out.data_mut();
  const auto& xd = x.data();
  for (Index r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mean = 0;
    for (Index j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (Index j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T iv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
    inv[static_cast<size_t>(r)] = iv;
    for (Index j = 0; j < d; ++j) {
      const T y = (row[j] - mean) * iv;
      norm[static_cast<size_t>(r * d + j)] = y;
      od[static_cast<size_t>(r * d + j)] =
          affine ? y * gain.data()[static_cast<size_t>(j)] + bias.data()[static_cast<size_t>(j)]
                 : y;
    }
  }
  FlopCounter::add(5u * static_cast<std::uint64_t>(out.size()));
  ensure_finite("layernorm", out);
  auto* tape = Tape<T>::active();
  const bool track =
      x.entangled() || (affine && (gain.entangled() || bias.entangled()));
  if (!tape || !track) return out;
  out.mark_tracked();
  tape->record("layernorm", out, [x, gain, bias, out, norm, inv, d, rows, affine]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    const bool wx = x.entangled();
    T* gx = wx ? x.grad_accum().data() : nullptr;
    T* gg = (affine && gain.entangled()) ? gain.grad_accum().data() : nullptr;
    T* gb = (affine && bias.entangled()) ? bias.grad_accum().data() : nullptr;
    std::vector<T> gy(static_cast<size_t>(d));
    for (Index r = 0; r < rows; ++r) {
      const T* grow = g->data() + r * d;
      const T* yrow = norm.data() + r * d;
      for (Index j = 0; j < d; ++j) {
        gy[static_cast<size_t>(j)] =
            affine ? grow[j] * gain.data()[static_cast<size_t>(j)] : grow[j];
        if (gg) gg[j] += grow[j] * yrow[j];
        if (gb) gb[j] += grow[j];
      }
      if (wx) {
        T mean_gy = 0, mean_gyy = 0;
        for (Index j = 0; j < d; ++j) {
          mean_gy += gy[static_cast<size_t>(j)];
          mean_gyy += gy[static_cast<size_t>(j)] * yrow[j];
        }
        mean_gy /= static_cast<T>(d);
        mean_gyy /= static_cast<T>(d);
        const T iv = inv[static_cast<size_t>(r)];
        for (Index j = 0; j < d; ++j)
          gx[r * d + j] += iv * (gy[static_cast<size_t>(j)] - mean_gy - yrow[j] * mean_gyy);
      }
    }
  });
  return out;
}

// Affine-free layernorm.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, double eps = 1e-5) {
  return layernorm(x, Tensor<T>(), Tensor<T>(), eps);
}

// ---- convolution and pooling ----

namespace detail {

// col[(ci*kh+dy)*kw+dx][oy*ow+ox] = x[b][ci][oy*s-p+dy][ox*s-p+dx] (0 outside)
template <typename T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, T* col) {
  for (int ci = 0; ci < cin; ++ci) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        T* crow = col + ((static_cast<Index>(ci) * kh + dy) * kw + dx) *
                            (static_cast<Index>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + dy;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + dx;
            crow[static_cast<Index>(oy) * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w)
                    ? x[(static_cast<Index>(ci) * h + iy) * w + ix]
                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accum(const T* col, int cin, int h, int w, int kh, int kw, int stride, int pad,
                  int oh, int ow, T* gx) {
  for (int ci = 0; ci < cin; ++ci) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const T* crow = col + ((static_cast<Index>(ci) * kh + dy) * kw + dx) *
                                  (static_cast<Index>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + dy;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + dx;
            if (ix < 0 || ix >= w) continue;
            gx[(static_cast<Index>(ci) * h + iy) * w + ix] +=
                crow[static_cast<Index>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution, NCHW, weight [Cout, Cin, kh, kw], optional bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: wants x [B,C,H,W] and w [Co,Ci,kh,kw], got " +
                     format_shape(x.shape()) + " and " + format_shape(w.shape()));
  const int b = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw ShapeError("conv2d: channel mismatch between x " + format_shape(x.shape()) +
                     " and w " + format_shape(w.shape()));
  if (stride < 1 || pad < 0) throw ContractError("conv2d: stride must be >= 1 and pad >= 0");
  if (kh > h + 2 * pad || kw > wd + 2 * pad)
    throw ShapeError("conv2d: kernel [" + std::to_string(kh) + ", " + std::to_string(kw) +
                     "] larger than padded input [" + std::to_string(h + 2 * pad) + ", " +
                     std::to_string(wd + 2 * pad) + "]");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{cout})
    throw ShapeError("conv2d: bias must be [" + std::to_string(cout) + "], got " +
                     format_shape(bias.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  const Index kdim = static_cast<Index>(cin) * kh * kw;
  const Index pdim = static_cast<Index>(oh) * ow;

  Tensor<T> out({b, cout, oh, ow});
  std::vector<T> col(static_cast<size_t>(kdim * pdim));
  const auto& xd = x.data();
  const auto& wdat = w.data();
  auto& od = out.data_mut();
  for (int bi = 0; bi < b; ++bi) {
    detail::im2col(xd.data() + static_cast<Index>(bi) * cin * h * wd, cin, h, wd, kh, kw,
                   stride, pad, oh, ow, col.data());
    T* ob = od.data() + static_cast<Index>(bi) * cout * pdim;
    detail::gemm_nn(static_cast<Index>(cout), pdim, kdim, wdat.data(), col.data(), ob);
    if (has_bias)
      for (int co = 0; co < cout; ++co)
        for (Index p = 0; p < pdim; ++p) ob[co * pdim + p] += bias.data()[static_cast<size_t>(co)];
  }
  FlopCounter::add(static_cast<std::uint64_t>(b) *
                   (2ull * static_cast<std::uint64_t>(cout) * static_cast<std::uint64_t>(kdim) *
                        static_cast<std::uint64_t>(pdim) +
                    (has_bias ? static_cast<std::uint64_t>(cout) * static_cast<std::uint64_t>(pdim)
                              : 0u)));
  ensure_finite("conv2d", out);
  auto* tape = Tape<T>::active();
  const bool track =
      x.entangled() || w.entangled() || (has_bias && bias.entangled());
  if (!tape || !track) return out;
  out.mark_tracked();
  tape->record("conv2d", out, [x, w, bias, out, b, cin, h, wd, cout, kh, kw, stride, pad, oh, ow,
                          kdim, pdim, has_bias]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    const bool wx = x.entangled(), ww = w.entangled();
    const bool wb = has_bias && bias.entangled();
    T* gx = wx ? x.grad_accum().data() : nullptr;
    T* gw = ww ? w.grad_accum().data() : nullptr;
    T* gb = wb ? bias.grad_accum().data() : nullptr;
    std::vector<T> col(static_cast<size_t>(kdim * pdim));
    std::vector<T> gcol(static_cast<size_t>(kdim * pdim));
    const auto& xd2 = x.data();
    const auto& wd2 = w.data();
    for (int bi = 0; bi < b; ++bi) {
      const T* gout = g->data() + static_cast<Index>(bi) * cout * pdim;
      if (ww) {
        detail::im2col(xd2.data() + static_cast<Index>(bi) * cin * h * wd, cin, h, wd, kh, kw,
                       stride, pad, oh, ow, col.data());
        detail::gemm_nt(static_cast<Index>(cout), kdim, pdim, gout, col.data(), gw);
      }
      if (wx) {
        std::fill(gcol.begin(), gcol.end(), T(0));
        detail::gemm_tn(static_cast<Index>(cout), kdim, pdim, wd2.data(), gout, gcol.data());
        detail::col2im_accum(gcol.data(), cin, h, wd, kh, kw, stride, pad, oh, ow,
                             gx + static_cast<Index>(bi) * cin * h * wd);
      }
      if (wb)
        for (int co = 0; co < cout; ++co)
          for (Index p = 0; p < pdim; ++p) gb[co] += gout[co * pdim + p];
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  return conv2d(x, w, Tensor<T>(), stride, pad);
}

// Max pooling, NCHW.  Padding cells act as -inf (they never win); a window
// made entirely of padding is a contract violation.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int kernel, int stride, int pad) {
  if (x.rank() != 4)
    throw ShapeError("maxpool2d: wants [B,C,H,W], got " + format_shape(x.shape()));
  if (kernel < 1 || stride < 1 || pad < 0)
    throw ContractError("maxpool2d: kernel/stride must be >= 1 and pad >= 0");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  if (oh < 1 || ow < 1)
    throw ContractError("maxpool2d: output extents must be >= 1 (input " +
                        format_shape(x.shape()) + ", kernel " + std::to_string(kernel) + ")");
  Tensor<T> out({b, c, oh, ow});
  std::vector<Index> arg(static_cast<size_t>(out.size()));
  auto& od = out.data_mut();
  const auto& xd = x.data();
  std::uint64_t visits = 0;
  Index oidx = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      const Index plane = (static_cast<Index>(bi) * c + ci) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oidx) {
          const int y0 = oy * stride - pad, x0 = ox * stride - pad;
          bool found = false;
          T best = 0;
          Index besti = -1;
          for (int dy = 0; dy < kernel; ++dy) {
            const int iy = y0 + dy;
            if (iy < 0 || iy >= h) continue;
            for (int dx = 0; dx < kernel; ++dx) {
              const int ix = x0 + dx;
              if (ix < 0 || ix >= w) continue;
              ++visits;
              const T v = xd[static_cast<size_t>(plane + static_cast<Index>(iy) * w + ix)];
              if (!found || v > best) {
                best = v;
                besti = plane + static_cast<Index>(iy) * w + ix;
                found = true;
              }
            }
          }
          if (!found)
            throw ContractError("maxpool2d: window contains no input cells (pad too large)");
          od[static_cast<size_t>(oidx)] = best;
          arg[static_cast<size_t>(oidx)] = besti;
        }
      }
    }
  }
  FlopCounter::add(visits);
  ensure_finite("maxpool2d", out);
  detail::maybe_record("maxpool2d", {&x}, out, [x, out, arg]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    for (size_t i = 0; i < arg.size(); ++i) gx[static_cast<size_t>(arg[i])] += (*g)[i];
  });
  return out;
}

enum class PoolMode { max, avg };

// Adaptive pooling to an exact output grid.  Region i spans
// [floor(i*in/out), ceil((i+1)*in/out)); regions may overlap and, when
// out > in, repeat cells, so the op doubles as an exact-grid resize.
template <typename T>
Tensor<T> adaptive_pool2d(const Tensor<T>& x, int out_h, int out_w, PoolMode mode) {
  if (x.rank() != 4)
    throw ShapeError("adaptive_pool2d: wants [B,C,H,W], got " + format_shape(x.shape()));
  if (out_h < 1 || out_w < 1)
    throw ContractError("adaptive_pool2d: output extents must be >= 1");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({b, c, out_h, out_w});
  const bool is_max = mode == PoolMode::max;
  std::vector<Index> arg(is_max ? static_cast<size_t>(out.size()) : 0);
  auto& od = out.data_mut();
  const auto& xd = x.data();
  Index oidx = 0;
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      const Index plane = (static_cast<Index>(bi) * c + ci) * h * w;
      for (int oy = 0; oy < out_h; ++oy) {
        auto [y0, y1] = detail::adaptive_span(oy, h, out_h);
        for (int ox = 0; ox < out_w; ++ox, ++oidx) {
          auto [x0, x1] = detail::adaptive_span(ox, w, out_w);
          if (is_max) {
            T best = xd[static_cast<size_t>(plane + static_cast<Index>(y0) * w + x0)];
            Index besti = plane + static_cast<Index>(y0) * w + x0;
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) {
                const T v = xd[static_cast<size_t>(plane + static_cast<Index>(iy) * w + ix)];
                if (v > best) {
                  best = v;
                  besti = plane + static_cast<Index>(iy) * w + ix;
                }
              }
            od[static_cast<size_t>(oidx)] = best;
            arg[static_cast<size_t>(oidx)] = besti;
          } else {
            T acc = 0;
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix)
                acc += xd[static_cast<size_t>(plane + static_cast<Index>(iy) * w + ix)];
            od[static_cast<size_t>(oidx)] =
                acc / static_cast<T>((y1 - y0) * (x1 - x0));
          }
        }
      }
    }
  }
  FlopCounter::add(static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(c) *
                   adaptive_pool_cells(h, w, out_h, out_w));
  ensure_finite("adaptive_pool2d", out);
  detail::maybe_record("adaptive_pool2d", {&x}, out,
                       [x, out, arg, is_max, b, c, h, w, out_h, out_w]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    if (is_max) {
      for (size_t i = 0; i < arg.size(); ++i) gx[static_cast<size_t>(arg[i])] += (*g)[i];
      return;
    }
    Index oidx = 0;
    for (int bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < c; ++ci) {
        const Index plane = (static_cast<Index>(bi) * c + ci) * h * w;
        for (int oy = 0; oy < out_h; ++oy) {
          auto [y0, y1] = detail::adaptive_span(oy, h, out_h);
          for (int ox = 0; ox < out_w; ++ox, ++oidx) {
            auto [x0, x1] = detail::adaptive_span(ox, w, out_w);
            const T share = (*g)[static_cast<size_t>(oidx)] /
                            static_cast<T>((y1 - y0) * (x1 - x0));
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix)
                gx[static_cast<size_t>(plane + static_cast<Index>(iy) * w + ix)] += share;
          }
        }
      }
    }
  });
  return out;
}

// ---- reductions ----

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, int axis, bool keepdim = false) {
  const int ax = detail::normalize_axis(axis, x.rank(), "reduce_sum");
  const auto sp = detail::axis_split(x.shape(), ax);
  Shape os;
  for (int i = 0; i < x.rank(); ++i) {
    if (i == ax) {
      if (keepdim) os.push_back(1);
    } else {
      os.push_back(x.dim(i));
    }
  }
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  auto& od = out.data_mut();
  const auto& xd = x.data();
  for (Index o = 0; o < sp.outer; ++o)
    for (Index in = 0; in < sp.inner; ++in) {
      T acc = 0;
      for (Index e = 0; e < sp.extent; ++e)
        acc += xd[static_cast<size_t>((o * sp.extent + e) * sp.inner + in)];
      od[static_cast<size_t>(o * sp.inner + in)] = acc;
    }
  FlopCounter::add(static_cast<std::uint64_t>(x.size()));
  ensure_finite("reduce_sum", out);
  detail::maybe_record("reduce_sum", {&x}, out, [x, out, sp]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    for (Index o = 0; o < sp.outer; ++o)
      for (Index in = 0; in < sp.inner; ++in) {
        const T gv = (*g)[static_cast<size_t>(o * sp.inner + in)];
        for (Index e = 0; e < sp.extent; ++e)
          gx[static_cast<size_t>((o * sp.extent + e) * sp.inner + in)] += gv;
      }
  });
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, int axis, bool keepdim = false) {
  const int ax = detail::normalize_axis(axis, x.rank(), "reduce_mean");
  const T n = static_cast<T>(x.dim(ax));
  return scale(reduce_sum(x, ax, keepdim), T(1) / n);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = 0;
  for (T v : x.data()) acc += v;
  out.data_mut()[0] = acc;
  FlopCounter::add(static_cast<std::uint64_t>(x.size()));
  ensure_finite("sum_all", out);
  detail::maybe_record("sum_all", {&x}, out, [x, out]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gx = x.grad_accum();
    for (auto& v : gx) v += (*g)[0];
  });
  return out;
}

// ---- loss ----

// Mean cross-entropy over the batch from raw logits [B, K] and integer labels.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy_mean: logits must be [B, K], got " +
                     format_shape(logits.shape()));
  const int b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != b)
    throw ShapeError("cross_entropy_mean: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(b));
  for (int y : labels)
    if (y < 0 || y >= k)
      throw ContractError("cross_entropy_mean: label " + std::to_string(y) +
                          " out of range [0, " + std::to_string(k) + ")");
  std::vector<T> probs(static_cast<size_t>(logits.size()));
  const auto& ld = logits.data();
  double total = 0;
  for (int r = 0; r < b; ++r) {
    const T* row = ld.data() + static_cast<Index>(r) * k;
    T mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      probs[static_cast<size_t>(r) * k + j] = static_cast<T>(e);
      denom += e;
    }
    for (int j = 0; j < k; ++j)
      probs[static_cast<size_t>(r) * k + j] =
          static_cast<T>(static_cast<double>(probs[static_cast<size_t>(r) * k + j]) / denom);
    total += std::log(denom) + static_cast<double>(mx) - static_cast<double>(row[labels[static_cast<size_t>(r)]]);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / b));
  FlopCounter::add(5u * static_cast<std::uint64_t>(logits.size()));
  ensure_finite("cross_entropy_mean", out);
  detail::maybe_record("cross_entropy_mean", {&logits}, out,
                       [logits, out, probs, labels, b, k]() mutable {
    const auto* g = out.grad_if();
    if (!g) return;
    auto& gl = logits.grad_accum();
    const T gv = (*g)[0] / static_cast<T>(b);
    for (int r = 0; r < b; ++r)
      for (int j = 0; j < k; ++j)
        gl[static_cast<size_t>(r) * k + j] +=
            gv * (probs[static_cast<size_t>(r) * k + j] -
                  (j == labels[static_cast<size_t>(r)] ? T(1) : T(0)));
  });
  return out;
}

// ---- non-differentiable helpers ----

template <typename T>
std::vector<int> argmax_last(const Tensor<T>& x) {
  const int d = x.dim(x.rank() - 1);
  const Index rows = x.size() / d;
  std::vector<int> out(static_cast<size_t>(rows));
  const auto& xd = x.data();
  for (Index r = 0; r < rows; ++r) {
    int best = 0;
    for (int j = 1; j < d; ++j)
      if (xd[static_cast<size_t>(r * d + j)] > xd[static_cast<size_t>(r * d + best)]) best = j;
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

template <typename T>
T scalar_value(const Tensor<T>& x) {
  if (x.size() != 1)
    throw ContractError("scalar_value: tensor has shape " + format_shape(x.shape()));
  return x.data()[0];
}

}  // namespace tt
