// Attention paths of the backbone.
//
// Every window carries one summary (CLS) token.  A block first runs
// multi-head self-attention inside each window over the length-(M+1)
// sequence [cls, tokens] ("window attention"), then lets the T CLS tokens
// exchange information globally by cross-attending to the embedded tokens of
// all windows ("CLS attention").  An alternative global-mixing path for
// ablations is shifted-window attention over the embedded tokens alone.
//
// Both residual paths are pre-norm: x + f(LN(x)).  Window attention adds a
// learned relative-position bias to the logits: token-token entries come
// from a (2w-1)^2-row table indexed by relative offset, and the CLS
// row/column uses three learned per-head scalars (cls->tok, tok->cls,
// cls->cls) since a spatial offset is undefined for the summary token.  CLS
// attention carries no positional term: its keys span all windows, where a
// window-relative offset has no meaning.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tt/errors.hpp"
#include "tt/geometry.hpp"
#include "tt/ops.hpp"
#include "tt/tensor.hpp"

namespace tt {

// Weights of one attention path.  qkv projections are bias-free; the output
// projection carries a bias.  rel_bias_table/cls_bias are only present on
// the window-attention path (undefined tensors otherwise).  ln_gain/ln_bias
// are the pre-norm parameters of the path.
template <typename T>
struct AttnParams {
  Tensor<T> w_q, w_k, w_v;     // [C, C]
  Tensor<T> w_o;               // [C, C]
  Tensor<T> b_o;               // [C]
  Tensor<T> ln_gain, ln_bias;  // [C]
  Tensor<T> rel_bias_table;    // [(2w-1)^2, heads] or undefined
  Tensor<T> cls_bias;          // [3, heads] rows: cls->tok, tok->cls, cls->cls
  int heads = 1;
};

// How CLS attention normalizes its scores: one softmax over the keys of all
// windows, or a per-window softmax whose T outputs are averaged.
enum class ClsAttnMode { global_softmax, per_window_softmax };

// Attention weights captured from the most recent block for inspection.
// cls_attn rows sum to 1 in both modes (per-window maps are stored divided
// by T).  Key order is window-major: key t*M + m is token m of window t.
template <typename T>
struct AttnMaps {
  Tensor<T> wmsa;      // [b*T, heads, M+1, M+1] or undefined
  Tensor<T> cls_attn;  // [b, heads, T, T*M] or undefined
  int grid_side = 0;   // token-grid side for spatial export
  int window_side = 0;
};

// Optional dropout applied inside attention (after the softmax and after the
// output projection).  Disabled by default so inference and the test suite
// stay deterministic; each application draws a fresh derived seed.
template <typename T>
struct DropState {
  T attn_p = 0;
  T proj_p = 0;
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  std::uint64_t next_seed() {
    return seed ^ (0x9e3779b97f4a7c15ull * ++counter);
  }
};

namespace detail {

// [batch, seq, C] -> [batch, heads, seq, C/heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  const int b = x.dim(0), s = x.dim(1), c = x.dim(2);
  if (heads <= 0 || c % heads != 0)
    throw ConfigError("channel dim " + std::to_string(c) +
                      " not divisible by " + std::to_string(heads) + " heads");
  return transpose(reshape(x, {b, s, heads, c / heads}), {0, 2, 1, 3});
}

// inverse of split_heads
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const int b = x.dim(0), h = x.dim(1), s = x.dim(2), d = x.dim(3);
  return reshape(transpose(x, {0, 2, 1, 3}), {b, s, h * d});
}

template <typename T>
Tensor<T> maybe_drop(const Tensor<T>& x, T p, DropState<T>* drop) {
  if (!drop || p <= T(0)) return x;
  return dropout(x, p, drop->training, drop->next_seed());
}

// Row indices into concat(rel_bias_table, cls_bias) for the full
// (M+1)x(M+1) bias matrix, row-major over (query, key).  Sequence position
// 0 is the CLS token; positions 1..M are window tokens in row-major window
// order.
inline std::vector<int> bias_index_map(int w) {
  const int m = w * w, span = 2 * w - 1, table_rows = span * span;
  std::vector<int> idx(static_cast<size_t>(m + 1) * (m + 1));
  auto at = [&](int q, int k) -> int& {
    return idx[static_cast<size_t>(q) * (m + 1) + k];
  };
  at(0, 0) = table_rows + 2;  // cls -> cls
  for (int k = 1; k <= m; ++k) at(0, k) = table_rows;      // cls -> tok
  for (int q = 1; q <= m; ++q) at(q, 0) = table_rows + 1;  // tok -> cls
  for (int q = 0; q < m; ++q)
    for (int k = 0; k < m; ++k) {
      const int dy = q / w - k / w + w - 1;
      const int dx = q % w - k % w + w - 1;
      at(q + 1, k + 1) = dy * span + dx;
    }
  return idx;
}

// Assembles the per-head additive bias [heads, M+1, M+1] from the learned
// tables; differentiable (gather scatters gradients back into the tables).
template <typename T>
Tensor<T> assemble_window_bias(const AttnParams<T>& p, int w) {
  const int m = w * w;
  Tensor<T> table = concat<T>({p.rel_bias_table, p.cls_bias}, 0);
  Tensor<T> rows = gather_rows(table, bias_index_map(w));  // [(M+1)^2, heads]
  return transpose(reshape(rows, {m + 1, m + 1, p.heads}), {2, 0, 1});
}

// Scaled-dot-product attention for a [batch, heads, seq_q/d] vs seq_k
// layout; returns the attention matrix and the per-head context.
template <typename T>
struct AttnResult {
  Tensor<T> attn;     // [batch, heads, seq_q, seq_k]
  Tensor<T> context;  // [batch, heads, seq_q, head_dim]
};

}  // namespace detail

// Window attention over [cls, tokens]: pre-norm residual multi-head
// self-attention inside every window, with relative-position bias and an
// optional additive logit mask of shape [T, M+1, M+1] (broadcast over batch
// and heads).  Updates both the embedded tokens and the CLS tokens.
template <typename T>
WindowSet<T> w_msa_with_cls(const WindowSet<T>& ws, const AttnParams<T>& p,
                            const Tensor<T>* mask = nullptr,
                            AttnMaps<T>* maps = nullptr,
                            DropState<T>* drop = nullptr) {
  const int b = ws.batch, t = ws.num_windows, m = ws.tokens_per_window;
  const int c = ws.dim, h = p.heads, w = ws.window_side;
  if (ws.win_tokens.dim(1) != m)
    throw ContractError("window sequence length " +
                        std::to_string(ws.win_tokens.dim(1)) +
                        " does not match tokens-per-window " +
                        std::to_string(m));
  const T inv_sqrt_d = T(1) / std::sqrt(T(c / h));

  Tensor<T> cls_rows = reshape(ws.cls_tokens, {b * t, 1, c});
  Tensor<T> seq = concat<T>({cls_rows, ws.win_tokens}, 1);  // [b*T, M+1, C]
  Tensor<T> x = layernorm(seq, p.ln_gain, p.ln_bias);

  Tensor<T> q = detail::split_heads(matmul(x, p.w_q), h);
  Tensor<T> k = detail::split_heads(matmul(x, p.w_k), h);
  Tensor<T> v = detail::split_heads(matmul(x, p.w_v), h);

  Tensor<T> logits = scale(matmul(q, transpose(k, {0, 1, 3, 2})), inv_sqrt_d);
  logits = add(logits, detail::assemble_window_bias(p, w));
  if (mask) {
    // [b*T, H, M+1, M+1] + per-window mask, aligned on the window axis
    Tensor<T> l5 = reshape(logits, {b, t, h, m + 1, m + 1});
    Tensor<T> m4 = reshape(*mask, {t, 1, m + 1, m + 1});
    logits = reshape(add(l5, m4), {b * t, h, m + 1, m + 1});
  }
  Tensor<T> attn = softmax(logits, -1);
  if (maps) {
    maps->wmsa = attn;
    maps->grid_side = ws.window_side * static_cast<int>(std::lround(
                          std::sqrt(static_cast<double>(t))));
    maps->window_side = ws.window_side;
  }
  attn = detail::maybe_drop(attn, drop ? drop->attn_p : T(0), drop);

  Tensor<T> ctx = detail::merge_heads(matmul(attn, v));  // [b*T, M+1, C]
  Tensor<T> out = add(matmul(ctx, p.w_o), p.b_o);
  out = detail::maybe_drop(out, drop ? drop->proj_p : T(0), drop);
  Tensor<T> res = add(seq, out);

  WindowSet<T> r = ws;
  r.cls_tokens = reshape(slice(res, 1, 0, 1), {b, t, c});
  r.win_tokens = slice(res, 1, 1, m);
  return r;
}

// CLS attention: all T CLS tokens act as queries against the embedded
// tokens of all windows as keys/values (pre-norm residual, shared LN for the
// query and key/value streams, no positional term).
//
// global_softmax (default): one softmax over all T*M keys per query.
// per_window_softmax: Eq-per-window reading — softmax over each window's M
// keys separately, then the T per-window context vectors are averaged.
template <typename T>
Tensor<T> cls_attention(const WindowSet<T>& ws, const AttnParams<T>& p,
                        ClsAttnMode mode = ClsAttnMode::global_softmax,
                        AttnMaps<T>* maps = nullptr,
                        DropState<T>* drop = nullptr) {
  const int b = ws.batch, t = ws.num_windows, m = ws.tokens_per_window;
  const int c = ws.dim, h = p.heads;
  if (t <= 0) throw ContractError("cls_attention: no windows present");
  const T inv_sqrt_d = T(1) / std::sqrt(T(c / h));

  Tensor<T> keys_flat = reshape(ws.win_tokens, {b, t * m, c});
  Tensor<T> xq = layernorm(ws.cls_tokens, p.ln_gain, p.ln_bias);
  Tensor<T> xkv = layernorm(keys_flat, p.ln_gain, p.ln_bias);

  Tensor<T> q = detail::split_heads(matmul(xq, p.w_q), h);    // [b,H,T,d]
  Tensor<T> k = detail::split_heads(matmul(xkv, p.w_k), h);   // [b,H,TM,d]
  Tensor<T> v = detail::split_heads(matmul(xkv, p.w_v), h);

  Tensor<T> logits =
      scale(matmul(q, transpose(k, {0, 1, 3, 2})), inv_sqrt_d);  // [b,H,T,TM]

  Tensor<T> attn;
  if (mode == ClsAttnMode::global_softmax) {
    attn = softmax(logits, -1);
  } else {
    // softmax inside each window's key block, averaged afterwards; folding
    // the 1/T into the weights keeps attn rows summing to 1
    Tensor<T> per_win = softmax(reshape(logits, {b, h, t, t, m}), -1);
    attn = scale(reshape(per_win, {b, h, t, t * m}), T(1) / T(t));
  }
  if (maps) {
    maps->cls_attn = attn;
    maps->grid_side = ws.window_side * static_cast<int>(std::lround(
                          std::sqrt(static_cast<double>(t))));
    maps->window_side = ws.window_side;
  }
  attn = detail::maybe_drop(attn, drop ? drop->attn_p : T(0), drop);

  Tensor<T> ctx = detail::merge_heads(matmul(attn, v));  // [b, T, C]
  Tensor<T> out = add(matmul(ctx, p.w_o), p.b_o);
  out = detail::maybe_drop(out, drop ? drop->proj_p : T(0), drop);
  return add(ws.cls_tokens, out);
}

// Shifted-window attention over the embedded tokens only (the ablation's
// replacement for CLS attention; the summary tokens pass through
// unchanged).  The grid is rolled by `offset`, partitioned, attended with
// the seam mask, then unrolled.  No positional bias on this path.
template <typename T>
TokenGrid<T> sw_msa(const TokenGrid<T>& g, const AttnParams<T>& p, int w,
                    int offset, DropState<T>* drop = nullptr) {
  const int b = g.batch, c = g.dim, h = p.heads, m = w * w;
  const int n = g.grid_h / w, t = n * n;
  const T inv_sqrt_d = T(1) / std::sqrt(T(c / h));

  TokenGrid<T> shifted = cyclic_shift(g, offset);
  Tensor<T> wins = window_partition(shifted, w);  // [b*T, M, C]
  Tensor<T> x = layernorm(wins, p.ln_gain, p.ln_bias);

  Tensor<T> q = detail::split_heads(matmul(x, p.w_q), h);
  Tensor<T> k = detail::split_heads(matmul(x, p.w_k), h);
  Tensor<T> v = detail::split_heads(matmul(x, p.w_v), h);

  Tensor<T> logits = scale(matmul(q, transpose(k, {0, 1, 3, 2})), inv_sqrt_d);
  if (offset != 0) {
    Tensor<T> mask = build_shift_mask<T>(g.grid_h, w, offset);  // [T, M, M]
    Tensor<T> l5 = reshape(logits, {b, t, h, m, m});
    logits = reshape(add(l5, reshape(mask, {t, 1, m, m})), {b * t, h, m, m});
  }
  Tensor<T> attn = softmax(logits, -1);
  attn = detail::maybe_drop(attn, drop ? drop->attn_p : T(0), drop);

  Tensor<T> ctx = detail::merge_heads(matmul(attn, v));
  Tensor<T> out = add(matmul(ctx, p.w_o), p.b_o);
  out = detail::maybe_drop(out, drop ? drop->proj_p : T(0), drop);
  Tensor<T> res = add(wins, out);

  return cyclic_shift(window_reverse(res, b, g.grid_h, w), -offset);
}

// Writes the captured CLS-attention maps for batch element 0: one CSV with
// every (head, query, key) weight, and one max-normalized 8-bit PGM per
// head whose pixels are the query-averaged attention laid out on the token
// grid (key t*M + m maps to grid cell (wr*w + m/w, wc*w + m%w) for window
// t = (wr, wc)).
template <typename T>
void export_attention(const AttnMaps<T>& maps, const std::string& dir) {
  if (!maps.cls_attn.defined())
    throw ContractError(
        "export_attention: no maps captured; run forward with diagnostics");
  const int h = maps.cls_attn.dim(1), t = maps.cls_attn.dim(2);
  const int tm = maps.cls_attn.dim(3), m = tm / t;
  const int g = maps.grid_side, w = maps.window_side, n = g / w;

  std::ofstream csv(dir + "/cls_attention.csv");
  if (!csv) throw IoError("cannot write " + dir + "/cls_attention.csv");
  csv << "head,qi,ki,weight\n";
  csv.precision(17);
  for (int head = 0; head < h; ++head)
    for (int qi = 0; qi < t; ++qi)
      for (int ki = 0; ki < tm; ++ki)
        csv << head << ',' << qi << ',' << ki << ','
            << maps.cls_attn.at({0, head, qi, ki}) << '\n';
  if (!csv.flush()) throw IoError("failed writing " + dir + "/cls_attention.csv");

  for (int head = 0; head < h; ++head) {
    std::vector<double> img(static_cast<size_t>(g) * g, 0.0);
    for (int ki = 0; ki < tm; ++ki) {
      double avg = 0;
      for (int qi = 0; qi < t; ++qi)
        avg += static_cast<double>(maps.cls_attn.at({0, head, qi, ki}));
      avg /= t;
      const int win = ki / m, pos = ki % m;
      const int r = (win / n) * w + pos / w, col = (win % n) * w + pos % w;
      img[static_cast<size_t>(r) * g + col] = avg;
    }
    double peak = 0;
    for (double v : img) peak = std::max(peak, v);
    if (peak <= 0) peak = 1;
    const std::string path = dir + "/cls_attention_head" +
                             std::to_string(head) + ".pgm";
    std::ofstream pgm(path, std::ios::binary);
    if (!pgm) throw IoError("cannot write " + path);
    pgm << "P5\n" << g << ' ' << g << "\n255\n";
    for (double v : img) {
      const int byte = static_cast<int>(std::lround(v / peak * 255.0));
      pgm.put(static_cast<char>(byte < 0 ? 0 : (byte > 255 ? 255 : byte)));
    }
    if (!pgm.flush()) throw IoError("failed writing " + path);
  }
}

}  // namespace tt
