// Assembles the full backbone: convolutional stem, four (or however many
// configured) stages of blocks over windowed tokens with per-window CLS
// tokens, downsampling + CLS inheritance at stage boundaries, and the
// classification head.
//
// Per block: (1) window attention over [cls, tokens]; (2) global CLS
// attention across windows (or, under the ablation, shifted-window
// attention over the embedded tokens with CLS left untouched); (3) the
// feedforward on embedded tokens and on CLS tokens, sharing one parameter
// set when both streams use the same kind.
//
// Parameters are allocated in the canonical enumeration order with one
// random stream, so a build is bitwise-deterministic under its seed.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tt/attention.hpp"
#include "tt/config.hpp"
#include "tt/errors.hpp"
#include "tt/fim.hpp"
#include "tt/geometry.hpp"
#include "tt/params.hpp"
#include "tt/scffn.hpp"

namespace tt {

template <typename T>
struct BlockParams {
  AttnParams<T> wmsa;
  AttnParams<T> cls;        // cls-attention path, or the shift path's weights
  ScffnParams<T> ffn;       // embed stream (and cls stream when shared)
  ScffnParams<T> ffn_cls;   // only populated when the kinds differ
  bool split_ffn = false;
};

template <typename T>
struct StageParams {
  Tensor<T> cls_init;  // [1, C]
  Tensor<T> down_conv_w, down_conv_b, down_ln_g, down_ln_b;  // stages >= 1
  FimParams<T> fim;
  std::vector<BlockParams<T>> blocks;
};

template <typename T>
struct TtModel {
  ModelConfig cfg;
  Tensor<T> stem_w, stem_b;
  std::vector<StageParams<T>> stages;
  Tensor<T> head_ln_g, head_ln_b, head_w, head_b;

  // every parameter, in canonical order, sharing storage with the fields
  // above; the map indexes into this list by name
  std::vector<std::pair<std::string, Tensor<T>>> named;
  std::unordered_map<std::string, size_t> index;

  const Tensor<T>& param(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end())
      throw ContractError("unknown parameter '" + name + "'");
    return named[it->second].second;
  }
};

namespace detail {

template <typename T>
void wire_attn(const TtModel<T>& m, const std::string& prefix,
               AttnParams<T>& p, int heads, bool with_bias_tables) {
  p.heads = heads;
  p.ln_gain = m.param(prefix + ".ln.g");
  p.ln_bias = m.param(prefix + ".ln.b");
  p.w_q = m.param(prefix + ".wq");
  p.w_k = m.param(prefix + ".wk");
  p.w_v = m.param(prefix + ".wv");
  p.w_o = m.param(prefix + ".wo");
  p.b_o = m.param(prefix + ".bo");
  if (with_bias_tables) {
    p.rel_bias_table = m.param(prefix + ".rel_table");
    p.cls_bias = m.param(prefix + ".cls_bias");
  }
}

template <typename T>
void wire_ffn(const TtModel<T>& m, const std::string& prefix,
              ScffnParams<T>& p, FfnKind kind) {
  p.kind = kind;
  p.ln_gain = m.param(prefix + ".ln.g");
  p.ln_bias = m.param(prefix + ".ln.b");
  p.lin1_w = m.param(prefix + ".lin1.w");
  p.lin1_b = m.param(prefix + ".lin1.b");
  p.proj_w = m.param(prefix + ".proj.w");
  p.proj_b = m.param(prefix + ".proj.b");
  if (kind == FfnKind::scffn_literal) {
    p.ln_tok_gain = m.param(prefix + ".tokln.g");
    p.ln_tok_bias = m.param(prefix + ".tokln.b");
    p.mix_w = m.param(prefix + ".mix.w");
    p.mix_b = m.param(prefix + ".mix.b");
  }
}

}  // namespace detail

template <typename T>
TtModel<T> build(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  TtModel<T> m;
  m.cfg = cfg;
  RandomStream rs(seed);
  for_each_param(cfg, [&](const std::string& name, const Shape& shape,
                          InitKind init) {
    Tensor<T> t(shape);
    auto& d = t.data_mut();
    switch (init) {
      case InitKind::trunc_normal:
        for (auto& v : d) v = static_cast<T>(rs.trunc_normal(0.02));
        break;
      case InitKind::zeros:
        std::fill(d.begin(), d.end(), T(0));
        break;
      case InitKind::ones:
        std::fill(d.begin(), d.end(), T(1));
        break;
    }
    m.index.emplace(name, m.named.size());
    m.named.emplace_back(name, std::move(t));
  });

  m.stem_w = m.param("stem.conv.w");
  m.stem_b = m.param("stem.conv.b");
  m.stages.resize(cfg.stages.size());
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    auto& st = m.stages[i];
    const std::string sp = "stage" + std::to_string(i);
    st.cls_init = m.param(sp + ".cls_init");
    if (i > 0) {
      st.down_conv_w = m.param(sp + ".down.conv.w");
      st.down_conv_b = m.param(sp + ".down.conv.b");
      st.down_ln_g = m.param(sp + ".down.ln.g");
      st.down_ln_b = m.param(sp + ".down.ln.b");
      if (cfg.use_fim) st.fim.proj_w = m.param(sp + ".fim.proj");
    }
    st.blocks.resize(static_cast<size_t>(s.depth));
    for (int k = 0; k < s.depth; ++k) {
      auto& b = st.blocks[static_cast<size_t>(k)];
      const std::string bp = sp + ".block" + std::to_string(k);
      detail::wire_attn(m, bp + ".wmsa", b.wmsa, s.heads, true);
      detail::wire_attn(m, bp + (cfg.use_cls_attention ? ".cls" : ".shift"),
                        b.cls, s.heads, false);
      detail::wire_ffn(m, bp + ".ffn", b.ffn, cfg.ffn_embed);
      b.split_ffn = cfg.ffn_cls != cfg.ffn_embed;
      if (b.split_ffn)
        detail::wire_ffn(m, bp + ".ffn_cls", b.ffn_cls, cfg.ffn_cls);
    }
  }
  m.head_ln_g = m.param("head.ln.g");
  m.head_ln_b = m.param("head.ln.b");
  m.head_w = m.param("head.lin.w");
  m.head_b = m.param("head.lin.b");
  return m;
}

// One block: window attention, global CLS mixing (or the shifted-window
// ablation), then the feedforward on both token streams.
template <typename T>
WindowSet<T> block_forward(const WindowSet<T>& ws_in, const BlockParams<T>& b,
                           const ModelConfig& cfg, AttnMaps<T>* maps = nullptr,
                           DropState<T>* drop = nullptr) {
  WindowSet<T> ws = w_msa_with_cls<T>(ws_in, b.wmsa, nullptr, maps, drop);
  if (cfg.use_cls_attention) {
    ws.cls_tokens = cls_attention(ws, b.cls, cfg.cls_mode, maps, drop);
  } else {
    const int n = ws.window_side * static_cast<int>(std::lround(
                      std::sqrt(static_cast<double>(ws.num_windows))));
    TokenGrid<T> grid = window_reverse(ws.win_tokens, ws.batch, n,
                                       ws.window_side);
    grid = sw_msa(grid, b.cls, ws.window_side, ws.window_side / 2, drop);
    ws.win_tokens = window_partition(grid, ws.window_side);
  }
  const ScffnParams<T>& cls_ffn = b.split_ffn ? b.ffn_cls : b.ffn;
  ws.win_tokens = scffn_forward(ws.win_tokens, b.ffn, "embed");
  ws.cls_tokens = scffn_forward(ws.cls_tokens, cls_ffn, "cls");
  return ws;
}

// Full forward pass to logits [batch, num_classes].  When maps is given,
// the attention weights of the last executed block are captured for export.
template <typename T>
Tensor<T> forward(const TtModel<T>& m, const Tensor<T>& images,
                  AttnMaps<T>* maps = nullptr, DropState<T>* drop = nullptr) {
  const auto& cfg = m.cfg;
  if (images.rank() != 4 || images.dim(2) != cfg.input_size ||
      images.dim(3) != cfg.input_size)
    throw ContractError("expected [b, 3, " + std::to_string(cfg.input_size) +
                        ", " + std::to_string(cfg.input_size) +
                        "] images, got " + format_shape(images.shape()));
  const int batch = static_cast<int>(images.dim(0));

  TokenGrid<T> grid = patch_embed(images, m.stem_w, m.stem_b, cfg.patch,
                                  cfg.stages[0].grid_side);
  Tensor<T> prev_cls;
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const auto& st = m.stages[i];
    if (i > 0)
      grid = downsample(grid, st.down_conv_w, st.down_conv_b, st.down_ln_g,
                        st.down_ln_b, s.grid_side);

    WindowSet<T> ws;
    ws.batch = batch;
    ws.num_windows = s.num_windows();
    ws.window_side = s.window_side;
    ws.tokens_per_window = s.tokens_per_window();
    ws.dim = s.dim;
    ws.win_tokens = window_partition(grid, s.window_side);
    Tensor<T> fresh = expand(reshape(st.cls_init, {1, 1, s.dim}),
                             {batch, ws.num_windows, s.dim});
    ws.cls_tokens = (i > 0 && cfg.use_fim)
                        ? fim_fuse(prev_cls, fresh, st.fim)
                        : fresh;

    for (const auto& b : st.blocks) ws = block_forward(ws, b, cfg, maps, drop);

    grid = window_reverse(ws.win_tokens, batch, s.grid_side, s.window_side);
    prev_cls = ws.cls_tokens;
  }

  Tensor<T> pooled = cfg.head_cls_mean ? prev_cls : grid.tokens;
  pooled = layernorm(pooled, m.head_ln_g, m.head_ln_b);
  pooled = reduce_mean(pooled, 1, false);  // [b, C]
  return add(matmul(pooled, m.head_w), m.head_b);
}

inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names = {
      "baseline",    "shift-window", "no-fim",      "ffn-ffn",
      "scffn-ffn",   "ffn-scffn",    "scffn-scffn"};
  return names;
}

// The ablation grid: global-CLS vs shifted-window mixing, inheritance
// on/off, and the four (cls kind, embed kind) feedforward rows.
inline ModelConfig ablation_variant(const ModelConfig& base,
                                    const std::string& name) {
  ModelConfig cfg = base;
  if (name == "baseline") return cfg;
  if (name == "shift-window") {
    cfg.use_cls_attention = false;
    return cfg;
  }
  if (name == "no-fim") {
    cfg.use_fim = false;
    return cfg;
  }
  // feedforward rows are named <cls kind>-<embed kind>
  if (name == "ffn-ffn") {
    cfg.ffn_cls = cfg.ffn_embed = FfnKind::ffn;
    return cfg;
  }
  if (name == "scffn-ffn") {
    cfg.ffn_cls = FfnKind::scffn_fused;
    cfg.ffn_embed = FfnKind::ffn;
    return cfg;
  }
  if (name == "ffn-scffn") {
    cfg.ffn_cls = FfnKind::ffn;
    cfg.ffn_embed = FfnKind::scffn_fused;
    return cfg;
  }
  if (name == "scffn-scffn") {
    cfg.ffn_cls = cfg.ffn_embed = FfnKind::scffn_fused;
    return cfg;
  }
  std::string valid;
  for (const auto& n : ablation_names())
    valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown ablation '" + name + "'; valid: " + valid);
}

}  // namespace tt
