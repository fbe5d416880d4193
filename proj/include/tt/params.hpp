// Canonical parameter enumeration.  Everything that owns parameters —
// building, counting, checkpointing — walks the same list, so the dotted
// names and their order are the single source of truth.
//
// Naming scheme:
//   stem.conv.{w,b}
//   stage<i>.cls_init
//   stage<i>.down.{conv.w, conv.b, ln.g, ln.b}        (i >= 1)
//   stage<i>.fim.proj                                  (i >= 1, fim enabled)
//   stage<i>.block<k>.wmsa.{ln.g, ln.b, wq, wk, wv, wo, bo, rel_table,
//                           cls_bias}
//   stage<i>.block<k>.cls.{ln.g, ln.b, wq, wk, wv, wo, bo}   (cls-attention
//       path; named shift.* when the shifted-window ablation replaces it)
//   stage<i>.block<k>.ffn.{ln.g, ln.b, lin1.w, lin1.b, proj.w, proj.b}
//       (+ tokln.g, tokln.b, mix.w, mix.b for the literal kind); when the
//       cls stream uses a different feedforward kind than the embed stream
//       it gets its own ffn_cls.* set, otherwise both streams share ffn.*
//   head.{ln.g, ln.b, lin.w, lin.b}
#pragma once

#include <functional>
#include <string>

#include "tt/config.hpp"
#include "tt/tensor.hpp"

namespace tt {

enum class InitKind { trunc_normal, zeros, ones };

using ParamFn =
    std::function<void(const std::string&, const Shape&, InitKind)>;

namespace detail {

inline void emit_attn_params(const ParamFn& fn, const std::string& prefix,
                             int c, int heads, int window_side) {
  fn(prefix + ".ln.g", {c}, InitKind::ones);
  fn(prefix + ".ln.b", {c}, InitKind::zeros);
  fn(prefix + ".wq", {c, c}, InitKind::trunc_normal);
  fn(prefix + ".wk", {c, c}, InitKind::trunc_normal);
  fn(prefix + ".wv", {c, c}, InitKind::trunc_normal);
  fn(prefix + ".wo", {c, c}, InitKind::trunc_normal);
  fn(prefix + ".bo", {c}, InitKind::zeros);
  if (window_side > 0) {
    const int span = 2 * window_side - 1;
    fn(prefix + ".rel_table", {span * span, heads}, InitKind::trunc_normal);
    fn(prefix + ".cls_bias", {3, heads}, InitKind::zeros);
  }
}

inline void emit_ffn_params(const ParamFn& fn, const std::string& prefix,
                            FfnKind kind, int c, int ratio, int n_mix) {
  const int rc = ratio * c;
  fn(prefix + ".ln.g", {c}, InitKind::ones);
  fn(prefix + ".ln.b", {c}, InitKind::zeros);
  fn(prefix + ".lin1.w", {c, rc}, InitKind::trunc_normal);
  fn(prefix + ".lin1.b", {rc}, InitKind::zeros);
  if (kind == FfnKind::scffn_fused)
    fn(prefix + ".proj.w", {c, rc, 1, 1}, InitKind::trunc_normal);
  else
    fn(prefix + ".proj.w", {rc, c}, InitKind::trunc_normal);
  fn(prefix + ".proj.b", {c}, InitKind::zeros);
  if (kind == FfnKind::scffn_literal) {
    fn(prefix + ".tokln.g", {n_mix}, InitKind::ones);
    fn(prefix + ".tokln.b", {n_mix}, InitKind::zeros);
    fn(prefix + ".mix.w", {n_mix, n_mix}, InitKind::trunc_normal);
    fn(prefix + ".mix.b", {n_mix}, InitKind::zeros);
  }
}

}  // namespace detail

// Calls fn(name, shape, init) for every parameter of a model built from
// cfg, in the fixed canonical order.  Allocation-free.
inline void for_each_param(const ModelConfig& cfg, const ParamFn& fn) {
  if (cfg.stages.empty()) return;
  fn("stem.conv.w", {cfg.stages[0].dim, 3, cfg.patch, cfg.patch},
     InitKind::trunc_normal);
  fn("stem.conv.b", {cfg.stages[0].dim}, InitKind::zeros);

  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const std::string sp = "stage" + std::to_string(i);
    if (i > 0) {
      const int prev = cfg.stages[i - 1].dim;
      fn(sp + ".down.conv.w", {s.dim, prev, 3, 3}, InitKind::trunc_normal);
      fn(sp + ".down.conv.b", {s.dim}, InitKind::zeros);
      fn(sp + ".down.ln.g", {s.dim}, InitKind::ones);
      fn(sp + ".down.ln.b", {s.dim}, InitKind::zeros);
    }
    fn(sp + ".cls_init", {1, s.dim}, InitKind::trunc_normal);
    if (i > 0 && cfg.use_fim) {
      const int prev = cfg.stages[i - 1].dim;
      fn(sp + ".fim.proj", {prev + s.dim, s.dim}, InitKind::trunc_normal);
    }
    for (int k = 0; k < s.depth; ++k) {
      const std::string bp = sp + ".block" + std::to_string(k);
      detail::emit_attn_params(fn, bp + ".wmsa", s.dim, s.heads,
                               s.window_side);
      detail::emit_attn_params(fn, bp + (cfg.use_cls_attention ? ".cls" : ".shift"),
                               s.dim, s.heads, 0);
      detail::emit_ffn_params(fn, bp + ".ffn", cfg.ffn_embed, s.dim,
                              cfg.ffn_ratio, s.tokens_per_window());
      if (cfg.ffn_cls != cfg.ffn_embed)
        detail::emit_ffn_params(fn, bp + ".ffn_cls", cfg.ffn_cls, s.dim,
                                cfg.ffn_ratio, s.num_windows());
    }
  }

  const int last = cfg.stages.back().dim;
  fn("head.ln.g", {last}, InitKind::ones);
  fn("head.ln.b", {last}, InitKind::zeros);
  fn("head.lin.w", {last, cfg.num_classes}, InitKind::trunc_normal);
  fn("head.lin.b", {cfg.num_classes}, InitKind::zeros);
}

}  // namespace tt
