// Finite-difference verification of the backward pass, grouped into probe
// families that mirror the library layout: core ops, grid geometry, the
// attention paths, the feedforward kinds, feature inheritance, and a
// whole-model probe through selected parameters.
//
// Every probe evaluates a scalar loss twice per checked entry (central
// differences) and compares against the taped gradient.  The loss weights
// each output element unevenly so that symmetric wrong gradients cannot
// cancel, and the relative error uses max(1, |a|, |b|) in the denominator
// so values near zero do not blow the ratio up.  All probe inputs come from
// fixed deterministic fills — repeated runs produce identical numbers.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tt/attention.hpp"
#include "tt/config.hpp"
#include "tt/errors.hpp"
#include "tt/fim.hpp"
#include "tt/geometry.hpp"
#include "tt/model.hpp"
#include "tt/ops.hpp"
#include "tt/scffn.hpp"
#include "tt/tensor.hpp"

namespace tt {

struct GradProbe {
  std::string name;
  double max_rel_err = 0;
};

struct GradReport {
  std::vector<GradProbe> probes;
  double worst = 0;
};

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names = {
      "core", "geometry", "attention", "scffn", "fim", "model"};
  return names;
}

namespace graddetail {

using Fd = Tensor<double>;

// Deterministic uneven fill; the salt de-correlates different tensors.
inline Fd wavy(const Shape& shape, double scale = 0.5, int salt = 0) {
  Fd t = Fd::zeros(shape);
  auto& d = t.data_mut();
  for (size_t i = 0; i < d.size(); ++i)
    d[i] = scale * std::sin(0.7 * static_cast<double>(i + 1) + 0.37 * salt);
  return t;
}

inline Fd onesT(const Shape& shape) {
  Fd t = Fd::zeros(shape);
  for (auto& v : t.data_mut()) v = 1.0;
  return t;
}

// Channel-uneven weighting so every output element matters differently.
inline Fd loss_weights(const Shape& shape) {
  Fd w = Fd::zeros(shape);
  auto& d = w.data_mut();
  for (size_t i = 0; i < d.size(); ++i)
    d[i] = 0.25 + 0.05 * static_cast<double>(i % 17) -
           0.03 * static_cast<double>(i % 5);
  return w;
}

inline double rel_err(double a, double b) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / scale;
}

// Checks d(loss)/d(input) for a handful of entries of every listed input,
// where loss = sum(forward() * fixed weights).  Returns the worst relative
// error between the taped gradient and a central finite difference.
inline double fd_probe(const std::vector<Fd>& inputs,
                       const std::function<Fd()>& forward,
                       int entries_per_input = 4) {
  auto loss_value = [&]() {
    Fd out = forward();
    return scalar_value(sum_all(mul(out, loss_weights(out.shape()))));
  };

  for (Fd in : inputs) {  // copies share storage with the caller's tensors
    in.set_requires_grad(true);
    in.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    Fd out = forward();
    Fd loss = sum_all(mul(out, loss_weights(out.shape())));
    tape.backward(loss);
  }
  for (const auto& in : inputs)
    analytic.push_back(in.grad_if() ? *in.grad_if()
                                    : std::vector<double>(in.size(), 0.0));

  double worst = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto& d = inputs[i].data_mut();
    const size_t n = d.size();
    std::vector<size_t> picks = {0, n / 3, n / 2, n - 1};
    picks.resize(std::min<size_t>(picks.size(),
                                  static_cast<size_t>(entries_per_input)));
    for (size_t k : picks) {
      if (k >= n) continue;
      const double orig = d[k];
      const double h = 1e-5 * std::max(1.0, std::fabs(orig));
      d[k] = orig + h;
      const double up = loss_value();
      d[k] = orig - h;
      const double dn = loss_value();
      d[k] = orig;
      worst = std::max(worst, rel_err((up - dn) / (2 * h), analytic[i][k]));
    }
  }
  for (Fd in : inputs) in.set_requires_grad(false);
  return worst;
}

inline AttnParams<double> tiny_attn_params(int c, int heads, int window_side,
                                           int salt) {
  AttnParams<double> p;
  p.heads = heads;
  p.w_q = wavy({c, c}, 0.3, salt);
  p.w_k = wavy({c, c}, 0.3, salt + 1);
  p.w_v = wavy({c, c}, 0.3, salt + 2);
  p.w_o = wavy({c, c}, 0.3, salt + 3);
  p.b_o = wavy({c}, 0.1, salt + 4);
  p.ln_gain = onesT({c});
  p.ln_bias = wavy({c}, 0.05, salt + 5);
  if (window_side > 0) {
    const int span = 2 * window_side - 1;
    p.rel_bias_table = wavy({span * span, heads}, 0.2, salt + 6);
    p.cls_bias = wavy({3, heads}, 0.2, salt + 7);
  }
  return p;
}

inline WindowSet<double> tiny_window_set(int c, int salt) {
  TokenGrid<double> g = make_token_grid(wavy({1, 16, c}, 0.6, salt), 4, 4);
  WindowSet<double> ws;
  ws.batch = 1;
  ws.window_side = 2;
  ws.num_windows = 4;
  ws.tokens_per_window = 4;
  ws.dim = c;
  ws.win_tokens = window_partition(g, 2);
  ws.cls_tokens = wavy({1, 4, c}, 0.6, salt + 9);
  return ws;
}

inline ScffnParams<double> tiny_ffn_params(FfnKind kind, int c, int ratio,
                                           int n, int salt) {
  ScffnParams<double> p;
  p.kind = kind;
  p.ln_gain = onesT({c});
  p.ln_bias = wavy({c}, 0.05, salt);
  p.lin1_w = wavy({c, ratio * c}, 0.3, salt + 1);
  p.lin1_b = wavy({ratio * c}, 0.1, salt + 2);
  p.proj_w = kind == FfnKind::scffn_fused
                 ? wavy({c, ratio * c, 1, 1}, 0.3, salt + 3)
                 : wavy({ratio * c, c}, 0.3, salt + 3);
  p.proj_b = wavy({c}, 0.1, salt + 4);
  if (kind == FfnKind::scffn_literal) {
    p.ln_tok_gain = onesT({n});
    p.ln_tok_bias = wavy({n}, 0.05, salt + 5);
    p.mix_w = wavy({n, n}, 0.3, salt + 6);
    p.mix_b = wavy({n}, 0.1, salt + 7);
  }
  return p;
}

inline void probes_core(std::vector<GradProbe>& out) {
  {
    Fd x = wavy({2, 3, 4}, 0.6, 1), w = wavy({4, 5}, 0.5, 2),
       b = wavy({5}, 0.2, 3);
    out.push_back({"core/matmul-add",
                   fd_probe({x, w, b}, [&] { return add(matmul(x, w), b); })});
  }
  {
    Fd a = wavy({3, 7}, 0.7, 4), b = wavy({3, 7}, 0.4, 5);
    out.push_back({"core/mul-scale-sub", fd_probe({a, b}, [&] {
                     return sub(scale(mul(a, b), 1.7), a);
                   })});
  }
  {
    Fd x = wavy({2, 9}, 1.1, 6);
    out.push_back({"core/gelu", fd_probe({x}, [&] { return gelu(x); })});
  }
  {
    Fd x = wavy({2, 3, 6}, 1.3, 7);
    out.push_back({"core/softmax", fd_probe({x}, [&] { return softmax(x, 2); })});
  }
  {
    Fd x = wavy({2, 4, 8}, 0.9, 8), g = wavy({8}, 0.3, 9), b = wavy({8}, 0.2, 10);
    // Shift the gain away from zero so the probe is not differentiating at
    // a degenerate point.
    for (auto& v : g.data_mut()) v += 1.0;
    out.push_back({"core/layernorm",
                   fd_probe({x, g, b}, [&] { return layernorm(x, g, b); })});
  }
  {
    Fd x = wavy({1, 3, 6, 6}, 0.8, 11), w = wavy({4, 3, 3, 3}, 0.4, 12),
       b = wavy({4}, 0.2, 13);
    out.push_back({"core/conv2d",
                   fd_probe({x, w, b}, [&] { return conv2d(x, w, b, 2, 1); })});
  }
  {
    Fd x = wavy({1, 2, 7, 7}, 0.8, 14);
    out.push_back({"core/adaptive-pool", fd_probe({x}, [&] {
                     return add(adaptive_pool2d(x, 3, 3, PoolMode::avg),
                                adaptive_pool2d(x, 3, 3, PoolMode::max));
                   })});
  }
  {
    Fd x = wavy({1, 4, 4, 4}, 0.8, 25);
    out.push_back({"core/maxpool2d",
                   fd_probe({x}, [&] { return maxpool2d(x, 2, 2, 0); })});
  }
  {
    Fd x = wavy({2, 4, 6}, 0.7, 15);
    out.push_back({"core/move-ops", fd_probe({x}, [&] {
                     Fd t = transpose(x, {1, 0, 2});   // [4, 2, 6]
                     Fd s = slice(t, 0, 1, 2);         // [2, 2, 6]
                     Fd c = concat<double>({s, s}, 2); // [2, 2, 12]
                     return reshape(c, {4, 12});
                   })});
  }
  {
    Fd table = wavy({5, 3}, 0.6, 16);
    const std::vector<int> rows = {0, 2, 2, 4, 1};
    out.push_back({"core/gather-rows",
                   fd_probe({table}, [&] { return gather_rows(table, rows); })});
  }
  {
    Fd x = wavy({3, 4, 5}, 0.7, 17);
    out.push_back({"core/reduce", fd_probe({x}, [&] {
                     return add(reduce_sum(x, 1), reduce_mean(x, 1));
                   })});
  }
  {
    Fd x = wavy({1, 3, 1}, 0.7, 18), y = wavy({2, 3, 4}, 0.5, 19);
    out.push_back({"core/expand",
                   fd_probe({x, y}, [&] { return mul(expand(x, {2, 3, 4}), y); })});
  }
  {
    Fd logits = wavy({4, 5}, 1.2, 20);
    const std::vector<int> labels = {0, 2, 1, 4};
    out.push_back({"core/cross-entropy", fd_probe({logits}, [&] {
                     return cross_entropy_mean(logits, labels);
                   })});
  }
}

inline void probes_geometry(std::vector<GradProbe>& out) {
  {
    Fd img = wavy({1, 3, 8, 8}, 0.5, 21), w = wavy({6, 3, 2, 2}, 0.4, 22),
       b = wavy({6}, 0.2, 23);
    out.push_back({"geometry/patch-embed", fd_probe({img, w, b}, [&] {
                     return patch_embed(img, w, b, 2, 3).tokens;
                   })});
  }
  {
    Fd tok = wavy({1, 16, 4}, 0.6, 24);
    Fd cw = wavy({8, 4, 3, 3}, 0.3, 25), cb = wavy({8}, 0.2, 26);
    Fd lg = onesT({8}), lb = wavy({8}, 0.1, 27);
    out.push_back({"geometry/downsample", fd_probe({tok, cw, cb, lg, lb}, [&] {
                     auto g = make_token_grid(tok, 4, 4);
                     return downsample(g, cw, cb, lg, lb, 3).tokens;
                   })});
  }
  {
    Fd tok = wavy({1, 16, 5}, 0.6, 28);
    out.push_back({"geometry/window-roundtrip", fd_probe({tok}, [&] {
                     auto g = make_token_grid(tok, 4, 4);
                     Fd wins = window_partition(g, 2);
                     return window_reverse(scale(wins, 1.3), 1, 4, 2).tokens;
                   })});
  }
  {
    Fd tok = wavy({1, 16, 3}, 0.6, 29);
    out.push_back({"geometry/cyclic-shift", fd_probe({tok}, [&] {
                     auto g = make_token_grid(tok, 4, 4);
                     return cyclic_shift(g, 1).tokens;
                   })});
  }
}

inline void probes_attention(std::vector<GradProbe>& out) {
  {
    auto ws = tiny_window_set(8, 30);
    auto p = tiny_attn_params(8, 2, 2, 40);
    out.push_back(
        {"attention/window-attention",
         fd_probe({ws.win_tokens, ws.cls_tokens, p.w_q, p.w_k, p.w_v, p.w_o,
                   p.b_o, p.ln_gain, p.ln_bias, p.rel_bias_table, p.cls_bias},
                  [&] {
                    auto r = w_msa_with_cls<double>(ws, p);
                    return concat<double>(
                        {reshape(r.win_tokens, {1, 16, 8}), r.cls_tokens}, 1);
                  })});
  }
  for (auto mode : {ClsAttnMode::global_softmax, ClsAttnMode::per_window_softmax}) {
    auto ws = tiny_window_set(8, 31);
    auto p = tiny_attn_params(8, 2, 0, 50);
    const char* name = mode == ClsAttnMode::global_softmax
                           ? "attention/cls-attention-global"
                           : "attention/cls-attention-per-window";
    out.push_back({name, fd_probe({ws.win_tokens, ws.cls_tokens, p.w_q, p.w_k,
                                   p.w_v, p.w_o, p.b_o, p.ln_gain},
                                  [&] { return cls_attention(ws, p, mode); })});
  }
  {
    Fd tok = wavy({1, 16, 8}, 0.6, 32);
    auto p = tiny_attn_params(8, 2, 0, 60);
    out.push_back({"attention/shift-attention",
                   fd_probe({tok, p.w_q, p.w_k, p.w_v, p.w_o, p.ln_gain}, [&] {
                     auto g = make_token_grid(tok, 4, 4);
                     return sw_msa(g, p, 2, 1).tokens;
                   })});
  }
}

inline void probes_scffn(std::vector<GradProbe>& out) {
  {
    auto p = tiny_ffn_params(FfnKind::ffn, 6, 2, 0, 70);
    Fd tok = wavy({2, 4, 6}, 0.6, 33);
    out.push_back(
        {"scffn/ffn",
         fd_probe({tok, p.ln_gain, p.ln_bias, p.lin1_w, p.lin1_b, p.proj_w,
                   p.proj_b},
                  [&] { return scffn_forward(tok, p, "embed"); })});
  }
  {
    auto p = tiny_ffn_params(FfnKind::scffn_fused, 4, 2, 0, 80);
    Fd tok = wavy({2, 9, 4}, 0.6, 34);
    out.push_back(
        {"scffn/fused",
         fd_probe({tok, p.ln_gain, p.lin1_w, p.lin1_b, p.proj_w, p.proj_b},
                  [&] { return scffn_forward(tok, p, "embed"); })});
  }
  {
    auto p = tiny_ffn_params(FfnKind::scffn_literal, 6, 2, 4, 90);
    Fd tok = wavy({2, 4, 6}, 0.6, 35);
    out.push_back(
        {"scffn/literal",
         fd_probe({tok, p.lin1_w, p.proj_w, p.ln_tok_gain, p.ln_tok_bias,
                   p.mix_w, p.mix_b},
                  [&] { return scffn_forward(tok, p, "cls"); })});
  }
}

inline void probes_fim(std::vector<GradProbe>& out) {
  Fd old_cls = wavy({1, 16, 3}, 0.6, 36);
  Fd new_cls = wavy({1, 4, 5}, 0.6, 37);
  FimParams<double> p{wavy({8, 5}, 0.4, 38)};
  out.push_back({"fim/fuse", fd_probe({old_cls, new_cls, p.proj_w}, [&] {
                   return fim_fuse(old_cls, new_cls, p);
                 })});
}

inline void probes_model(std::vector<GradProbe>& out) {
  ModelConfig cfg = preset("tt-nano");
  TtModel<double> m = build<double>(cfg, 3);
  Fd img = wavy({1, 3, 32, 32}, 0.5, 39);
  const std::vector<std::string> picked = {
      "stem.conv.w",           "stage0.cls_init",
      "stage0.block0.wmsa.wq", "stage0.block0.ffn.lin1.w",
      "stage1.fim.proj",       "stage1.block0.cls.wo",
      "head.ln.g",             "head.lin.w"};
  std::vector<Fd> inputs = {img};
  for (const auto& name : picked) inputs.push_back(m.param(name));
  out.push_back({"model/end-to-end", fd_probe(
                                         inputs, [&] { return forward(m, img); },
                                         2)});
}

}  // namespace graddetail

// Runs the probe families; `module` restricts to one family ("" = all).
inline GradReport run_gradcheck(const std::string& module = "") {
  bool known = module.empty();
  for (const auto& name : gradcheck_modules()) known = known || name == module;
  if (!known) {
    std::string valid;
    for (const auto& n : gradcheck_modules())
      valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown gradcheck module '" + module +
                      "'; valid modules: " + valid);
  }
  GradReport report;
  auto want = [&](const char* name) { return module.empty() || module == name; };
  if (want("core")) graddetail::probes_core(report.probes);
  if (want("geometry")) graddetail::probes_geometry(report.probes);
  if (want("attention")) graddetail::probes_attention(report.probes);
  if (want("scffn")) graddetail::probes_scffn(report.probes);
  if (want("fim")) graddetail::probes_fim(report.probes);
  if (want("model")) graddetail::probes_model(report.probes);
  for (const auto& p : report.probes)
    report.worst = std::max(report.worst, p.max_rel_err);
  return report;
}

}  // namespace tt
