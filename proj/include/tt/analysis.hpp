// Exact parameter counts and analytic FLOP counts, per layer and total.
//
// The FLOP column mirrors the instrumented kernel counters one for one
// (multiply-accumulate = 2 FLOPs; softmax / layernorm / GELU / cross-entropy
// at 5 FLOPs per element; elementwise ops and reductions at 1; pure data
// movement free), so a closed-form report and a counted forward pass agree
// as exact integers.  Counts include the convolutional stem and the
// classifier head.  Dropout is costed at zero (reports describe inference).
#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tt/config.hpp"
#include "tt/model.hpp"
#include "tt/ops.hpp"
#include "tt/params.hpp"

namespace tt {

struct CostRow {
  std::string layer;
  long long params = 0;
  std::uint64_t flops = 0;
};

struct CostReport {
  ModelConfig cfg;
  int input_size = 0;  // resolution the FLOP column assumes
  int batch = 1;       // batch size the FLOP column assumes
  std::vector<CostRow> rows;
  long long total_params = 0;
  std::uint64_t total_flops = 0;
};

namespace detail {

// Group tensor names into layer rows: "stem.*" / "head.*" collapse to the
// first component, "stage<i>.block<k>.*" to the first three, every other
// stage entry ("down", "cls_init", "fim") to the first two.
inline std::string layer_of(const std::string& name) {
  const size_t d1 = name.find('.');
  if (d1 == std::string::npos) return name;
  const std::string head = name.substr(0, d1);
  if (head.rfind("stage", 0) != 0) return head;
  const size_t d2 = name.find('.', d1 + 1);
  if (d2 == std::string::npos) return name;
  if (name.compare(d1 + 1, 5, "block") == 0) {
    const size_t d3 = name.find('.', d2 + 1);
    return d3 == std::string::npos ? name : name.substr(0, d3);
  }
  return name.substr(0, d2);
}

inline std::uint64_t u64(long long v) { return static_cast<std::uint64_t>(v); }

inline std::uint64_t f_matmul(long long nb, long long m, long long n, long long k) {
  return 2ull * u64(nb) * u64(m) * u64(n) * u64(k);
}

// one conv2d: `cells` output positions, `kdim` = Cin*kh*kw accumulations each
inline std::uint64_t f_conv(long long b, long long cout, long long kdim, long long cells,
                            bool bias) {
  return u64(b) * (2ull * u64(cout) * u64(kdim) * u64(cells) +
                   (bias ? u64(cout) * u64(cells) : 0ull));
}

inline std::uint64_t f_elem(long long n) { return u64(n); }
inline std::uint64_t f_five(long long n) { return 5ull * u64(n); }

// Window attention over [cls, tokens]: bt = batch*windows sequences of
// m1 = M+1 rows at width c, h heads.  Includes the position-bias add.
inline std::uint64_t flops_window_attention(long long bt, long long m1, long long c,
                                            long long h) {
  std::uint64_t f = 0;
  f += f_five(bt * m1 * c);              // pre-norm
  f += 3 * f_matmul(bt, m1, c, c);       // q, k, v projections
  f += f_matmul(bt * h, m1, m1, c / h);  // q k^T
  f += f_elem(bt * h * m1 * m1);         // 1/sqrt(d)
  f += f_elem(bt * h * m1 * m1);         // + position bias
  f += f_five(bt * h * m1 * m1);         // softmax
  f += f_matmul(bt * h, m1, c / h, m1);  // attn · v
  f += f_matmul(bt, m1, c, c);           // output projection
  f += f_elem(bt * m1 * c);              //   + bias
  f += f_elem(bt * m1 * c);              // residual
  return f;
}

// CLS cross-attention: b batches, t CLS queries against t*m keys, width c.
inline std::uint64_t flops_cls_attention(long long b, long long t, long long m,
                                         long long c, long long h, bool per_window) {
  std::uint64_t f = 0;
  f += f_five(b * t * c);                    // query pre-norm
  f += f_five(b * t * m * c);                // key/value pre-norm
  f += f_matmul(b, t, c, c);                 // q projection
  f += 2 * f_matmul(b, t * m, c, c);         // k, v projections
  f += f_matmul(b * h, t, t * m, c / h);     // q k^T
  f += f_elem(b * h * t * t * m);            // 1/sqrt(d)
  f += f_five(b * h * t * t * m);            // softmax
  if (per_window) f += f_elem(b * h * t * t * m);  // fold in the 1/T average
  f += f_matmul(b * h, t, c / h, t * m);     // attn · v
  f += f_matmul(b, t, c, c);                 // output projection
  f += f_elem(b * t * c);                    //   + bias
  f += f_elem(b * t * c);                    // residual
  return f;
}

// Shifted-window attention over the embedded tokens (the ablation path):
// bt = batch*windows, m = tokens per window.  No position bias; the seam
// mask is added whenever the roll offset is nonzero.
inline std::uint64_t flops_shift_attention(long long bt, long long m, long long c,
                                           long long h, bool masked) {
  std::uint64_t f = 0;
  f += f_five(bt * m * c);
  f += 3 * f_matmul(bt, m, c, c);
  f += f_matmul(bt * h, m, m, c / h);
  f += f_elem(bt * h * m * m);
  if (masked) f += f_elem(bt * h * m * m);
  f += f_five(bt * h * m * m);
  f += f_matmul(bt * h, m, c / h, m);
  f += f_matmul(bt, m, c, c);
  f += f_elem(bt * m * c);
  f += f_elem(bt * m * c);
  return f;
}

// One feedforward application on [b, n, c] with expansion ratio r.
inline std::uint64_t flops_ffn(FfnKind kind, long long b, long long n, long long c,
                               long long r) {
  const long long rc = r * c;
  std::uint64_t f = 0;
  f += f_five(b * n * c);      // pre-norm
  f += f_matmul(b, n, rc, c);  // expansion
  f += f_elem(b * n * rc);     //   + bias
  f += f_five(b * n * rc);     // gelu
  if (kind == FfnKind::scffn_fused) {
    f += f_five(b * n * rc);        // affine-free norm on the grid
    f += f_conv(b, c, rc, n, true); // 1x1 projection back to c
    f += f_elem(b * n * c);         // residual
    return f;
  }
  f += f_matmul(b, n, c, rc);  // projection back to c
  f += f_elem(b * n * c);      //   + bias
  f += f_elem(b * n * c);      // residual
  if (kind == FfnKind::scffn_literal) {
    f += f_five(b * c * n);      // token-axis norm
    f += f_matmul(b, c, n, n);   // mixer
    f += f_elem(b * c * n);      //   + bias
    f += f_elem(b * c * n);      // residual
  }
  return f;
}

inline std::uint64_t flops_patch_embed(long long b, long long in, long long patch,
                                       long long c, long long g1) {
  const long long raw = in / patch;  // conv output side at k = s = patch
  std::uint64_t f = f_conv(b, c, 3 * patch * patch, raw * raw, true);
  if (raw != g1)
    f += u64(b) * u64(c) *
         adaptive_pool_cells(static_cast<int>(raw), static_cast<int>(raw),
                             static_cast<int>(g1), static_cast<int>(g1));
  return f;
}

inline std::uint64_t flops_downsample(long long b, long long g_prev, long long c_prev,
                                      long long c, long long g) {
  const long long o = (g_prev - 1) / 2 + 1;  // 3x3 stride-2 pad-1 output side
  std::uint64_t f = f_conv(b, c, c_prev * 9, o * o, true);
  if (o != g)
    f += u64(b) * u64(c) *
         adaptive_pool_cells(static_cast<int>(o), static_cast<int>(o),
                             static_cast<int>(g), static_cast<int>(g));
  f += f_five(b * g * g * c);  // norm
  return f;
}

inline std::uint64_t flops_fim(long long b, long long t_prev, long long c_prev,
                               long long t_new, long long c_new) {
  const int sp = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t_prev))));
  const int sn = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t_new))));
  return u64(b) * u64(c_prev) * adaptive_pool_cells(sp, sp, sn, sn) +
         f_matmul(b, t_new, c_new, c_prev + c_new);
}

inline std::uint64_t flops_head(long long b, long long n, long long c, long long k) {
  return f_five(b * n * c)     // norm
         + f_elem(b * n * c)   // token-axis sum
         + f_elem(b * c)       //   / n
         + f_matmul(1, b, k, c)  // classifier
         + f_elem(b * k);        //   + bias
}

}  // namespace detail

// Builds the full report: exact parameter counts from the enumeration and
// the analytic FLOP count of one forward pass of `batch` images at
// `input_size` square.  Counting the same configuration twice is identical.
inline CostReport cost_report(const ModelConfig& cfg, int input_size, int batch = 1) {
  validate(cfg);
  if (input_size / cfg.patch < cfg.stages[0].grid_side)
    throw ConfigError("input " + std::to_string(input_size) + " with patch " +
                      std::to_string(cfg.patch) +
                      " cannot reach the stage-1 grid " +
                      std::to_string(cfg.stages[0].grid_side));
  if (batch < 1) throw ConfigError("batch must be positive");

  CostReport rep;
  rep.cfg = cfg;
  rep.input_size = input_size;
  rep.batch = batch;

  std::unordered_map<std::string, size_t> idx;
  auto row = [&](const std::string& layer) -> CostRow& {
    auto it = idx.find(layer);
    if (it != idx.end()) return rep.rows[it->second];
    idx.emplace(layer, rep.rows.size());
    rep.rows.push_back(CostRow{layer, 0, 0});
    return rep.rows.back();
  };

  for_each_param(cfg, [&](const std::string& name, const Shape& shape, InitKind) {
    row(detail::layer_of(name)).params += numel(shape);
  });

  const long long b = batch;
  row("stem").flops += detail::flops_patch_embed(b, input_size, cfg.patch,
                                                 cfg.stages[0].dim,
                                                 cfg.stages[0].grid_side);
  for (size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    const std::string sp = "stage" + std::to_string(i);
    const long long t = s.num_windows(), m = s.tokens_per_window();
    if (i > 0) {
      const auto& prev = cfg.stages[i - 1];
      row(sp + ".down").flops += detail::flops_downsample(
          b, prev.grid_side, prev.dim, s.dim, s.grid_side);
      if (cfg.use_fim)
        row(sp + ".fim").flops += detail::flops_fim(
            b, prev.num_windows(), prev.dim, t, s.dim);
    }
    for (int k = 0; k < s.depth; ++k) {
      const std::string bp = sp + ".block" + std::to_string(k);
      row(bp + ".wmsa").flops +=
          detail::flops_window_attention(b * t, m + 1, s.dim, s.heads);
      if (cfg.use_cls_attention) {
        row(bp + ".cls").flops += detail::flops_cls_attention(
            b, t, m, s.dim, s.heads,
            cfg.cls_mode == ClsAttnMode::per_window_softmax);
      } else {
        row(bp + ".shift").flops += detail::flops_shift_attention(
            b * t, m, s.dim, s.heads, s.window_side / 2 != 0);
      }
      row(bp + ".ffn").flops +=
          detail::flops_ffn(cfg.ffn_embed, b * t, m, s.dim, cfg.ffn_ratio);
      const std::string cls_row = cfg.ffn_cls != cfg.ffn_embed ? ".ffn_cls" : ".ffn";
      row(bp + cls_row).flops +=
          detail::flops_ffn(cfg.ffn_cls, b, t, s.dim, cfg.ffn_ratio);
    }
  }
  const auto& last = cfg.stages.back();
  const long long n_pool = cfg.head_cls_mean
                               ? last.num_windows()
                               : static_cast<long long>(last.grid_side) * last.grid_side;
  row("head").flops += detail::flops_head(b, n_pool, last.dim, cfg.num_classes);

  for (const auto& r : rep.rows) {
    rep.total_params += r.params;
    rep.total_flops += r.flops;
  }
  return rep;
}

inline CostReport count_flops(const ModelConfig& cfg, int input_size, int batch = 1) {
  return cost_report(cfg, input_size, batch);
}

template <typename T>
CostReport count_params(const TtModel<T>& m) {
  return cost_report(m.cfg, m.cfg.input_size, 1);
}

inline CostReport count_params(const ModelConfig& cfg) {
  return cost_report(cfg, cfg.input_size, 1);
}

// Aligned text table: layer, params, flops, with the conventions noted.
inline std::string format_report(const CostReport& rep) {
  size_t name_w = 5;
  for (const auto& r : rep.rows) name_w = std::max(name_w, r.layer.size());
  std::ostringstream os;
  os << "cost report: " << rep.batch << " x " << rep.input_size << "x"
     << rep.input_size << " input\n";
  os << "conventions: MAC = 2 FLOPs; softmax/layernorm/gelu = 5 FLOPs per "
        "element; data movement free\n";
  os << "counts include the stem and the classifier head\n\n";
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer"
     << std::right << std::setw(14) << "params" << std::setw(18) << "flops" << '\n';
  for (const auto& r : rep.rows)
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.layer
       << std::right << std::setw(14) << r.params << std::setw(18) << r.flops << '\n';
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "total"
     << std::right << std::setw(14) << rep.total_params << std::setw(18)
     << rep.total_flops << '\n';
  return os.str();
}

inline std::string format_report_csv(const CostReport& rep) {
  std::ostringstream os;
  os << "layer,params,flops\n";
  for (const auto& r : rep.rows)
    os << r.layer << ',' << r.params << ',' << r.flops << '\n';
  os << "total," << rep.total_params << ',' << rep.total_flops << '\n';
  return os.str();
}

}  // namespace tt
