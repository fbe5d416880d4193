#pragma once

// Independent dense-attention reference with explicit loops throughout.
// Shared by the attention unit tests and the acceptance checks so both
// compare the library against the same single oracle.

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "tt/attention.hpp"

namespace tref {

using Mat = std::vector<std::vector<double>>;

inline Mat mat_from(const tt::Tensor<double>& t, int rows, int cols,
                    int row0 = 0) {
  Mat m(rows, std::vector<double>(cols));
  const auto& d = t.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m[i][j] = d[static_cast<size_t>(row0 + i) * cols + j];
  return m;
}

inline Mat ref_layernorm(const Mat& x, double eps = 1e-5) {
  Mat out(x.size(), std::vector<double>(x[0].size()));
  for (size_t i = 0; i < x.size(); ++i) {
    double mean = 0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    double var = 0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + eps);
  }
  return out;
}

inline Mat ref_matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b[0].size(); ++j)
      for (size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// Multi-head attention with per-head additive bias and mask, queries from
// x_q, keys/values from x_kv (already normalized by the caller).  bias is
// [heads][Sq][Sk] (empty for none), mask is [Sq][Sk] (empty for none).
inline Mat ref_attention(const Mat& x_q, const Mat& x_kv, const Mat& wq,
                         const Mat& wk, const Mat& wv, const Mat& wo,
                         const std::vector<double>& bo, int heads,
                         const std::vector<Mat>& bias, const Mat& mask) {
  const int sq = static_cast<int>(x_q.size());
  const int sk = static_cast<int>(x_kv.size());
  const int c = static_cast<int>(x_q[0].size());
  const int d = c / heads;
  Mat q = ref_matmul(x_q, wq), k = ref_matmul(x_kv, wk),
      v = ref_matmul(x_kv, wv);
  Mat ctx(sq, std::vector<double>(c, 0.0));
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < sq; ++i) {
      std::vector<double> logit(sk);
      for (int j = 0; j < sk; ++j) {
        double dot = 0;
        for (int e = 0; e < d; ++e) dot += q[i][h * d + e] * k[j][h * d + e];
        logit[j] = dot / std::sqrt(static_cast<double>(d));
        if (!bias.empty()) logit[j] += bias[static_cast<size_t>(h)][i][j];
        if (!mask.empty()) logit[j] += mask[i][j];
      }
      double mx = logit[0];
      for (double l : logit) mx = std::max(mx, l);
      double z = 0;
      for (double l : logit) z += std::exp(l - mx);
      for (int j = 0; j < sk; ++j) {
        const double a = std::exp(logit[j] - mx) / z;
        for (int e = 0; e < d; ++e) ctx[i][h * d + e] += a * v[j][h * d + e];
      }
    }
  }
  Mat out = ref_matmul(ctx, wo);
  for (int i = 0; i < sq; ++i)
    for (int j = 0; j < c; ++j) out[i][j] += bo[j];
  return out;
}

// Per-head bias matrix for a [cls, tokens] window sequence, built directly
// from relative offsets (independent of the library's gather-based path).
inline std::vector<Mat> ref_window_bias(const tt::Tensor<double>& table,
                                        const tt::Tensor<double>& cls_bias,
                                        int w, int heads) {
  const int m = w * w, span = 2 * w - 1;
  std::vector<Mat> bias(static_cast<size_t>(heads),
                        Mat(m + 1, std::vector<double>(m + 1)));
  for (int h = 0; h < heads; ++h) {
    bias[h][0][0] = cls_bias.at({2, h});
    for (int k = 1; k <= m; ++k) bias[h][0][k] = cls_bias.at({0, h});
    for (int q = 1; q <= m; ++q) bias[h][q][0] = cls_bias.at({1, h});
    for (int q = 0; q < m; ++q)
      for (int k = 0; k < m; ++k) {
        const int dy = q / w - k / w + w - 1, dx = q % w - k % w + w - 1;
        bias[h][q + 1][k + 1] = table.at({dy * span + dx, h});
      }
  }
  return bias;
}

inline tt::AttnParams<double> random_params(int c, int heads,
                                            tt::RandomStream& rs, int w = 0) {
  tt::AttnParams<double> p;
  p.heads = heads;
  p.w_q = tt::Tensor<double>({c, c});
  p.w_k = tt::Tensor<double>({c, c});
  p.w_v = tt::Tensor<double>({c, c});
  p.w_o = tt::Tensor<double>({c, c});
  p.b_o = tt::Tensor<double>({c});
  tut::fill_uniform(p.w_q, rs, -0.5, 0.5);
  tut::fill_uniform(p.w_k, rs, -0.5, 0.5);
  tut::fill_uniform(p.w_v, rs, -0.5, 0.5);
  tut::fill_uniform(p.w_o, rs, -0.5, 0.5);
  tut::fill_uniform(p.b_o, rs, -0.5, 0.5);
  p.ln_gain = tt::Tensor<double>::ones({c});
  p.ln_bias = tt::Tensor<double>::zeros({c});
  if (w > 0) {
    const int span = 2 * w - 1;
    p.rel_bias_table = tt::Tensor<double>({span * span, heads});
    p.cls_bias = tt::Tensor<double>({3, heads});
    tut::fill_uniform(p.rel_bias_table, rs, -0.5, 0.5);
    tut::fill_uniform(p.cls_bias, rs, -0.5, 0.5);
  }
  return p;
}

inline tt::WindowSet<double> random_window_set(int batch, int grid, int w,
                                               int c, tt::RandomStream& rs) {
  const int n = grid / w, t = n * n, m = w * w;
  tt::WindowSet<double> ws;
  ws.batch = batch;
  ws.num_windows = t;
  ws.window_side = w;
  ws.tokens_per_window = m;
  ws.dim = c;
  ws.win_tokens = tt::Tensor<double>({batch * t, m, c});
  ws.cls_tokens = tt::Tensor<double>({batch, t, c});
  tut::fill_uniform(ws.win_tokens, rs);
  tut::fill_uniform(ws.cls_tokens, rs);
  return ws;
}

}  // namespace tref
