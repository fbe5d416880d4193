#pragma once

// Shared helpers for the unit tests: deterministic random fills, relative
// error, and a central finite-difference gradient checker.  The checker is
// written against the public op API only, so it stays independent of the
// backward implementations it verifies.

#include <cmath>
#include <functional>
#include <vector>

#include "tt/ops.hpp"
#include "tt/tensor.hpp"

namespace tut {

inline void fill_uniform(tt::Tensor<double>& t, tt::RandomStream& rs, double lo = -1.0,
                         double hi = 1.0) {
  for (auto& v : t.data_mut()) v = lo + (hi - lo) * rs.uniform();
}

inline void fill_uniform(tt::Tensor<float>& t, tt::RandomStream& rs, double lo = -1.0,
                         double hi = 1.0) {
  for (auto& v : t.data_mut()) v = static_cast<float>(lo + (hi - lo) * rs.uniform());
}

template <typename T>
double rel_err(T a, T b) {
  const double da = static_cast<double>(a), db = static_cast<double>(b);
  const double scale = std::max({1.0, std::fabs(da), std::fabs(db)});
  return std::fabs(da - db) / scale;
}

template <typename T>
double max_rel_err(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

// Checks d(loss)/d(input) for every coordinate of every input against central
// finite differences.  `forward` must rebuild the graph from the inputs on
// each call and return a scalar loss tensor.  Returns the max relative error.
inline double grad_check(std::vector<tt::Tensor<double>> inputs,
                         const std::function<tt::Tensor<double>()>& forward,
                         double h = 1e-5) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  double analytic_loss = 0;
  {
    tt::Tape<double> tape;
    tt::Tape<double>::Scope scope(tape);
    tt::Tensor<double> loss = forward();
    analytic_loss = tt::scalar_value(loss);
    tape.backward(loss);
  }
  (void)analytic_loss;
  double worst = 0;
  for (auto& in : inputs) {
    const auto& g = in.grad_ref();
    auto& data = in.data_mut();
    for (size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = tt::scalar_value(forward());
      data[i] = keep - h;
      const double dn = tt::scalar_value(forward());
      data[i] = keep;
      const double numeric = (up - dn) / (2.0 * h);
      worst = std::max(worst, rel_err(g[i], numeric));
    }
  }
  return worst;
}

// Scalar loss that weights every output coordinate differently, so
// cancellation cannot hide a wrong gradient entry.
inline tt::Tensor<double> spread_loss(const tt::Tensor<double>& out) {
  tt::Tensor<double> w(out.shape());
  auto& wd = w.data_mut();
  for (size_t i = 0; i < wd.size(); ++i)
    wd[i] = 0.25 + 0.05 * static_cast<double>(i % 17) - 0.03 * static_cast<double>(i % 5);
  return tt::sum_all(tt::mul(out, w));
}

}  // namespace tut
