// Decoupled-weight-decay Adam and the warmup/cosine learning-rate schedule.
//
// The update applied to every parameter element is
//
//   m <- b1 m + (1 - b1) g         v <- b2 v + (1 - b2) g^2
//   theta -= s * lr * m_hat / (sqrt(v_hat) + eps) + s * wd * theta
//
// where s is the schedule factor for the step and m_hat / v_hat carry the
// usual bias corrections.  The decay term is scaled by the schedule but NOT
// by the learning rate, so lr = 0 leaves exactly the decay drift and
// wd = 0 on top of that leaves parameters untouched.
//
// Parameters whose gradient buffer was never allocated (no backward path
// reached them this step) are treated as having zero gradient; decay and
// moment updates still run, keeping the step count meaningful for every slot.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tt/errors.hpp"
#include "tt/tensor.hpp"

namespace tt {

// The optimizer walks any named-tensor list (a model's parameter enumeration
// in practice); moments are stored by position.
template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

struct AdamwConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Schedule factor in [0, 1] for a 1-based step index: linear warmup over the
// first warmup_frac of the run, then cosine decay to zero at the final step.
inline double schedule_factor(long long step, long long total_steps,
                              double warmup_frac = 0.05) {
  if (total_steps < 1 || step < 1 || step > total_steps)
    throw ContractError("schedule_factor: need 1 <= step <= total_steps");
  if (warmup_frac < 0 || warmup_frac >= 1)
    throw ContractError("schedule_factor: warmup fraction outside [0, 1)");
  const long long warmup =
      std::max<long long>(1, std::llround(warmup_frac * total_steps));
  if (step <= warmup) return static_cast<double>(step) / warmup;
  const double progress = static_cast<double>(step - warmup) /
                          std::max<long long>(1, total_steps - warmup);
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

template <typename T>
class AdamW {
 public:
  AdamwConfig cfg;

  explicit AdamW(const NamedTensors<T>& params, AdamwConfig c = {}) : cfg(c) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, t] : params) {
      m_.emplace_back(static_cast<size_t>(t.size()), T(0));
      v_.emplace_back(static_cast<size_t>(t.size()), T(0));
    }
  }

  long long step_count() const { return step_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  // Restores saved state (step count and both moment arrays, in parameter
  // enumeration order); sizes must match the model this optimizer was built
  // for.
  void restore(long long step, std::vector<std::vector<T>> m,
               std::vector<std::vector<T>> v) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw ContractError("optimizer restore: moment count mismatch");
    for (size_t i = 0; i < m.size(); ++i)
      if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
        throw ContractError("optimizer restore: moment size mismatch at slot " +
                            std::to_string(i));
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  // One update over every parameter, scaled by the schedule factor.
  void step(NamedTensors<T>& params, double schedule = 1.0) {
    if (params.size() != m_.size())
      throw ContractError("optimizer step: list has " +
                          std::to_string(params.size()) +
                          " parameters, state has " + std::to_string(m_.size()));
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (size_t p = 0; p < m_.size(); ++p) {
      auto& t = params[p].second;
      if (static_cast<size_t>(t.size()) != m_[p].size())
        throw ContractError("optimizer step: parameter '" + params[p].first +
                            "' changed size");
      auto& data = t.data_mut();
      const std::vector<T>* g = t.grad_if();
      auto& mm = m_[p];
      auto& vv = v_[p];
      for (size_t k = 0; k < mm.size(); ++k) {
        const double gv = g ? static_cast<double>((*g)[k]) : 0.0;
        const double mk = cfg.beta1 * static_cast<double>(mm[k]) +
                          (1.0 - cfg.beta1) * gv;
        const double vk = cfg.beta2 * static_cast<double>(vv[k]) +
                          (1.0 - cfg.beta2) * gv * gv;
        mm[k] = static_cast<T>(mk);
        vv[k] = static_cast<T>(vk);
        const double adam = cfg.lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps);
        const double decay = cfg.weight_decay * static_cast<double>(data[k]);
        data[k] = static_cast<T>(static_cast<double>(data[k]) -
                                 schedule * (adam + decay));
      }
    }
  }

 private:
  long long step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace tt
