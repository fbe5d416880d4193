// Toy training loop: uniform batch sampling, cross-entropy on the taped
// forward pass, one AdamW step per iteration under the warmup/cosine
// schedule.  Bitwise reproducible for a fixed (model seed, dataset, train
// seed) triple because every random draw comes from one deterministic stream.
//
// Divergence handling: every op aborts on non-finite values, so a blown-up
// run surfaces as a NumericError mid-forward.  The loop keeps a snapshot of
// the parameters that produced the last finite loss; on divergence it
// restores that snapshot, optionally writes it out as a checkpoint, and
// rethrows with the failing step attached.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "tt/checkpoint.hpp"
#include "tt/dataset.hpp"
#include "tt/errors.hpp"
#include "tt/model.hpp"
#include "tt/optimizer.hpp"

namespace tt {

struct TrainConfig {
  long long steps = 200;
  int batch = 16;
  double lr = 1e-4;
  double weight_decay = 0.05;
  double warmup_frac = 0.05;
  std::uint64_t seed = 0;
  std::string metrics_path;     // append per-step CSV rows here when set
  std::string rescue_ckpt_path; // where the last-good weights go on divergence
};

struct MetricsRow {
  long long step = 0;
  double loss = 0;
  double acc = 0;
  double lr = 0;  // effective rate: base lr times the schedule factor
};

inline std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "step,loss,acc,lr\n";
  os << std::setprecision(17);
  for (const auto& r : rows)
    os << r.step << ',' << r.loss << ',' << r.acc << ',' << r.lr << '\n';
  return os.str();
}

namespace detail {

template <typename T>
std::vector<std::vector<T>> snapshot_params(const TtModel<T>& m) {
  std::vector<std::vector<T>> snap;
  snap.reserve(m.named.size());
  for (const auto& [name, t] : m.named) snap.push_back(t.data());
  return snap;
}

template <typename T>
void restore_params(TtModel<T>& m, const std::vector<std::vector<T>>& snap) {
  for (size_t p = 0; p < snap.size(); ++p)
    m.named[p].second.data_mut() = snap[p];
}

}  // namespace detail

// Trains in place using the caller's optimizer (so its moments can be saved
// afterwards) and returns one metrics row per completed step.
template <typename T>
std::vector<MetricsRow> train(TtModel<T>& m, const Dataset<T>& ds,
                              const TrainConfig& tc, AdamW<T>& opt) {
  if (ds.num_classes != m.cfg.num_classes)
    throw ContractError("train: dataset has " + std::to_string(ds.num_classes) +
                        " classes, model expects " +
                        std::to_string(m.cfg.num_classes));
  if (ds.side() != m.cfg.input_size)
    throw ContractError("train: dataset images are " +
                        std::to_string(ds.side()) + "px, model expects " +
                        std::to_string(m.cfg.input_size));
  if (tc.steps < 1 || tc.batch < 1)
    throw ContractError("train: need steps >= 1 and batch >= 1");
  opt.cfg.lr = tc.lr;
  opt.cfg.weight_decay = tc.weight_decay;

  std::ofstream log;
  if (!tc.metrics_path.empty()) {
    log.open(tc.metrics_path);
    if (!log) throw IoError("cannot write metrics log '" + tc.metrics_path + "'");
    log << "step,loss,acc,lr\n" << std::setprecision(17);
  }

  for (auto& [name, t] : m.named) t.set_requires_grad(true);
  RandomStream picks(tc.seed);
  DropState<T> drop{static_cast<T>(m.cfg.drop_attn),
                    static_cast<T>(m.cfg.drop_proj), true, tc.seed ^ 0x5eedull};
  const bool use_drop = m.cfg.drop_attn > 0 || m.cfg.drop_proj > 0;

  std::vector<MetricsRow> rows;
  rows.reserve(static_cast<size_t>(tc.steps));
  const int n = ds.count();
  // Parameters at the most recent finite loss.  On divergence the model is
  // rolled back to this state, so the weights left in memory (and in the
  // rescue checkpoint) are ones a forward pass demonstrably survives.  The
  // rescue file deliberately omits optimizer moments: after a blow-up they
  // are suspect, and resuming from them would re-poison the weights.
  std::vector<std::vector<T>> last_good;
  auto bail = [&](long long step, const std::string& why) {
    if (!last_good.empty()) detail::restore_params(m, last_good);
    if (!tc.rescue_ckpt_path.empty())
      save_checkpoint(m, tc.rescue_ckpt_path);
    return NumericError("training diverged at step " + std::to_string(step) +
                        " (" + why + "); last finite-loss weights " +
                        (tc.rescue_ckpt_path.empty()
                             ? "restored in memory"
                             : "saved to '" + tc.rescue_ckpt_path + "'"));
  };
  for (long long step = 1; step <= tc.steps; ++step) {
    std::vector<int> idx(static_cast<size_t>(tc.batch));
    for (auto& i : idx) i = static_cast<int>(picks.bits() % static_cast<std::uint64_t>(n));
    auto [images, labels] = take_batch(ds, idx);

    double loss_v = 0, acc = 0;
    try {
      Tape<T> tape;
      typename Tape<T>::Scope scope(tape);
      for (auto& [name, t] : m.named) t.zero_grad();
      Tensor<T> logits =
          forward<T>(m, images, nullptr, use_drop ? &drop : nullptr);
      Tensor<T> loss = cross_entropy_mean(logits, labels);
      loss_v = static_cast<double>(scalar_value(loss));
      if (!std::isfinite(loss_v)) throw NumericError("loss is non-finite");
      last_good = detail::snapshot_params(m);
      const auto pred = argmax_last(logits);
      int hit = 0;
      for (size_t j = 0; j < pred.size(); ++j) hit += pred[j] == labels[j];
      acc = static_cast<double>(hit) / static_cast<double>(pred.size());
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw bail(step, e.what());
    }

    const double factor = schedule_factor(step, tc.steps, tc.warmup_frac);
    opt.step(m.named, factor);
    // op outputs are guarded during the forward pass, but a pathological
    // update can push the parameters themselves out of range unseen
    for (const auto& [name, t] : m.named)
      for (T v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
          throw bail(step, "parameter '" + name +
                               "' became non-finite after the update");
    rows.push_back({step, loss_v, acc, tc.lr * factor});
    if (log.is_open()) {
      const auto& r = rows.back();
      log << r.step << ',' << r.loss << ',' << r.acc << ',' << r.lr << '\n';
      log.flush();
    }
  }
  return rows;
}

// Convenience wrapper that owns a fresh optimizer for the run.
template <typename T>
std::vector<MetricsRow> train(TtModel<T>& m, const Dataset<T>& ds,
                              const TrainConfig& tc) {
  AdamW<T> opt(m.named, AdamwConfig{tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay});
  return train(m, ds, tc, opt);
}

}  // namespace tt
