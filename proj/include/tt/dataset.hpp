// Toy classification datasets: a deterministic synthetic generator used by
// the tests and training smoke runs, and a folder loader for real PPM/PGM
// files laid out as <root>/<class-name>/<image>.
//
// The synthetic images are oriented sinusoidal gratings.  Each class owns an
// orientation, a spatial frequency, and a mild channel tint; each image adds
// a small random phase offset, a DC shift, and per-pixel noise.  The phase
// jitter is kept small on purpose: the per-class mean image then retains the
// grating (rather than averaging to flat gray), which keeps the classes
// separable by construction and easy to sanity-check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tt/errors.hpp"
#include "tt/image_io.hpp"
#include "tt/tensor.hpp"

namespace tt {

template <typename T>
struct Dataset {
  Tensor<T> images;        // [n, 3, s, s], values in [0, 1]
  std::vector<int> labels; // one class id per image, < num_classes
  int num_classes = 0;
  std::string split = "train";

  int count() const { return images.dim(0); }
  int side() const { return images.dim(2); }
};

// Generates n images of num_classes grating classes at size x size pixels.
// Labels are assigned round-robin, so class counts differ by at most one.
// The same seed yields a bitwise-identical dataset; every image consumes a
// fixed number of random draws, so images are independent of each other.
template <typename T = double>
Dataset<T> synth_dataset(int n, int num_classes, int size, std::uint64_t seed) {
  if (n < 1 || num_classes < 2 || size < 2)
    throw ContractError("synth_dataset: need n >= 1, classes >= 2, size >= 2");
  Dataset<T> ds;
  ds.num_classes = num_classes;
  ds.labels.resize(static_cast<size_t>(n));
  ds.images = Tensor<T>::zeros({n, 3, size, size});
  auto& d = ds.images.data_mut();
  RandomStream rs(seed);
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const int c = i % num_classes;
    ds.labels[static_cast<size_t>(i)] = c;
    const double theta = pi * (c + 0.5) / num_classes;
    const double omega = 2.0 * pi * (1.5 + 1.1 * c) / size;
    const double phase = (rs.uniform() - 0.5) * 1.0;
    const double shift = (rs.uniform() - 0.5) * 0.08;
    for (int ch = 0; ch < 3; ++ch) {
      const double amp = 0.28 + 0.06 * std::cos(2.0 * pi * (c + ch) / 3.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double wave =
              std::sin(omega * (x * std::cos(theta) + y * std::sin(theta)) +
                       phase);
          const double noise = (rs.uniform() - 0.5) * 0.16;
          const double v = 0.5 + shift + amp * wave + noise;
          d[((static_cast<size_t>(i) * 3 + ch) * size + y) * size + x] =
              static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
    }
  }
  return ds;
}

// Mean image [3, s, s] over all samples of one class.
template <typename T>
Tensor<T> class_mean(const Dataset<T>& ds, int cls) {
  const int s = ds.side();
  Tensor<T> mean = Tensor<T>::zeros({3, s, s});
  auto& md = mean.data_mut();
  const auto& id = ds.images.data();
  const size_t per = static_cast<size_t>(3) * s * s;
  int hits = 0;
  for (int i = 0; i < ds.count(); ++i) {
    if (ds.labels[static_cast<size_t>(i)] != cls) continue;
    ++hits;
    for (size_t k = 0; k < per; ++k) md[k] += id[static_cast<size_t>(i) * per + k];
  }
  if (hits == 0)
    throw ContractError("class_mean: no samples of class " + std::to_string(cls));
  for (auto& v : md) v /= static_cast<T>(hits);
  return mean;
}

// Copies the given rows into a batch: images [B, 3, s, s] plus labels.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> take_batch(const Dataset<T>& ds,
                                                  const std::vector<int>& rows) {
  if (rows.empty()) throw ContractError("take_batch: empty index list");
  const int s = ds.side();
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(rows.size()), 3, s, s});
  std::vector<int> labels(rows.size());
  auto& od = out.data_mut();
  const auto& id = ds.images.data();
  const size_t per = static_cast<size_t>(3) * s * s;
  for (size_t b = 0; b < rows.size(); ++b) {
    const int r = rows[b];
    if (r < 0 || r >= ds.count())
      throw ContractError("take_batch: row " + std::to_string(r) +
                          " out of range [0, " + std::to_string(ds.count()) + ")");
    std::copy_n(id.begin() + static_cast<std::ptrdiff_t>(r * per), per,
                od.begin() + static_cast<std::ptrdiff_t>(b * per));
    labels[b] = ds.labels[static_cast<size_t>(r)];
  }
  return {out, labels};
}

// Loads <root>/<class-name>/*.ppm|*.pgm.  Class ids follow the sorted order
// of the subdirectory names; files sort within each class.  All images must
// be square and share one size.
template <typename T = double>
Dataset<T> load_folder_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec))
    throw IoError("dataset root '" + root + "' is not a directory");
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw IoError("dataset root '" + root + "' has no class subdirectories");

  std::vector<Tensor<T>> imgs;
  std::vector<int> labels;
  for (size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[c])) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm"))
        files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      imgs.push_back(read_image<T>(f));
      labels.push_back(static_cast<int>(c));
    }
  }
  if (imgs.empty()) throw IoError("dataset root '" + root + "' has no images");
  const int s = imgs[0].dim(1);
  for (size_t i = 0; i < imgs.size(); ++i)
    if (imgs[i].dim(1) != s || imgs[i].dim(2) != s)
      throw IoError("dataset images disagree on size: expected " +
                    std::to_string(s) + "x" + std::to_string(s) + ", got " +
                    format_shape(imgs[i].shape()));

  Dataset<T> ds;
  ds.num_classes = static_cast<int>(class_dirs.size());
  ds.labels = std::move(labels);
  ds.images = Tensor<T>::zeros({static_cast<int>(imgs.size()), 3, s, s});
  auto& od = ds.images.data_mut();
  const size_t per = static_cast<size_t>(3) * s * s;
  for (size_t i = 0; i < imgs.size(); ++i)
    std::copy_n(imgs[i].data().begin(), per,
                od.begin() + static_cast<std::ptrdiff_t>(i * per));
  return ds;
}

}  // namespace tt
