// Minimal binary Netpbm reader/writer so the artifact needs no external image
// decoder.  read_image accepts P6 (color) and P5 (grayscale) files with a max
// value of 255 and returns a [3, h, w] tensor scaled to [0, 1]; grayscale
// images are replicated across the three channels.  write_ppm is the inverse
// for color tensors and exists mainly so tests and dataset dumps can produce
// files the reader round-trips.
#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tt/errors.hpp"
#include "tt/tensor.hpp"

namespace tt {

namespace detail {

// Reads one whitespace-separated header token, skipping '#' comments that run
// to end-of-line (the Netpbm header grammar).
inline std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  for (;;) {
    const int c = in.get();
    if (c == EOF) {
      if (!tok.empty()) return tok;
      throw IoError(path + ": truncated header");
    }
    if (c == '#') {
      if (!tok.empty()) return tok;
      while (in.good() && in.get() != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
}

inline int pnm_int(std::istream& in, const std::string& path,
                   const char* what) {
  const std::string tok = pnm_token(in, path);
  int v = 0;
  for (char c : tok) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw IoError(path + ": non-numeric " + what + " '" + tok + "'");
    v = v * 10 + (c - '0');
    if (v > 1 << 20) throw IoError(path + ": implausible " + what);
  }
  return v;
}

}  // namespace detail

// Loads a P6/P5 image as [3, h, w] doubles in [0, 1].
template <typename T = double>
Tensor<T> read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::string magic = detail::pnm_token(in, path);
  if (magic != "P6" && magic != "P5")
    throw IoError(path + ": unsupported format '" + magic +
                  "' (expected binary P6 or P5)");
  const int w = detail::pnm_int(in, path, "width");
  const int h = detail::pnm_int(in, path, "height");
  const int maxval = detail::pnm_int(in, path, "maxval");
  if (w <= 0 || h <= 0) throw IoError(path + ": empty image");
  if (maxval <= 0 || maxval > 255)
    throw IoError(path + ": maxval " + std::to_string(maxval) +
                  " unsupported (expected 1..255)");
  // The header ends with exactly one whitespace byte before the raster.
  const int channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw IoError(path + ": truncated pixel data");

  Tensor<T> img = Tensor<T>::zeros({3, h, w});
  auto& d = img.data_mut();
  // true division, not reciprocal-multiply: b/maxval must be exact so that
  // write_ppm followed by read_image reproduces lattice values bit for bit
  const T denom = static_cast<T>(maxval);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const size_t src = (static_cast<size_t>(y) * w + x) * channels +
                           (channels == 3 ? c : 0);
        d[(static_cast<size_t>(c) * h + y) * w + x] =
            static_cast<T>(raw[src]) / denom;
      }
  return img;
}

// Writes a [3, h, w] tensor as a binary P6 file; values are clamped to [0, 1]
// and quantized to 8 bits.
template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("write_ppm: expected [3, h, w], got " +
                     format_shape(img.shape()));
  const int h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto& d = img.data();
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = static_cast<double>(d[(static_cast<size_t>(c) * h + y) * w + x]);
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        raw[(static_cast<size_t>(y) * w + x) * 3 + c] =
            static_cast<unsigned char>(v * 255.0 + 0.5);
      }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace tt
