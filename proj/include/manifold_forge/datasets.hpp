#pragma once

#include "errors.hpp"
#include "matrix.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manifold_forge {

/// Declared shape, size and value range of a dataset.
struct DatasetDescriptor {
  std::string name;
  std::size_t n = 0;
  std::vector<std::size_t> input_shape;
  double lo = 0.0;
  double hi = 1.0;
  std::optional<std::size_t> classes;

  std::size_t features() const {
    return std::accumulate(input_shape.begin(), input_shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

struct Dataset {
  DatasetDescriptor descriptor;
  Matrix x;
  /// Class labels, empty for unlabeled data.
  std::vector<std::size_t> labels;
  /// Per-sample value used to color plots: the manifold parameter or the label.
  Vector color;

  std::size_t size() const noexcept { return x.rows(); }

  /// Rows selected by index, labels and colors included.
  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.descriptor = descriptor;
    out.descriptor.n = idx.size();
    out.x = x.select_rows(idx);
    for (std::size_t i : idx) {
      if (!labels.empty()) out.labels.push_back(labels[i]);
      if (!color.empty()) out.color.push_back(color[i]);
    }
    return out;
  }
};

/// Throws DimensionError unless the data agrees with its descriptor.
inline void check_descriptor(const Dataset& d) {
  const auto& desc = d.descriptor;
  if (d.x.rows() != desc.n)
    throw DimensionError(desc.name + ": expected " + std::to_string(desc.n) + " rows, found " +
                         std::to_string(d.x.rows()));
  if (d.x.cols() != desc.features())
    throw DimensionError(desc.name + ": expected " + std::to_string(desc.features()) + " features, found " +
                         std::to_string(d.x.cols()));
  for (double v : d.x.data())
    if (!(v >= desc.lo && v <= desc.hi)) throw DimensionError(desc.name + ": value outside the declared range");
  if (desc.classes) {
    if (d.labels.size() != desc.n) throw DimensionError(desc.name + ": one label per sample required");
    for (std::size_t l : d.labels)
      if (l >= *desc.classes) throw DimensionError(desc.name + ": label out of range");
  }
}

/// S-curve: t ~ U(-3π/2, 3π/2), u ~ U(0, 1), point (sin t, 2u, sign(t)(cos t - 1)).
template <class Rng>
Dataset generate_s_curve(std::size_t n, Rng& rng) {
  if (n == 0) throw InvalidArgument("generate_s_curve: N must be at least 1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset d;
  d.descriptor = {"s-curve", n, {3}, -2.0, 2.0, std::nullopt};
  d.x = Matrix(n, 3);
  d.color.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 3.0 * std::numbers::pi * (unit(rng) - 0.5);
    const double u = unit(rng);
    const double sgn = t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
    d.x(i, 0) = std::sin(t);
    d.x(i, 1) = 2.0 * u;
    d.x(i, 2) = sgn * (std::cos(t) - 1.0);
    d.color[i] = t;
  }
  return d;
}

inline constexpr std::size_t kDigitsRows = 1797;

/// 8x8 digits: one line per image, 64 integers in [0, 16] then the label.
/// Pixels are divided by 16.
inline Dataset load_digits(const std::filesystem::path& path, std::size_t expected_rows = kDigitsRows) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  Dataset d;
  d.descriptor = {"digits", expected_rows, {1, 8, 8}, 0.0, 1.0, 10};
  Vector values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fail = [&](const std::string& what) {
      return ParseError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };
    std::vector<long> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view tok = rest.substr(0, comma);
      long v = 0;
      const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || end != tok.data() + tok.size()) throw fail("malformed field '" + std::string(tok) + "'");
      fields.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 65) throw fail("expected 65 fields, found " + std::to_string(fields.size()));
    for (std::size_t k = 0; k < 64; ++k) {
      if (fields[k] < 0 || fields[k] > 16) throw fail("pixel value out of [0, 16]");
      values.push_back(static_cast<double>(fields[k]) / 16.0);
    }
    if (fields[64] < 0 || fields[64] > 9) throw fail("label out of [0, 9]");
    d.labels.push_back(static_cast<std::size_t>(fields[64]));
    d.color.push_back(static_cast<double>(fields[64]));
  }
  const std::size_t rows = d.labels.size();
  if (rows != expected_rows)
    throw DimensionError(path.string() + ": expected " + std::to_string(expected_rows) + " rows, found " +
                         std::to_string(rows));
  d.x = Matrix(rows, 64, std::move(values));
  return d;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Uniformly random disjoint split with `n_train` training indices.
template <class Rng>
Split split(std::size_t n, std::size_t n_train, Rng& rng) {
  if (n_train < 1 || n_train >= n)
    throw InvalidArgument("split: need 1 <= N_tr < N, got N_tr = " + std::to_string(n_train) + ", N = " +
                          std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

/// Writes features, then the label if present, one sample per line.
inline void write_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t k = 0; k < d.x.cols(); ++k) out << (k ? "," : "") << d.x(i, k);
    if (!d.labels.empty()) out << ',' << d.labels[i];
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

} // namespace manifold_forge
