#pragma once

#include <algorithm>
#include <vector>

#include "macdiff/common.hpp"

namespace macdiff {

// Dense row-major double matrix. The whole numeric stack (autograd, model,
// metrics) runs on this one type; rank-1 tensors are 1xN.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0)
      : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, fill) {
    if (r < 0 || c < 0) throw ShapeError("Mat: negative dimension");
  }

  static Mat row(std::vector<double> values) {
    Mat m;
    m.rows = 1;
    m.cols = static_cast<int>(values.size());
    m.d = std::move(values);
    return m;
  }

  double& at(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
  const double& at(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return d.size(); }
  bool empty() const { return d.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(d.begin(), d.end(), v); }

  bool finite() const { return all_finite(d); }

  // snap every entry to the nearest float32 value; parameters live on this
  // grid so float32 checkpoints round-trip bit-exactly
  void quantize_f32() {
    for (auto& x : d) x = static_cast<double>(static_cast<float>(x));
  }
};

inline Mat randn(int r, int c, double stddev, Rng& rng) {
  Mat m(r, c);
  for (auto& x : m.d) x = stddev * rng.normal();
  return m;
}

}  // namespace macdiff
