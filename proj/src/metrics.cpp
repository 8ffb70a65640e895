#include "macdiff/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace macdiff {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;

CMap emap(const Mat& m) { return CMap(m.d.data(), m.rows, m.cols); }

}  // namespace

double mpjpe(const SkeletonSequence& pred, const SkeletonSequence& target,
             const std::vector<std::uint8_t>* region) {
  if (pred.frames != target.frames || pred.joints != target.joints)
    throw ShapeError("mpjpe: sequence shapes differ");
  if (region && region->size() != static_cast<std::size_t>(pred.frames) * pred.joints)
    throw ShapeError("mpjpe: region mask shape mismatch");
  double acc = 0;
  long count = 0;
  for (int t = 0; t < pred.frames; ++t) {
    for (int v = 0; v < pred.joints; ++v) {
      if (region && !(*region)[static_cast<std::size_t>(t) * pred.joints + v]) continue;
      double sq = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(pred.at(t, v, c)) - target.at(t, v, c);
        sq += d * d;
      }
      acc += std::sqrt(sq);
      ++count;
    }
  }
  if (count == 0) throw ValueError("mpjpe: empty region");
  return acc / static_cast<double>(count);
}

double fid(const Mat& real, const Mat& gen) {
  if (real.cols != gen.cols) throw ShapeError("fid: feature dimensions differ");
  const int c = real.cols;
  if (real.rows < c + 1 || gen.rows < c + 1)
    throw ValueError("fid: need at least C+1 samples per set");

  auto moments = [&](const Mat& m, Eigen::VectorXd& mu, EMat& sigma) {
    const auto x = emap(m);
    mu = x.colwise().mean();
    EMat centered = x.rowwise() - mu.transpose();
    sigma = centered.transpose() * centered / static_cast<double>(m.rows - 1);
    sigma += 1e-6 * EMat::Identity(c, c);
  };
  Eigen::VectorXd mu_r, mu_g;
  EMat sig_r, sig_g;
  moments(real, mu_r, sig_r);
  moments(gen, mu_g, sig_g);

  // tr sqrt(Sr Sg) = tr sqrt(Sr^{1/2} Sg Sr^{1/2}), computed symmetrically
  Eigen::SelfAdjointEigenSolver<EMat> es_r(sig_r);
  if (es_r.info() != Eigen::Success) throw NumericError("fid: eigendecomposition failed");
  EMat sqrt_r = es_r.operatorSqrt();
  EMat inner = sqrt_r * sig_g * sqrt_r;
  Eigen::SelfAdjointEigenSolver<EMat> es_i(inner);
  if (es_i.info() != Eigen::Success) throw NumericError("fid: eigendecomposition failed");
  double tr_sqrt = 0;
  for (int i = 0; i < c; ++i) tr_sqrt += std::sqrt(std::max(0.0, es_i.eigenvalues()[i]));

  const double mean_term = (mu_r - mu_g).squaredNorm();
  const double cov_term = sig_r.trace() + sig_g.trace() - 2.0 * tr_sqrt;
  return mean_term + cov_term;
}

double kid(const Mat& real, const Mat& gen) {
  if (real.cols != gen.cols) throw ShapeError("kid: feature dimensions differ");
  const int n = real.rows, m = gen.rows;
  if (n < 2 || m < 2) throw ValueError("kid: need at least 2 samples per set");
  const double c = static_cast<double>(real.cols);
  auto kernel = [c](const double* a, const double* b, int dim) {
    double dot = 0;
    for (int i = 0; i < dim; ++i) dot += a[i] * b[i];
    const double v = dot / c + 1.0;
    return v * v * v;
  };
  double kxx = 0, kyy = 0, kxy = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) kxx += kernel(&real.at(i, 0), &real.at(j, 0), real.cols);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) kyy += kernel(&gen.at(i, 0), &gen.at(j, 0), gen.cols);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) kxy += kernel(&real.at(i, 0), &gen.at(j, 0), real.cols);
  return kxx / (static_cast<double>(n) * (n - 1)) + kyy / (static_cast<double>(m) * (m - 1)) -
         2.0 * kxy / (static_cast<double>(n) * m);
}

double diversity(const Mat& gen, int pairs, Rng& rng) {
  if (gen.rows < 2) throw ValueError("diversity: need at least 2 samples");
  if (pairs < 1) throw ValueError("diversity: pairs must be >= 1");
  double acc = 0;
  for (int k = 0; k < pairs; ++k) {
    const int i = static_cast<int>(rng.uniform_int(gen.rows));
    int j = static_cast<int>(rng.uniform_int(gen.rows - 1));
    if (j >= i) ++j;
    double sq = 0;
    for (int c = 0; c < gen.cols; ++c) {
      const double d = gen.at(i, c) - gen.at(j, c);
      sq += d * d;
    }
    acc += std::sqrt(sq);
  }
  return acc / pairs;
}

namespace {

double sq_dist(const Mat& a, int i, const Mat& b, int j) {
  double sq = 0;
  for (int c = 0; c < a.cols; ++c) {
    const double d = a.at(i, c) - b.at(j, c);
    sq += d * d;
  }
  return sq;
}

// squared distance to the k-th nearest neighbor within the same set
std::vector<double> knn_radii_sq(const Mat& x, int k) {
  const int n = x.rows;
  std::vector<double> radii(n);
  std::vector<double> dists(n - 1);
  for (int i = 0; i < n; ++i) {
    int m = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) dists[m++] = sq_dist(x, i, x, j);
    std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
    radii[i] = dists[k - 1];
  }
  return radii;
}

double manifold_coverage(const Mat& points, const Mat& manifold,
                         const std::vector<double>& radii_sq) {
  int inside = 0;
  for (int i = 0; i < points.rows; ++i) {
    for (int j = 0; j < manifold.rows; ++j) {
      if (sq_dist(points, i, manifold, j) <= radii_sq[j]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / points.rows;
}

}  // namespace

std::pair<double, double> precision_recall(const Mat& real, const Mat& gen, int k) {
  if (real.cols != gen.cols) throw ShapeError("precision_recall: feature dimensions differ");
  if (k < 1) throw ValueError("precision_recall: k must be >= 1");
  if (real.rows < k + 1 || gen.rows < k + 1)
    throw ValueError("precision_recall: need at least k+1 samples per set");
  const auto real_radii = knn_radii_sq(real, k);
  const auto gen_radii = knn_radii_sq(gen, k);
  const double precision = manifold_coverage(gen, real, real_radii);
  const double recall = manifold_coverage(real, gen, gen_radii);
  return {precision, recall};
}

}  // namespace macdiff
