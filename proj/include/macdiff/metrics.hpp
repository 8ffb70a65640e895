#pragma once

#include <utility>
#include <vector>

#include "macdiff/common.hpp"
#include "macdiff/mat.hpp"
#include "macdiff/skeleton.hpp"

namespace macdiff {

// Mean Euclidean distance between corresponding joints over the selected
// (frame, joint) region; region == nullptr means everything.
double mpjpe(const SkeletonSequence& pred, const SkeletonSequence& target,
             const std::vector<std::uint8_t>* region = nullptr);

// Frechet distance between Gaussian fits of two feature sets (rows =
// samples). Covariances are regularized by +1e-6 I; the matrix square root
// uses symmetric eigendecompositions of the product form.
double fid(const Mat& real, const Mat& gen);

// Unbiased MMD^2 with the polynomial kernel k(x, y) = (x.y / C + 1)^3.
double kid(const Mat& real, const Mat& gen);

// Mean Euclidean distance over `pairs` uniformly sampled index pairs (i != j).
double diversity(const Mat& gen, int pairs, Rng& rng);

// k-NN manifold precision/recall: a generated point counts as precise if it
// falls inside some real point's k-th neighbor ball; recall swaps the roles.
std::pair<double, double> precision_recall(const Mat& real, const Mat& gen, int k = 3);

}  // namespace macdiff
