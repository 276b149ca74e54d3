#pragma once

#include "protoshape/geometry.hpp"
#include "protoshape/rng.hpp"
#include "protoshape/tensor.hpp"

namespace ps {

// Squared-distance nearest neighbor in B for every point of A.
// Both paths use identical per-pair arithmetic, so results agree exactly.
std::vector<double> nearest_sq_brute(const PointCloud& a, const PointCloud& b);
std::vector<double> nearest_sq_grid(const PointCloud& a, const PointCloud& b);

double chamfer(const PointCloud& a, const PointCloud& b, bool accelerated = true);

// Differentiable w.r.t. pred ([N,3] graph tensor); gt is data.
Tensor chamfer_loss(const Tensor& pred, const PointCloud& gt);

PointCloud tensor_to_cloud(const Tensor& t);
Tensor cloud_to_tensor(const PointCloud& c, bool requires_grad = false);

struct MaskSpec {
  int H = 64;
  int W = 64;
  int M = 512;             // points sampled per render
  double kernel_s = 1.0;   // Gaussian bandwidth in pixels
  double truncation = 3.0; // kernel support radius, in units of s
};

// Pick M sample indices out of n points: distinct when n >= M, otherwise
// with replacement (flagged via `with_replacement`).
std::vector<int> sample_mask_indices(int n, int M, Rng& rng, bool* with_replacement = nullptr);

// Orthographic splat: rotate, drop z, map [-0.5,0.5] to pixel centers
// [0,H-1], pixel = tanh(sum of truncated Gaussian contributions).
Tensor render_mask(const Tensor& pred, const Mat3& view, const std::vector<int>& indices,
                   const MaskSpec& spec);
std::vector<double> render_mask_values(const PointCloud& cloud, const Mat3& view,
                                       const std::vector<int>& indices, const MaskSpec& spec);

enum class BceOrientation { AsPrinted, Standard };

struct ProjectionSpec {
  MaskSpec mask;
  int V = 8;
  double eps = 1e-8;
  BceOrientation orientation = BceOrientation::AsPrinted;
};

std::vector<Mat3> random_views(int V, uint64_t seed);

// Multi-view silhouette BCE between pred (graph tensor) and gt (data),
// rendered with a shared view set and shared sampling seed.
Tensor projection_loss(const Tensor& pred, const PointCloud& gt, const std::vector<Mat3>& views,
                       const ProjectionSpec& spec, uint64_t sample_seed);
double projection_loss_value(const PointCloud& pred, const PointCloud& gt,
                             const std::vector<Mat3>& views, const ProjectionSpec& spec,
                             uint64_t sample_seed);

struct LossReport {
  double cd_sparse = 0;
  double cd_dense = 0;
  double proj_sparse = 0;
  double proj_dense = 0;
  double weight = 1;
  double total = 0;
  Tensor total_tensor;  // graph node for backward
};

// total = w * (cd_sparse + cd_dense + lambda_proj * (proj_sparse + proj_dense)).
// Sparse terms enter as constants (cell centers carry no gradient); dense
// terms are graph tensors.
LossReport total_loss(double cd_sparse, const Tensor& cd_dense, double proj_sparse,
                      const Tensor& proj_dense, double weight, double lambda_proj);

double f_score(const PointCloud& pred, const PointCloud& gt, double sigma = 0.01);

// Mean over tracks of mean consecutive-frame chamfer distance.
double consistency(const std::vector<std::vector<PointCloud>>& tracks);

}  // namespace ps
