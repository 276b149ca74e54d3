#pragma once

#include <vector>

#include "protoshape/geometry.hpp"
#include "protoshape/nn.hpp"
#include "protoshape/tensor.hpp"

namespace ps {

struct CompletionConfig {
  int grid_resolution = 16;
  int levels = 3;
  std::vector<int> channels = {4, 8, 16};
  int n_sparse = 128;
  int rho = 4;
  double theta = 0.3;
  // SPF occupies the shallowest `spf_levels` levels (added low-level first);
  // remaining levels fall back to a plain additive skip.
  int spf_levels = 3;
  bool use_prior = true;
  std::vector<int> mlp_hidden = {128, 64};

  int dense_count() const { return n_sparse * rho; }
  double offset_bound() const { return 2.0 / grid_resolution; }  // 2 cell widths
};

struct EncodeResult {
  std::vector<Tensor> levels;  // f^0 .. f^{L-1}
  Tensor bottleneck;           // serves as f~^{L} for the deepest SPF
};

struct ForwardResult {
  Tensor occupancy;     // [1,R,R,R] in (0,1)
  Tensor fused0;        // f~^0, sampled by the refinement MLP
  PointCloud sparse;    // exactly n_sparse points (cell centers)
  Tensor dense;         // [n_d,3] graph tensor
  PointCloud dense_cloud;
  double theta_used = 0.0;
};

struct CompletionNet {
  CompletionConfig cfg;
  Params params;

  static CompletionNet create(const CompletionConfig& cfg, uint64_t seed);

  EncodeResult encode(const PointCloud& partial) const;
  // g = u*f_l; d = down(g); m = concat(d, deeper); h = up(m); out = fuse(concat(h, g))
  Tensor spf_fuse(int level, const Tensor& f_l, const Tensor& deeper, const Tensor& u) const;
  struct DecodeResult {
    Tensor occupancy;
    Tensor fused0;
  };
  DecodeResult decode(const EncodeResult& enc, const Tensor& u) const;
  PointCloud sparse_from_grid(const Tensor& occupancy, double* theta_used = nullptr) const;
  Tensor refine_dense(const PointCloud& sparse, const Tensor& fused0,
                      const Tensor& occupancy) const;

  ForwardResult forward(const PointCloud& partial, double prior_u) const;
};

}  // namespace ps
