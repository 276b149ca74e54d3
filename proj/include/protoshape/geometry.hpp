#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "protoshape/tensor.hpp"

namespace ps {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyOutputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Coordinates live in the unit cube [-0.5, 0.5]^3 after normalization.
struct PointCloud {
  std::vector<Vec3> points;

  int count() const { return static_cast<int>(points.size()); }
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> p) : points(std::move(p)) {}
};

struct NormalizeResult {
  PointCloud cloud;
  Vec3 center;
  double scale = 1.0;
  bool degenerate = false;  // all points coincident; scale floored
};

NormalizeResult normalize(const PointCloud& raw);
PointCloud denormalize(const PointCloud& cloud, const Vec3& center, double scale);

// Greedy max-min subset selection; ties break to the lowest index.
std::vector<int> farthest_point_sampling_indices(const PointCloud& cloud, int m, int seed_index);
PointCloud farthest_point_sampling(const PointCloud& cloud, int m, int seed_index);

struct GriddingResult {
  Tensor grid;           // [1,R,R,R] occupancy, values clamped to [0,1]
  int clamped_points = 0;  // out-of-range inputs snapped to the boundary
};

// Trilinear scatter of unit mass per point onto the R^3 lattice of cell centers.
GriddingResult gridding(const PointCloud& cloud, int R);

// Emits the center of every cell whose value exceeds theta, ordered by linear
// cell index. Throws EmptyOutputError when no cell qualifies.
PointCloud gridding_reverse(const Tensor& grid, double theta);

Vec3 cell_center(int i, int j, int k, int R);

// Trilinear interpolation of [C,R,R,R] features at query points; differentiable
// w.r.t. the feature grid (queries are data, not graph nodes).
Tensor point_feature_sampling(const Tensor& features, const PointCloud& queries);

Mat3 rotation_to_z(const Vec3& view);
Vec3 apply_rot(const Mat3& m, const Vec3& p);
Mat3 transpose(const Mat3& m);

// Z-buffer occlusion culling: keep the nearest point per occupied pixel when
// looking along `view`. Output points are a subset of the input.
PointCloud make_partial(const PointCloud& cloud, const Vec3& view, int image_res);

// PCF1 on-disk format: "PCF1", u32 count, N x 3 float32, little-endian.
void write_pcf(const std::string& path, const PointCloud& cloud);
PointCloud read_pcf(const std::string& path);

}  // namespace ps
