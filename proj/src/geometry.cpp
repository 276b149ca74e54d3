#include "protoshape/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>

namespace ps {

NormalizeResult normalize(const PointCloud& raw) {
  if (raw.count() < 1) throw ContractError("normalize: empty cloud");
  Vec3 lo = raw.points[0], hi = raw.points[0];
  for (const auto& p : raw.points)
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], p[d]);
      hi[d] = std::max(hi[d], p[d]);
    }
  NormalizeResult out;
  out.center = {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  double side = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (side < 1e-9) {
    side = 1e-9;
    out.degenerate = true;
  }
  out.scale = side;
  out.cloud.points.reserve(raw.points.size());
  for (const auto& p : raw.points)
    out.cloud.points.push_back({(p[0] - out.center[0]) / side, (p[1] - out.center[1]) / side,
                                (p[2] - out.center[2]) / side});
  return out;
}

PointCloud denormalize(const PointCloud& cloud, const Vec3& center, double scale) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const auto& p : cloud.points)
    out.points.push_back(
        {p[0] * scale + center[0], p[1] * scale + center[1], p[2] * scale + center[2]});
  return out;
}

static double sqdist(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

std::vector<int> farthest_point_sampling_indices(const PointCloud& cloud, int m, int seed_index) {
  int n = cloud.count();
  if (m < 1 || m > n) throw ContractError("farthest_point_sampling: need 1 <= m <= N");
  if (seed_index < 0 || seed_index >= n)
    throw ContractError("farthest_point_sampling: seed index out of range");
  std::vector<int> sel;
  sel.reserve(m);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int cur = seed_index;
  for (int step = 0; step < m; ++step) {
    sel.push_back(cur);
    const Vec3& c = cloud.points[cur];
    int best = -1;
    double bestd = -1.0;
    for (int i = 0; i < n; ++i) {
      double d = sqdist(cloud.points[i], c);
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > bestd) {  // strict: ties keep the lowest index
        bestd = dist[i];
        best = i;
      }
    }
    cur = best;
  }
  return sel;
}

PointCloud farthest_point_sampling(const PointCloud& cloud, int m, int seed_index) {
  auto idx = farthest_point_sampling_indices(cloud, m, seed_index);
  PointCloud out;
  out.points.reserve(idx.size());
  for (int i : idx) out.points.push_back(cloud.points[i]);
  return out;
}

Vec3 cell_center(int i, int j, int k, int R) {
  return {-0.5 + (i + 0.5) / R, -0.5 + (j + 0.5) / R, -0.5 + (k + 0.5) / R};
}

namespace {

struct TriNeighbor {
  int i0, i1;      // clamped lattice indices along one axis
  double w0, w1;
};

TriNeighbor trilinear_axis(double x, int R, bool* clamped) {
  if (x < -0.5) {
    x = -0.5;
    if (clamped) *clamped = true;
  } else if (x > 0.5) {
    x = 0.5;
    if (clamped) *clamped = true;
  }
  double g = (x + 0.5) * R - 0.5;  // continuous cell-center index
  int i0 = static_cast<int>(std::floor(g));
  double f = g - i0;
  TriNeighbor t;
  t.w0 = 1.0 - f;
  t.w1 = f;
  t.i0 = std::clamp(i0, 0, R - 1);
  t.i1 = std::clamp(i0 + 1, 0, R - 1);
  return t;
}

}  // namespace

GriddingResult gridding(const PointCloud& cloud, int R) {
  GriddingResult out;
  out.grid = Tensor::zeros({1, R, R, R});
  auto& v = out.grid.data();
  for (const auto& p : cloud.points) {
    bool clamped = false;
    TriNeighbor tx = trilinear_axis(p[0], R, &clamped);
    TriNeighbor ty = trilinear_axis(p[1], R, &clamped);
    TriNeighbor tz = trilinear_axis(p[2], R, &clamped);
    if (clamped) ++out.clamped_points;
    const int xi[2] = {tx.i0, tx.i1};
    const double xw[2] = {tx.w0, tx.w1};
    const int yi[2] = {ty.i0, ty.i1};
    const double yw[2] = {ty.w0, ty.w1};
    const int zi[2] = {tz.i0, tz.i1};
    const double zw[2] = {tz.w0, tz.w1};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c)
          v[(static_cast<size_t>(xi[a]) * R + yi[b]) * R + zi[c]] += xw[a] * yw[b] * zw[c];
  }
  for (auto& x : v) x = std::min(x, 1.0);
  return out;
}

PointCloud gridding_reverse(const Tensor& grid, double theta) {
  if (grid.shape().size() != 4 || grid.shape()[0] != 1)
    throw DimensionError("gridding_reverse: expected [1,R,R,R]");
  int R = grid.shape()[1];
  PointCloud out;
  const auto& v = grid.data();
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      for (int k = 0; k < R; ++k)
        if (v[(static_cast<size_t>(i) * R + j) * R + k] > theta)
          out.points.push_back(cell_center(i, j, k, R));
  if (out.points.empty())
    throw EmptyOutputError("gridding_reverse: no cell exceeds threshold (collapsed prediction)");
  return out;
}

Tensor point_feature_sampling(const Tensor& features, const PointCloud& queries) {
  if (features.shape().size() != 4) throw DimensionError("point_feature_sampling: expected [C,R,R,R]");
  int C = features.shape()[0], R = features.shape()[1];
  int N = queries.count();
  size_t spatial = static_cast<size_t>(R) * R * R;

  struct Tap {
    size_t cell;
    double w;
  };
  auto taps = std::make_shared<std::vector<std::array<Tap, 8>>>(N);
  for (int q = 0; q < N; ++q) {
    const Vec3& p = queries.points[q];
    TriNeighbor tx = trilinear_axis(p[0], R, nullptr);
    TriNeighbor ty = trilinear_axis(p[1], R, nullptr);
    TriNeighbor tz = trilinear_axis(p[2], R, nullptr);
    const int xi[2] = {tx.i0, tx.i1};
    const double xw[2] = {tx.w0, tx.w1};
    const int yi[2] = {ty.i0, ty.i1};
    const double yw[2] = {ty.w0, ty.w1};
    const int zi[2] = {tz.i0, tz.i1};
    const double zw[2] = {tz.w0, tz.w1};
    int t = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c, ++t)
          (*taps)[q][t] = {(static_cast<size_t>(xi[a]) * R + yi[b]) * R + zi[c],
                           xw[a] * yw[b] * zw[c]};
  }

  Tensor out = Tensor::zeros({N, C});
  out.node()->parents = {features.node()};
  out.node()->backward = [N, C, spatial, taps](TensorNode& n) {
    TensorNode& pf = *n.parents[0];
    if (!pf.requires_grad && pf.backward == nullptr) return;
    pf.ensure_grad();
    for (int q = 0; q < N; ++q)
      for (const auto& tap : (*taps)[q])
        for (int c = 0; c < C; ++c)
          pf.grad[c * spatial + tap.cell] += tap.w * n.grad[static_cast<size_t>(q) * C + c];
  };
  for (int q = 0; q < N; ++q)
    for (const auto& tap : (*taps)[q])
      for (int c = 0; c < C; ++c)
        out.data()[static_cast<size_t>(q) * C + c] += tap.w * features.at(c * spatial + tap.cell);
  return out;
}

Mat3 rotation_to_z(const Vec3& view) {
  double n = std::sqrt(view[0] * view[0] + view[1] * view[1] + view[2] * view[2]);
  if (n < 1e-12) throw ContractError("rotation_to_z: zero view direction");
  Vec3 w = {view[0] / n, view[1] / n, view[2] / n};
  // pick a helper axis least aligned with the view
  Vec3 a = std::abs(w[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  Vec3 u = {a[1] * w[2] - a[2] * w[1], a[2] * w[0] - a[0] * w[2], a[0] * w[1] - a[1] * w[0]};
  double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  u = {u[0] / un, u[1] / un, u[2] / un};
  Vec3 v = {w[1] * u[2] - w[2] * u[1], w[2] * u[0] - w[0] * u[2], w[0] * u[1] - w[1] * u[0]};
  return {u[0], u[1], u[2], v[0], v[1], v[2], w[0], w[1], w[2]};
}

Vec3 apply_rot(const Mat3& m, const Vec3& p) {
  return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2], m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
          m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
}

Mat3 transpose(const Mat3& m) {
  return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

PointCloud make_partial(const PointCloud& cloud, const Vec3& view, int image_res) {
  if (cloud.count() < 1) throw ContractError("make_partial: empty cloud");
  Mat3 rot = rotation_to_z(view);
  // depth buffer: nearest (smallest rotated z) point wins, ties -> lowest index
  std::vector<int> owner(static_cast<size_t>(image_res) * image_res, -1);
  std::vector<double> depth(static_cast<size_t>(image_res) * image_res,
                            std::numeric_limits<double>::infinity());
  for (int i = 0; i < cloud.count(); ++i) {
    Vec3 q = apply_rot(rot, cloud.points[i]);
    // rotated coordinates stay within radius sqrt(3)/2 of the origin
    auto pix = [image_res](double x) {
      int v = static_cast<int>(std::floor((x + 0.87) / 1.74 * image_res));
      return std::clamp(v, 0, image_res - 1);
    };
    size_t cell = static_cast<size_t>(pix(q[0])) * image_res + pix(q[1]);
    if (q[2] < depth[cell]) {
      depth[cell] = q[2];
      owner[cell] = i;
    }
  }
  std::vector<int> keep;
  for (size_t c = 0; c < owner.size(); ++c)
    if (owner[c] >= 0) keep.push_back(owner[c]);
  std::sort(keep.begin(), keep.end());
  PointCloud out;
  out.points.reserve(keep.size());
  for (int i : keep) out.points.push_back(cloud.points[i]);
  if (out.points.empty()) throw EmptyOutputError("make_partial: no visible points");
  return out;
}

void write_pcf(const std::string& path, const PointCloud& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pcf: cannot open " + path);
  f.write("PCF1", 4);
  uint32_t n = static_cast<uint32_t>(cloud.count());
  f.write(reinterpret_cast<const char*>(&n), 4);
  std::vector<float> buf(static_cast<size_t>(n) * 3);
  for (uint32_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) buf[i * 3 + d] = static_cast<float>(cloud.points[i][d]);
  f.write(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(float));
  if (!f) throw IoError("write_pcf: write failed for " + path);
}

PointCloud read_pcf(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_pcf: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PCF1", 4) != 0)
    throw IoError("read_pcf: bad magic in " + path);
  uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  std::vector<float> buf(static_cast<size_t>(n) * 3);
  f.read(reinterpret_cast<char*>(buf.data()), buf.size() * sizeof(float));
  if (!f) throw IoError("read_pcf: truncated file " + path);
  f.peek();
  if (!f.eof()) throw IoError("read_pcf: trailing bytes in " + path);
  PointCloud out;
  out.points.resize(n);
  for (uint32_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) out.points[i][d] = buf[i * 3 + d];
  return out;
}

}  // namespace ps
