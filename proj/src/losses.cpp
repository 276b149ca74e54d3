#include "protoshape/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "protoshape/ops.hpp"

namespace ps {
namespace {

double sqdist(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct NnResult {
  std::vector<int> index;
  std::vector<double> dist_sq;
};

NnResult nn_brute(const PointCloud& a, const PointCloud& b) {
  NnResult r;
  r.index.resize(a.count());
  r.dist_sq.resize(a.count());
  for (int i = 0; i < a.count(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int bi = -1;
    for (int j = 0; j < b.count(); ++j) {
      double d = sqdist(a.points[i], b.points[j]);
      if (d < best) {
        best = d;
        bi = j;
      }
    }
    r.index[i] = bi;
    r.dist_sq[i] = best;
  }
  return r;
}

// Uniform-grid accelerated exact nearest neighbor. Cells are scanned in
// expanding Chebyshev rings; a ring at distance r can only hold points at
// Euclidean distance >= (r-1)*cell, which bounds the search.
struct NnGrid {
  Vec3 lo{0, 0, 0};
  double cell = 1.0;
  int n = 1;
  std::vector<std::vector<int>> buckets;
  const PointCloud* pts = nullptr;

  explicit NnGrid(const PointCloud& b) : pts(&b) {
    Vec3 hi = b.points[0];
    lo = b.points[0];
    for (const auto& p : b.points)
      for (int d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    double side = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-9});
    n = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(b.count()))));
    cell = side / n * (1.0 + 1e-12);
    buckets.assign(static_cast<size_t>(n) * n * n, {});
    for (int i = 0; i < b.count(); ++i) buckets[bucket_of(b.points[i])].push_back(i);
  }

  int coord(double x, int d) const {
    int c = static_cast<int>(std::floor((x - lo[d]) / cell));
    return std::clamp(c, 0, n - 1);
  }
  size_t bucket_of(const Vec3& p) const {
    return (static_cast<size_t>(coord(p[0], 0)) * n + coord(p[1], 1)) * n + coord(p[2], 2);
  }

  void query(const Vec3& q, int* best_idx, double* best_sq) const {
    // Start from the clamped cell. For any stored point p and the clamped
    // query q', |q-p| >= |q'-p| holds coordinate-wise, so the ring lower
    // bound below stays valid and the search never leaves the grid.
    int cx = coord(q[0], 0);
    int cy = coord(q[1], 1);
    int cz = coord(q[2], 2);
    double best = std::numeric_limits<double>::infinity();
    int bi = -1;
    int max_ring = n + 1;
    for (int ring = 0; ring <= max_ring; ++ring) {
      if (bi >= 0) {
        double bound = (ring - 1) * cell;
        if (bound > 0 && bound * bound > best) break;
      }
      for (int dx = -ring; dx <= ring; ++dx) {
        int x = cx + dx;
        if (x < 0 || x >= n) continue;
        for (int dy = -ring; dy <= ring; ++dy) {
          int y = cy + dy;
          if (y < 0 || y >= n) continue;
          bool edge = std::abs(dx) == ring || std::abs(dy) == ring;
          int step = edge ? 1 : 2 * ring;
          if (ring == 0) step = 1;
          for (int dz = -ring; dz <= ring; dz += (edge ? 1 : std::max(step, 1))) {
            int z = cz + dz;
            if (z < 0 || z >= n) continue;
            for (int j : buckets[(static_cast<size_t>(x) * n + y) * n + z]) {
              double d = sqdist(q, pts->points[j]);
              if (d < best) {
                best = d;
                bi = j;
              }
            }
          }
        }
      }
    }
    *best_idx = bi;
    *best_sq = best;
  }
};

NnResult nn_grid(const PointCloud& a, const PointCloud& b) {
  NnGrid grid(b);
  NnResult r;
  r.index.resize(a.count());
  r.dist_sq.resize(a.count());
  for (int i = 0; i < a.count(); ++i) grid.query(a.points[i], &r.index[i], &r.dist_sq[i]);
  return r;
}

NnResult nn(const PointCloud& a, const PointCloud& b, bool accelerated) {
  return accelerated ? nn_grid(a, b) : nn_brute(a, b);
}

}  // namespace

std::vector<double> nearest_sq_brute(const PointCloud& a, const PointCloud& b) {
  return nn_brute(a, b).dist_sq;
}
std::vector<double> nearest_sq_grid(const PointCloud& a, const PointCloud& b) {
  return nn_grid(a, b).dist_sq;
}

double chamfer(const PointCloud& a, const PointCloud& b, bool accelerated) {
  if (a.count() < 1 || b.count() < 1) throw ContractError("chamfer: empty cloud");
  NnResult ab = nn(a, b, accelerated);
  NnResult ba = nn(b, a, accelerated);
  double s1 = 0, s2 = 0;
  for (double d : ab.dist_sq) s1 += d;
  for (double d : ba.dist_sq) s2 += d;
  return s1 / a.count() + s2 / b.count();
}

PointCloud tensor_to_cloud(const Tensor& t) {
  if (t.shape().size() != 2 || t.shape()[1] != 3)
    throw DimensionError("tensor_to_cloud: expected [N,3]");
  PointCloud c;
  c.points.resize(t.shape()[0]);
  for (int i = 0; i < t.shape()[0]; ++i)
    for (int d = 0; d < 3; ++d) c.points[i][d] = t.at(static_cast<size_t>(i) * 3 + d);
  return c;
}

Tensor cloud_to_tensor(const PointCloud& c, bool requires_grad) {
  std::vector<double> d;
  d.reserve(static_cast<size_t>(c.count()) * 3);
  for (const auto& p : c.points) {
    d.push_back(p[0]);
    d.push_back(p[1]);
    d.push_back(p[2]);
  }
  return Tensor::from({c.count(), 3}, std::move(d), requires_grad);
}

Tensor chamfer_loss(const Tensor& pred, const PointCloud& gt) {
  if (pred.shape().size() != 2 || pred.shape()[1] != 3)
    throw DimensionError("chamfer_loss: pred must be [N,3]");
  if (pred.shape()[0] < 1 || gt.count() < 1) throw ContractError("chamfer_loss: empty cloud");
  PointCloud pc = tensor_to_cloud(pred);
  auto ab = std::make_shared<NnResult>(nn(pc, gt, true));
  auto ba = std::make_shared<NnResult>(nn(gt, pc, true));
  int na = pc.count(), nb = gt.count();
  auto gtp = std::make_shared<PointCloud>(gt);

  Tensor out = Tensor::zeros({1});
  out.node()->parents = {pred.node()};
  out.node()->backward = [na, nb, ab, ba, gtp](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!p.requires_grad && p.backward == nullptr) return;
    p.ensure_grad();
    double g = n.grad[0];
    for (int i = 0; i < na; ++i) {
      const Vec3& b = gtp->points[ab->index[i]];
      for (int d = 0; d < 3; ++d)
        p.grad[static_cast<size_t>(i) * 3 + d] +=
            g * (2.0 / na) * (p.data[static_cast<size_t>(i) * 3 + d] - b[d]);
    }
    for (int j = 0; j < nb; ++j) {
      int i = ba->index[j];
      const Vec3& b = gtp->points[j];
      for (int d = 0; d < 3; ++d)
        p.grad[static_cast<size_t>(i) * 3 + d] +=
            g * (2.0 / nb) * (p.data[static_cast<size_t>(i) * 3 + d] - b[d]);
    }
  };
  double s1 = 0, s2 = 0;
  for (double d : ab->dist_sq) s1 += d;
  for (double d : ba->dist_sq) s2 += d;
  out.data()[0] = s1 / na + s2 / nb;
  return out;
}

std::vector<int> sample_mask_indices(int n, int M, Rng& rng, bool* with_replacement) {
  std::vector<int> idx;
  idx.reserve(M);
  if (n >= M) {
    if (with_replacement) *with_replacement = false;
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    for (int i = 0; i < M; ++i) {
      int j = i + static_cast<int>(rng.below(n - i));
      std::swap(all[i], all[j]);
      idx.push_back(all[i]);
    }
  } else {
    if (with_replacement) *with_replacement = true;
    for (int i = 0; i < M; ++i) idx.push_back(static_cast<int>(rng.below(n)));
  }
  return idx;
}

namespace {

struct Splat {
  int point;          // index into the cloud tensor
  double px, py;      // pixel coordinates
  bool clamp_x, clamp_y;
};

// Shared forward for tensor and value renders.
std::vector<double> splat_forward(const std::vector<Vec3>& pts, const Mat3& view,
                                  const std::vector<int>& indices, const MaskSpec& spec,
                                  std::vector<Splat>* splats) {
  int H = spec.H, W = spec.W;
  double s2 = spec.kernel_s * spec.kernel_s;
  double cut = spec.truncation * spec.kernel_s;
  std::vector<double> sums(static_cast<size_t>(H) * W, 0.0);
  for (int m : indices) {
    Vec3 q = apply_rot(view, pts[m]);
    double px = (q[0] + 0.5) * (H - 1);
    double py = (q[1] + 0.5) * (W - 1);
    bool cx = false, cy = false;
    if (px < 0) { px = 0; cx = true; } else if (px > H - 1) { px = H - 1; cx = true; }
    if (py < 0) { py = 0; cy = true; } else if (py > W - 1) { py = W - 1; cy = true; }
    if (splats) splats->push_back({m, px, py, cx, cy});
    int hlo = std::max(0, static_cast<int>(std::ceil(px - cut)));
    int hhi = std::min(H - 1, static_cast<int>(std::floor(px + cut)));
    int wlo = std::max(0, static_cast<int>(std::ceil(py - cut)));
    int whi = std::min(W - 1, static_cast<int>(std::floor(py + cut)));
    for (int h = hlo; h <= hhi; ++h) {
      double dx = px - h;
      double fx = std::exp(-dx * dx / (2 * s2));
      for (int w = wlo; w <= whi; ++w) {
        double dy = py - w;
        if (std::abs(dy) > cut) continue;
        sums[static_cast<size_t>(h) * W + w] += fx * std::exp(-dy * dy / (2 * s2));
      }
    }
  }
  // tanh(x) rounds to exactly 1.0 for x >~ 19; pixels must stay strictly
  // below 1 so the occupancy interpretation (and log(1-m) terms) never
  // degenerate. The clamp is below one ulp of the true tanh there.
  const double max_pixel = std::nextafter(1.0, 0.0);
  for (auto& v : sums) v = std::min(std::tanh(v), max_pixel);
  return sums;
}

}  // namespace

std::vector<double> render_mask_values(const PointCloud& cloud, const Mat3& view,
                                       const std::vector<int>& indices, const MaskSpec& spec) {
  return splat_forward(cloud.points, view, indices, spec, nullptr);
}

Tensor render_mask(const Tensor& pred, const Mat3& view, const std::vector<int>& indices,
                   const MaskSpec& spec) {
  PointCloud pc = tensor_to_cloud(pred);
  auto splats = std::make_shared<std::vector<Splat>>();
  std::vector<double> img = splat_forward(pc.points, view, indices, spec, splats.get());
  int H = spec.H, W = spec.W;
  double s2 = spec.kernel_s * spec.kernel_s;
  double cut = spec.truncation * spec.kernel_s;
  Mat3 v = view;

  Tensor out = Tensor::from({H, W}, img);
  out.node()->parents = {pred.node()};
  out.node()->backward = [H, W, s2, cut, v, splats](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!p.requires_grad && p.backward == nullptr) return;
    p.ensure_grad();
    for (const Splat& sp : *splats) {
      double gpx = 0, gpy = 0;
      int hlo = std::max(0, static_cast<int>(std::ceil(sp.px - cut)));
      int hhi = std::min(H - 1, static_cast<int>(std::floor(sp.px + cut)));
      int wlo = std::max(0, static_cast<int>(std::ceil(sp.py - cut)));
      int whi = std::min(W - 1, static_cast<int>(std::floor(sp.py + cut)));
      for (int h = hlo; h <= hhi; ++h) {
        double dx = sp.px - h;
        double fx = std::exp(-dx * dx / (2 * s2));
        double dfx = -dx / s2 * fx;
        for (int w = wlo; w <= whi; ++w) {
          double dy = sp.py - w;
          if (std::abs(dy) > cut) continue;
          double fy = std::exp(-dy * dy / (2 * s2));
          double dfy = -dy / s2 * fy;
          double t = n.data[static_cast<size_t>(h) * W + w];
          double g = n.grad[static_cast<size_t>(h) * W + w] * (1.0 - t * t);
          gpx += g * dfx * fy;
          gpy += g * fx * dfy;
        }
      }
      // chain through pixel mapping (zero where clamped) and the rotation
      double gq0 = sp.clamp_x ? 0.0 : gpx * (H - 1);
      double gq1 = sp.clamp_y ? 0.0 : gpy * (W - 1);
      for (int d = 0; d < 3; ++d)
        p.grad[static_cast<size_t>(sp.point) * 3 + d] += gq0 * v[d] + gq1 * v[3 + d];
    }
  };
  return out;
}

std::vector<Mat3> random_views(int V, uint64_t seed) {
  Rng rng(seed);
  std::vector<Mat3> out;
  out.reserve(V);
  for (int i = 0; i < V; ++i) out.push_back(rng.rotation());
  return out;
}

namespace {

Tensor projection_loss_impl(const Tensor* pred_t, const PointCloud* pred_c, const PointCloud& gt,
                            const std::vector<Mat3>& views, const ProjectionSpec& spec,
                            uint64_t sample_seed) {
  int HW = spec.mask.H * spec.mask.W;
  int V = static_cast<int>(views.size());
  double eps = spec.eps;
  Tensor acc = Tensor::scalar(0.0);
  int np = pred_t ? pred_t->shape()[0] : pred_c->count();
  for (int v = 0; v < V; ++v) {
    Rng rp(hash_combine(sample_seed, 2 * v));
    Rng rg(hash_combine(sample_seed, 2 * v + 1));
    auto pidx = sample_mask_indices(np, spec.mask.M, rp);
    auto gidx = sample_mask_indices(gt.count(), spec.mask.M, rg);
    std::vector<double> gtm = render_mask_values(gt, views[v], gidx, spec.mask);
    Tensor mhat = pred_t ? render_mask(*pred_t, views[v], pidx, spec.mask)
                         : Tensor::from({spec.mask.H, spec.mask.W},
                                        render_mask_values(*pred_c, views[v], pidx, spec.mask));
    if (spec.orientation == BceOrientation::AsPrinted) {
      // pred mask appears linearly; gt mask sits inside the logs
      std::vector<double> coeff(HW), offset(HW);
      for (int i = 0; i < HW; ++i) {
        double c1 = std::log(gtm[i] + eps);
        // the formula's argument can dip below zero once the gt mask
        // saturates past 1-eps; floor it at eps to keep the log defined
        double c2 = std::log(std::max(1.0 - gtm[i] - eps, eps));
        coeff[i] = c1 - c2;
        offset[i] = c2;
      }
      double off = 0;
      for (double x : offset) off += x;
      Tensor term = add_scalar(
          sum_all(mul(mhat, Tensor::from({spec.mask.H, spec.mask.W}, std::move(coeff)))), off);
      acc = add(acc, term);
    } else {
      std::vector<double> mg(HW), omg(HW);
      for (int i = 0; i < HW; ++i) {
        mg[i] = gtm[i];
        omg[i] = 1.0 - gtm[i];
      }
      Tensor lg = log_op(add_scalar(mhat, eps));
      // same saturation guard as above, on the graph side
      Tensor lomg = log_op(clamp_min(add_scalar(mul_scalar(mhat, -1.0), 1.0 - eps), eps));
      Tensor term =
          add(sum_all(mul(lg, Tensor::from({spec.mask.H, spec.mask.W}, std::move(mg)))),
              sum_all(mul(lomg, Tensor::from({spec.mask.H, spec.mask.W}, std::move(omg)))));
      acc = add(acc, term);
    }
  }
  return mul_scalar(acc, -1.0 / (static_cast<double>(HW) * V));
}

}  // namespace

Tensor projection_loss(const Tensor& pred, const PointCloud& gt, const std::vector<Mat3>& views,
                       const ProjectionSpec& spec, uint64_t sample_seed) {
  return projection_loss_impl(&pred, nullptr, gt, views, spec, sample_seed);
}

double projection_loss_value(const PointCloud& pred, const PointCloud& gt,
                             const std::vector<Mat3>& views, const ProjectionSpec& spec,
                             uint64_t sample_seed) {
  return projection_loss_impl(nullptr, &pred, gt, views, spec, sample_seed).item();
}

LossReport total_loss(double cd_sparse, const Tensor& cd_dense, double proj_sparse,
                      const Tensor& proj_dense, double weight, double lambda_proj) {
  LossReport r;
  r.cd_sparse = cd_sparse;
  r.cd_dense = cd_dense.item();
  r.proj_sparse = proj_sparse;
  r.proj_dense = proj_dense.item();
  r.weight = weight;
  Tensor inner = add_scalar(add(cd_dense, mul_scalar(proj_dense, lambda_proj)),
                            cd_sparse + lambda_proj * proj_sparse);
  r.total_tensor = mul_scalar(inner, weight);
  r.total = r.total_tensor.item();
  return r;
}

double f_score(const PointCloud& pred, const PointCloud& gt, double sigma) {
  if (pred.count() < 1 || gt.count() < 1) throw ContractError("f_score: empty cloud");
  NnResult pg = nn(pred, gt, true);
  NnResult gp = nn(gt, pred, true);
  double g = 0, h = 0;
  for (double d : pg.dist_sq)
    if (std::sqrt(d) < sigma) g += 1;
  for (double d : gp.dist_sq)
    if (std::sqrt(d) < sigma) h += 1;
  g /= pred.count();
  h /= gt.count();
  if (g + h == 0.0) return 0.0;
  return 2.0 * g * h / (g + h);
}

double consistency(const std::vector<std::vector<PointCloud>>& tracks) {
  if (tracks.empty()) throw ContractError("consistency: no tracks");
  double acc = 0;
  for (const auto& t : tracks) {
    if (t.size() < 2) throw ContractError("consistency: track with fewer than 2 frames");
    double s = 0;
    for (size_t f = 0; f + 1 < t.size(); ++f) s += chamfer(t[f], t[f + 1]);
    acc += s / static_cast<double>(t.size() - 1);
  }
  return acc / static_cast<double>(tracks.size());
}

}  // namespace ps
