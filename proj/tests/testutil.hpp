#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "protoshape/geometry.hpp"
#include "protoshape/nn.hpp"
#include "protoshape/ops.hpp"
#include "protoshape/rng.hpp"
#include "protoshape/tensor.hpp"

namespace pstest {

// Central finite differences against reverse-mode gradients for every element
// of every tensor in `params` (optionally strided). `loss_fn` must rebuild the
// graph from the current parameter data on each call and return a scalar.
inline double max_grad_rel_err(ps::Params& params, const std::function<ps::Tensor()>& loss_fn,
                               double h = 1e-5, int stride = 1) {
  params.zero_grad();
  ps::Tensor loss = loss_fn();
  ps::backward(loss);
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [k, t] : params.t) {
    t.node()->ensure_grad();
    analytic[k] = t.grad();
  }

  double worst = 0.0;
  for (auto& [k, t] : params.t) {
    auto& d = t.data();
    for (size_t i = 0; i < d.size(); i += static_cast<size_t>(stride)) {
      double save = d[i];
      d[i] = save + h;
      double lp = loss_fn().item();
      d[i] = save - h;
      double lm = loss_fn().item();
      d[i] = save;
      double num = (lp - lm) / (2.0 * h);
      double ana = analytic[k][i];
      double err = std::abs(num - ana) / std::max(std::abs(num) + std::abs(ana), 1e-6);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline ps::Tensor random_tensor(ps::Shape shape, ps::Rng& rng, bool requires_grad = true,
                                double scale = 1.0) {
  ps::Tensor t = ps::Tensor::zeros(std::move(shape), requires_grad);
  for (auto& x : t.data()) x = scale * rng.normal();
  return t;
}

inline ps::PointCloud random_cloud(int n, ps::Rng& rng) {
  ps::PointCloud c;
  for (int i = 0; i < n; ++i)
    c.points.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
  return c;
}

}  // namespace pstest
