#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "protoshape/rng.hpp"
#include "protoshape/tensor.hpp"

namespace ps {

// Named parameter tensors; std::map keeps iteration order stable so optimizer
// updates and serialization are deterministic.
struct Params {
  std::map<std::string, Tensor> t;

  Tensor& operator[](const std::string& name) { return t[name]; }
  const Tensor& at(const std::string& name) const { return t.at(name); }

  Params clone() const {
    Params c;
    for (const auto& [k, v] : t) c.t[k] = Tensor::from(v.shape(), v.data(), v.requires_grad());
    return c;
  }

  void zero_grad() {
    for (auto& [k, v] : t) v.zero_grad();
  }

  // Accumulate another instance's grads into this one's (same key set).
  void accumulate_grads(const Params& other) {
    for (auto& [k, v] : t) {
      const auto& og = other.at(k).grad();
      if (og.empty()) continue;
      v.node()->ensure_grad();
      auto& g = v.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += og[i];
    }
  }

  bool grads_finite() const {
    for (const auto& [k, v] : t)
      if (!all_finite(v.grad())) return false;
    return true;
  }
};

inline Tensor he_init(Shape shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(shape, true);
  double s = std::sqrt(2.0 / fan_in);
  for (auto& x : t.data()) x = s * rng.normal();
  return t;
}

struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step_count = 0;
  std::map<std::string, std::vector<double>> m, v;

  explicit Adam(double learning_rate = 1e-4) : lr(learning_rate) {}

  void step(Params& p) {
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& [k, t] : p.t) {
      auto& g = t.grad();
      if (g.empty()) continue;
      auto& mk = m[k];
      auto& vk = v[k];
      if (mk.size() != g.size()) mk.assign(g.size(), 0.0);
      if (vk.size() != g.size()) vk.assign(g.size(), 0.0);
      auto& d = t.data();
      for (size_t i = 0; i < g.size(); ++i) {
        mk[i] = beta1 * mk[i] + (1 - beta1) * g[i];
        vk[i] = beta2 * vk[i] + (1 - beta2) * g[i] * g[i];
        d[i] -= lr * (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + eps);
      }
    }
  }
};

// Static-partition parallel for: thread t handles a contiguous chunk, so any
// per-thread accumulation reduced in thread order is schedule-independent.
inline void parallel_chunks(int n, int threads,
                            const std::function<void(int thread, int lo, int hi)>& fn) {
  if (threads <= 1 || n <= 1) {
    fn(0, 0, n);
    return;
  }
  int nt = std::min(threads, n);
  std::vector<std::thread> pool;
  int chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    int lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(fn, t, lo, hi);
  }
  for (auto& th : pool) th.join();
}

}  // namespace ps
