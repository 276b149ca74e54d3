#include "protoshape/pretext.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "protoshape/losses.hpp"
#include "protoshape/ops.hpp"

namespace ps {

FeatureExtractor FeatureExtractor::create(int dim, int classes, uint64_t seed) {
  FeatureExtractor e;
  e.dim = dim;
  e.classes = classes;
  Rng rng(seed);
  auto& p = e.params;
  p["enc.w1"] = he_init({3, 64}, 3, rng);
  p["enc.b1"] = Tensor::zeros({64}, true);
  p["enc.w2"] = he_init({64, 128}, 64, rng);
  p["enc.b2"] = Tensor::zeros({128}, true);
  p["enc.w3"] = he_init({128, dim}, 128, rng);
  p["enc.b3"] = Tensor::zeros({dim}, true);
  p["head.w1"] = he_init({dim, dim / 2}, dim, rng);
  p["head.b1"] = Tensor::zeros({dim / 2}, true);
  p["head.w2"] = he_init({dim / 2, classes}, dim / 2, rng);
  p["head.b2"] = Tensor::zeros({classes}, true);
  return e;
}

Tensor FeatureExtractor::feature(const PointCloud& cloud) const {
  if (cloud.count() < 1) throw ContractError("extract_feature: empty cloud");
  Tensor x = cloud_to_tensor(cloud);
  Tensor h1 = relu(linear(x, params.at("enc.w1"), params.at("enc.b1")));
  Tensor h2 = relu(linear(h1, params.at("enc.w2"), params.at("enc.b2")));
  Tensor h3 = relu(linear(h2, params.at("enc.w3"), params.at("enc.b3")));
  return max_over_points(h3);
}

Tensor FeatureExtractor::logits(const Tensor& feat) const {
  Tensor f = Tensor(feat.node());
  // feature is [D]; linear wants [1,D]
  Tensor row = Tensor::zeros({1, dim});
  row.node()->parents = {f.node()};
  row.node()->backward = [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!p.requires_grad && p.backward == nullptr) return;
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  };
  row.data() = f.data();
  Tensor h = relu(linear(row, params.at("head.w1"), params.at("head.b1")));
  return linear(h, params.at("head.w2"), params.at("head.b2"));  // [1,C]
}

std::vector<double> FeatureExtractor::extract_feature(const PointCloud& cloud) const {
  return feature(cloud).data();
}

std::vector<double> train_classifier_range(FeatureExtractor& ext,
                                           const std::vector<LabeledCloud>& train, int epoch_begin,
                                           int epoch_end, int batch, uint64_t seed, int threads,
                                           Adam& opt) {
  std::set<int> labels;
  for (const auto& s : train) labels.insert(s.label);
  if (labels.size() < 2) throw ContractError("train_classifier: need at least 2 categories");

  std::vector<double> epoch_losses;
  int n = static_cast<int>(train.size());

  for (int epoch = epoch_begin; epoch < epoch_end; ++epoch) {
    // epoch order derived purely from (seed, epoch): resume-friendly
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(hash_combine(seed, 1000 + epoch));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += batch) {
      int bs = std::min(batch, n - start);
      int nt = std::min(threads, bs);
      std::vector<Params> clones(std::max(nt, 1));
      std::vector<double> losses(std::max(nt, 1), 0.0);
      parallel_chunks(bs, nt, [&](int t, int lo, int hi) {
        FeatureExtractor local = ext;
        clones[t] = ext.params.clone();
        local.params = clones[t];
        local.params.zero_grad();
        for (int i = lo; i < hi; ++i) {
          const LabeledCloud& s = train[order[start + i]];
          Tensor lg = local.logits(local.feature(s.cloud));
          Tensor loss = softmax_cross_entropy(lg, s.label);
          losses[t] += loss.item();
          backward(loss);
        }
      });
      ext.params.zero_grad();
      for (auto& c : clones)
        if (!c.t.empty()) ext.params.accumulate_grads(c);
      // mean over the batch
      for (auto& [k, v] : ext.params.t)
        for (auto& g : v.grad()) g /= bs;
      opt.step(ext.params);
      for (double l : losses) epoch_loss += l;
    }
    epoch_losses.push_back(epoch_loss / n);
  }
  if (epoch_end > epoch_begin) ext.trained = true;
  return epoch_losses;
}

double classifier_accuracy(const FeatureExtractor& ext, const std::vector<LabeledCloud>& heldout) {
  if (heldout.empty()) return 0.0;
  int correct = 0;
  for (const auto& s : heldout) {
    Tensor lg = ext.logits(ext.feature(s.cloud));
    int best = 0;
    for (int c = 1; c < ext.classes; ++c)
      if (lg.at(c) > lg.at(best)) best = c;
    if (best == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(heldout.size());
}

PretextTrainReport train_classifier(FeatureExtractor& ext, const std::vector<LabeledCloud>& train,
                                    const std::vector<LabeledCloud>& heldout, int epochs,
                                    double lr, int batch, uint64_t seed, int threads) {
  PretextTrainReport report;
  Adam opt(lr);
  report.epoch_loss = train_classifier_range(ext, train, 0, epochs, batch, seed, threads, opt);
  ext.trained = epochs > 0;
  report.heldout_accuracy = classifier_accuracy(ext, heldout);
  return report;
}

namespace {

double log_gaussian_diag(const std::vector<double>& x, const double* mu, const double* var,
                         int D) {
  double acc = 0.0;
  for (int d = 0; d < D; ++d) {
    double diff = x[d] - mu[d];
    acc += std::log(2.0 * M_PI * var[d]) + diff * diff / var[d];
  }
  return -0.5 * acc;
}

double logsumexp(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Feature-space FPS for center initialization (start index derived from seed).
std::vector<int> feature_fps(const std::vector<std::vector<double>>& f, int m, uint64_t seed) {
  int n = static_cast<int>(f.size());
  int D = static_cast<int>(f[0].size());
  auto dist2 = [D](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (int d = 0; d < D; ++d) {
      double t = a[d] - b[d];
      s += t * t;
    }
    return s;
  };
  std::vector<int> sel;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int cur = static_cast<int>(seed % static_cast<uint64_t>(n));
  for (int step = 0; step < m; ++step) {
    sel.push_back(cur);
    int best = 0;
    double bestd = -1;
    for (int i = 0; i < n; ++i) {
      double d = dist2(f[i], f[cur]);
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > bestd) {
        bestd = dist[i];
        best = i;
      }
    }
    cur = best;
  }
  return sel;
}

}  // namespace

GmmState fit_gmm_em(const std::vector<std::vector<double>>& features, int K, int E,
                    uint64_t seed) {
  int N = static_cast<int>(features.size());
  if (N < K) throw ContractError("fit_gmm_em: fewer samples than components");
  int D = static_cast<int>(features[0].size());

  GmmState g;
  g.K = K;
  g.D = D;
  g.N = N;
  g.pi.assign(K, 1.0 / K);
  g.mu.assign(static_cast<size_t>(K) * D, 0.0);
  g.var.assign(static_cast<size_t>(K) * D, 0.0);
  g.resp.assign(static_cast<size_t>(N) * K, 0.0);

  // global per-dimension variance as the shared starting covariance
  std::vector<double> gmean(D, 0.0), gvar(D, 0.0);
  for (const auto& f : features)
    for (int d = 0; d < D; ++d) gmean[d] += f[d];
  for (int d = 0; d < D; ++d) gmean[d] /= N;
  for (const auto& f : features)
    for (int d = 0; d < D; ++d) {
      double t = f[d] - gmean[d];
      gvar[d] += t * t;
    }
  for (int d = 0; d < D; ++d) gvar[d] = std::max(gvar[d] / N, kVarianceFloor);

  auto init_idx = feature_fps(features, K, seed);
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < D; ++d) {
      g.mu[static_cast<size_t>(k) * D + d] = features[init_idx[k]][d];
      g.var[static_cast<size_t>(k) * D + d] = gvar[d];
    }

  auto e_step = [&](bool record_ll) {
    double ll = 0.0;
    std::vector<double> logp(K);
    for (int i = 0; i < N; ++i) {
      for (int k = 0; k < K; ++k)
        logp[k] = std::log(g.pi[k]) +
                  log_gaussian_diag(features[i], &g.mu[static_cast<size_t>(k) * D],
                                    &g.var[static_cast<size_t>(k) * D], D);
      double lse = logsumexp(logp);
      ll += lse;
      for (int k = 0; k < K; ++k) g.resp[static_cast<size_t>(i) * K + k] = std::exp(logp[k] - lse);
    }
    if (record_ll) g.loglik.push_back(ll);
  };

  for (int e = 0; e < E; ++e) {
    e_step(true);
    // M-step
    for (int k = 0; k < K; ++k) {
      double nk = 0.0;
      for (int i = 0; i < N; ++i) nk += g.resp[static_cast<size_t>(i) * K + k];
      if (nk < 1e-12) {
        // reseed the collapsed component at the feature farthest from all centers
        int far = 0;
        double fard = -1;
        for (int i = 0; i < N; ++i) {
          double mind = std::numeric_limits<double>::infinity();
          for (int kk = 0; kk < K; ++kk) {
            double s = 0;
            for (int d = 0; d < D; ++d) {
              double t = features[i][d] - g.mu[static_cast<size_t>(kk) * D + d];
              s += t * t;
            }
            mind = std::min(mind, s);
          }
          if (mind > fard) {
            fard = mind;
            far = i;
          }
        }
        for (int d = 0; d < D; ++d) {
          g.mu[static_cast<size_t>(k) * D + d] = features[far][d];
          g.var[static_cast<size_t>(k) * D + d] = gvar[d];
        }
        g.pi[k] = 1.0 / N;
        continue;
      }
      double* mu = &g.mu[static_cast<size_t>(k) * D];
      double* var = &g.var[static_cast<size_t>(k) * D];
      std::fill(mu, mu + D, 0.0);
      for (int i = 0; i < N; ++i) {
        double r = g.resp[static_cast<size_t>(i) * K + k];
        for (int d = 0; d < D; ++d) mu[d] += r * features[i][d];
      }
      for (int d = 0; d < D; ++d) mu[d] /= nk;
      std::fill(var, var + D, 0.0);
      for (int i = 0; i < N; ++i) {
        double r = g.resp[static_cast<size_t>(i) * K + k];
        for (int d = 0; d < D; ++d) {
          double t = features[i][d] - mu[d];
          var[d] += r * t * t;
        }
      }
      for (int d = 0; d < D; ++d) var[d] = std::max(var[d] / nk, kVarianceFloor);
      g.pi[k] = nk / N;
    }
    // keep pi on the simplex after any reseeds
    double psum = std::accumulate(g.pi.begin(), g.pi.end(), 0.0);
    for (double& p : g.pi) p /= psum;
  }
  // final responsibilities under the final parameters (used for assignment)
  e_step(false);
  return g;
}

Prototype prototype_from_gmm(const GmmState& gmm, const std::vector<std::vector<double>>& features,
                             int category, PrototypeMode mode) {
  int K = gmm.K, D = gmm.D, N = gmm.N;
  std::vector<long long> card(K, 0);
  for (int i = 0; i < N; ++i) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (gmm.resp[static_cast<size_t>(i) * K + k] > gmm.resp[static_cast<size_t>(i) * K + best])
        best = k;
    ++card[best];
  }
  Prototype p;
  p.category = category;
  p.center.assign(D, 0.0);
  if (mode == PrototypeMode::WeightedMean) {
    long long total = 0;
    for (int k = 0; k < K; ++k) total += card[k];
    for (int k = 0; k < K; ++k)
      for (int d = 0; d < D; ++d)
        p.center[d] += static_cast<double>(card[k]) * gmm.mu[static_cast<size_t>(k) * D + d];
    for (int d = 0; d < D; ++d) p.center[d] /= static_cast<double>(total);
  } else {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (card[k] > card[best]) best = k;
    for (int d = 0; d < D; ++d) p.center[d] = gmm.mu[static_cast<size_t>(best) * D + d];
  }
  double maxr = 0.0;
  for (const auto& f : features) {
    double s = 0;
    for (int d = 0; d < D; ++d) {
      double t = f[d] - p.center[d];
      s += t * t;
    }
    maxr = std::max(maxr, std::sqrt(s));
  }
  p.radius = std::max(maxr, kRadiusFloor);
  return p;
}

double soft_prior(const std::vector<double>& partial_feature,
                  const std::vector<Prototype>& prototypes) {
  if (prototypes.empty()) throw ContractError("soft_prior: no prototypes");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : prototypes) {
    double s = 0;
    for (size_t d = 0; d < p.center.size(); ++d) {
      double t = partial_feature[d] - p.center[d];
      s += t * t;
    }
    best = std::min(best, std::sqrt(s) / p.radius);
  }
  return best;
}

double cosine_gap(const std::vector<double>& r, const std::vector<double>& r_partial) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < r.size(); ++i) {
    dot += r[i] * r_partial[i];
    na += r[i] * r[i];
    nb += r_partial[i] * r_partial[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw ContractError("cosine_gap: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double difficulty_weight(double cos_value) {
  constexpr double t = 0.25;
  constexpr double k = 8.0;
  double x = 1.0 - cos_value;
  return 1.0 + 1.0 / (1.0 + std::exp(k * (t - x)));
}

void save_prototypes(const std::string& path, const PrototypeStore& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : store.prototypes) {
    nlohmann::json rec;
    rec["category_id"] = p.category;
    rec["center"] = p.center;
    rec["radius"] = p.radius;
    rec["D"] = store.D;
    rec["K"] = store.K;
    rec["em_iterations"] = store.em_iterations;
    rec["seed"] = store.seed;
    arr.push_back(rec);
  }
  std::ofstream f(path);
  if (!f) throw IoError("save_prototypes: cannot open " + path);
  f << arr.dump(2) << "\n";
}

PrototypeStore load_prototypes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_prototypes: cannot open " + path);
  nlohmann::json arr = nlohmann::json::parse(f);
  PrototypeStore s;
  for (const auto& rec : arr) {
    Prototype p;
    p.category = rec.at("category_id").get<int>();
    p.center = rec.at("center").get<std::vector<double>>();
    p.radius = rec.at("radius").get<double>();
    s.prototypes.push_back(std::move(p));
    s.D = rec.at("D").get<int>();
    s.K = rec.at("K").get<int>();
    s.em_iterations = rec.at("em_iterations").get<int>();
    s.seed = rec.at("seed").get<uint64_t>();
  }
  return s;
}

}  // namespace ps
