#pragma once

#include <string>
#include <vector>

#include "protoshape/geometry.hpp"
#include "protoshape/nn.hpp"
#include "protoshape/tensor.hpp"

namespace ps {

// Permutation-invariant point encoder (shared MLP 3->64->128->D, max pool)
// with a two-layer classifier head used only during pretext training.
struct FeatureExtractor {
  int dim = 128;
  int classes = 4;
  bool trained = false;
  Params params;

  static FeatureExtractor create(int dim, int classes, uint64_t seed);

  // Global feature of a cloud; part of the graph when build_graph is true.
  Tensor feature(const PointCloud& cloud) const;
  Tensor logits(const Tensor& feature) const;

  std::vector<double> extract_feature(const PointCloud& cloud) const;
};

struct LabeledCloud {
  PointCloud cloud;
  int label = 0;
};

struct PretextTrainReport {
  std::vector<double> epoch_loss;
  double heldout_accuracy = 0.0;
};

PretextTrainReport train_classifier(FeatureExtractor& ext, const std::vector<LabeledCloud>& train,
                                    const std::vector<LabeledCloud>& heldout, int epochs,
                                    double lr, int batch, uint64_t seed, int threads);

// Epoch-range variant with a caller-owned optimizer, for checkpoint/resume.
// The shuffle for epoch e depends only on (seed, e), so a resumed run replays
// the exact schedule of an uninterrupted one. Returns per-epoch mean loss.
std::vector<double> train_classifier_range(FeatureExtractor& ext,
                                           const std::vector<LabeledCloud>& train, int epoch_begin,
                                           int epoch_end, int batch, uint64_t seed, int threads,
                                           Adam& opt);

double classifier_accuracy(const FeatureExtractor& ext, const std::vector<LabeledCloud>& heldout);

struct GmmState {
  int K = 0;
  int D = 0;
  int N = 0;
  std::vector<double> pi;        // [K]
  std::vector<double> mu;        // [K*D]
  std::vector<double> var;       // [K*D], diagonal, floored at 1e-4
  std::vector<double> resp;      // [N*K], final-parameter responsibilities
  std::vector<double> loglik;    // one entry per EM iteration
};

constexpr double kVarianceFloor = 1e-4;
constexpr double kRadiusFloor = 1e-6;

// Diagonal-covariance EM in log space; means seeded by feature-space FPS.
GmmState fit_gmm_em(const std::vector<std::vector<double>>& features, int K, int E,
                    uint64_t seed);

enum class PrototypeMode { WeightedMean, DensestCluster };

struct Prototype {
  int category = 0;
  std::vector<double> center;
  double radius = kRadiusFloor;
};

Prototype prototype_from_gmm(const GmmState& gmm, const std::vector<std::vector<double>>& features,
                             int category, PrototypeMode mode = PrototypeMode::WeightedMean);

double soft_prior(const std::vector<double>& partial_feature,
                  const std::vector<Prototype>& prototypes);

double cosine_gap(const std::vector<double>& r, const std::vector<double>& r_partial);

// w = 1 + 1/(1 + exp(k*(t - (1-cos)))), t = 0.25, k = 8; strictly in (1,2)
double difficulty_weight(double cos_value);

struct PrototypeStore {
  std::vector<Prototype> prototypes;
  int D = 0;
  int K = 0;
  int em_iterations = 0;
  uint64_t seed = 0;
};

void save_prototypes(const std::string& path, const PrototypeStore& store);
PrototypeStore load_prototypes(const std::string& path);

}  // namespace ps
