#pragma once

#include <map>
#include <string>
#include <vector>

#include "protoshape/completion.hpp"
#include "protoshape/config.hpp"
#include "protoshape/datasynth.hpp"
#include "protoshape/pretext.hpp"

namespace ps {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-partial soft prior u, completeness cosine, and difficulty weight w,
// computed once against the frozen extractor and prototype store.
struct PriorEntry {
  double u = 1.0;
  double cos = 1.0;
  double w = 1.0;
};
using PriorCache = std::map<std::string, PriorEntry>;  // key: "<id>_v<view>"

std::string sample_key(const std::string& id, int view);

PriorEntry compute_prior(const TrainSample& s, const FeatureExtractor& ext,
                         const PrototypeStore& protos, Sampling sampling);
PriorCache compute_priors(const DatasetManifest& m, const std::vector<std::string>& ids,
                          const FeatureExtractor& ext, const PrototypeStore& protos,
                          Sampling sampling, int threads);

// Hashes covering only the config sections an artifact depends on, so e.g.
// ablation variants can share one extractor checkpoint.
uint64_t pretext_config_hash(const ExperimentConfig& cfg);
uint64_t prototype_config_hash(const ExperimentConfig& cfg);

FeatureExtractor load_extractor(const std::string& path, uint64_t expected_hash);

struct EvalRow {
  std::string sample_id;
  int category = 0;
  double cd_dense = 0;
  double f_score = 0;
  double u_prior = 0;
  double weight = 1;
  std::string split_tag;  // standard | nonstandard | mid, by u ranking
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  double mean_cd = 0;
  double mean_f = 0;
  double mean_cd_standard = 0;
  double mean_cd_nonstandard = 0;
  double consistency = 0;
};

EvalSummary evaluate_split(const ExperimentConfig& cfg, const DatasetManifest& m,
                           const CompletionNet& net, const FeatureExtractor& ext,
                           const PrototypeStore& protos, const std::vector<std::string>& ids);

struct TrainOutcome {
  double epoch1_val_cd = 0;
  double final_val_cd = 0;
  std::string checkpoint_path;
  std::string ledger_path;
};

TrainOutcome train_completion(const ExperimentConfig& cfg, const DatasetManifest& m,
                              const FeatureExtractor& ext, const PrototypeStore& protos,
                              const std::string& outdir);

int cmd_gen_data(const ExperimentConfig& cfg);
int cmd_train_pretext(const ExperimentConfig& cfg);
int cmd_fit_prototypes(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_ablate(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg);
int cmd_report(const ExperimentConfig& cfg);

// Dispatch plus the exception-to-exit-code mapping:
// 0 ok, 2 config/contract, 3 IO, 4 numeric failure.
int run_command(const std::string& command, const ExperimentConfig& cfg);

}  // namespace ps
