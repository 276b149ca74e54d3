#include "protoshape/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "protoshape/rng.hpp"

namespace ps {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read(const json& obj, const char* k, T& into) {
  if (obj.contains(k)) into = obj.at(k).get<T>();
}

Sampling parse_sampling(const std::string& s) {
  if (s == "none") return Sampling::None;
  if (s == "cos") return Sampling::Cos;
  if (s == "l2") return Sampling::L2;
  throw ConfigError("sampling must be none|cos|l2, got '" + s + "'");
}

const char* sampling_name(Sampling s) {
  switch (s) {
    case Sampling::None: return "none";
    case Sampling::Cos: return "cos";
    default: return "l2";
  }
}

PrototypeMode parse_mode(const std::string& s) {
  if (s == "weighted_mean") return PrototypeMode::WeightedMean;
  if (s == "densest_cluster") return PrototypeMode::DensestCluster;
  throw ConfigError("prototype mode must be weighted_mean|densest_cluster, got '" + s + "'");
}

BceOrientation parse_bce(const std::string& s) {
  if (s == "as_printed") return BceOrientation::AsPrinted;
  if (s == "standard") return BceOrientation::Standard;
  throw ConfigError("bce_orientation must be as_printed|standard, got '" + s + "'");
}

void validate(const ExperimentConfig& c) {
  if (c.dataset.categories < 2) throw ConfigError("dataset.categories must be >= 2");
  if (c.dataset.categories > kNumFamilies)
    throw ConfigError("dataset.categories exceeds the number of shape families");
  if (c.dataset.per_category < 10) throw ConfigError("dataset.per_category must be >= 10");
  if (c.dataset.nonstandard_fraction < 0 || c.dataset.nonstandard_fraction > 1)
    throw ConfigError("dataset.nonstandard_fraction must lie in [0,1]");
  if (c.dataset.views < 1) throw ConfigError("dataset.views must be >= 1");
  if (c.pretext.dim < 4) throw ConfigError("pretext.dim must be >= 4");
  if (c.prototype.K < 1) throw ConfigError("prototype.K must be >= 1");
  if (c.prototype.E < 1) throw ConfigError("prototype.E must be >= 1");
  const auto& m = c.completion;
  if (static_cast<int>(m.channels.size()) != m.levels)
    throw ConfigError("completion.channels must list one width per level");
  if (m.grid_resolution % (1 << m.levels) != 0)
    throw ConfigError("completion.grid_resolution must be divisible by 2^levels");
  if (m.n_sparse < 1 || m.rho < 1) throw ConfigError("completion.n_sparse and rho must be >= 1");
  if (m.theta <= 0 || m.theta >= 1) throw ConfigError("completion.theta must lie in (0,1)");
  if (m.batch < 1) throw ConfigError("completion.batch must be >= 1");
  if (m.train_views_per_epoch < 1 || m.train_views_per_epoch > c.dataset.views)
    throw ConfigError("completion.train_views_per_epoch must lie in [1, dataset.views]");
  if (m.val_views < 1 || m.val_views > c.dataset.views)
    throw ConfigError("completion.val_views must lie in [1, dataset.views]");
  if (c.toggles.spf_levels < 0 || c.toggles.spf_levels > m.levels)
    throw ConfigError("toggles.spf_levels must lie in [0, completion.levels]");
  if (c.projection.V < 1 || c.projection.M < 1 || c.projection.H < 2 || c.projection.W < 2)
    throw ConfigError("projection parameters out of range");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig c;
  try {
    check_keys(j, "config",
               {"dataset", "pretext", "prototype", "completion", "toggles", "projection", "eval",
                "report", "seed", "threads", "deterministic", "out"});
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, "dataset",
                 {"root", "categories", "per_category", "nonstandard_fraction", "n_complete",
                  "n_partial", "views", "image_res"});
      read(d, "root", c.dataset_root);
      read(d, "categories", c.dataset.categories);
      read(d, "per_category", c.dataset.per_category);
      read(d, "nonstandard_fraction", c.dataset.nonstandard_fraction);
      read(d, "n_complete", c.dataset.n_complete);
      read(d, "n_partial", c.dataset.n_partial);
      read(d, "views", c.dataset.views);
      read(d, "image_res", c.dataset.image_res);
    }
    if (j.contains("pretext")) {
      const json& p = j.at("pretext");
      check_keys(p, "pretext", {"dim", "epochs", "lr", "batch"});
      read(p, "dim", c.pretext.dim);
      read(p, "epochs", c.pretext.epochs);
      read(p, "lr", c.pretext.lr);
      read(p, "batch", c.pretext.batch);
    }
    if (j.contains("prototype")) {
      const json& p = j.at("prototype");
      check_keys(p, "prototype", {"K", "E", "mode"});
      read(p, "K", c.prototype.K);
      read(p, "E", c.prototype.E);
      if (p.contains("mode")) c.prototype.mode = parse_mode(p.at("mode").get<std::string>());
    }
    if (j.contains("completion")) {
      const json& m = j.at("completion");
      check_keys(m, "completion",
                 {"grid_resolution", "levels", "channels", "n_sparse", "rho", "theta", "mlp_hidden",
                  "epochs", "batch", "lr", "lambda_proj", "train_views_per_epoch", "val_views"});
      read(m, "grid_resolution", c.completion.grid_resolution);
      read(m, "levels", c.completion.levels);
      read(m, "channels", c.completion.channels);
      read(m, "n_sparse", c.completion.n_sparse);
      read(m, "rho", c.completion.rho);
      read(m, "theta", c.completion.theta);
      read(m, "mlp_hidden", c.completion.mlp_hidden);
      read(m, "epochs", c.completion.epochs);
      read(m, "batch", c.completion.batch);
      read(m, "lr", c.completion.lr);
      read(m, "lambda_proj", c.completion.lambda_proj);
      read(m, "train_views_per_epoch", c.completion.train_views_per_epoch);
      read(m, "val_views", c.completion.val_views);
    }
    if (j.contains("toggles")) {
      const json& t = j.at("toggles");
      check_keys(t, "toggles",
                 {"spf_levels", "use_prior", "sampling", "use_proj", "bce_orientation"});
      read(t, "spf_levels", c.toggles.spf_levels);
      read(t, "use_prior", c.toggles.use_prior);
      if (t.contains("sampling"))
        c.toggles.sampling = parse_sampling(t.at("sampling").get<std::string>());
      read(t, "use_proj", c.toggles.use_proj);
      if (t.contains("bce_orientation"))
        c.toggles.bce_orientation = parse_bce(t.at("bce_orientation").get<std::string>());
    }
    if (j.contains("projection")) {
      const json& p = j.at("projection");
      check_keys(p, "projection", {"V", "M", "H", "W", "eps"});
      read(p, "V", c.projection.V);
      read(p, "M", c.projection.M);
      read(p, "H", c.projection.H);
      read(p, "W", c.projection.W);
      read(p, "eps", c.projection.eps);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, "eval", {"split"});
      read(e, "split", c.eval.split);
      if (c.eval.split != "train" && c.eval.split != "val" && c.eval.split != "test")
        throw ConfigError("eval.split must be train|val|test");
    }
    if (j.contains("report")) {
      const json& r = j.at("report");
      check_keys(r, "report", {"ledgers", "labels"});
      read(r, "ledgers", c.report.ledgers);
      read(r, "labels", c.report.labels);
      if (!c.report.labels.empty() && c.report.labels.size() != c.report.ledgers.size())
        throw ConfigError("report.labels must match report.ledgers in length");
    }
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
    read(j, "deterministic", c.deterministic);
    read(j, "out", c.out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  c.dataset.seed = c.seed;
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string dump_config(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"root", c.dataset_root},
                  {"categories", c.dataset.categories},
                  {"per_category", c.dataset.per_category},
                  {"nonstandard_fraction", c.dataset.nonstandard_fraction},
                  {"n_complete", c.dataset.n_complete},
                  {"n_partial", c.dataset.n_partial},
                  {"views", c.dataset.views},
                  {"image_res", c.dataset.image_res}};
  j["pretext"] = {{"dim", c.pretext.dim},
                  {"epochs", c.pretext.epochs},
                  {"lr", c.pretext.lr},
                  {"batch", c.pretext.batch}};
  j["prototype"] = {{"K", c.prototype.K},
                    {"E", c.prototype.E},
                    {"mode", c.prototype.mode == PrototypeMode::WeightedMean ? "weighted_mean"
                                                                             : "densest_cluster"}};
  j["completion"] = {{"grid_resolution", c.completion.grid_resolution},
                     {"levels", c.completion.levels},
                     {"channels", c.completion.channels},
                     {"n_sparse", c.completion.n_sparse},
                     {"rho", c.completion.rho},
                     {"theta", c.completion.theta},
                     {"mlp_hidden", c.completion.mlp_hidden},
                     {"epochs", c.completion.epochs},
                     {"batch", c.completion.batch},
                     {"lr", c.completion.lr},
                     {"lambda_proj", c.completion.lambda_proj},
                     {"train_views_per_epoch", c.completion.train_views_per_epoch},
                     {"val_views", c.completion.val_views}};
  j["toggles"] = {{"spf_levels", c.toggles.spf_levels},
                  {"use_prior", c.toggles.use_prior},
                  {"sampling", sampling_name(c.toggles.sampling)},
                  {"use_proj", c.toggles.use_proj},
                  {"bce_orientation",
                   c.toggles.bce_orientation == BceOrientation::AsPrinted ? "as_printed"
                                                                          : "standard"}};
  j["projection"] = {{"V", c.projection.V},
                     {"M", c.projection.M},
                     {"H", c.projection.H},
                     {"W", c.projection.W},
                     {"eps", c.projection.eps}};
  j["eval"] = {{"split", c.eval.split}};
  j["report"] = {{"ledgers", c.report.ledgers}, {"labels", c.report.labels}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["deterministic"] = c.deterministic;
  j["out"] = c.out;
  return j.dump(2);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  // threads/deterministic/out affect scheduling and placement, not results;
  // they stay out of the hash so resumes across machines are accepted.
  ExperimentConfig c = cfg;
  c.threads = 1;
  c.deterministic = false;
  c.out = "";
  return fnv1a(dump_config(c));
}

}  // namespace ps
