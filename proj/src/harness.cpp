#include "protoshape/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "protoshape/losses.hpp"
#include "protoshape/ops.hpp"
#include "protoshape/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ps {
namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  return f;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

CompletionConfig completion_config(const ExperimentConfig& cfg) {
  CompletionConfig cc;
  cc.grid_resolution = cfg.completion.grid_resolution;
  cc.levels = cfg.completion.levels;
  cc.channels = cfg.completion.channels;
  cc.n_sparse = cfg.completion.n_sparse;
  cc.rho = cfg.completion.rho;
  cc.theta = cfg.completion.theta;
  cc.mlp_hidden = cfg.completion.mlp_hidden;
  cc.spf_levels = cfg.toggles.spf_levels;
  cc.use_prior = cfg.toggles.use_prior;
  return cc;
}

ProjectionSpec projection_spec(const ExperimentConfig& cfg) {
  ProjectionSpec p;
  p.mask.H = cfg.projection.H;
  p.mask.W = cfg.projection.W;
  p.mask.M = cfg.projection.M;
  p.V = cfg.projection.V;
  p.eps = cfg.projection.eps;
  p.orientation = cfg.toggles.bce_orientation;
  return p;
}

int effective_threads(const ExperimentConfig& cfg) {
  return cfg.deterministic ? 1 : cfg.threads;
}

std::vector<LabeledCloud> labeled_completes(const DatasetManifest& m,
                                            const std::vector<std::string>& ids) {
  std::vector<LabeledCloud> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const SampleRecord& r = m.find(id);
    out.push_back({read_pcf(m.root + "/" + r.complete_path), r.category});
  }
  return out;
}

// Tag each entry standard/nonstandard/mid by its u rank: lowest 20% of priors
// are "standard" (closest to a prototype), highest 20% "nonstandard".
std::vector<std::string> tag_by_prior(const std::vector<double>& u) {
  int n = static_cast<int>(u.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return u[a] < u[b]; });
  int band = n / 5;
  std::vector<std::string> tags(n, "mid");
  for (int r = 0; r < band; ++r) tags[order[r]] = "standard";
  for (int r = n - band; r < n; ++r) tags[order[r]] = "nonstandard";
  return tags;
}

std::vector<int> pick_views(int views, int k, uint64_t seed) {
  std::vector<int> v(views);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(seed);
  for (int i = views - 1; i > 0; --i) std::swap(v[i], v[static_cast<int>(rng.below(i + 1))]);
  v.resize(k);
  std::sort(v.begin(), v.end());
  return v;
}

std::string extractor_path(const ExperimentConfig& cfg) { return cfg.out + "/extractor.ckpt"; }
std::string prototypes_path(const ExperimentConfig& cfg) { return cfg.out + "/prototypes.json"; }

void save_extractor(const std::string& path, const FeatureExtractor& ext, uint64_t hash,
                    const Adam& opt, int epochs_done) {
  Checkpoint ck;
  ck.config_hash = hash;
  pack_params(ck, "p.", ext.params);
  pack_adam(ck, "adam.", opt);
  pack_scalar(ck, "__epoch", epochs_done);
  pack_scalar(ck, "__dim", ext.dim);
  pack_scalar(ck, "__classes", ext.classes);
  save_checkpoint(path, ck);
}

void save_completion(const std::string& path, const CompletionNet& net, uint64_t hash,
                     int epochs_done) {
  Checkpoint ck;
  ck.config_hash = hash;
  pack_params(ck, "p.", net.params);
  pack_scalar(ck, "__epoch", epochs_done);
  save_checkpoint(path, ck);
}

CompletionNet load_completion(const std::string& path, uint64_t expected_hash,
                              const CompletionConfig& cc) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_hash != expected_hash)
    throw ConfigError("completion checkpoint was produced under a different config: " + path);
  CompletionNet net;
  net.cfg = cc;
  net.params = unpack_params(ck, "p.");
  return net;
}

PrototypeStore load_prototype_store(const ExperimentConfig& cfg) {
  PrototypeStore protos = load_prototypes(prototypes_path(cfg));
  if (static_cast<int>(protos.prototypes.size()) != cfg.dataset.categories)
    throw ConfigError("prototype store does not cover every category");
  if (protos.D != cfg.pretext.dim)
    throw ConfigError("prototype store dimensionality does not match pretext.dim");
  return protos;
}

struct SampleRef {
  std::string id;
  int view = 0;
};

// Mean dense-CD / F-score over a list of (id, view) partials; optionally keeps
// the predicted clouds for consistency tracks.
struct BatchEval {
  std::vector<double> cd, f;
  std::vector<PointCloud> pred;
};

BatchEval eval_samples(const DatasetManifest& m, const CompletionNet& net,
                       const PriorCache& cache, const std::vector<SampleRef>& refs, int threads,
                       bool keep_pred) {
  int n = static_cast<int>(refs.size());
  BatchEval out;
  out.cd.assign(n, 0.0);
  out.f.assign(n, 0.0);
  if (keep_pred) out.pred.assign(n, PointCloud{});
  parallel_chunks(n, threads, [&](int, int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      TrainSample s = load_sample(m, refs[i].id, refs[i].view);
      double u = cache.at(sample_key(refs[i].id, refs[i].view)).u;
      ForwardResult fr = net.forward(s.partial, u);
      out.cd[i] = chamfer(fr.dense_cloud, s.complete);
      out.f[i] = f_score(fr.dense_cloud, s.complete);
      if (keep_pred) out.pred[i] = fr.dense_cloud;
    }
  });
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string sample_key(const std::string& id, int view) {
  return id + "_v" + std::to_string(view);
}

uint64_t pretext_config_hash(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = json::parse(dump_config(cfg)).at("dataset");
  j["dataset"]["root"] = "";
  // epochs stay out: a checkpoint records how far it got, and training to
  // epoch N then extending to M replays the same schedule as one N..M run
  j["pretext"] = {{"dim", cfg.pretext.dim}, {"lr", cfg.pretext.lr}, {"batch", cfg.pretext.batch}};
  j["seed"] = cfg.seed;
  return fnv1a(j.dump());
}

uint64_t prototype_config_hash(const ExperimentConfig& cfg) {
  json j;
  j["pretext_hash"] = pretext_config_hash(cfg);
  j["K"] = cfg.prototype.K;
  j["E"] = cfg.prototype.E;
  j["mode"] = cfg.prototype.mode == PrototypeMode::WeightedMean ? 0 : 1;
  return fnv1a(j.dump());
}

FeatureExtractor load_extractor(const std::string& path, uint64_t expected_hash) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config_hash != expected_hash)
    throw ConfigError("extractor checkpoint was produced under a different config: " + path);
  FeatureExtractor ext;
  ext.dim = static_cast<int>(unpack_scalar(ck, "__dim"));
  ext.classes = static_cast<int>(unpack_scalar(ck, "__classes"));
  ext.trained = unpack_scalar(ck, "__epoch") > 0;
  ext.params = unpack_params(ck, "p.");
  return ext;
}

PriorEntry compute_prior(const TrainSample& s, const FeatureExtractor& ext,
                         const PrototypeStore& protos, Sampling sampling) {
  std::vector<double> pf = ext.extract_feature(s.partial);
  PriorEntry e;
  e.u = soft_prior(pf, protos.prototypes);
  std::vector<double> cf = ext.extract_feature(s.complete);
  e.cos = cosine_gap(cf, pf);
  switch (sampling) {
    case Sampling::None:
      e.w = 1.0;
      break;
    case Sampling::Cos:
      e.w = difficulty_weight(e.cos);
      break;
    case Sampling::L2: {
      double nc = 0, np = 0;
      for (size_t d = 0; d < cf.size(); ++d) {
        nc += cf[d] * cf[d];
        np += pf[d] * pf[d];
      }
      nc = std::sqrt(nc);
      np = std::sqrt(np);
      if (nc <= 0.0 || np <= 0.0) throw ContractError("compute_prior: zero feature vector");
      double dist = 0;
      for (size_t d = 0; d < cf.size(); ++d) {
        double t = cf[d] / nc - pf[d] / np;
        dist += t * t;
      }
      // same logistic as the cosine path, driven by the unit-sphere distance
      e.w = difficulty_weight(1.0 - std::sqrt(dist));
      break;
    }
  }
  return e;
}

PriorCache compute_priors(const DatasetManifest& m, const std::vector<std::string>& ids,
                          const FeatureExtractor& ext, const PrototypeStore& protos,
                          Sampling sampling, int threads) {
  int views = m.config.views;
  int n = static_cast<int>(ids.size());
  std::vector<std::vector<PriorEntry>> per_id(n);
  parallel_chunks(n, threads, [&](int, int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      per_id[i].resize(views);
      for (int v = 0; v < views; ++v)
        per_id[i][v] = compute_prior(load_sample(m, ids[i], v), ext, protos, sampling);
    }
  });
  PriorCache cache;
  for (int i = 0; i < n; ++i)
    for (int v = 0; v < views; ++v) cache[sample_key(ids[i], v)] = per_id[i][v];
  return cache;
}

EvalSummary evaluate_split(const ExperimentConfig& cfg, const DatasetManifest& m,
                           const CompletionNet& net, const FeatureExtractor& ext,
                           const PrototypeStore& protos, const std::vector<std::string>& ids) {
  int threads = effective_threads(cfg);
  int views = m.config.views;
  PriorCache cache = compute_priors(m, ids, ext, protos, cfg.toggles.sampling, threads);

  std::vector<SampleRef> refs;
  for (const auto& id : ids)
    for (int v = 0; v < views; ++v) refs.push_back({id, v});
  BatchEval be = eval_samples(m, net, cache, refs, threads, true);

  EvalSummary es;
  std::vector<double> us;
  for (const auto& r : refs) us.push_back(cache.at(sample_key(r.id, r.view)).u);
  std::vector<std::string> tags = tag_by_prior(us);

  std::vector<double> std_cd, non_cd;
  for (size_t i = 0; i < refs.size(); ++i) {
    const PriorEntry& pe = cache.at(sample_key(refs[i].id, refs[i].view));
    EvalRow row;
    row.sample_id = sample_key(refs[i].id, refs[i].view);
    row.category = m.find(refs[i].id).category;
    row.cd_dense = be.cd[i];
    row.f_score = be.f[i];
    row.u_prior = pe.u;
    row.weight = cfg.toggles.sampling == Sampling::None ? 1.0 : pe.w;
    row.split_tag = tags[i];
    if (tags[i] == "standard") std_cd.push_back(be.cd[i]);
    if (tags[i] == "nonstandard") non_cd.push_back(be.cd[i]);
    es.rows.push_back(std::move(row));
  }
  es.mean_cd = mean_of(be.cd);
  es.mean_f = mean_of(be.f);
  es.mean_cd_standard = mean_of(std_cd);
  es.mean_cd_nonstandard = mean_of(non_cd);

  std::vector<std::vector<PointCloud>> tracks;
  for (size_t i = 0; i < ids.size(); ++i) {
    std::vector<PointCloud> track(be.pred.begin() + static_cast<long>(i) * views,
                                  be.pred.begin() + static_cast<long>(i + 1) * views);
    tracks.push_back(std::move(track));
  }
  es.consistency = consistency(tracks);
  return es;
}

TrainOutcome train_completion(const ExperimentConfig& cfg, const DatasetManifest& m,
                              const FeatureExtractor& ext, const PrototypeStore& protos,
                              const std::string& outdir) {
  ensure_dir(outdir);
  int threads = effective_threads(cfg);
  uint64_t chash = config_hash(cfg);
  CompletionConfig cc = completion_config(cfg);
  CompletionNet net = CompletionNet::create(cc, hash_combine(cfg.seed, 0xc03d));
  Adam opt(cfg.completion.lr);
  ProjectionSpec pspec = projection_spec(cfg);

  std::vector<std::string> prior_ids = m.train_ids;
  prior_ids.insert(prior_ids.end(), m.val_ids.begin(), m.val_ids.end());
  PriorCache cache = compute_priors(m, prior_ids, ext, protos, cfg.toggles.sampling, threads);

  {
    json j = json::object();
    for (const auto& [k, e] : cache) j[k] = {{"u", e.u}, {"cos", e.cos}, {"w", e.w}};
    open_out(outdir + "/priors_cache.json") << j.dump(2) << "\n";
  }

  // spot-check the cache against fresh recomputation
  {
    std::vector<std::string> keys;
    for (const auto& [k, e] : cache) keys.push_back(k);
    int step = std::max(1, static_cast<int>(keys.size()) / 20);
    for (size_t i = 0; i < keys.size(); i += static_cast<size_t>(step)) {
      const std::string& k = keys[i];
      size_t us = k.rfind("_v");
      TrainSample s = load_sample(m, k.substr(0, us), std::stoi(k.substr(us + 2)));
      PriorEntry fresh = compute_prior(s, ext, protos, cfg.toggles.sampling);
      const PriorEntry& c = cache.at(k);
      if (std::abs(fresh.u - c.u) > 1e-12 || std::abs(fresh.w - c.w) > 1e-12)
        throw NumericError("prior cache mismatch at " + k);
    }
  }

  std::ofstream ledger = open_out(outdir + "/ledger.jsonl");
  std::ofstream timing = open_out(outdir + "/timing.jsonl");
  {
    json row = {{"type", "run"},
                {"command", "train"},
                {"config_hash", chash},
                {"cache_check", "ok"},
                {"train_shapes", m.train_ids.size()},
                {"val_shapes", m.val_ids.size()}};
    ledger << row.dump() << "\n";
  }

  std::vector<SampleRef> val_refs;
  for (const auto& id : m.val_ids)
    for (int v = 0; v < cfg.completion.val_views; ++v) val_refs.push_back({id, v});
  std::vector<double> val_u;
  for (const auto& r : val_refs) val_u.push_back(cache.at(sample_key(r.id, r.view)).u);
  std::vector<std::string> val_tags = tag_by_prior(val_u);

  TrainOutcome out;
  out.checkpoint_path = outdir + "/completion.ckpt";
  out.ledger_path = outdir + "/ledger.jsonl";
  int epochs = cfg.completion.epochs;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Timer tepoch;
    std::vector<SampleRef> list;
    for (const auto& id : m.train_ids) {
      std::vector<int> vs =
          cfg.completion.train_views_per_epoch >= m.config.views
              ? pick_views(m.config.views, m.config.views, 1)
              : pick_views(m.config.views, cfg.completion.train_views_per_epoch,
                           hash_combine(hash_combine(cfg.seed, 0xe90c),
                                        hash_combine(static_cast<uint64_t>(epoch), fnv1a(id))));
      for (int v : vs) list.push_back({id, v});
    }
    {
      Rng shuffle(hash_combine(cfg.seed, 0x5477 + static_cast<uint64_t>(epoch)));
      for (int i = static_cast<int>(list.size()) - 1; i > 0; --i)
        std::swap(list[i], list[static_cast<int>(shuffle.below(i + 1))]);
    }

    double ep_total = 0, ep_cd_sp = 0, ep_cd_dn = 0, ep_pr_sp = 0, ep_pr_dn = 0, ep_w = 0;
    int n = static_cast<int>(list.size());
    int B = cfg.completion.batch;
    for (int start = 0; start < n; start += B) {
      int bs = std::min(B, n - start);
      int nt = std::min(threads, bs);
      std::vector<Params> clones(std::max(nt, 1));
      struct Acc {
        double total = 0, cd_sp = 0, cd_dn = 0, pr_sp = 0, pr_dn = 0, w = 0;
      };
      std::vector<Acc> acc(std::max(nt, 1));
      std::vector<double> totals(bs, 0.0);
      parallel_chunks(bs, nt, [&](int t, int lo, int hi) {
        CompletionNet local = net;
        clones[t] = net.params.clone();
        local.params = clones[t];
        local.params.zero_grad();
        for (int i = lo; i < hi; ++i) {
          const SampleRef& ref = list[start + i];
          std::string key = sample_key(ref.id, ref.view);
          TrainSample s = load_sample(m, ref.id, ref.view);
          const PriorEntry& pe = cache.at(key);
          ForwardResult fr = local.forward(s.partial, pe.u);
          double cd_sp = chamfer(fr.sparse, s.complete);
          Tensor cd_dn = chamfer_loss(fr.dense, s.complete);
          double pr_sp = 0;
          Tensor pr_dn = Tensor::scalar(0.0);
          double lambda = 0.0;
          if (cfg.toggles.use_proj) {
            lambda = cfg.completion.lambda_proj;
            uint64_t vseed = hash_combine(cfg.seed, fnv1a(key) ^ 0x9dull);
            std::vector<Mat3> views = random_views(pspec.V, vseed);
            pr_dn = projection_loss(fr.dense, s.complete, views, pspec, vseed);
            pr_sp = projection_loss_value(fr.sparse, s.complete, views, pspec, vseed);
          }
          double w = cfg.toggles.sampling == Sampling::None ? 1.0 : pe.w;
          LossReport rep = total_loss(cd_sp, cd_dn, pr_sp, pr_dn, w, lambda);
          totals[i] = rep.total;
          acc[t].total += rep.total;
          acc[t].cd_sp += rep.cd_sparse;
          acc[t].cd_dn += rep.cd_dense;
          acc[t].pr_sp += rep.proj_sparse;
          acc[t].pr_dn += rep.proj_dense;
          acc[t].w += rep.weight;
          if (!std::isfinite(rep.total)) continue;  // diagnosed after the batch
          backward(mul_scalar(rep.total_tensor, 1.0 / bs));
        }
      });
      net.params.zero_grad();
      for (auto& c : clones)
        if (!c.t.empty()) net.params.accumulate_grads(c);
      bool finite = net.params.grads_finite() && all_finite(totals);
      if (!finite) {
        json diag = {{"type", "nan_abort"}, {"epoch", epoch}, {"batch_start", start}};
        json keys = json::array(), vals = json::array();
        for (int i = 0; i < bs; ++i) {
          keys.push_back(sample_key(list[start + i].id, list[start + i].view));
          vals.push_back(totals[i]);
        }
        diag["batch_samples"] = keys;
        diag["sample_totals"] = vals;
        open_out(outdir + "/diagnostics.json") << diag.dump(2) << "\n";
        throw NumericError("non-finite loss or gradient; diagnostics written to " + outdir +
                           "/diagnostics.json");
      }
      opt.step(net.params);
      for (const auto& a : acc) {
        ep_total += a.total;
        ep_cd_sp += a.cd_sp;
        ep_cd_dn += a.cd_dn;
        ep_pr_sp += a.pr_sp;
        ep_pr_dn += a.pr_dn;
        ep_w += a.w;
      }
    }

    BatchEval ve = eval_samples(m, net, cache, val_refs, threads, false);
    std::vector<double> std_cd, non_cd;
    for (size_t i = 0; i < val_refs.size(); ++i) {
      if (val_tags[i] == "standard") std_cd.push_back(ve.cd[i]);
      if (val_tags[i] == "nonstandard") non_cd.push_back(ve.cd[i]);
    }
    double val_cd = mean_of(ve.cd);
    if (epoch == 0) out.epoch1_val_cd = val_cd;
    out.final_val_cd = val_cd;

    json row = {{"type", "epoch"},
                {"epoch", epoch + 1},
                {"train_total", ep_total / n},
                {"train_cd_sparse", ep_cd_sp / n},
                {"train_cd_dense", ep_cd_dn / n},
                {"train_proj_sparse", ep_pr_sp / n},
                {"train_proj_dense", ep_pr_dn / n},
                {"train_weight_mean", ep_w / n},
                {"val_cd_dense", val_cd},
                {"val_f_score", mean_of(ve.f)},
                {"val_cd_standard", mean_of(std_cd)},
                {"val_cd_nonstandard", mean_of(non_cd)}};
    ledger << row.dump() << "\n";
    timing << json({{"epoch", epoch + 1}, {"seconds", tepoch.seconds()}}).dump() << "\n";
  }

  std::vector<SampleRef> test_refs;
  for (const auto& id : m.test_ids)
    for (int v = 0; v < cfg.completion.val_views; ++v) test_refs.push_back({id, v});
  PriorCache test_cache =
      compute_priors(m, m.test_ids, ext, protos, cfg.toggles.sampling, threads);
  BatchEval te = eval_samples(m, net, test_cache, test_refs, threads, false);
  json fin = {{"type", "final"},
              {"test_cd_dense", mean_of(te.cd)},
              {"test_f_score", mean_of(te.f)}};
  ledger << fin.dump() << "\n";

  save_completion(out.checkpoint_path, net, chash, epochs);
  return out;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  DatasetManifest m = gen_dataset(cfg.dataset, cfg.dataset_root);
  std::cout << "dataset: " << m.samples.size() << " shapes, "
            << m.samples.size() * static_cast<size_t>(cfg.dataset.views) << " partials\n"
            << "split: " << m.train_ids.size() << " train / " << m.val_ids.size() << " val / "
            << m.test_ids.size() << " test\n"
            << "root: " << m.root << "\n";
  return 0;
}

int cmd_train_pretext(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  DatasetManifest m = load_manifest(cfg.dataset_root);
  std::vector<LabeledCloud> train = labeled_completes(m, m.train_ids);
  std::vector<LabeledCloud> heldout = labeled_completes(m, m.val_ids);

  uint64_t phash = pretext_config_hash(cfg);
  std::string path = extractor_path(cfg);
  FeatureExtractor ext = FeatureExtractor::create(cfg.pretext.dim, cfg.dataset.categories,
                                                  hash_combine(cfg.seed, 0xfea7));
  Adam opt(cfg.pretext.lr);
  int start = 0;
  if (fs::exists(path)) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.config_hash != phash)
      throw ConfigError("existing extractor checkpoint does not match this config; refusing");
    ext.params = unpack_params(ck, "p.");
    unpack_adam(ck, "adam.", opt);
    start = static_cast<int>(unpack_scalar(ck, "__epoch"));
    ext.trained = start > 0;
  }
  if (start < cfg.pretext.epochs)
    train_classifier_range(ext, train, start, cfg.pretext.epochs, cfg.pretext.batch,
                           hash_combine(cfg.seed, 0x9c1a), effective_threads(cfg), opt);
  double acc = classifier_accuracy(ext, heldout);
  save_extractor(path, ext, phash, opt, std::max(start, cfg.pretext.epochs));

  json rep = {{"heldout_accuracy", acc},
              {"epochs", std::max(start, cfg.pretext.epochs)},
              {"train_shapes", train.size()},
              {"heldout_shapes", heldout.size()}};
  open_out(cfg.out + "/pretext_report.json") << rep.dump(2) << "\n";
  std::cout << "pretext heldout accuracy: " << acc << "\n";
  return 0;
}

int cmd_fit_prototypes(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  DatasetManifest m = load_manifest(cfg.dataset_root);
  FeatureExtractor ext = load_extractor(extractor_path(cfg), pretext_config_hash(cfg));

  PrototypeStore store;
  store.D = ext.dim;
  store.K = cfg.prototype.K;
  store.em_iterations = cfg.prototype.E;
  store.seed = cfg.seed;
  json trace = json::object();
  int threads = effective_threads(cfg);

  for (int c = 0; c < cfg.dataset.categories; ++c) {
    std::vector<std::string> ids;
    for (const auto& id : m.train_ids)
      if (m.find(id).category == c) ids.push_back(id);
    if (static_cast<int>(ids.size()) < cfg.prototype.K)
      throw ConfigError("category " + std::to_string(c) + " has fewer shapes than prototype.K");
    std::vector<std::vector<double>> feats(ids.size());
    parallel_chunks(static_cast<int>(ids.size()), threads, [&](int, int lo, int hi) {
      for (int i = lo; i < hi; ++i)
        feats[i] = ext.extract_feature(read_pcf(m.root + "/" + m.find(ids[i]).complete_path));
    });
    GmmState g = fit_gmm_em(feats, cfg.prototype.K, cfg.prototype.E,
                            hash_combine(cfg.seed, 0x6e00 + static_cast<uint64_t>(c)));
    for (size_t i = 1; i < g.loglik.size(); ++i) {
      double slack = 1e-7 * std::max(1.0, std::abs(g.loglik[i - 1]));
      if (g.loglik[i] + slack < g.loglik[i - 1])
        throw NumericError("EM log-likelihood decreased for category " + std::to_string(c));
    }
    store.prototypes.push_back(prototype_from_gmm(g, feats, c, cfg.prototype.mode));
    trace["category_" + std::to_string(c)] = g.loglik;
  }
  save_prototypes(prototypes_path(cfg), store);
  open_out(cfg.out + "/em_trace.json") << trace.dump(2) << "\n";
  std::cout << "prototypes: " << store.prototypes.size() << " categories, D=" << store.D << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  DatasetManifest m = load_manifest(cfg.dataset_root);
  FeatureExtractor ext = load_extractor(extractor_path(cfg), pretext_config_hash(cfg));
  PrototypeStore protos = load_prototype_store(cfg);
  TrainOutcome out = train_completion(cfg, m, ext, protos, cfg.out);
  std::cout << "train done: epoch-1 val CD " << out.epoch1_val_cd << ", final val CD "
            << out.final_val_cd << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  if (!fs::exists(extractor_path(cfg))) cmd_train_pretext(cfg);
  if (!fs::exists(prototypes_path(cfg))) cmd_fit_prototypes(cfg);
  DatasetManifest m = load_manifest(cfg.dataset_root);
  FeatureExtractor ext = load_extractor(extractor_path(cfg), pretext_config_hash(cfg));
  PrototypeStore protos = load_prototype_store(cfg);

  struct Variant {
    const char* name;
    int spf;
    bool prior;
    Sampling ds;
    bool proj;
    double ref_cd, ref_f;  // published reference points where available
  };
  const std::vector<Variant> grid = {
      {"A", 0, false, Sampling::None, false, 9.16, 0.635},
      {"B", 1, true, Sampling::None, false, -1, -1},
      {"C", 2, true, Sampling::None, false, -1, -1},
      {"D", 3, true, Sampling::None, false, -1, -1},
      {"E", 3, true, Sampling::Cos, false, -1, -1},
      {"F", 3, false, Sampling::Cos, true, -1, -1},
      {"G", 3, true, Sampling::L2, true, -1, -1},
      {"H", 3, true, Sampling::Cos, true, 8.05, 0.709},
  };

  std::ofstream csv = open_out(cfg.out + "/ablation.csv");
  csv << "variant,spf_levels,prior,sampling,projection,test_cd,test_f,test_cd_standard,"
         "test_cd_nonstandard,reference_cd,reference_f\n";
  for (const auto& v : grid) {
    ExperimentConfig c2 = cfg;
    c2.toggles.spf_levels = std::min(v.spf, c2.completion.levels);
    c2.toggles.use_prior = v.prior;
    c2.toggles.sampling = v.ds;
    c2.toggles.use_proj = v.proj;
    std::string outdir = cfg.out + "/ablate_" + v.name;
    TrainOutcome to = train_completion(c2, m, ext, protos, outdir);
    CompletionNet net = load_completion(to.checkpoint_path, config_hash(c2), completion_config(c2));
    EvalSummary es = evaluate_split(c2, m, net, ext, protos, m.test_ids);
    const char* ds = v.ds == Sampling::None ? "none" : (v.ds == Sampling::Cos ? "cos" : "l2");
    csv << v.name << "," << c2.toggles.spf_levels << "," << (v.prior ? 1 : 0) << "," << ds << ","
        << (v.proj ? 1 : 0) << "," << fmt(es.mean_cd) << "," << fmt(es.mean_f) << ","
        << fmt(es.mean_cd_standard) << "," << fmt(es.mean_cd_nonstandard) << ",";
    if (v.ref_cd > 0)
      csv << fmt(v.ref_cd) << "," << fmt(v.ref_f);
    else
      csv << ",";
    csv << "\n";
    std::cout << "variant " << v.name << ": test CD " << es.mean_cd << ", F " << es.mean_f << "\n";
  }
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  DatasetManifest m = load_manifest(cfg.dataset_root);
  FeatureExtractor ext = load_extractor(extractor_path(cfg), pretext_config_hash(cfg));
  PrototypeStore protos = load_prototype_store(cfg);
  CompletionNet net =
      load_completion(cfg.out + "/completion.ckpt", config_hash(cfg), completion_config(cfg));

  const std::vector<std::string>& ids = cfg.eval.split == "train"
                                            ? m.train_ids
                                            : (cfg.eval.split == "val" ? m.val_ids : m.test_ids);
  EvalSummary es = evaluate_split(cfg, m, net, ext, protos, ids);

  std::ofstream csv = open_out(cfg.out + "/eval.csv");
  csv << "sample_id,category,cd_dense,f_score,u_prior,weight,split_tag\n";
  for (const auto& r : es.rows)
    csv << r.sample_id << "," << r.category << "," << fmt(r.cd_dense) << "," << fmt(r.f_score)
        << "," << fmt(r.u_prior) << "," << fmt(r.weight) << "," << r.split_tag << "\n";

  json sum = {{"split", cfg.eval.split},       {"rows", es.rows.size()},
              {"mean_cd_dense", es.mean_cd},   {"mean_f_score", es.mean_f},
              {"mean_cd_standard", es.mean_cd_standard},
              {"mean_cd_nonstandard", es.mean_cd_nonstandard},
              {"consistency", es.consistency}};
  open_out(cfg.out + "/eval_summary.json") << sum.dump(2) << "\n";
  std::cout << "eval " << cfg.eval.split << ": CD " << es.mean_cd << ", F " << es.mean_f
            << ", consistency " << es.consistency << "\n";
  return 0;
}

int cmd_report(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out);
  if (cfg.report.ledgers.empty()) throw ConfigError("report.ledgers is empty");
  std::vector<std::string> labels = cfg.report.labels;
  if (labels.empty())
    for (size_t i = 0; i < cfg.report.ledgers.size(); ++i)
      labels.push_back("run" + std::to_string(i + 1));

  std::ofstream longcsv = open_out(cfg.out + "/report_long.csv");
  longcsv << "run,epoch,metric,value\n";
  std::ofstream curves = open_out(cfg.out + "/curves.csv");
  curves << "run,subset,epoch,val_cd\n";
  json summary = json::array();

  const std::vector<std::string> metrics = {"train_total",       "train_cd_dense",
                                            "val_cd_dense",      "val_f_score",
                                            "val_cd_standard",   "val_cd_nonstandard"};
  for (size_t li = 0; li < cfg.report.ledgers.size(); ++li) {
    const std::string& path = cfg.report.ledgers[li];
    std::ifstream f(path);
    if (!f) throw IoError("cannot open ledger: " + path);
    json final_row;
    int epochs = 0;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json row;
      try {
        row = json::parse(line);
      } catch (const json::exception& e) {
        throw IoError("bad ledger line in " + path + ": " + e.what());
      }
      std::string type = row.value("type", "");
      if (type == "epoch") {
        int e = row.at("epoch").get<int>();
        epochs = std::max(epochs, e);
        for (const auto& mname : metrics)
          if (row.contains(mname))
            longcsv << labels[li] << "," << e << "," << mname << ","
                    << fmt(row.at(mname).get<double>()) << "\n";
        curves << labels[li] << ",standard," << e << ","
               << fmt(row.at("val_cd_standard").get<double>()) << "\n";
        curves << labels[li] << ",nonstandard," << e << ","
               << fmt(row.at("val_cd_nonstandard").get<double>()) << "\n";
      } else if (type == "final") {
        final_row = row;
      }
    }
    // filename only: absolute paths would make the artifact depend on where
    // the run directory happens to live, breaking byte-stable reruns
    json entry = {{"label", labels[li]},
                  {"ledger", fs::path(path).filename().string()},
                  {"epochs", epochs}};
    if (!final_row.is_null()) entry["final"] = final_row;
    summary.push_back(entry);
  }
  open_out(cfg.out + "/report.json") << json({{"runs", summary}}).dump(2) << "\n";
  std::cout << "report: " << cfg.report.ledgers.size() << " ledgers merged\n";
  return 0;
}

int run_command(const std::string& command, const ExperimentConfig& cfg) {
  try {
    if (command == "gen-data") return cmd_gen_data(cfg);
    if (command == "train-pretext") return cmd_train_pretext(cfg);
    if (command == "fit-prototypes") return cmd_fit_prototypes(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "ablate") return cmd_ablate(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "report") return cmd_report(cfg);
    std::cerr << "unknown command: " << command << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const EmptyOutputError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace ps
