// Acceptance harness: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoshape/harness.hpp"
#include "protoshape/losses.hpp"
#include "protoshape/ops.hpp"
#include "protoshape/serialize.hpp"
#include "testutil.hpp"

using namespace ps;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& detail) {
  std::cout << "[" << criterion << "] " << (ok ? "PASS" : "FAIL") << ": " << detail << std::endl;
  if (!ok) ++g_failures;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "<missing:" + path + ">";
  return std::string(std::istreambuf_iterator<char>(f), {});
}

const std::string kBase = "/tmp/ps_acceptance";

ExperimentConfig default_config() {
  ExperimentConfig cfg;  // library defaults are the experiment defaults
  cfg.dataset_root = kBase + "/data";
  cfg.out = kBase + "/run";
  cfg.threads = 1;
  return cfg;
}

// ---------------------------------------------------------------- criterion 1

bool grad_ok(Params& p, const std::function<Tensor()>& f, double tol, double h = 1e-5,
             int stride = 1) {
  return pstest::max_grad_rel_err(p, f, h, stride) < tol;
}

void criterion_gradients() {
  Timer t;
  bool ok = true;
  std::string what;
  auto run = [&](const char* name, const std::function<bool(uint64_t)>& check) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      if (!check(seed)) {
        ok = false;
        what += std::string(what.empty() ? "" : ", ") + name + "@" + std::to_string(seed);
        return;
      }
    }
  };

  run("linear", [](uint64_t s) {
    Rng rng(s);
    Params p;
    p["x"] = pstest::random_tensor({4, 5}, rng);
    p["w"] = pstest::random_tensor({5, 3}, rng);
    p["b"] = pstest::random_tensor({3}, rng);
    return grad_ok(p, [&] { return sum_all(mul(linear(p.at("x"), p.at("w"), p.at("b")),
                                               linear(p.at("x"), p.at("w"), p.at("b")))); },
                   1e-3);
  });
  run("conv3d", [](uint64_t s) {
    Rng rng(s + 10);
    Params p;
    p["x"] = pstest::random_tensor({2, 4, 4, 4}, rng);
    p["k"] = pstest::random_tensor({3, 2, 3, 3, 3}, rng);
    return grad_ok(p, [&] {
      Tensor y = conv3d(p.at("x"), p.at("k"), 1);
      return sum_all(mul(y, y));
    }, 1e-3, 1e-4);
  });
  run("conv3d_transposed", [](uint64_t s) {
    Rng rng(s + 20);
    Params p;
    p["y"] = pstest::random_tensor({3, 2, 2, 2}, rng);
    p["k"] = pstest::random_tensor({3, 2, 3, 3, 3}, rng);
    return grad_ok(p, [&] {
      Tensor x = conv3d_transposed(p.at("y"), p.at("k"), 2);
      return sum_all(mul(x, x));
    }, 1e-3, 1e-4);
  });
  run("pointwise", [](uint64_t s) {
    Rng rng(s + 30);
    Params p;
    p["x"] = pstest::random_tensor({24}, rng, true, 0.5);
    return grad_ok(p, [&] {
      Tensor a = tanh_op(p.at("x"));
      Tensor b = sigmoid(p.at("x"));
      Tensor c = log_op(add_scalar(mul(b, b), 0.1));
      return sum_all(add(mul(a, a), c));
    }, 1e-4, 1e-6);
  });
  run("max_over_points", [](uint64_t s) {
    Rng rng(s + 40);
    Params p;
    p["x"] = pstest::random_tensor({7, 5}, rng);
    return grad_ok(p, [&] {
      Tensor m = max_over_points(p.at("x"));
      return sum_all(mul(m, m));
    }, 1e-4, 1e-6);
  });
  run("point_feature_sampling", [](uint64_t s) {
    Rng rng(s + 50);
    Params p;
    p["f"] = pstest::random_tensor({2, 4, 4, 4}, rng);
    PointCloud q = pstest::random_cloud(5, rng);
    return grad_ok(p, [&] {
      Tensor v = point_feature_sampling(p.at("f"), q);
      return sum_all(mul(v, v));
    }, 1e-3);
  });
  run("chamfer", [](uint64_t s) {
    Rng rng(s + 60);
    Params p;
    p["pred"] = pstest::random_tensor({12, 3}, rng, true, 0.3);
    PointCloud gt = pstest::random_cloud(15, rng);
    return grad_ok(p, [&] { return chamfer_loss(p.at("pred"), gt); }, 1e-3, 1e-6);
  });
  run("render_mask", [](uint64_t s) {
    Rng rng(s + 70);
    Params p;
    p["pred"] = pstest::random_tensor({6, 3}, rng, true, 0.2);
    MaskSpec spec;
    spec.H = spec.W = 16;
    Mat3 view = rng.rotation();
    std::vector<int> idx = {0, 1, 2, 3, 4, 5};
    return grad_ok(p, [&] {
      Tensor img = render_mask(p.at("pred"), view, idx, spec);
      return sum_all(mul(img, img));
    }, 1e-3, 1e-6);
  });
  run("projection_loss", [](uint64_t s) {
    Rng rng(s + 80);
    Params p;
    p["pred"] = pstest::random_tensor({10, 3}, rng, true, 0.3);
    PointCloud gt = pstest::random_cloud(12, rng);
    ProjectionSpec spec;
    spec.mask.H = spec.mask.W = 16;
    spec.mask.M = 10;
    spec.V = 2;
    auto views = random_views(2, s);
    return grad_ok(p, [&] { return projection_loss(p.at("pred"), gt, views, spec, s); }, 1e-3,
                   1e-6);
  });
  // zero-initialized biases leave relu kinks exactly at 0 over empty grid
  // cells, where central differences are undefined; jitter moves them off
  auto jitter = [](Params& p, uint64_t seed) {
    Rng jr(seed);
    for (auto& [k, t] : p.t)
      for (auto& x : t.data()) x += 0.05 * jr.normal();
  };
  run("spf_block", [&](uint64_t s) {
    CompletionConfig cc;
    cc.grid_resolution = 4;
    cc.levels = 1;
    cc.channels = {3};
    cc.spf_levels = 1;
    cc.n_sparse = 8;
    cc.rho = 2;
    cc.mlp_hidden = {8};
    CompletionNet net = CompletionNet::create(cc, s);
    jitter(net.params, s + 500);
    Rng rng(s + 90);
    PointCloud cloud = pstest::random_cloud(15, rng);
    return grad_ok(net.params, [&] {
      EncodeResult enc = net.encode(cloud);
      Tensor f = net.spf_fuse(0, enc.levels[0], enc.bottleneck, Tensor::scalar(0.8));
      return sum_all(mul(f, f));
    }, 1e-3, 1e-6, 5);
  });
  run("full_forward", [&](uint64_t s) {
    CompletionConfig cc;
    cc.grid_resolution = 4;
    cc.levels = 1;
    cc.channels = {3};
    cc.spf_levels = 1;
    cc.n_sparse = 8;
    cc.rho = 2;
    cc.mlp_hidden = {8};
    CompletionNet net = CompletionNet::create(cc, s + 5);
    jitter(net.params, s + 600);
    Rng rng(s + 100);
    PointCloud partial = pstest::random_cloud(15, rng);
    PointCloud gt = pstest::random_cloud(20, rng);
    return grad_ok(net.params, [&] {
      ForwardResult fr = net.forward(partial, 0.9);
      return chamfer_loss(fr.dense, gt);
    }, 1e-3, 1e-6, 5);
  });

  double secs = t.seconds();
  report(1, ok && secs < 120.0,
         "gradient suite (finite differences, 3 seeds per op) in " + fmt(secs) + "s" +
             (what.empty() ? "" : "; failed: " + what));
}

// ---------------------------------------------------------------- criterion 2

void criterion_metric_oracles() {
  bool ok = true;
  Rng rng(202);
  for (int trial = 0; trial < 50 && ok; ++trial) {
    int na = 1 + static_cast<int>(rng.below(512));
    int nb = 1 + static_cast<int>(rng.below(512));
    PointCloud a = pstest::random_cloud(na, rng);
    PointCloud b = pstest::random_cloud(nb, rng);
    if (std::abs(chamfer(a, b, true) - chamfer(a, b, false)) > 1e-12) ok = false;
    // f_score from brute-force distances as the oracle
    auto pg = nearest_sq_brute(a, b);
    auto gp = nearest_sq_brute(b, a);
    double g = 0, h = 0;
    for (double d : pg)
      if (std::sqrt(d) < 0.01) g += 1;
    for (double d : gp)
      if (std::sqrt(d) < 0.01) h += 1;
    g /= na;
    h /= nb;
    double expect = (g + h == 0.0) ? 0.0 : 2.0 * g * h / (g + h);
    if (std::abs(f_score(a, b) - expect) > 1e-12) ok = false;
  }
  PointCloud o{{{0, 0, 0}}};
  PointCloud e1{{{1, 0, 0}}};
  if (chamfer(o, e1) != 2.0) ok = false;
  Rng r2(203);
  PointCloud gt = pstest::random_cloud(9, r2);
  PointCloud pred = gt;
  pred.points.push_back({50, 50, 50});
  if (std::abs(f_score(pred, gt) - 2.0 * 0.9 / 1.9) > 1e-12) ok = false;
  report(2, ok, "metric oracles: accelerated == brute force to 1e-12 on 50 pairs; hand cases exact");
}

// ------------------------------------------------------------- criteria 3 + 4

void criterion_em_and_formulas(const ExperimentConfig& cfg, const DatasetManifest& m,
                               const FeatureExtractor& ext) {
  bool ok3 = true;
  std::string what3;

  // per-category EM on the default corpus: monotone log-likelihood, determinism
  for (int c = 0; c < cfg.dataset.categories && ok3; ++c) {
    std::vector<std::vector<double>> feats;
    for (const auto& id : m.train_ids)
      if (m.find(id).category == c)
        feats.push_back(ext.extract_feature(read_pcf(m.root + "/" + m.find(id).complete_path)));
    GmmState g = fit_gmm_em(feats, cfg.prototype.K, cfg.prototype.E, 7000 + c);
    for (size_t i = 1; i < g.loglik.size(); ++i)
      if (g.loglik[i] + 1e-8 * std::max(1.0, std::abs(g.loglik[i - 1])) < g.loglik[i - 1]) {
        ok3 = false;
        what3 = "log-likelihood decreased, category " + std::to_string(c);
      }
    GmmState g2 = fit_gmm_em(feats, cfg.prototype.K, cfg.prototype.E, 7000 + c);
    if (g.mu != g2.mu || g.var != g2.var || g.pi != g2.pi || g.resp != g2.resp) {
      ok3 = false;
      what3 = "EM rerun not bit-identical, category " + std::to_string(c);
    }
  }

  // synthetic 2-blob recovery and K=1 closed form
  {
    Rng rng(301);
    std::vector<std::vector<double>> feats;
    for (int i = 0; i < 60; ++i) {
      std::vector<double> f(8, i < 30 ? 2.0 : -2.0);
      for (auto& x : f) x += 0.2 * rng.normal();
      feats.push_back(std::move(f));
    }
    GmmState g = fit_gmm_em(feats, 2, 20, 5);
    int ka = g.mu[0] > 0 ? 0 : 1;
    for (int d = 0; d < 8; ++d) {
      if (std::abs(g.mu[static_cast<size_t>(ka) * 8 + d] - 2.0) > 0.1) ok3 = false;
      if (std::abs(g.mu[static_cast<size_t>(1 - ka) * 8 + d] + 2.0) > 0.1) ok3 = false;
    }
    if (!ok3 && what3.empty()) what3 = "2-blob recovery off by more than 0.1";

    std::vector<double> mean(8, 0);
    for (const auto& f : feats)
      for (int d = 0; d < 8; ++d) mean[d] += f[d] / 60.0;
    GmmState g1 = fit_gmm_em(feats, 1, 10, 5);
    for (int d = 0; d < 8; ++d)
      if (std::abs(g1.mu[d] - mean[d]) > 1e-9) {
        ok3 = false;
        what3 = "K=1 closed form mismatch";
      }
  }
  report(3, ok3, "EM/prototype suite: monotone log-likelihood on the corpus, 2-blob recovery, "
                 "K=1 closed form, bit-identical reruns" +
                     (what3.empty() ? "" : " (" + what3 + ")"));

  // criterion 4: formula point checks
  bool ok4 = true;
  if (difficulty_weight(0.75) != 1.5) ok4 = false;
  if (std::abs(difficulty_weight(1.0) - (1.0 + 1.0 / (1.0 + std::exp(2.0)))) > 1e-9) ok4 = false;
  for (int i = 0; i <= 1000; ++i) {
    double w = difficulty_weight(-1.0 + 2.0 * i / 1000.0);
    if (!(w > 1.0 && w < 2.0)) ok4 = false;
  }
  // soft prior of every training complete against its own category's prototype
  {
    PrototypeStore store = load_prototypes(cfg.out + "/prototypes.json");
    for (const auto& id : m.train_ids) {
      const SampleRecord& r = m.find(id);
      auto f = ext.extract_feature(read_pcf(m.root + "/" + r.complete_path));
      std::vector<Prototype> own = {store.prototypes[static_cast<size_t>(r.category)]};
      if (soft_prior(f, own) > 1.0 + 1e-12) ok4 = false;
    }
  }
  report(4, ok4, "formula point checks: w(0.75)=1.5 exact, w(1)=1+1/(1+e^2), w in (1,2) over "
                 "1000-point sweep, soft prior <= 1 on own category");
}

// ---------------------------------------------------------------- criterion 5

struct PipelineResult {
  DatasetManifest manifest;
  FeatureExtractor ext;
  PrototypeStore protos;
  double pretext_acc = 0;
  double train_seconds = 0;
  TrainOutcome outcome;
};

PipelineResult criterion_end_to_end(const ExperimentConfig& cfg) {
  PipelineResult r;
  if (!fs::exists(cfg.dataset_root + "/manifest.json")) {
    Timer tg;
    gen_dataset(cfg.dataset, cfg.dataset_root);
    std::cout << "  (corpus generated in " << fmt(tg.seconds()) << "s)\n";
  }
  r.manifest = load_manifest(cfg.dataset_root);

  Timer tp;
  int rc = run_command("train-pretext", cfg);
  if (rc != 0) {
    report(5, false, "train-pretext exited with code " + std::to_string(rc));
    return r;
  }
  {
    std::ifstream f(cfg.out + "/pretext_report.json");
    nlohmann::json j = nlohmann::json::parse(f);
    r.pretext_acc = j.at("heldout_accuracy").get<double>();
  }
  std::cout << "  (pretext in " << fmt(tp.seconds()) << "s, heldout accuracy "
            << fmt(r.pretext_acc) << ")\n";
  rc = run_command("fit-prototypes", cfg);
  if (rc != 0) {
    report(5, false, "fit-prototypes exited with code " + std::to_string(rc));
    return r;
  }
  r.ext = load_extractor(cfg.out + "/extractor.ckpt", pretext_config_hash(cfg));
  r.protos = load_prototypes(cfg.out + "/prototypes.json");

  Timer tt;
  r.outcome = train_completion(cfg, r.manifest, r.ext, r.protos, cfg.out);
  r.train_seconds = tt.seconds();

  bool ok = r.pretext_acc >= 0.95 && r.train_seconds < 600.0 &&
            r.outcome.final_val_cd <= 0.5 * r.outcome.epoch1_val_cd;
  report(5, ok,
         "end-to-end desk run: pretext accuracy " + fmt(r.pretext_acc) + " (need >= 0.95), " +
             std::to_string(cfg.completion.epochs) + "-epoch training in " + fmt(r.train_seconds) +
             "s (need < 600), final val CD " + fmt(r.outcome.final_val_cd) + " vs epoch-1 " +
             fmt(r.outcome.epoch1_val_cd) + " (need <= 0.5x)");
  return r;
}

// ---------------------------------------------------------------- criterion 6

void criterion_ablation(const ExperimentConfig& base, const PipelineResult& pipe) {
  // directional A-vs-H reproduction at the full default epoch count: the
  // claim concerns converged models, and at short schedules seed noise
  // swamps the effect
  int cd_votes = 0, gap_votes = 0;
  std::string detail;
  for (uint64_t seed : {11ull, 12ull, 13ull}) {
    ExperimentConfig ca = base;
    ca.seed = seed;
    ca.toggles.spf_levels = 0;
    ca.toggles.use_prior = false;
    ca.toggles.sampling = Sampling::None;
    ca.toggles.use_proj = false;
    ca.out = kBase + "/abl_A_" + std::to_string(seed);
    train_completion(ca, pipe.manifest, pipe.ext, pipe.protos, ca.out);
    // reload through the checkpoint to exercise the artifact path
    CompletionNet na;
    {
      Checkpoint ck = load_checkpoint(ca.out + "/completion.ckpt");
      CompletionConfig cc;
      cc.grid_resolution = ca.completion.grid_resolution;
      cc.levels = ca.completion.levels;
      cc.channels = ca.completion.channels;
      cc.n_sparse = ca.completion.n_sparse;
      cc.rho = ca.completion.rho;
      cc.theta = ca.completion.theta;
      cc.mlp_hidden = ca.completion.mlp_hidden;
      cc.spf_levels = ca.toggles.spf_levels;
      cc.use_prior = ca.toggles.use_prior;
      na.cfg = cc;
      na.params = unpack_params(ck, "p.");
    }
    EvalSummary ea = evaluate_split(ca, pipe.manifest, na, pipe.ext, pipe.protos,
                                    pipe.manifest.test_ids);

    ExperimentConfig ch = base;
    ch.seed = seed;
    ch.out = kBase + "/abl_H_" + std::to_string(seed);
    train_completion(ch, pipe.manifest, pipe.ext, pipe.protos, ch.out);
    CompletionNet nh = na;
    {
      Checkpoint ck = load_checkpoint(ch.out + "/completion.ckpt");
      CompletionConfig cc = na.cfg;
      cc.spf_levels = ch.toggles.spf_levels;
      cc.use_prior = ch.toggles.use_prior;
      nh.cfg = cc;
      nh.params = unpack_params(ck, "p.");
    }
    EvalSummary eh = evaluate_split(ch, pipe.manifest, nh, pipe.ext, pipe.protos,
                                    pipe.manifest.test_ids);

    bool cd_win = eh.mean_cd <= ea.mean_cd;
    double gap_non = ea.mean_cd_nonstandard - eh.mean_cd_nonstandard;
    double gap_std = ea.mean_cd_standard - eh.mean_cd_standard;
    if (cd_win) ++cd_votes;
    if (gap_non >= gap_std) ++gap_votes;
    detail += " seed" + std::to_string(seed) + "[A=" + fmt(ea.mean_cd) + " H=" + fmt(eh.mean_cd) +
              " gapN=" + fmt(gap_non) + " gapS=" + fmt(gap_std) + "]";
  }
  bool ok = cd_votes >= 2 && gap_votes >= 2;
  report(6, ok, "directional ablation A vs H, 3 seeds, majority vote: CD wins " +
                    std::to_string(cd_votes) + "/3, nonstandard-gap wins " +
                    std::to_string(gap_votes) + "/3;" + detail);
}

// ---------------------------------------------------------------- criterion 7

void criterion_determinism() {
  std::string base = kBase + "/det";
  fs::remove_all(base);
  ExperimentConfig cfg;
  cfg.dataset_root = base + "/data";
  cfg.dataset.per_category = 10;
  cfg.dataset.n_complete = 64;
  cfg.dataset.n_partial = 32;
  cfg.dataset.views = 2;
  cfg.dataset.image_res = 16;
  cfg.dataset.seed = 4;
  cfg.pretext.dim = 16;
  cfg.pretext.epochs = 2;
  cfg.pretext.batch = 8;
  cfg.prototype.K = 2;
  cfg.prototype.E = 5;
  cfg.completion.grid_resolution = 8;
  cfg.completion.levels = 2;
  cfg.completion.channels = {4, 8};
  cfg.completion.n_sparse = 32;
  cfg.completion.rho = 2;
  cfg.completion.mlp_hidden = {16};
  cfg.completion.epochs = 2;
  cfg.completion.batch = 4;
  cfg.completion.train_views_per_epoch = 1;
  cfg.completion.val_views = 1;
  cfg.toggles.spf_levels = 2;
  cfg.projection.V = 2;
  cfg.projection.M = 32;
  cfg.projection.H = 16;
  cfg.projection.W = 16;
  cfg.seed = 4;
  cfg.deterministic = true;
  cfg.threads = 4;  // must be neutralized by deterministic mode

  bool ok = true;
  std::string what;
  auto run_all = [&](const std::string& out) {
    cfg.out = out;
    if (run_command("gen-data", cfg) != 0 || run_command("train-pretext", cfg) != 0 ||
        run_command("fit-prototypes", cfg) != 0 || run_command("train", cfg) != 0 ||
        run_command("eval", cfg) != 0)
      return false;
    ExperimentConfig rep = cfg;
    rep.report.ledgers = {out + "/ledger.jsonl"};
    rep.report.labels = {"det"};
    rep.out = out + "/report";
    return run_command("report", rep) == 0;
  };
  fs::remove_all(base);
  if (!run_all(base + "/run1")) ok = false;
  std::string data1 = file_bytes(cfg.dataset_root + "/manifest.json");
  fs::remove_all(cfg.dataset_root);
  if (ok && !run_all(base + "/run2")) ok = false;
  if (file_bytes(cfg.dataset_root + "/manifest.json") != data1) {
    ok = false;
    what += " manifest";
  }
  for (const char* f : {"/ledger.jsonl", "/completion.ckpt", "/extractor.ckpt",
                        "/prototypes.json", "/eval.csv", "/eval_summary.json",
                        "/report/report_long.csv", "/report/curves.csv", "/report/report.json"}) {
    if (file_bytes(base + "/run1" + std::string(f)) != file_bytes(base + "/run2" + std::string(f))) {
      ok = false;
      what += std::string(" ") + f;
    }
  }
  report(7, ok, "determinism: full pipeline rerun is byte-identical in deterministic mode" +
                    (what.empty() ? "" : "; differs:" + what));
}

// ---------------------------------------------------------------- criterion 8

void criterion_mask_invariants() {
  bool ok = true;
  Rng rng(801);
  MaskSpec spec;
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud c = pstest::random_cloud(100, rng);
    std::vector<int> idx;
    for (int i = 0; i < 100; ++i) idx.push_back(i);
    auto img = render_mask_values(c, rng.rotation(), idx, spec);
    for (double v : img)
      if (!(v >= 0.0 && v < 1.0)) ok = false;
  }
  // saturated mask still inside [0,1)
  PointCloud heap;
  for (int i = 0; i < 2000; ++i) heap.points.push_back({0.0, 0.0, 0.0});
  std::vector<int> hidx;
  for (int i = 0; i < 2000; ++i) hidx.push_back(i);
  for (double v : render_mask_values(heap, {1, 0, 0, 0, 1, 0, 0, 0, 1}, hidx, spec))
    if (!(v >= 0.0 && v < 1.0)) ok = false;

  // slope of the per-pixel objective in the predicted mask at gt=0.5, after the
  // 1/(HWV) normalization of the total loss
  double eps = 1e-8;
  double slope = (std::log(0.5 + eps) - std::log(0.5 - eps)) / (64.0 * 64.0 * 8.0);
  if (std::abs(slope) > 1e-9) ok = false;
  report(8, ok, "mask invariants: rendered pixels in [0,1) incl. saturation; projection slope at "
                "gt=0.5 is " + fmt(std::abs(slope)) + " (< 1e-9)");
}

}  // namespace

int main() {
  fs::create_directories(kBase);
  Timer total;

  auto guarded = [](int criterion, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(criterion, false, std::string("unexpected exception: ") + e.what());
    }
  };

  guarded(1, criterion_gradients);
  guarded(2, criterion_metric_oracles);

  ExperimentConfig cfg = default_config();
  PipelineResult pipe;
  guarded(5, [&] { pipe = criterion_end_to_end(cfg); });  // prints criterion 5
  guarded(3, [&] { criterion_em_and_formulas(cfg, pipe.manifest, pipe.ext); });  // 3 and 4
  guarded(6, [&] { criterion_ablation(cfg, pipe); });
  guarded(7, criterion_determinism);
  guarded(8, criterion_mask_invariants);

  std::cout << (g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << " ("
            << fmt(total.seconds()) << "s total)" << std::endl;
  return g_failures == 0 ? 0 : 1;
}
