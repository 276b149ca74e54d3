#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protoshape/harness.hpp"
#include "protoshape/losses.hpp"
#include "protoshape/serialize.hpp"
#include "testutil.hpp"

using namespace ps;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::vector<std::string> lines_of(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// a configuration small enough for an end-to-end pass in seconds
ExperimentConfig tiny_config(const std::string& base) {
  ExperimentConfig c;
  c.dataset_root = base + "/data";
  c.dataset.per_category = 10;
  c.dataset.n_complete = 64;
  c.dataset.n_partial = 32;
  c.dataset.views = 2;
  c.dataset.image_res = 16;
  c.dataset.seed = 3;
  c.pretext.dim = 16;
  c.pretext.epochs = 3;
  c.pretext.batch = 8;
  c.prototype.K = 2;
  c.prototype.E = 5;
  c.completion.grid_resolution = 8;
  c.completion.levels = 2;
  c.completion.channels = {4, 8};
  c.completion.n_sparse = 32;
  c.completion.rho = 2;
  c.completion.mlp_hidden = {16};
  c.completion.epochs = 2;
  c.completion.batch = 4;
  c.completion.train_views_per_epoch = 1;
  c.completion.val_views = 1;
  c.toggles.spf_levels = 2;
  c.projection.V = 2;
  c.projection.M = 32;
  c.projection.H = 16;
  c.projection.W = 16;
  c.seed = 3;
  c.threads = 1;
  c.out = base + "/run";
  return c;
}

std::string fresh_base(const char* tag) {
  std::string base = std::string("/tmp/ps_hn_") + tag;
  fs::remove_all(base);
  fs::create_directories(base);
  return base;
}

}  // namespace

TEST_CASE("config parsing, defaults, and rejection") {
  ExperimentConfig c = parse_config(R"({"seed": 5, "completion": {"epochs": 7}})");
  CHECK(c.seed == 5);
  CHECK(c.completion.epochs == 7);
  CHECK(c.completion.grid_resolution == 16);  // untouched default
  CHECK(c.dataset.seed == 5);                 // dataset seed follows the run seed

  CHECK_THROWS_AS(parse_config(R"({"sed": 5})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"completion": {"epoch": 7}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"completion": {"channels": [4]}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"completion": {"grid_resolution": 12}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"dataset": {"categories": 9}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"toggles": {"sampling": "wat"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("not json"), ConfigError);

  // round trip through the canonical dump
  ExperimentConfig d = parse_config(dump_config(c));
  CHECK(dump_config(d) == dump_config(c));
}

TEST_CASE("config hash ignores placement, covers results") {
  ExperimentConfig a = parse_config("{}");
  ExperimentConfig b = a;
  b.threads = 16;
  b.deterministic = true;
  b.out = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));

  ExperimentConfig c = a;
  c.completion.lr = 2e-4;
  CHECK(config_hash(a) != config_hash(c));
  ExperimentConfig d = a;
  d.seed = 99;
  CHECK(config_hash(a) != config_hash(d));
}

TEST_CASE("checkpoint round trip") {
  std::string base = fresh_base("ckpt");
  Rng rng(3);
  Params p;
  p["w"] = pstest::random_tensor({3, 4}, rng);
  p["b"] = pstest::random_tensor({4}, rng);
  Adam opt(1e-3);
  p.zero_grad();
  backward(sum_all(mul(p.at("w"), p.at("w"))));
  opt.step(p);

  Checkpoint ck;
  ck.config_hash = 0xabcdef;
  pack_params(ck, "p.", p);
  pack_adam(ck, "adam.", opt);
  pack_scalar(ck, "__epoch", 12);
  std::string path = base + "/test.ckpt";
  save_checkpoint(path, ck);

  Checkpoint back = load_checkpoint(path);
  CHECK(back.config_hash == 0xabcdef);
  CHECK(unpack_scalar(back, "__epoch") == 12);
  CHECK(has_entry(back, "p.w"));
  Params q = unpack_params(back, "p.");
  CHECK(q.at("w").data() == p.at("w").data());
  CHECK(q.at("b").data() == p.at("b").data());
  CHECK(q.at("w").requires_grad());
  Adam opt2(1e-3);
  unpack_adam(back, "adam.", opt2);
  CHECK(opt2.step_count == opt.step_count);
  CHECK(opt2.m.at("w") == opt.m.at("w"));
  CHECK(opt2.v.at("b") == opt.v.at("b"));

  // identical contents serialize to identical bytes
  std::string path2 = base + "/test2.ckpt";
  save_checkpoint(path2, back);
  CHECK(file_bytes(path) == file_bytes(path2));

  // truncation is detected
  std::string bytes = file_bytes(path);
  std::ofstream trunc(base + "/trunc.ckpt", std::ios::binary);
  trunc.write(bytes.data(), static_cast<long>(bytes.size() / 2));
  trunc.close();
  CHECK_THROWS_AS(load_checkpoint(base + "/trunc.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(base + "/missing.ckpt"), IoError);
}

TEST_CASE("end-to-end pipeline on a tiny corpus") {
  std::string base = fresh_base("e2e");
  ExperimentConfig cfg = tiny_config(base);

  REQUIRE(run_command("gen-data", cfg) == 0);
  DatasetManifest m = load_manifest(cfg.dataset_root);
  CHECK(m.samples.size() == 40);

  SUBCASE("pretext resume replays an uninterrupted run") {
    ExperimentConfig four = cfg;
    four.pretext.epochs = 4;
    four.out = base + "/run_a";
    REQUIRE(run_command("train-pretext", four) == 0);

    ExperimentConfig two = cfg;
    two.pretext.epochs = 2;
    two.out = base + "/run_b";
    REQUIRE(run_command("train-pretext", two) == 0);
    two.pretext.epochs = 4;
    REQUIRE(run_command("train-pretext", two) == 0);

    CHECK(file_bytes(base + "/run_a/extractor.ckpt") == file_bytes(base + "/run_b/extractor.ckpt"));
  }

  SUBCASE("full chain: pretext, prototypes, train, eval, report") {
    REQUIRE(run_command("train-pretext", cfg) == 0);
    CHECK(fs::exists(cfg.out + "/extractor.ckpt"));
    CHECK(fs::exists(cfg.out + "/pretext_report.json"));

    // a config with different pretext settings must refuse the checkpoint
    ExperimentConfig other = cfg;
    other.pretext.dim = 32;
    CHECK(run_command("fit-prototypes", other) == 2);

    REQUIRE(run_command("fit-prototypes", cfg) == 0);
    PrototypeStore store = load_prototypes(cfg.out + "/prototypes.json");
    REQUIRE(store.prototypes.size() == 4);
    std::set<int> cats;
    for (const auto& p : store.prototypes) {
      cats.insert(p.category);
      CHECK(p.radius > 0.0);
      CHECK(p.center.size() == 16);
    }
    CHECK(cats.size() == 4);
    CHECK(fs::exists(cfg.out + "/em_trace.json"));

    // refitting reproduces the store byte for byte
    std::string first = file_bytes(cfg.out + "/prototypes.json");
    REQUIRE(run_command("fit-prototypes", cfg) == 0);
    CHECK(file_bytes(cfg.out + "/prototypes.json") == first);

    REQUIRE(run_command("train", cfg) == 0);
    CHECK(fs::exists(cfg.out + "/completion.ckpt"));
    CHECK(fs::exists(cfg.out + "/timing.jsonl"));
    auto ledger = lines_of(cfg.out + "/ledger.jsonl");
    REQUIRE(ledger.size() == 4);  // run header, 2 epochs, final
    json head = json::parse(ledger[0]);
    CHECK(head.at("type") == "run");
    CHECK(head.at("cache_check") == "ok");
    CHECK(head.at("config_hash").get<uint64_t>() == config_hash(cfg));
    for (int e = 1; e <= 2; ++e) {
      json row = json::parse(ledger[e]);
      CHECK(row.at("type") == "epoch");
      CHECK(row.at("epoch") == e);
      CHECK(row.at("val_cd_dense").get<double>() > 0.0);
    }
    json fin = json::parse(ledger[3]);
    CHECK(fin.at("type") == "final");
    CHECK(fin.at("test_cd_dense").get<double>() > 0.0);

    REQUIRE(run_command("eval", cfg) == 0);
    auto rows = lines_of(cfg.out + "/eval.csv");
    REQUIRE(rows.size() == 1 + m.test_ids.size() * 2);  // header + ids x views
    CHECK(rows[0] == "sample_id,category,cd_dense,f_score,u_prior,weight,split_tag");
    int std_rows = 0, non_rows = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
      std::stringstream ss(rows[i]);
      std::string field;
      std::vector<std::string> fields;
      while (std::getline(ss, field, ',')) fields.push_back(field);
      REQUIRE(fields.size() == 7);
      if (fields[6] == "standard") ++std_rows;
      if (fields[6] == "nonstandard") ++non_rows;
    }
    int band = static_cast<int>(m.test_ids.size() * 2) / 5;
    CHECK(std_rows == band);
    CHECK(non_rows == band);
    json sum = json::parse(file_bytes(cfg.out + "/eval_summary.json"));
    CHECK(sum.at("rows") == m.test_ids.size() * 2);
    CHECK(sum.at("consistency").get<double>() > 0.0);

    ExperimentConfig rep = cfg;
    rep.report.ledgers = {cfg.out + "/ledger.jsonl"};
    rep.report.labels = {"tiny"};
    rep.out = base + "/report";
    REQUIRE(run_command("report", rep) == 0);
    auto longcsv = lines_of(rep.out + "/report_long.csv");
    CHECK(longcsv[0] == "run,epoch,metric,value");
    CHECK(longcsv.size() == 1 + 2 * 6);  // 2 epochs x 6 metrics
    auto curves = lines_of(rep.out + "/curves.csv");
    CHECK(curves.size() == 1 + 2 * 2);  // 2 subsets x 2 epochs

    rep.report.ledgers.push_back(base + "/missing_ledger.jsonl");
    rep.report.labels.push_back("gone");
    CHECK(run_command("report", rep) == 3);
  }
}

TEST_CASE("weights are identically one when sampling is off") {
  std::string base = fresh_base("w1");
  ExperimentConfig cfg = tiny_config(base);
  cfg.toggles.sampling = Sampling::None;
  cfg.toggles.use_proj = false;
  cfg.completion.epochs = 1;
  REQUIRE(run_command("gen-data", cfg) == 0);
  REQUIRE(run_command("train-pretext", cfg) == 0);
  REQUIRE(run_command("fit-prototypes", cfg) == 0);
  REQUIRE(run_command("train", cfg) == 0);
  auto ledger = lines_of(cfg.out + "/ledger.jsonl");
  json row = json::parse(ledger[1]);
  CHECK(row.at("train_weight_mean").get<double>() == 1.0);
  CHECK(row.at("train_proj_dense").get<double>() == 0.0);

  REQUIRE(run_command("eval", cfg) == 0);
  auto rows = lines_of(cfg.out + "/eval.csv");
  for (size_t i = 1; i < rows.size(); ++i) {
    size_t p5 = 0;
    for (int c = 0; c < 5; ++c) p5 = rows[i].find(',', p5) + 1;
    size_t p6 = rows[i].find(',', p5);
    CHECK(rows[i].substr(p5, p6 - p5) == "1");
  }
}

TEST_CASE("exit code mapping") {
  std::string base = fresh_base("exit");
  ExperimentConfig cfg = tiny_config(base);
  CHECK(run_command("no-such-command", cfg) == 2);
  // manifest missing
  CHECK(run_command("train-pretext", cfg) == 3);
  // report without ledgers configured
  CHECK(run_command("report", cfg) == 2);
}
