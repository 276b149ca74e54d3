#include "protoshape/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace ps {

const char* family_name(int category) {
  switch (category) {
    case 0: return "plane-like";
    case 1: return "chair-like";
    case 2: return "table-like";
    case 3: return "vessel-like";
    default: return "unknown";
  }
}

namespace {

struct Primitive {
  enum Kind { Box, Cylinder, Ellipsoid } kind = Box;
  Vec3 center{0, 0, 0};
  Vec3 dims{0.1, 0.1, 0.1};  // box: half extents; cylinder: {radius, half_len, axis}; ellipsoid: semi-axes
  int axis = 2;              // cylinder axis
  double area() const;
  Vec3 sample(Rng& rng) const;
};

double Primitive::area() const {
  switch (kind) {
    case Box:
      return 8.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
    case Cylinder: {
      double r = dims[0], h = dims[1];
      return 2.0 * M_PI * r * (2.0 * h) + 2.0 * M_PI * r * r;
    }
    case Ellipsoid: {
      // Thomsen approximation, adequate for area weighting
      double p = 1.6075;
      double a = dims[0], b = dims[1], c = dims[2];
      double s = (std::pow(a * b, p) + std::pow(a * c, p) + std::pow(b * c, p)) / 3.0;
      return 4.0 * M_PI * std::pow(s, 1.0 / p);
    }
  }
  return 0.0;
}

Vec3 Primitive::sample(Rng& rng) const {
  switch (kind) {
    case Box: {
      double ax = dims[1] * dims[2], ay = dims[0] * dims[2], az = dims[0] * dims[1];
      double pick = rng.uniform() * (ax + ay + az);
      int face;  // which axis is pinned
      if (pick < ax) face = 0;
      else if (pick < ax + ay) face = 1;
      else face = 2;
      double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      Vec3 p;
      for (int d = 0; d < 3; ++d)
        p[d] = d == face ? sign * dims[d] : rng.uniform(-dims[d], dims[d]);
      return {p[0] + center[0], p[1] + center[1], p[2] + center[2]};
    }
    case Cylinder: {
      double r = dims[0], h = dims[1];
      double side = 2.0 * M_PI * r * 2.0 * h;
      double caps = 2.0 * M_PI * r * r;
      double ang = rng.uniform() * 2.0 * M_PI;
      double u, v, w;
      if (rng.uniform() * (side + caps) < side) {
        u = r * std::cos(ang);
        v = r * std::sin(ang);
        w = rng.uniform(-h, h);
      } else {
        double rr = r * std::sqrt(rng.uniform());
        u = rr * std::cos(ang);
        v = rr * std::sin(ang);
        w = rng.uniform() < 0.5 ? -h : h;
      }
      Vec3 p{0, 0, 0};
      p[axis] = w;
      p[(axis + 1) % 3] = u;
      p[(axis + 2) % 3] = v;
      return {p[0] + center[0], p[1] + center[1], p[2] + center[2]};
    }
    case Ellipsoid: {
      double a = dims[0], b = dims[1], c = dims[2];
      double gmax = std::max({a * b, b * c, a * c});
      for (;;) {
        Vec3 u = rng.unit_vector();
        double g = std::sqrt(b * c * u[0] * (b * c * u[0]) + a * c * u[1] * (a * c * u[1]) +
                             a * b * u[2] * (a * b * u[2]));
        if (rng.uniform() * gmax <= g)
          return {a * u[0] + center[0], b * u[1] + center[1], c * u[2] + center[2]};
      }
    }
  }
  return center;
}

struct PartSpec {
  Primitive prim;
  bool core = false;  // core parts are never dropped by mutations
};

std::vector<PartSpec> family_parts(int category) {
  std::vector<PartSpec> parts;
  auto box = [](Vec3 c, Vec3 h, bool core) {
    PartSpec p;
    p.prim.kind = Primitive::Box;
    p.prim.center = c;
    p.prim.dims = h;
    p.core = core;
    return p;
  };
  auto cyl = [](Vec3 c, double r, double hl, int axis, bool core) {
    PartSpec p;
    p.prim.kind = Primitive::Cylinder;
    p.prim.center = c;
    p.prim.dims = {r, hl, 0};
    p.prim.axis = axis;
    p.core = core;
    return p;
  };
  auto ell = [](Vec3 c, Vec3 ax, bool core) {
    PartSpec p;
    p.prim.kind = Primitive::Ellipsoid;
    p.prim.center = c;
    p.prim.dims = ax;
    p.core = core;
    return p;
  };
  switch (category) {
    case 0:  // plane-like
      parts.push_back(cyl({0, 0, 0}, 0.08, 0.5, 0, true));            // fuselage
      parts.push_back(box({0.05, 0, 0}, {0.10, 0.45, 0.015}, false)); // wings
      parts.push_back(box({-0.42, 0, 0.10}, {0.06, 0.015, 0.12}, false));  // tail fin
      parts.push_back(box({-0.42, 0, 0.02}, {0.05, 0.18, 0.012}, false));  // stabilizer
      break;
    case 1:  // chair-like
      parts.push_back(box({0, 0, 0}, {0.20, 0.20, 0.025}, true));          // seat
      parts.push_back(box({-0.19, 0, 0.23}, {0.02, 0.20, 0.22}, false));   // backrest
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2)
          parts.push_back(box({0.17 * sx, 0.17 * sy, -0.20}, {0.02, 0.02, 0.17}, false));
      break;
    case 2:  // table-like
      parts.push_back(box({0, 0, 0.20}, {0.30, 0.20, 0.02}, true));  // top
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2)
          parts.push_back(box({0.26 * sx, 0.16 * sy, -0.02}, {0.02, 0.02, 0.20}, false));
      break;
    case 3:  // vessel-like
      parts.push_back(ell({0, 0, 0}, {0.45, 0.12, 0.10}, true));          // hull
      parts.push_back(box({0.0, 0, 0.10}, {0.28, 0.08, 0.02}, false));    // deck
      parts.push_back(box({-0.12, 0, 0.16}, {0.10, 0.06, 0.05}, false));  // cabin
      parts.push_back(cyl({0.10, 0, 0.28}, 0.015, 0.18, 2, false));       // mast
      break;
    default:
      throw ContractError("family_parts: unknown category");
  }
  return parts;
}

void jitter_standard(std::vector<PartSpec>& parts, Rng& rng) {
  // bounded to 10% of canonical dimensions
  for (auto& p : parts) {
    for (int d = 0; d < 3; ++d) {
      if (p.prim.kind == Primitive::Cylinder && d == 2) continue;
      p.prim.dims[d] *= 1.0 + 0.1 * rng.uniform(-1.0, 1.0);
      p.prim.center[d] += 0.05 * rng.uniform(-1.0, 1.0) * p.prim.dims[d];
    }
  }
}

void mutate_nonstandard(std::vector<PartSpec>& parts, Rng& rng) {
  int n_mut = 1 + static_cast<int>(rng.below(2));  // 1..2 structural mutations
  for (int m = 0; m < n_mut; ++m) {
    switch (rng.below(4)) {
      case 0: {  // drop a non-core part
        std::vector<int> cand;
        for (size_t i = 0; i < parts.size(); ++i)
          if (!parts[i].core) cand.push_back(static_cast<int>(i));
        if (parts.size() > 1 && !cand.empty())
          parts.erase(parts.begin() + cand[rng.below(cand.size())]);
        break;
      }
      case 1: {  // duplicate a part with an offset
        const PartSpec& src = parts[rng.below(parts.size())];
        PartSpec dup = src;
        int d = static_cast<int>(rng.below(3));
        dup.prim.center[d] += rng.uniform(0.1, 0.25) * (rng.uniform() < 0.5 ? -1 : 1);
        dup.core = false;
        parts.push_back(dup);
        break;
      }
      case 2: {  // extreme aspect ratio on one part dimension
        PartSpec& p = parts[rng.below(parts.size())];
        int d = static_cast<int>(rng.below(3));
        if (p.prim.kind == Primitive::Cylinder) d = static_cast<int>(rng.below(2));
        double f = rng.uniform() < 0.5 ? rng.uniform(2.0, 3.0) : rng.uniform(0.3, 0.5);
        p.prim.dims[d] *= f;
        break;
      }
      default: {  // global stretch along one axis
        int d = static_cast<int>(rng.below(3));
        double f = rng.uniform() < 0.5 ? rng.uniform(1.8, 2.5) : rng.uniform(0.35, 0.55);
        for (auto& p : parts) {
          p.prim.center[d] *= f;
          if (p.prim.kind == Primitive::Box || p.prim.kind == Primitive::Ellipsoid)
            p.prim.dims[d] *= f;
        }
        break;
      }
    }
  }
}

PointCloud sample_parts(const std::vector<PartSpec>& parts, int n_points, Rng& rng) {
  std::vector<double> areas;
  double total = 0;
  for (const auto& p : parts) {
    areas.push_back(p.prim.area());
    total += areas.back();
  }
  PointCloud cloud;
  cloud.points.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    double pick = rng.uniform() * total;
    size_t j = 0;
    while (j + 1 < parts.size() && pick >= areas[j]) {
      pick -= areas[j];
      ++j;
    }
    cloud.points.push_back(parts[j].prim.sample(rng));
  }
  return cloud;
}

}  // namespace

PointCloud gen_shape(const ShapeSpec& spec, int n_points) {
  if (n_points < 64) throw ContractError("gen_shape: need n_points >= 64");
  for (int attempt = 0; attempt < 5; ++attempt) {
    Rng rng(hash_combine(spec.seed, 0xda7a + attempt));
    auto parts = family_parts(spec.category);
    if (spec.style == Style::Standard)
      jitter_standard(parts, rng);
    else
      mutate_nonstandard(parts, rng);
    PointCloud raw = sample_parts(parts, n_points, rng);
    NormalizeResult norm = normalize(raw);
    if (!norm.degenerate) return std::move(norm.cloud);
  }
  throw ContractError("gen_shape: degenerate parameter draw persisted across retries");
}

PointCloud canonical_shape(int category, int n_points, uint64_t sample_seed) {
  Rng rng(hash_combine(sample_seed, 0xca11));
  auto parts = family_parts(category);
  NormalizeResult norm = normalize(sample_parts(parts, n_points, rng));
  return std::move(norm.cloud);
}

PointCloud partial_before_fps(const PointCloud& complete, const Vec3& view, int image_res) {
  return make_partial(complete, view, image_res);
}

const SampleRecord& DatasetManifest::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw IoError("manifest: unknown sample id " + id);
}

DatasetManifest gen_dataset(const DatasetConfig& config, const std::string& root) {
  if (config.per_category < 10) throw ContractError("gen_dataset: per_category must be >= 10");
  fs::create_directories(fs::path(root) / "complete");
  fs::create_directories(fs::path(root) / "partial");

  DatasetManifest m;
  m.seed = config.seed;
  m.config = config;
  m.root = root;

  int n_nonstd = static_cast<int>(std::lround(config.nonstandard_fraction * config.per_category));
  for (int c = 0; c < config.categories; ++c) {
    for (int i = 0; i < config.per_category; ++i) {
      SampleRecord rec;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "c%d_s%03d", c, i);
      rec.id = buf;
      rec.category = c;
      rec.style = i < n_nonstd ? Style::NonStandard : Style::Standard;
      rec.seed = hash_combine(config.seed, fnv1a(rec.id));

      ShapeSpec spec{c, rec.style, rec.seed};
      PointCloud complete = gen_shape(spec, config.n_complete);
      rec.complete_path = "complete/" + rec.id + ".pcf";
      write_pcf(root + "/" + rec.complete_path, complete);

      Rng vrng(hash_combine(rec.seed, 0x71e3));
      for (int v = 0; v < config.views; ++v) {
        PointCloud part;
        Vec3 dir{0, 0, 1};
        for (int retry = 0; retry < 5; ++retry) {
          dir = vrng.unit_vector();
          part = make_partial(complete, dir, config.image_res);
          if (part.count() >= config.n_partial) break;
        }
        if (part.count() > config.n_partial)
          part = farthest_point_sampling(part, config.n_partial, 0);
        PartialRecord pr;
        pr.view = dir;
        pr.path = "partial/" + rec.id + "_" + std::to_string(v) + ".pcf";
        write_pcf(root + "/" + pr.path, part);
        rec.partials.push_back(std::move(pr));
      }
      m.samples.push_back(std::move(rec));
    }
  }

  // stratified 80/10/10 split by (category, style), seeded shuffle per stratum
  for (int c = 0; c < config.categories; ++c)
    for (int styl = 0; styl < 2; ++styl) {
      std::vector<std::string> ids;
      for (const auto& s : m.samples)
        if (s.category == c && static_cast<int>(s.style) == styl) ids.push_back(s.id);
      if (ids.empty()) continue;
      Rng srng(hash_combine(config.seed, 0x5b1f + c * 2 + styl));
      for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i)
        std::swap(ids[i], ids[srng.below(i + 1)]);
      int n = static_cast<int>(ids.size());
      int ntr = static_cast<int>(std::lround(0.8 * n));
      int nva = static_cast<int>(std::lround(0.1 * n));
      if (ntr + nva > n) nva = n - ntr;
      for (int i = 0; i < n; ++i) {
        if (i < ntr) m.train_ids.push_back(ids[i]);
        else if (i < ntr + nva) m.val_ids.push_back(ids[i]);
        else m.test_ids.push_back(ids[i]);
      }
    }
  std::sort(m.train_ids.begin(), m.train_ids.end());
  std::sort(m.val_ids.begin(), m.val_ids.end());
  std::sort(m.test_ids.begin(), m.test_ids.end());

  save_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["config"] = {{"categories", m.config.categories},
                 {"per_category", m.config.per_category},
                 {"nonstandard_fraction", m.config.nonstandard_fraction},
                 {"n_complete", m.config.n_complete},
                 {"n_partial", m.config.n_partial},
                 {"views", m.config.views},
                 {"image_res", m.config.image_res},
                 {"seed", m.config.seed}};
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json rec;
    rec["id"] = s.id;
    rec["category"] = s.category;
    rec["style"] = style_name(s.style);
    rec["seed"] = s.seed;
    rec["complete"] = s.complete_path;
    nlohmann::json parts = nlohmann::json::array();
    for (const auto& p : s.partials)
      parts.push_back({{"view", {p.view[0], p.view[1], p.view[2]}}, {"path", p.path}});
    rec["partials"] = parts;
    samples.push_back(rec);
  }
  j["samples"] = samples;
  j["split"] = {{"train", m.train_ids}, {"val", m.val_ids}, {"test", m.test_ids}};
  std::ofstream f(m.root + "/manifest.json");
  if (!f) throw IoError("save_manifest: cannot open " + m.root + "/manifest.json");
  f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& root) {
  std::ifstream f(root + "/manifest.json");
  if (!f) throw IoError("load_manifest: cannot open " + root + "/manifest.json");
  nlohmann::json j = nlohmann::json::parse(f);
  DatasetManifest m;
  m.root = root;
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  const auto& c = j.at("config");
  m.config.categories = c.at("categories").get<int>();
  m.config.per_category = c.at("per_category").get<int>();
  m.config.nonstandard_fraction = c.at("nonstandard_fraction").get<double>();
  m.config.n_complete = c.at("n_complete").get<int>();
  m.config.n_partial = c.at("n_partial").get<int>();
  m.config.views = c.at("views").get<int>();
  m.config.image_res = c.at("image_res").get<int>();
  m.config.seed = c.at("seed").get<uint64_t>();
  for (const auto& rec : j.at("samples")) {
    SampleRecord s;
    s.id = rec.at("id").get<std::string>();
    s.category = rec.at("category").get<int>();
    s.style = rec.at("style").get<std::string>() == "standard" ? Style::Standard
                                                               : Style::NonStandard;
    s.seed = rec.at("seed").get<uint64_t>();
    s.complete_path = rec.at("complete").get<std::string>();
    for (const auto& p : rec.at("partials")) {
      PartialRecord pr;
      auto v = p.at("view");
      pr.view = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
      pr.path = p.at("path").get<std::string>();
      s.partials.push_back(std::move(pr));
    }
    m.samples.push_back(std::move(s));
  }
  m.train_ids = j.at("split").at("train").get<std::vector<std::string>>();
  m.val_ids = j.at("split").at("val").get<std::vector<std::string>>();
  m.test_ids = j.at("split").at("test").get<std::vector<std::string>>();
  // every referenced file must exist
  for (const auto& s : m.samples) {
    if (!fs::exists(fs::path(root) / s.complete_path))
      throw IoError("manifest: missing file " + s.complete_path);
    for (const auto& p : s.partials)
      if (!fs::exists(fs::path(root) / p.path)) throw IoError("manifest: missing file " + p.path);
  }
  return m;
}

TrainSample load_sample(const DatasetManifest& m, const std::string& id, int view) {
  const SampleRecord& rec = m.find(id);
  if (view < 0 || view >= static_cast<int>(rec.partials.size()))
    throw IoError("load_sample: view out of range for " + id);
  TrainSample t;
  t.id = id;
  t.view = view;
  t.category = rec.category;
  t.style = rec.style;
  t.complete = read_pcf(m.root + "/" + rec.complete_path);
  t.partial = read_pcf(m.root + "/" + rec.partials[view].path);
  return t;
}

}  // namespace ps
