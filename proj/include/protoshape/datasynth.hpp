#pragma once

#include <optional>
#include <string>
#include <vector>

#include "protoshape/geometry.hpp"
#include "protoshape/rng.hpp"

namespace ps {

enum class Style { Standard, NonStandard };

inline const char* style_name(Style s) {
  return s == Style::Standard ? "standard" : "nonstandard";
}

// Category families are fixed compositions of boxes / cylinders / ellipsoids:
// 0 plane-like, 1 chair-like, 2 table-like, 3 vessel-like.
constexpr int kNumFamilies = 4;
const char* family_name(int category);

struct ShapeSpec {
  int category = 0;
  Style style = Style::Standard;
  uint64_t seed = 0;
};

// Area-weighted surface sampling of the composed primitives, normalized to the
// unit cube. Deterministic in the ShapeSpec seed.
PointCloud gen_shape(const ShapeSpec& spec, int n_points);

// The un-jittered family shape, used to validate that nonstandard mutations
// actually move geometry further from the canon than standard jitter does.
PointCloud canonical_shape(int category, int n_points, uint64_t sample_seed);

struct PartialRecord {
  Vec3 view;
  std::string path;
};

struct SampleRecord {
  std::string id;
  int category = 0;
  Style style = Style::Standard;
  uint64_t seed = 0;
  std::string complete_path;
  std::vector<PartialRecord> partials;
};

struct DatasetConfig {
  int categories = kNumFamilies;
  int per_category = 100;
  double nonstandard_fraction = 0.2;
  int n_complete = 512;
  int n_partial = 128;
  int views = 8;
  int image_res = 32;
  uint64_t seed = 1;
};

struct DatasetManifest {
  int version = 1;
  uint64_t seed = 0;
  DatasetConfig config;
  std::vector<SampleRecord> samples;
  std::vector<std::string> train_ids, val_ids, test_ids;
  std::string root;

  const SampleRecord& find(const std::string& id) const;
};

DatasetManifest gen_dataset(const DatasetConfig& config, const std::string& root);

void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& root);

struct TrainSample {
  std::string id;
  int view = 0;
  int category = 0;
  Style style = Style::Standard;
  PointCloud partial;
  PointCloud complete;
  // populated lazily by the harness once the pretext stage exists
  std::optional<double> prior_u;
  std::optional<double> weight_w;
};

TrainSample load_sample(const DatasetManifest& m, const std::string& id, int view);

// Occlusion + FPS-subsample used by gen_dataset; exposed so the pre-FPS
// intermediate can be inspected.
PointCloud partial_before_fps(const PointCloud& complete, const Vec3& view, int image_res);

}  // namespace ps
