// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patchmixer/geometry.hpp"
#include "patchmixer/rng.hpp"

namespace pm {

// ---------------------------------------------------------------------------
// Point-cloud file formats

/// ASCII "x y z" triples, one per line; 64-bit parse, 32-bit storage.
/// A sidecar <stem>.lbl (one integer per line) supplies per-vertex labels.
PointCloud load_xyz(const std::string& path);
void save_xyz(const std::string& path, const PointCloud& pc);

/// Binary: magic "PCB1", u32 LE vertex count, V*3 f32 LE coordinates,
/// u8 label flag, optional V u16 labels, CRC32 trailer over the payload.
PointCloud load_pcb(const std::string& path);
void save_pcb(const std::string& path, const PointCloud& pc);
PointCloud decode_pcb(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_pcb(const PointCloud& pc);

/// Dispatch on extension (.xyz / .pcb).
PointCloud load_cloud(const std::string& path);

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string path;        // relative to the manifest directory
  int category = -1;       // classification target when >= 0
  std::string label_path;  // per-vertex label file when non-empty
};

struct DatasetManifest {
  std::string name;
  std::string base_dir;
  std::vector<ManifestEntry> entries;

  int num_classes() const;
  std::string resolve(const std::string& rel) const;
};

/// UTF-8 lines "relative/path<TAB>label"; an integer label is a category,
/// anything else is a per-vertex label file path.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// ---------------------------------------------------------------------------
// Synthetic benchmark

enum class ShapeCategory { kSphere, kBox, kCylinder, kCone };
const char* shape_category_name(ShapeCategory c);
ShapeCategory shape_category_from(const std::string& name);

/// Uniform surface sampling of a primitive with randomized aspect ratios.
/// Part labels: sphere {upper, lower}, box {6 faces}, cylinder {side, top,
/// bottom}, cone {side, base}.
PointCloud synth_shape(ShapeCategory category, int vertices, Rng& rng);

struct DomainSpec {
  std::string name = "A";
  double partiality = 0.0;   // fraction removed by a half-space crop
  double noise_sigma = 0.0;  // additive Gaussian noise
  double density = 1.0;      // resample to density * V points
  double pose_jitter = 0.0;  // max tilt about a random horizontal axis, radians

  void validate() const;
};

/// Pose tilt, half-space crop at the partiality quantile, Gaussian noise,
/// then resampling to density * V points. Labels ride along.
PointCloud apply_domain(const PointCloud& pc, const DomainSpec& spec, Rng& rng);

struct BenchmarkConfig {
  std::string out_dir;
  uint64_t seed = 1;
  std::vector<ShapeCategory> classes = {ShapeCategory::kSphere, ShapeCategory::kBox,
                                        ShapeCategory::kCylinder, ShapeCategory::kCone};
  int per_class = 100;  // shapes per class per domain (split into train+test)
  int points_per_shape = 256;
  double train_fraction = 0.5;
  std::vector<DomainSpec> domains;  // defaults to a clean A and corrupted B
  bool with_part_labels = false;    // emit per-vertex label sidecars

  static std::vector<DomainSpec> default_domains();
};

struct BenchmarkOutput {
  std::vector<std::string> manifest_paths;  // domain-major, train then test
  int files_written = 0;
};

/// Generates shapes and four manifests (domain x split). Pure function of
/// the seed: regeneration produces byte-identical trees.
BenchmarkOutput make_benchmark(const BenchmarkConfig& cfg);

// ---------------------------------------------------------------------------
// Batching

/// Subsample a cloud to exactly v_target vertices. Train mode picks random
/// distinct vertices (topping up with replacement when V < v_target); eval
/// mode sorts lexicographically and takes a deterministic stride.
PointCloud subsample_vertices(const PointCloud& pc, int v_target, Mode mode, Rng* rng);

struct Batch {
  std::vector<PointCloud> clouds;
  std::vector<int> categories;
};

/// Single-consumer epoch iterator over a manifest; all shapes resident.
class Batcher {
 public:
  Batcher(const DatasetManifest& manifest, int batch_size, int v_target, Mode mode);

  void start_epoch(Rng* shuffle_rng);
  std::optional<Batch> next(Rng* subsample_rng);

  int shape_count() const { return static_cast<int>(clouds_.size()); }
  const PointCloud& shape(int i) const { return clouds_[i]; }
  int category(int i) const { return categories_[i]; }

 private:
  std::vector<PointCloud> clouds_;
  std::vector<int> categories_;
  int batch_size_;
  int v_target_;
  Mode mode_;
  std::vector<int> order_;
  size_t cursor_ = 0;
};

}  // namespace pm
