// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "patchmixer/error.hpp"
#include "patchmixer/rng.hpp"
#include "patchmixer/tensor.hpp"  // Mode

namespace pm {

using Vec3 = std::array<float, 3>;

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<int> labels;  // per-vertex, empty when absent
  int category = -1;        // -1 when absent

  int size() const { return static_cast<int>(points.size()); }
  bool has_labels() const { return !labels.empty(); }
  void validate() const;
};

struct PatchSet {
  int patch_count = 0;
  int samples_per_patch = 0;
  std::vector<Vec3> centroids;       // P
  std::vector<int> centroid_indices; // P
  std::vector<Vec3> samples;         // P*S, row-major by patch
  std::vector<int> sample_indices;   // P*S, row-major by patch
  std::vector<uint8_t> mask;         // P, nonzero = kept
  float radius = -1.0f;              // set when ball-query built
  int k = -1;                        // set when knn built
};

/// Neighborhood rule for patch extraction.
struct PatchQuery {
  bool use_knn = false;
  float radius = 0.3f;
  int k = 32;
};

struct AugmentConfig {
  double jitter_sigma = 1e-2;
  bool rotate_up_axis = true;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double translate_range = 0.0;  // per-axis, enabled for segmentation (0.1)

  static AugmentConfig none() {
    AugmentConfig c;
    c.jitter_sigma = 0.0;
    c.rotate_up_axis = false;
    c.scale_min = 1.0;
    c.scale_max = 1.0;
    c.translate_range = 0.0;
    return c;
  }
};

/// Center on the barycenter and scale so the axis-aligned bounding-box
/// diagonal has length 1. The barycenter is accumulated in double over
/// lexicographically sorted coordinates, so the result does not depend on
/// vertex ordering.
PointCloud normalize_shape(const PointCloud& pc);

/// Greedy farthest-point sampling. The seed is the vertex farthest from the
/// barycenter; all ties break by lexicographic (x,y,z) then original index,
/// which makes the selected point set independent of vertex ordering.
std::vector<int> fps(const PointCloud& pc, int count);

/// All vertices within distance <= R of the centroid vertex, sorted by
/// increasing distance (ties by index). Always contains the centroid.
std::vector<int> ball_query(const PointCloud& pc, int centroid_index, float radius);

/// The k nearest vertices (the centroid itself is at distance 0), sorted by
/// increasing distance, ties by lower index.
std::vector<int> knn(const PointCloud& pc, int centroid_index, int k);

/// Resample a neighbor list to exactly S entries. Train mode draws uniformly
/// with replacement; eval mode walks the stored order, cycling from the start.
std::vector<int> resample_patch(const std::vector<int>& neighbors, int samples,
                                Mode mode, Rng* rng);

PatchSet extract_patches(const PointCloud& pc, int patch_count,
                         const PatchQuery& query, int samples_per_patch,
                         Mode mode, Rng* rng);

/// Training augmentation: normalize, Gaussian jitter, random rotation about
/// +z, uniform random scale, optional per-axis translation.
PointCloud augment(const PointCloud& pc, Rng& rng, const AugmentConfig& cfg);

/// Independent Bernoulli drop per patch; redraws if every patch was dropped.
std::vector<uint8_t> patch_mask(int patch_count, double rate, Rng& rng);

}  // namespace pm
