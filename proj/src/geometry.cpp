// SPDX-License-Identifier: Apache-2.0
#include "patchmixer/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pm {

namespace {

inline double dist2(const Vec3& a, const Vec3& b) {
  double dx = static_cast<double>(a[0]) - b[0];
  double dy = static_cast<double>(a[1]) - b[1];
  double dz = static_cast<double>(a[2]) - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline bool lex_less(const Vec3& a, const Vec3& b) {
  if (a[0] != b[0]) return a[0] < b[0];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[2] < b[2];
}

// Barycenter accumulated in double over lexicographically sorted points so
// it is bit-identical under any permutation of the input.
std::array<double, 3> barycenter_canonical(const std::vector<Vec3>& pts) {
  std::vector<Vec3> sorted(pts);
  std::sort(sorted.begin(), sorted.end(),
            [](const Vec3& a, const Vec3& b) { return lex_less(a, b); });
  std::array<double, 3> c{0, 0, 0};
  for (const Vec3& p : sorted) {
    c[0] += p[0];
    c[1] += p[1];
    c[2] += p[2];
  }
  double n = static_cast<double>(pts.size());
  return {c[0] / n, c[1] / n, c[2] / n};
}

}  // namespace

void PointCloud::validate() const {
  if (points.empty()) throw DataError("point cloud must contain at least one vertex");
  for (const Vec3& p : points)
    for (float v : p)
      if (!std::isfinite(v)) throw DataError("point cloud contains non-finite coordinates");
  if (!labels.empty() && labels.size() != points.size())
    throw DataError("label count does not match vertex count");
}

PointCloud normalize_shape(const PointCloud& pc) {
  pc.validate();
  std::array<double, 3> bary = barycenter_canonical(pc.points);

  PointCloud out;
  out.labels = pc.labels;
  out.category = pc.category;
  out.points.resize(pc.points.size());
  for (size_t i = 0; i < pc.points.size(); ++i)
    for (int a = 0; a < 3; ++a)
      out.points[i][a] = static_cast<float>(pc.points[i][a] - bary[a]);

  Vec3 lo = out.points[0], hi = out.points[0];
  for (const Vec3& p : out.points)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  double diag = 0;
  for (int a = 0; a < 3; ++a) {
    double d = static_cast<double>(hi[a]) - lo[a];
    diag += d * d;
  }
  diag = std::sqrt(diag);
  if (diag <= 0.0)
    throw NumericError("normalize_shape: all points coincide, no spatial extent");
  double s = 1.0 / diag;
  for (Vec3& p : out.points)
    for (int a = 0; a < 3; ++a) p[a] = static_cast<float>(p[a] * s);
  return out;
}

std::vector<int> fps(const PointCloud& pc, int count) {
  pc.validate();
  int v = pc.size();
  if (count < 1 || count > v)
    throw DimError("fps: requested count must be in [1, V]");

  // Candidate comparison: larger distance wins; distance ties prefer the
  // lexicographically smaller coordinate, then the lower index.
  auto better = [&](double d_new, int i_new, double d_best, int i_best) {
    if (d_new != d_best) return d_new > d_best;
    if (i_best < 0) return true;
    const Vec3 &a = pc.points[i_new], &b = pc.points[i_best];
    if (a != b) return lex_less(a, b);
    return i_new < i_best;
  };

  std::array<double, 3> bary = barycenter_canonical(pc.points);
  Vec3 baryf{static_cast<float>(bary[0]), static_cast<float>(bary[1]),
             static_cast<float>(bary[2])};
  int seed = -1;
  double seed_d = -1.0;
  for (int i = 0; i < v; ++i) {
    double d = dist2(pc.points[i], baryf);
    if (better(d, i, seed_d, seed)) {
      seed = i;
      seed_d = d;
    }
  }

  std::vector<int> chosen;
  chosen.reserve(count);
  chosen.push_back(seed);
  std::vector<uint8_t> taken(v, 0);
  taken[seed] = 1;
  std::vector<double> min_d(v);
  for (int i = 0; i < v; ++i) min_d[i] = dist2(pc.points[i], pc.points[seed]);

  while (static_cast<int>(chosen.size()) < count) {
    int next = -1;
    double next_d = -1.0;
    for (int i = 0; i < v; ++i) {
      if (taken[i]) continue;
      if (better(min_d[i], i, next_d, next)) {
        next = i;
        next_d = min_d[i];
      }
    }
    chosen.push_back(next);
    taken[next] = 1;
    for (int i = 0; i < v; ++i)
      min_d[i] = std::min(min_d[i], dist2(pc.points[i], pc.points[next]));
  }
  return chosen;
}

std::vector<int> ball_query(const PointCloud& pc, int centroid_index, float radius) {
  pc.validate();
  if (centroid_index < 0 || centroid_index >= pc.size())
    throw DimError("ball_query: centroid index out of range");
  if (radius < 0.0f) throw DimError("ball_query: radius must be non-negative");
  const Vec3& c = pc.points[centroid_index];
  double r2 = static_cast<double>(radius) * radius;
  std::vector<std::pair<double, int>> hits;
  for (int i = 0; i < pc.size(); ++i) {
    double d2 = dist2(pc.points[i], c);
    if (d2 <= r2 || i == centroid_index) hits.emplace_back(d2, i);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<int> out;
  out.reserve(hits.size());
  for (auto& [d, i] : hits) out.push_back(i);
  return out;
}

std::vector<int> knn(const PointCloud& pc, int centroid_index, int k) {
  pc.validate();
  if (centroid_index < 0 || centroid_index >= pc.size())
    throw DimError("knn: centroid index out of range");
  if (k < 1 || k > pc.size()) throw DimError("knn: k must be in [1, V]");
  std::vector<std::pair<double, int>> all(pc.size());
  const Vec3& c = pc.points[centroid_index];
  for (int i = 0; i < pc.size(); ++i) all[i] = {dist2(pc.points[i], c), i};
  std::sort(all.begin(), all.end());
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) out[i] = all[i].second;
  return out;
}

std::vector<int> resample_patch(const std::vector<int>& neighbors, int samples,
                                Mode mode, Rng* rng) {
  if (neighbors.empty()) throw DimError("resample_patch: empty neighbor list");
  if (samples < 1) throw DimError("resample_patch: sample count must be positive");
  std::vector<int> out(samples);
  uint32_t n = static_cast<uint32_t>(neighbors.size());
  if (mode == Mode::kTrain) {
    if (!rng) throw Error("resample_patch: train mode requires an RNG");
    for (int s = 0; s < samples; ++s) out[s] = neighbors[rng->bounded(n)];
  } else {
    for (int s = 0; s < samples; ++s) out[s] = neighbors[s % n];
  }
  return out;
}

PatchSet extract_patches(const PointCloud& pc, int patch_count,
                         const PatchQuery& query, int samples_per_patch,
                         Mode mode, Rng* rng) {
  std::vector<int> centers = fps(pc, patch_count);
  PatchSet ps;
  ps.patch_count = patch_count;
  ps.samples_per_patch = samples_per_patch;
  ps.centroid_indices = centers;
  ps.centroids.reserve(patch_count);
  ps.samples.reserve(static_cast<size_t>(patch_count) * samples_per_patch);
  ps.sample_indices.reserve(static_cast<size_t>(patch_count) * samples_per_patch);
  ps.mask.assign(patch_count, 1);
  if (query.use_knn)
    ps.k = query.k;
  else
    ps.radius = query.radius;

  for (int ci : centers) {
    ps.centroids.push_back(pc.points[ci]);
    std::vector<int> neighbors = query.use_knn
                                     ? knn(pc, ci, std::min(query.k, pc.size()))
                                     : ball_query(pc, ci, query.radius);
    std::vector<int> sampled = resample_patch(neighbors, samples_per_patch, mode, rng);
    for (int si : sampled) {
      ps.sample_indices.push_back(si);
      ps.samples.push_back(pc.points[si]);
    }
  }
  return ps;
}

PointCloud augment(const PointCloud& pc, Rng& rng, const AugmentConfig& cfg) {
  PointCloud out = normalize_shape(pc);
  if (cfg.jitter_sigma > 0.0) {
    for (Vec3& p : out.points)
      for (int a = 0; a < 3; ++a)
        p[a] += static_cast<float>(rng.gaussian(cfg.jitter_sigma));
  }
  if (cfg.rotate_up_axis) {
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    float ct = static_cast<float>(std::cos(theta));
    float st = static_cast<float>(std::sin(theta));
    for (Vec3& p : out.points) {
      float x = p[0], y = p[1];
      p[0] = x * ct - y * st;
      p[1] = x * st + y * ct;
    }
  }
  if (cfg.scale_min != 1.0 || cfg.scale_max != 1.0) {
    if (cfg.scale_min > cfg.scale_max)
      throw Error("augment: scale_min must not exceed scale_max");
    float s = static_cast<float>(rng.uniform(cfg.scale_min, cfg.scale_max));
    for (Vec3& p : out.points)
      for (int a = 0; a < 3; ++a) p[a] *= s;
  }
  if (cfg.translate_range > 0.0) {
    Vec3 t;
    for (int a = 0; a < 3; ++a)
      t[a] = static_cast<float>(rng.uniform(-cfg.translate_range, cfg.translate_range));
    for (Vec3& p : out.points)
      for (int a = 0; a < 3; ++a) p[a] += t[a];
  }
  return out;
}

std::vector<uint8_t> patch_mask(int patch_count, double rate, Rng& rng) {
  if (patch_count < 1) throw DimError("patch_mask: need at least one patch");
  if (rate < 0.0 || rate >= 1.0) throw DimError("patch_mask: rate must be in [0,1)");
  std::vector<uint8_t> mask(patch_count);
  for (;;) {
    bool any = false;
    for (int p = 0; p < patch_count; ++p) {
      mask[p] = (rng.uniform() < rate) ? 0 : 1;
      any = any || mask[p];
    }
    if (any) return mask;
  }
}

}  // namespace pm
