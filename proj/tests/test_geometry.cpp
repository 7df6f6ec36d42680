// SPDX-License-Identifier: Apache-2.0
//
// Spatial-op tests. ball_query/knn/fps are checked against brute-force
// oracles; stochastic ops against Monte-Carlo estimates with fixed seeds.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "patchmixer/geometry.hpp"

using namespace pm;

namespace {

PointCloud random_cloud(int v, Rng& rng, double extent = 1.0) {
  PointCloud pc;
  pc.points.resize(v);
  for (auto& p : pc.points)
    for (int a = 0; a < 3; ++a)
      p[a] = static_cast<float>(rng.uniform(-extent, extent));
  return pc;
}

double dist(const Vec3& a, const Vec3& b) {
  double dx = static_cast<double>(a[0]) - b[0];
  double dy = static_cast<double>(a[1]) - b[1];
  double dz = static_cast<double>(a[2]) - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Independent linear-scan neighbor oracle (squared-distance comparison,
// stable ordering by (d2, index)).
std::vector<int> ball_oracle(const PointCloud& pc, int ci, float r) {
  std::vector<std::pair<double, int>> hits;
  double r2 = static_cast<double>(r) * r;
  for (int i = 0; i < pc.size(); ++i) {
    double dx = static_cast<double>(pc.points[i][0]) - pc.points[ci][0];
    double dy = static_cast<double>(pc.points[i][1]) - pc.points[ci][1];
    double dz = static_cast<double>(pc.points[i][2]) - pc.points[ci][2];
    double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 <= r2 || i == ci) hits.emplace_back(d2, i);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<int> out;
  for (auto& [d, i] : hits) out.push_back(i);
  return out;
}

std::vector<int> knn_oracle(const PointCloud& pc, int ci, int k) {
  std::vector<std::pair<double, int>> all;
  for (int i = 0; i < pc.size(); ++i) {
    double dx = static_cast<double>(pc.points[i][0]) - pc.points[ci][0];
    double dy = static_cast<double>(pc.points[i][1]) - pc.points[ci][1];
    double dz = static_cast<double>(pc.points[i][2]) - pc.points[ci][2];
    all.emplace_back(dx * dx + dy * dy + dz * dz, i);
  }
  std::sort(all.begin(), all.end());
  all.resize(k);
  std::vector<int> out;
  for (auto& [d, i] : all) out.push_back(i);
  return out;
}

double min_pairwise_dist(const PointCloud& pc, const std::vector<int>& idx) {
  double best = 1e300;
  for (size_t i = 0; i < idx.size(); ++i)
    for (size_t j = i + 1; j < idx.size(); ++j)
      best = std::min(best, dist(pc.points[idx[i]], pc.points[idx[j]]));
  return best;
}

}  // namespace

TEST_CASE("normalize_shape: cube, idempotence, self-check") {
  PointCloud cube;
  for (int x = 0; x <= 1; ++x)
    for (int y = 0; y <= 1; ++y)
      for (int z = 0; z <= 1; ++z)
        cube.points.push_back({float(x), float(y), float(z)});
  PointCloud n = normalize_shape(cube);
  // Unit cube diagonal is sqrt(3); after scaling every edge is 1/sqrt(3).
  double expect = 1.0 / std::sqrt(3.0);
  CHECK(std::abs(dist(n.points[0], n.points[1]) - expect) < 1e-6);

  PointCloud again = normalize_shape(n);
  for (int i = 0; i < n.size(); ++i)
    for (int a = 0; a < 3; ++a)
      CHECK(std::abs(again.points[i][a] - n.points[i][a]) <= 1e-6);

  Rng rng(31);
  PointCloud rand_pc = random_cloud(64, rng, 5.0);
  PointCloud nn = normalize_shape(rand_pc);
  std::array<double, 3> bary{0, 0, 0};
  Vec3 lo = nn.points[0], hi = nn.points[0];
  for (const Vec3& p : nn.points)
    for (int a = 0; a < 3; ++a) {
      bary[a] += p[a];
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  double diag = 0;
  for (int a = 0; a < 3; ++a) {
    bary[a] /= nn.size();
    CHECK(std::abs(bary[a]) <= 1e-6);
    diag += (double(hi[a]) - lo[a]) * (double(hi[a]) - lo[a]);
  }
  CHECK(std::abs(std::sqrt(diag) - 1.0) <= 1e-6);
}

TEST_CASE("normalize_shape rejects degenerate clouds") {
  PointCloud pc;
  pc.points = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  CHECK_THROWS_AS(normalize_shape(pc), NumericError);
  PointCloud empty;
  CHECK_THROWS_AS(normalize_shape(empty), DataError);
}

TEST_CASE("fps: endpoints on a line, exhaustion, errors") {
  PointCloud line;
  line.points = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  // Barycenter is at x=1.5; both endpoints are equidistant, lexicographic
  // tie-break seeds at x=0 and the next pick is the far endpoint.
  std::vector<int> two = fps(line, 2);
  CHECK(two == std::vector<int>{0, 3});

  std::vector<int> all = fps(line, 4);
  std::set<int> s(all.begin(), all.end());
  CHECK(s == std::set<int>{0, 1, 2, 3});
  CHECK(all[0] == 0);
  CHECK(all[1] == 3);

  CHECK_THROWS_AS(fps(line, 5), DimError);
}

TEST_CASE("fps spreads better than random subsets") {
  Rng rng(32);
  PointCloud pc = random_cloud(20, rng);
  std::vector<int> sel = fps(pc, 4);
  double fps_spread = min_pairwise_dist(pc, sel);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> idx(20);
    for (int i = 0; i < 20; ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(4);
    CHECK(fps_spread >= min_pairwise_dist(pc, idx) - 1e-12);
  }
}

TEST_CASE("fps selected point set is permutation invariant") {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud pc = random_cloud(50, rng);
    std::vector<int> base = fps(pc, 8);

    std::vector<int> perm(pc.size());
    for (int i = 0; i < pc.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    PointCloud shuffled;
    shuffled.points.resize(pc.size());
    for (int i = 0; i < pc.size(); ++i) shuffled.points[perm[i]] = pc.points[i];

    std::vector<int> got = fps(shuffled, 8);
    // Map back to original indices and compare as ordered sequences.
    std::vector<int> inv(pc.size());
    for (int i = 0; i < pc.size(); ++i) inv[perm[i]] = i;
    std::vector<int> mapped;
    for (int gi : got) mapped.push_back(inv[gi]);
    CHECK(mapped == base);
  }
}

TEST_CASE("ball_query trivial radii and oracle equality") {
  Rng rng(34);
  PointCloud pc = random_cloud(60, rng);
  std::vector<int> zero = ball_query(pc, 7, 0.0f);
  CHECK(zero == std::vector<int>{7});

  std::vector<int> everything = ball_query(pc, 7, 100.0f);
  CHECK(static_cast<int>(everything.size()) == pc.size());
  CHECK(everything[0] == 7);

  for (int trial = 0; trial < 100; ++trial) {
    PointCloud c = random_cloud(32 + static_cast<int>(rng.bounded(480)), rng);
    int ci = static_cast<int>(rng.bounded(static_cast<uint32_t>(c.size())));
    CHECK(ball_query(c, ci, 0.2f) == ball_oracle(c, ci, 0.2f));
  }
}

TEST_CASE("knn trivial cases and oracle equality") {
  Rng rng(35);
  PointCloud pc = random_cloud(40, rng);
  CHECK(knn(pc, 5, 1) == std::vector<int>{5});
  std::vector<int> all = knn(pc, 5, pc.size());
  CHECK(static_cast<int>(all.size()) == pc.size());
  CHECK(all == knn_oracle(pc, 5, pc.size()));

  for (int trial = 0; trial < 100; ++trial) {
    PointCloud c = random_cloud(16 + static_cast<int>(rng.bounded(496)), rng);
    int ci = static_cast<int>(rng.bounded(static_cast<uint32_t>(c.size())));
    CHECK(knn(c, ci, 8) == knn_oracle(c, ci, 8));
  }
  CHECK_THROWS_AS(knn(pc, 5, pc.size() + 1), DimError);
}

TEST_CASE("resample_patch: repetition, cycling, uniformity") {
  std::vector<int> one{13};
  Rng rng(36);
  CHECK(resample_patch(one, 4, Mode::kEval, nullptr) ==
        std::vector<int>{13, 13, 13, 13});
  CHECK(resample_patch(one, 4, Mode::kTrain, &rng) ==
        std::vector<int>{13, 13, 13, 13});

  std::vector<int> abc{4, 7, 9};
  CHECK(resample_patch(abc, 5, Mode::kEval, nullptr) ==
        std::vector<int>{4, 7, 9, 4, 7});

  // Train draws are uniform with replacement.
  std::map<int, int> freq;
  const int draws = 100000;
  std::vector<int> opts{0, 1, 2, 3};
  std::vector<int> got = resample_patch(opts, draws, Mode::kTrain, &rng);
  for (int g : got) freq[g]++;
  for (auto& [k, n] : freq)
    CHECK(std::abs(n / double(draws) - 0.25) <= 0.02 * 0.25 + 0.005);
}

TEST_CASE("extract_patches composition and membership") {
  Rng rng(37);
  PointCloud pc = random_cloud(40, rng);
  PointCloud n = normalize_shape(pc);

  // One giant patch covers the whole (deduplicated-order) cloud.
  PatchQuery q;
  q.use_knn = false;
  q.radius = 10.0f;
  PatchSet whole = extract_patches(n, 1, q, n.size(), Mode::kEval, nullptr);
  std::set<int> covered(whole.sample_indices.begin(), whole.sample_indices.end());
  CHECK(static_cast<int>(covered.size()) == n.size());

  // Ball-query membership: every stored sample lies within R of its centroid.
  q.radius = 0.25f;
  PatchSet ps = extract_patches(n, 6, q, 16, Mode::kTrain, &rng);
  for (int p = 0; p < ps.patch_count; ++p)
    for (int s = 0; s < ps.samples_per_patch; ++s) {
      const Vec3& x = ps.samples[p * ps.samples_per_patch + s];
      CHECK(dist(x, ps.centroids[p]) <= 0.25 + 1e-7);
    }
  for (int idx : ps.sample_indices) {
    CHECK(idx >= 0);
    CHECK(idx < n.size());
  }
  CHECK(std::count(ps.mask.begin(), ps.mask.end(), 1) == ps.patch_count);
}

TEST_CASE("extract_patches eval output is permutation invariant") {
  Rng rng(38);
  PointCloud pc = normalize_shape(random_cloud(64, rng));
  PatchQuery q;
  q.radius = 0.3f;
  PatchSet base = extract_patches(pc, 5, q, 12, Mode::kEval, nullptr);

  std::vector<int> perm(pc.size());
  for (int i = 0; i < pc.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  PointCloud shuffled;
  shuffled.points.resize(pc.size());
  for (int i = 0; i < pc.size(); ++i) shuffled.points[perm[i]] = pc.points[i];
  PatchSet moved = extract_patches(shuffled, 5, q, 12, Mode::kEval, nullptr);

  // Identical patch coordinates, in identical canonical order.
  REQUIRE(moved.samples.size() == base.samples.size());
  for (size_t i = 0; i < base.samples.size(); ++i)
    CHECK(moved.samples[i] == base.samples[i]);
  for (size_t i = 0; i < base.centroids.size(); ++i)
    CHECK(moved.centroids[i] == base.centroids[i]);
}

TEST_CASE("augment: zero-noise config, isometry, jitter statistics") {
  Rng rng(39);
  PointCloud pc = random_cloud(32, rng);
  PointCloud plain = augment(pc, rng, AugmentConfig::none());
  PointCloud norm = normalize_shape(pc);
  for (int i = 0; i < pc.size(); ++i) CHECK(plain.points[i] == norm.points[i]);

  // Rotation-only config preserves pairwise distances.
  AugmentConfig rot = AugmentConfig::none();
  rot.rotate_up_axis = true;
  PointCloud rotated = augment(pc, rng, rot);
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j)
      CHECK(std::abs(dist(rotated.points[i], rotated.points[j]) -
                     dist(norm.points[i], norm.points[j])) <= 1e-5);

  // Jitter displacement statistics: per-axis standard deviation near sigma.
  AugmentConfig jit = AugmentConfig::none();
  jit.jitter_sigma = 1e-2;
  PointCloud big = random_cloud(100000, rng);
  PointCloud big_norm = normalize_shape(big);
  PointCloud jittered = augment(big, rng, jit);
  double sq = 0;
  int64_t n = 0;
  for (int i = 0; i < big.size(); ++i)
    for (int a = 0; a < 3; ++a) {
      double d = double(jittered.points[i][a]) - big_norm.points[i][a];
      sq += d * d;
      ++n;
    }
  double sd = std::sqrt(sq / n);
  CHECK(std::abs(sd - 1e-2) <= 0.05 * 1e-2);
}

TEST_CASE("augment scale stays in range and labels survive") {
  Rng rng(40);
  PointCloud pc = random_cloud(16, rng);
  pc.labels.assign(16, 3);
  pc.category = 2;
  AugmentConfig cfg = AugmentConfig::none();
  cfg.scale_min = 0.8;
  cfg.scale_max = 1.2;
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud out = augment(pc, rng, cfg);
    PointCloud norm = normalize_shape(pc);
    double ratio = dist(out.points[0], out.points[1]) / dist(norm.points[0], norm.points[1]);
    CHECK(ratio >= 0.8 - 1e-5);
    CHECK(ratio <= 1.2 + 1e-5);
    CHECK(out.labels == pc.labels);
    CHECK(out.category == 2);
  }
}

TEST_CASE("patch_mask: trivial rates, redraw rule, drop fraction") {
  Rng rng(41);
  std::vector<uint8_t> keep = patch_mask(8, 0.0, rng);
  CHECK(std::count(keep.begin(), keep.end(), 1) == 8);

  // A single patch is always kept, regardless of rate.
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<uint8_t> m = patch_mask(1, 0.9, rng);
    CHECK(m[0] == 1);
  }

  int64_t dropped = 0, total = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<uint8_t> m = patch_mask(10, 0.3, rng);
    for (uint8_t b : m) {
      dropped += (b == 0);
      ++total;
    }
  }
  // Redraws shave a hair off the nominal rate at P=10; within 1% is required.
  CHECK(std::abs(dropped / double(total) - 0.3) <= 0.01);

  CHECK_THROWS_AS(patch_mask(4, 1.0, rng), DimError);
}
