// SPDX-License-Identifier: Apache-2.0
//
// Metric tests. Every clustering score is checked against an exhaustive
// small-n oracle built from first principles: pair enumeration, direct
// entropies, and (for AMI) the mean MI over all distinct permutations of the
// predicted labeling. Shared conventions (normalizers, degenerate-case
// values) are pinned here; the arithmetic routes are independent.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "patchmixer/metrics.hpp"
#include "patchmixer/rng.hpp"

using namespace pm;

namespace {

// ----- oracle helpers ------------------------------------------------------

struct PairCounts {
  double tp = 0, fn = 0, fp = 0, tn = 0;
};

PairCounts count_pairs(const std::vector<int>& lt, const std::vector<int>& lp) {
  PairCounts pc;
  for (size_t i = 0; i < lt.size(); ++i)
    for (size_t j = i + 1; j < lt.size(); ++j) {
      bool st = lt[i] == lt[j];
      bool sp = lp[i] == lp[j];
      if (st && sp)
        pc.tp += 1;
      else if (st && !sp)
        pc.fn += 1;
      else if (!st && sp)
        pc.fp += 1;
      else
        pc.tn += 1;
    }
  return pc;
}

double ari_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  PairCounts pc = count_pairs(lt, lp);
  if (pc.fn == 0 && pc.fp == 0) return 1.0;
  return 2.0 * (pc.tp * pc.tn - pc.fn * pc.fp) /
         ((pc.tp + pc.fn) * (pc.fn + pc.tn) + (pc.tp + pc.fp) * (pc.fp + pc.tn));
}

double fm_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  PairCounts pc = count_pairs(lt, lp);
  if (pc.tp == 0) return 0.0;
  return std::sqrt(pc.tp / (pc.tp + pc.fp)) * std::sqrt(pc.tp / (pc.tp + pc.fn));
}

double entropy_oracle(const std::vector<int>& labels) {
  std::map<int, int> sizes;
  for (int l : labels) sizes[l] += 1;
  double h = 0;
  for (auto& [k, s] : sizes) {
    double p = double(s) / labels.size();
    h -= p * std::log(p);
  }
  return h;
}

double mi_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  std::map<std::pair<int, int>, int> joint;
  std::map<int, int> ca, cb;
  for (size_t i = 0; i < lt.size(); ++i) {
    joint[{lt[i], lp[i]}] += 1;
    ca[lt[i]] += 1;
    cb[lp[i]] += 1;
  }
  double n = double(lt.size());
  double mi = 0;
  for (auto& [key, nij] : joint)
    mi += (nij / n) * std::log(n * nij / (double(ca[key.first]) * cb[key.second]));
  return mi;
}

double cond_entropy_oracle(const std::vector<int>& of, const std::vector<int>& given) {
  // H(of | given)
  std::map<std::pair<int, int>, int> joint;
  std::map<int, int> cg;
  for (size_t i = 0; i < of.size(); ++i) {
    joint[{of[i], given[i]}] += 1;
    cg[given[i]] += 1;
  }
  double n = double(of.size());
  double h = 0;
  for (auto& [key, nij] : joint) h -= (nij / n) * std::log(double(nij) / cg[key.second]);
  return h;
}

double homogeneity_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  double ht = entropy_oracle(lt);
  if (ht == 0.0) return 1.0;
  return 1.0 - cond_entropy_oracle(lt, lp) / ht;
}

double completeness_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  double hp = entropy_oracle(lp);
  if (hp == 0.0) return 1.0;
  return 1.0 - cond_entropy_oracle(lp, lt) / hp;
}

double v_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  double h = homogeneity_oracle(lt, lp), c = completeness_oracle(lt, lp);
  return (h + c == 0.0) ? 0.0 : 2 * h * c / (h + c);
}

/// Expected MI as the mean over all distinct arrangements of the predicted
/// labeling (each distinct arrangement carries equal multiplicity under the
/// fixed-margins permutation model). Kahan-compensated mean.
double emi_permutation_oracle(const std::vector<int>& lt, std::vector<int> lp) {
  std::sort(lp.begin(), lp.end());
  double sum = 0, comp = 0;
  int64_t count = 0;
  do {
    double mi = mi_oracle(lt, lp);
    double y = mi - comp;
    double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    ++count;
  } while (std::next_permutation(lp.begin(), lp.end()));
  return sum / double(count);
}

double ami_oracle(const std::vector<int>& lt, const std::vector<int>& lp) {
  std::map<int, int> ta, tb;
  for (int v : lt) ta[v] += 1;
  for (int v : lp) tb[v] += 1;
  if (ta.size() == 1 && tb.size() == 1) return 1.0;
  double mi = mi_oracle(lt, lp);
  double emi = emi_permutation_oracle(lt, lp);
  double normalizer = std::max(entropy_oracle(lt), entropy_oracle(lp));
  double denom = normalizer - emi;
  const double eps = std::numeric_limits<double>::epsilon();
  if (denom < 0)
    denom = std::min(denom, -eps);
  else
    denom = std::max(denom, eps);
  return (mi - emi) / denom;
}

std::optional<double> silhouette_oracle(const std::vector<int>& lp,
                                        const std::vector<std::vector<double>>& emb) {
  size_t n = lp.size();
  std::map<int, int> sizes;
  for (int v : lp) sizes[v] += 1;
  size_t k = sizes.size();
  if (k < 2 || k > n - 1) return std::nullopt;
  auto dist = [&](size_t i, size_t j) {
    double d = 0;
    for (size_t a = 0; a < emb[i].size(); ++a)
      d += (emb[i][a] - emb[j][a]) * (emb[i][a] - emb[j][a]);
    return std::sqrt(d);
  };
  double total = 0;
  for (size_t i = 0; i < n; ++i) {
    if (sizes[lp[i]] == 1) continue;
    double a_sum = 0;
    std::map<int, double> b_sums;
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (lp[j] == lp[i])
        a_sum += dist(i, j);
      else
        b_sums[lp[j]] += dist(i, j);
    }
    double a = a_sum / (sizes[lp[i]] - 1);
    double b = std::numeric_limits<double>::max();
    for (auto& [cl, s] : b_sums) b = std::min(b, s / sizes[cl]);
    double m = std::max(a, b);
    if (m > 0) total += (b - a) / m;
  }
  return total / double(n);
}

std::optional<double> ch_oracle(const std::vector<int>& lp,
                                const std::vector<std::vector<double>>& emb) {
  size_t n = lp.size();
  std::map<int, int> sizes;
  for (int v : lp) sizes[v] += 1;
  size_t k = sizes.size();
  if (k < 2 || k > n - 1) return std::nullopt;
  size_t dim = emb[0].size();
  std::vector<double> global(dim, 0);
  std::map<int, std::vector<double>> means;
  for (size_t i = 0; i < n; ++i) {
    auto& m = means.try_emplace(lp[i], std::vector<double>(dim, 0)).first->second;
    for (size_t a = 0; a < dim; ++a) {
      m[a] += emb[i][a];
      global[a] += emb[i][a];
    }
  }
  for (size_t a = 0; a < dim; ++a) global[a] /= double(n);
  for (auto& [cl, m] : means)
    for (size_t a = 0; a < dim; ++a) m[a] /= sizes[cl];
  double within = 0, between = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t a = 0; a < dim; ++a) {
      double d = emb[i][a] - means[lp[i]][a];
      within += d * d;
    }
  for (auto& [cl, m] : means)
    for (size_t a = 0; a < dim; ++a)
      between += sizes[cl] * (m[a] - global[a]) * (m[a] - global[a]);
  if (within <= 0.0) return std::nullopt;
  return (between / (k - 1)) / (within / (double(n) - k));
}

}  // namespace

TEST_CASE("overall accuracy: diagonal, uniform, recount") {
  ConfusionMatrix diag(3);
  diag.add(0, 0);
  diag.add(1, 1);
  diag.add(2, 2);
  CHECK(overall_accuracy(diag) == 1.0);

  ConfusionMatrix uni(2);
  uni.add(0, 0);
  uni.add(0, 1);
  uni.add(1, 0);
  uni.add(1, 1);
  CHECK(overall_accuracy(uni) == 0.5);

  Rng rng(70);
  ConfusionMatrix cm(4);
  std::vector<std::pair<int, int>> items;
  for (int i = 0; i < 200; ++i) {
    int t = int(rng.bounded(4)), p = int(rng.bounded(4));
    cm.add(t, p);
    items.emplace_back(t, p);
  }
  int64_t correct = 0;
  for (auto& [t, p] : items) correct += (t == p);
  CHECK(overall_accuracy(cm) == double(correct) / 200.0);
}

TEST_CASE("mean IoU: perfect, hand case, set oracle") {
  ConfusionMatrix diag(2);
  diag.add(0, 0);
  diag.add(1, 1);
  CHECK(mean_iou(diag) == 1.0);

  ConfusionMatrix quad(2);
  quad.add(0, 0);
  quad.add(0, 1);
  quad.add(1, 0);
  quad.add(1, 1);
  CHECK(mean_iou(quad) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Random predictions; oracle computes per-class IoU from explicit sets.
  Rng rng(71);
  const int n = 300, c = 5;
  std::vector<int> truth(n), pred(n);
  ConfusionMatrix cm(c);
  for (int i = 0; i < n; ++i) {
    truth[i] = int(rng.bounded(c - 1));  // leave class c-1 absent in truth
    pred[i] = int(rng.bounded(c - 1));
    cm.add(truth[i], pred[i]);
  }
  double sum = 0;
  int present = 0;
  for (int cls = 0; cls < c; ++cls) {
    int64_t inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
      bool in_t = truth[i] == cls, in_p = pred[i] == cls;
      inter += (in_t && in_p);
      uni += (in_t || in_p);
    }
    if (uni == 0) continue;  // the absent class stays out of the mean
    sum += double(inter) / double(uni);
    ++present;
  }
  CHECK(present == c - 1);
  CHECK(mean_iou(cm) == doctest::Approx(sum / present).epsilon(1e-15));
}

TEST_CASE("clustering: perfect agreement and relabeling invariance") {
  std::vector<int> a{0, 0, 1, 1};
  std::vector<std::vector<double>> no_emb;
  ClusteringScores s = clustering_suite(a, a, no_emb);
  CHECK(s.ari == 1.0);
  CHECK(s.ami == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.homogeneity == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.completeness == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.v_measure == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.fowlkes_mallows == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<int> flipped{1, 1, 0, 0};
  ClusteringScores f = clustering_suite(a, flipped, no_emb);
  CHECK(f.ari == 1.0);
  CHECK(f.fowlkes_mallows == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.v_measure == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clustering: predicted-id permutation invariance") {
  Rng rng(72);
  std::vector<int> lt{0, 1, 0, 2, 1, 0, 2, 1};
  std::vector<int> lp{1, 1, 0, 2, 2, 0, 1, 0};
  std::vector<std::vector<double>> emb;
  for (int i = 0; i < 8; ++i)
    emb.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
  ClusteringScores base = clustering_suite(lt, lp, emb);

  std::vector<int> remap{7, 3, 5};  // bijection on cluster ids
  std::vector<int> lp2;
  for (int v : lp) lp2.push_back(remap[v]);
  ClusteringScores moved = clustering_suite(lt, lp2, emb);
  CHECK(moved.ari == doctest::Approx(base.ari).epsilon(1e-12));
  CHECK(moved.ami == doctest::Approx(base.ami).epsilon(1e-12));
  CHECK(moved.homogeneity == doctest::Approx(base.homogeneity).epsilon(1e-12));
  CHECK(moved.completeness == doctest::Approx(base.completeness).epsilon(1e-12));
  CHECK(moved.v_measure == doctest::Approx(base.v_measure).epsilon(1e-12));
  CHECK(moved.fowlkes_mallows == doctest::Approx(base.fowlkes_mallows).epsilon(1e-12));
  CHECK(*moved.silhouette == doctest::Approx(*base.silhouette).epsilon(1e-12));
  CHECK(*moved.calinski_harabasz ==
        doctest::Approx(*base.calinski_harabasz).epsilon(1e-12));
}

TEST_CASE("clustering: degenerate inputs") {
  std::vector<int> lt{0, 1, 0, 1};
  std::vector<int> single{3, 3, 3, 3};
  std::vector<std::vector<double>> emb{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  ClusteringScores s = clustering_suite(lt, single, emb);
  CHECK(!s.silhouette.has_value());
  CHECK(!s.calinski_harabasz.has_value());
  CHECK(s.ari <= 0.0);  // single-cluster prediction cannot beat chance
  CHECK(s.ari == doctest::Approx(ari_oracle(lt, single)).epsilon(1e-12));
  CHECK(s.ami == doctest::Approx(ami_oracle(lt, single)).epsilon(1e-12));

  std::vector<int> empty;
  std::vector<std::vector<double>> no_emb;
  CHECK_THROWS_AS(clustering_suite(empty, empty, no_emb), DataError);
}

TEST_CASE("clustering suite matches exhaustive oracles on 500 random labelings") {
  Rng rng(73);
  for (int trial = 0; trial < 500; ++trial) {
    int n = 2 + int(rng.bounded(7));  // 2..8
    int ct = 1 + int(rng.bounded(uint32_t(n)));
    int cp = 1 + int(rng.bounded(uint32_t(n)));
    std::vector<int> lt(n), lp(n);
    for (int i = 0; i < n; ++i) {
      lt[i] = int(rng.bounded(uint32_t(ct)));
      lp[i] = int(rng.bounded(uint32_t(cp)));
    }
    std::vector<std::vector<double>> emb(n);
    for (auto& e : emb) e = {rng.gaussian(), rng.gaussian(), rng.gaussian()};

    ClusteringScores s = clustering_suite(lt, lp, emb);
    CHECK(std::abs(s.ari - ari_oracle(lt, lp)) <= 1e-12);
    CHECK(std::abs(s.fowlkes_mallows - fm_oracle(lt, lp)) <= 1e-12);
    CHECK(std::abs(s.homogeneity - homogeneity_oracle(lt, lp)) <= 1e-12);
    CHECK(std::abs(s.completeness - completeness_oracle(lt, lp)) <= 1e-12);
    CHECK(std::abs(s.v_measure - v_oracle(lt, lp)) <= 1e-12);
    CHECK(std::abs(s.ami - ami_oracle(lt, lp)) <= 1e-12);

    std::optional<double> so = silhouette_oracle(lp, emb);
    REQUIRE(s.silhouette.has_value() == so.has_value());
    if (so) CHECK(std::abs(*s.silhouette - *so) <= 1e-12);
    std::optional<double> co = ch_oracle(lp, emb);
    REQUIRE(s.calinski_harabasz.has_value() == co.has_value());
    if (co) CHECK(std::abs(*s.calinski_harabasz - *co) <= 1e-12);
  }
}

TEST_CASE("transfer table summaries") {
  std::vector<GridCellValue> one{{"A", "A", 0.95}, {"A", "B", 0.7}};
  auto rows = transfer_table(one);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].same_domain == 0.95);
  CHECK(rows[0].avg_tl == 0.7);
  CHECK(rows[0].tl_cells == 1);

  std::vector<GridCellValue> two{
      {"A", "A", 0.9}, {"A", "B", 0.8}, {"A", "C", 0.9},
      {"B", "B", 0.99}, {"B", "A", 0.6}, {"B", "C", 0.5}};
  auto r2 = transfer_table(two);
  REQUIRE(r2.size() == 2);
  CHECK(r2[0].avg_tl == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(r2[1].avg_tl == doctest::Approx(0.55).epsilon(1e-15));

  // Recount from raw cells.
  double manual = (0.8 + 0.9) / 2.0;
  CHECK(r2[0].avg_tl == doctest::Approx(manual).epsilon(1e-15));
}

TEST_CASE("metrics report JSON has the stable field set") {
  MetricsReport rep;
  rep.oa = 0.75;
  rep.n_items = 42;
  ClusteringScores cs;
  cs.ari = 0.5;
  cs.n_items = 42;
  rep.clustering = cs;
  std::string j = rep.to_json();
  for (const char* key : {"\"oa\"", "\"miou\"", "\"ari\"", "\"ami\"", "\"h\"",
                          "\"c\"", "\"v\"", "\"fm\"", "\"s\"", "\"ch\"",
                          "\"n_items\""})
    CHECK(j.find(key) != std::string::npos);
  CHECK(rep.primary() == 0.75);
}
