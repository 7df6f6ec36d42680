// SPDX-License-Identifier: Apache-2.0
#include "patchmixer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"

namespace pm {

double overall_accuracy(const ConfusionMatrix& cm) {
  int64_t total = cm.total();
  if (total == 0) throw DataError("overall_accuracy: empty confusion matrix");
  int64_t correct = 0;
  for (int c = 0; c < cm.num_classes; ++c) correct += cm.at(c, c);
  return static_cast<double>(correct) / static_cast<double>(total);
}

double mean_iou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("mean_iou: empty confusion matrix");
  double sum = 0;
  int present = 0;
  for (int c = 0; c < cm.num_classes; ++c) {
    int64_t row = 0, col = 0;
    for (int j = 0; j < cm.num_classes; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    int64_t inter = cm.at(c, c);
    int64_t uni = row + col - inter;
    if (uni == 0) continue;  // class absent from both truth and prediction
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  if (present == 0) throw DataError("mean_iou: no class present");
  return sum / present;
}

namespace {

struct Contingency {
  int r = 0, c = 0;
  int64_t n = 0;
  std::vector<int64_t> cells;  // r x c
  std::vector<int64_t> a;      // row sums (true clusters)
  std::vector<int64_t> b;      // col sums (predicted clusters)

  int64_t at(int i, int j) const { return cells[static_cast<size_t>(i) * c + j]; }
};

Contingency contingency(const std::vector<int>& lt, const std::vector<int>& lp) {
  if (lt.empty()) throw DataError("clustering_suite: empty input");
  if (lt.size() != lp.size())
    throw DimError("clustering_suite: label vectors differ in length");
  std::map<int, int> tid, pid;
  for (int v : lt) tid.emplace(v, 0);
  for (int v : lp) pid.emplace(v, 0);
  int r = 0, c = 0;
  for (auto& [key, val] : tid) val = r++;
  for (auto& [key, val] : pid) val = c++;
  Contingency ct;
  ct.r = r;
  ct.c = c;
  ct.n = static_cast<int64_t>(lt.size());
  ct.cells.assign(static_cast<size_t>(r) * c, 0);
  ct.a.assign(r, 0);
  ct.b.assign(c, 0);
  for (size_t i = 0; i < lt.size(); ++i) {
    int ti = tid[lt[i]], pi = pid[lp[i]];
    ct.cells[static_cast<size_t>(ti) * c + pi] += 1;
    ct.a[ti] += 1;
    ct.b[pi] += 1;
  }
  return ct;
}

inline double pairs2(int64_t m) { return 0.5 * static_cast<double>(m) * (m - 1); }

double entropy(const std::vector<int64_t>& sizes, int64_t n) {
  double h = 0;
  for (int64_t s : sizes)
    if (s > 0) {
      double p = static_cast<double>(s) / n;
      h -= p * std::log(p);
    }
  return h;
}

double mutual_information(const Contingency& ct) {
  double mi = 0;
  for (int i = 0; i < ct.r; ++i)
    for (int j = 0; j < ct.c; ++j) {
      int64_t nij = ct.at(i, j);
      if (nij == 0) continue;
      double p = static_cast<double>(nij) / ct.n;
      mi += p * std::log(static_cast<double>(ct.n) * nij /
                         (static_cast<double>(ct.a[i]) * ct.b[j]));
    }
  return mi;
}

/// Expected mutual information under the hypergeometric (fixed-margins)
/// model. Small n uses an exact factorial table (the pmf numerator and
/// denominator both stay below 2^53); larger n falls back to lgamma.
double expected_mutual_information(const Contingency& ct) {
  const int64_t n = ct.n;
  const bool exact = n <= 20;
  std::vector<double> fact;
  if (exact) {
    fact.resize(static_cast<size_t>(n) + 1);
    fact[0] = 1;
    for (int64_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  }
  auto log_fact = [](int64_t m) { return std::lgamma(static_cast<double>(m) + 1.0); };

  double emi = 0;
  for (int64_t ai : ct.a)
    for (int64_t bj : ct.b) {
      int64_t lo = std::max<int64_t>(1, ai + bj - n);
      int64_t hi = std::min(ai, bj);
      for (int64_t nij = lo; nij <= hi; ++nij) {
        double term = (static_cast<double>(nij) / n) *
                      std::log(static_cast<double>(n) * nij /
                               (static_cast<double>(ai) * bj));
        double pmf;
        if (exact) {
          double num = (fact[ai] * fact[n - ai]) * (fact[bj] * fact[n - bj]);
          double den = fact[n] * fact[nij] * fact[ai - nij] * fact[bj - nij] *
                       fact[n - ai - bj + nij];
          pmf = num / den;
        } else {
          double lp = log_fact(ai) + log_fact(bj) + log_fact(n - ai) +
                      log_fact(n - bj) - log_fact(n) - log_fact(nij) -
                      log_fact(ai - nij) - log_fact(bj - nij) -
                      log_fact(n - ai - bj + nij);
          pmf = std::exp(lp);
        }
        emi += term * pmf;
      }
    }
  return emi;
}

}  // namespace

ClusteringScores clustering_suite(const std::vector<int>& labels_true,
                                  const std::vector<int>& labels_pred,
                                  const std::vector<std::vector<double>>& embeddings) {
  Contingency ct = contingency(labels_true, labels_pred);
  const int64_t n = ct.n;
  ClusteringScores out;
  out.n_items = static_cast<int>(n);

  // Pair counts.
  double tp = 0;  // pairs grouped together by both labelings
  for (int i = 0; i < ct.r; ++i)
    for (int j = 0; j < ct.c; ++j) tp += pairs2(ct.at(i, j));
  double row_pairs = 0, col_pairs = 0;
  for (int64_t ai : ct.a) row_pairs += pairs2(ai);
  for (int64_t bj : ct.b) col_pairs += pairs2(bj);
  double fn = row_pairs - tp;
  double fp = col_pairs - tp;

  // ARI via pair counting; perfect pair agreement is exactly 1.
  if (fn == 0.0 && fp == 0.0) {
    out.ari = 1.0;
  } else {
    double all_pairs = pairs2(n);
    double tn = all_pairs - tp - fn - fp;
    out.ari = 2.0 * (tp * tn - fn * fp) /
              ((tp + fn) * (fn + tn) + (tp + fp) * (fp + tn));
  }

  // Fowlkes-Mallows: geometric mean of pairwise precision and recall.
  out.fowlkes_mallows =
      (tp > 0.0) ? std::sqrt(tp / (tp + fp)) * std::sqrt(tp / (tp + fn)) : 0.0;

  // Conditional-entropy measures (natural log).
  double h_true = entropy(ct.a, n);
  double h_pred = entropy(ct.b, n);
  double h_true_given_pred = 0, h_pred_given_true = 0;
  for (int i = 0; i < ct.r; ++i)
    for (int j = 0; j < ct.c; ++j) {
      int64_t nij = ct.at(i, j);
      if (nij == 0) continue;
      double p = static_cast<double>(nij) / n;
      h_true_given_pred -= p * std::log(static_cast<double>(nij) / ct.b[j]);
      h_pred_given_true -= p * std::log(static_cast<double>(nij) / ct.a[i]);
    }
  out.homogeneity = (h_true == 0.0) ? 1.0 : 1.0 - h_true_given_pred / h_true;
  out.completeness = (h_pred == 0.0) ? 1.0 : 1.0 - h_pred_given_true / h_pred;
  double hc = out.homogeneity + out.completeness;
  out.v_measure = (hc == 0.0) ? 0.0 : 2.0 * out.homogeneity * out.completeness / hc;

  // AMI with max-normalization over the hypergeometric expected MI.
  if (ct.r == 1 && ct.c == 1) {
    out.ami = 1.0;
  } else {
    double mi = mutual_information(ct);
    double emi = expected_mutual_information(ct);
    double normalizer = std::max(h_true, h_pred);
    double denom = normalizer - emi;
    const double eps = std::numeric_limits<double>::epsilon();
    if (denom < 0)
      denom = std::min(denom, -eps);
    else
      denom = std::max(denom, eps);
    out.ami = (mi - emi) / denom;
  }

  // Intrinsic measures over the predicted clustering.
  if (!embeddings.empty()) {
    if (embeddings.size() != labels_pred.size())
      throw DimError("clustering_suite: embedding count mismatch");
    int k = ct.c;
    if (k >= 2 && k <= static_cast<int>(n) - 1) {
      size_t dim = embeddings[0].size();
      for (const auto& e : embeddings)
        if (e.size() != dim) throw DimError("clustering_suite: ragged embeddings");

      std::map<int, int> pid;
      for (int v : labels_pred) pid.emplace(v, 0);
      int next = 0;
      for (auto& [key, val] : pid) val = next++;
      std::vector<int> cid(labels_pred.size());
      for (size_t i = 0; i < labels_pred.size(); ++i) cid[i] = pid[labels_pred[i]];

      auto dist = [&](size_t i, size_t j) {
        double d = 0;
        for (size_t a = 0; a < dim; ++a) {
          double diff = embeddings[i][a] - embeddings[j][a];
          d += diff * diff;
        }
        return std::sqrt(d);
      };

      // Silhouette: s(i) = (b-a)/max(a,b); members of singleton clusters
      // contribute 0.
      double s_sum = 0;
      for (size_t i = 0; i < embeddings.size(); ++i) {
        std::vector<double> sum_to_cluster(k, 0.0);
        for (size_t j = 0; j < embeddings.size(); ++j) {
          if (i == j) continue;
          sum_to_cluster[cid[j]] += dist(i, j);
        }
        int64_t own = ct.b[cid[i]];
        if (own <= 1) continue;
        double a_i = sum_to_cluster[cid[i]] / static_cast<double>(own - 1);
        double b_i = std::numeric_limits<double>::max();
        for (int cc = 0; cc < k; ++cc) {
          if (cc == cid[i] || ct.b[cc] == 0) continue;
          b_i = std::min(b_i, sum_to_cluster[cc] / static_cast<double>(ct.b[cc]));
        }
        double m = std::max(a_i, b_i);
        if (m > 0) s_sum += (b_i - a_i) / m;
      }
      out.silhouette = s_sum / static_cast<double>(n);

      // Calinski-Harabasz: between/within dispersion ratio.
      std::vector<double> global_mean(dim, 0.0);
      std::vector<std::vector<double>> cluster_mean(k, std::vector<double>(dim, 0.0));
      for (size_t i = 0; i < embeddings.size(); ++i)
        for (size_t a = 0; a < dim; ++a) {
          global_mean[a] += embeddings[i][a];
          cluster_mean[cid[i]][a] += embeddings[i][a];
        }
      for (size_t a = 0; a < dim; ++a) global_mean[a] /= static_cast<double>(n);
      for (int cc = 0; cc < k; ++cc)
        for (size_t a = 0; a < dim; ++a)
          cluster_mean[cc][a] /= static_cast<double>(ct.b[cc]);
      double within = 0, between = 0;
      for (size_t i = 0; i < embeddings.size(); ++i)
        for (size_t a = 0; a < dim; ++a) {
          double d = embeddings[i][a] - cluster_mean[cid[i]][a];
          within += d * d;
        }
      for (int cc = 0; cc < k; ++cc)
        for (size_t a = 0; a < dim; ++a) {
          double d = cluster_mean[cc][a] - global_mean[a];
          between += static_cast<double>(ct.b[cc]) * d * d;
        }
      if (within > 0.0)
        out.calinski_harabasz =
            (between / (k - 1)) / (within / (static_cast<double>(n) - k));
    }
  }
  return out;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  put("oa", oa);
  put("miou", miou);
  if (clustering) {
    j["ari"] = clustering->ari;
    j["ami"] = clustering->ami;
    j["h"] = clustering->homogeneity;
    j["c"] = clustering->completeness;
    j["v"] = clustering->v_measure;
    j["fm"] = clustering->fowlkes_mallows;
    put("s", clustering->silhouette);
    put("ch", clustering->calinski_harabasz);
  } else {
    for (const char* key : {"ari", "ami", "h", "c", "v", "fm", "s", "ch"})
      j[key] = nullptr;
  }
  j["n_items"] = n_items;
  return j.dump(2);
}

double MetricsReport::primary() const {
  if (oa) return *oa;
  if (miou) return *miou;
  throw DataError("metrics report holds neither OA nor mIoU");
}

std::vector<TransferSummaryRow> transfer_table(const std::vector<GridCellValue>& cells) {
  std::vector<TransferSummaryRow> rows;
  for (const GridCellValue& cell : cells) {
    TransferSummaryRow* row = nullptr;
    for (auto& r : rows)
      if (r.train_domain == cell.train_domain) row = &r;
    if (!row) {
      rows.push_back({cell.train_domain, -1.0, -1.0, 0});
      row = &rows.back();
    }
    if (cell.test_domain == cell.train_domain) {
      row->same_domain = cell.value;
    } else {
      double total = (row->tl_cells > 0 ? row->avg_tl * row->tl_cells : 0.0) + cell.value;
      row->tl_cells += 1;
      row->avg_tl = total / row->tl_cells;
    }
  }
  return rows;
}

}  // namespace pm
