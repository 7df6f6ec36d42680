// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchmixer/error.hpp"

namespace pm {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int classes = 0)
      : num_classes(classes),
        counts(static_cast<size_t>(classes) * classes, 0) {}

  void add(int truth, int pred) {
    if (truth < 0 || truth >= num_classes || pred < 0 || pred >= num_classes)
      throw DimError("confusion matrix: class index out of range");
    counts[static_cast<size_t>(truth) * num_classes + pred] += 1;
  }
  int64_t at(int truth, int pred) const {
    return counts[static_cast<size_t>(truth) * num_classes + pred];
  }
  int64_t total() const {
    int64_t t = 0;
    for (int64_t c : counts) t += c;
    return t;
  }
};

/// trace / total.
double overall_accuracy(const ConfusionMatrix& cm);

/// Mean over classes of diag/(row+col-diag); classes absent from both truth
/// and prediction are excluded from the mean.
double mean_iou(const ConfusionMatrix& cm);

/// The eight clustering measures. Silhouette and Calinski-Harabasz require
/// embeddings and at least 2 (at most n-1) predicted clusters; when
/// undefined they are reported as not-applicable.
struct ClusteringScores {
  double ari = 0;
  double ami = 0;
  double homogeneity = 0;
  double completeness = 0;
  double v_measure = 0;
  double fowlkes_mallows = 0;
  std::optional<double> silhouette;
  std::optional<double> calinski_harabasz;
  int n_items = 0;
};

ClusteringScores clustering_suite(const std::vector<int>& labels_true,
                                  const std::vector<int>& labels_pred,
                                  const std::vector<std::vector<double>>& embeddings);

/// All scalar results of one (train-domain, test-domain) evaluation.
struct MetricsReport {
  std::optional<double> oa;
  std::optional<double> miou;
  std::optional<ClusteringScores> clustering;
  int n_items = 0;

  std::string to_json() const;
  /// Headline value: OA when present, else mIoU.
  double primary() const;
};

struct GridCellValue {
  std::string train_domain;
  std::string test_domain;
  double value = 0;
};

struct TransferSummaryRow {
  std::string train_domain;
  double same_domain = -1;  // -1 when the grid has no same-domain cell
  double avg_tl = -1;
  int tl_cells = 0;
};

/// Per training domain: the same-domain cell reported separately and AvgTL,
/// the mean over all off-domain cells.
std::vector<TransferSummaryRow> transfer_table(const std::vector<GridCellValue>& cells);

}  // namespace pm
