// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "patchmixer/data.hpp"
#include "patchmixer/metrics.hpp"
#include "patchmixer/model.hpp"
#include "patchmixer/optim.hpp"

namespace pm {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  uint64_t seed = 1;
  Task task = Task::kClassification;
  BackboneConfig backbone;
  AugmentConfig augment;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json_text);

  /// The recipe's augmentation: jitter, up-axis rotation, random scale, and
  /// for segmentation an extra per-axis translation.
  static AugmentConfig default_augment(Task task);
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double train_oa = 0;

  std::string to_json_line() const;
};

/// Full training state: enough to continue bit-exactly from any epoch.
struct TrainState {
  TrainConfig config;
  ModelParamsT<float> model;
  SgdState<float> opt;
  Rng rng{0};
  int epoch = 0;  // epochs completed
  std::vector<EpochLog> log;
};

/// Run the training recipe (fresh when `resume` is empty). Appends one JSON
/// line per epoch to log_path when given. Aborts with NumericError carrying
/// (epoch, batch, lr) if the loss goes non-finite.
TrainState train(const TrainConfig& cfg, const DatasetManifest& data,
                 const std::string& log_path = "",
                 std::optional<TrainState> resume = std::nullopt);

// ---------------------------------------------------------------------------
// Checkpoints: magic "PMX1", u16 version, length-prefixed config JSON,
// u32 epoch, named tensor section (params + batchnorm running stats),
// optimizer momentum buffers, RNG state, CRC32 trailer over the payload.

std::vector<uint8_t> encode_checkpoint(TrainState& state);
TrainState decode_checkpoint(const std::vector<uint8_t>& bytes);
void save_checkpoint(const std::string& path, TrainState& state);
TrainState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  MetricsReport report;
  ConfusionMatrix confusion{0};
  std::vector<std::vector<double>> embeddings;  // per-shape global features
  std::vector<int> labels_true;
  std::vector<int> labels_pred;
};

/// Deterministic eval-mode inference over a test manifest. Classification
/// reports OA plus the clustering suite over global features; segmentation
/// reports mIoU via per-vertex voting.
EvalResult evaluate(TrainState& state, const DatasetManifest& test);

// ---------------------------------------------------------------------------
// Transfer grid and ablation

struct DomainData {
  std::string name;
  DatasetManifest train;
  DatasetManifest test;
};

struct GridResult {
  std::vector<GridCellValue> cells;            // train-domain major
  std::vector<TransferSummaryRow> summary;     // per training domain
  std::vector<std::string> cell_reports;       // JSON per cell, same order
};

/// Trains one model per training domain and evaluates it on every test
/// domain. `jobs` > 1 runs the per-domain trainings in parallel threads.
GridResult transfer_grid(const TrainConfig& cfg, const std::vector<DomainData>& domains,
                         int jobs = 1);

std::string grid_to_csv(const GridResult& grid);
std::string grid_to_json(const GridResult& grid);

struct AblationArm {
  MixerKind mixer = MixerKind::kAttentive;
  float radius = 0.3f;
  int depth = 1;
  int batch_size = 32;
};

struct AblationRow {
  AblationArm arm;
  std::vector<GridCellValue> cells;
  double avg_tl = 0;
};

/// Axes spec: semicolon-separated "key=v1,v2,..." with keys tm (attentive |
/// vanilla | none), r, d, b. The cross-product of all axes is run.
std::vector<AblationArm> parse_ablation_axes(const std::string& spec,
                                             const TrainConfig& base);

std::vector<AblationRow> ablation_run(const TrainConfig& base,
                                      const std::vector<AblationArm>& arms,
                                      const std::vector<DomainData>& domains,
                                      int jobs = 1);

std::string ablation_to_csv(const std::vector<AblationRow>& rows);
std::string ablation_to_json(const std::vector<AblationRow>& rows);

}  // namespace pm
