// SPDX-License-Identifier: Apache-2.0
#include "patchmixer/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "patchmixer/io_util.hpp"

namespace pm {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("train config: epochs must be >= 1");
  if (batch_size < 1) throw UsageError("train config: batch size must be >= 1");
  if (lr_max <= 0 || lr_min <= 0 || lr_min > lr_max)
    throw UsageError("train config: need 0 < lr_min <= lr_max");
  if (momentum < 0 || momentum >= 1)
    throw UsageError("train config: momentum must be in [0,1)");
  if (weight_decay < 0) throw UsageError("train config: weight decay must be >= 0");
  backbone.validate();
}

AugmentConfig TrainConfig::default_augment(Task task) {
  AugmentConfig a;
  a.jitter_sigma = 1e-2;
  a.rotate_up_axis = true;
  a.scale_min = 0.8;
  a.scale_max = 1.2;
  a.translate_range = (task == Task::kSegmentation) ? 0.1 : 0.0;
  return a;
}

std::string TrainConfig::to_json() const {
  json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_max"] = lr_max;
  j["lr_min"] = lr_min;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["task"] = (task == Task::kClassification) ? "classification" : "segmentation";
  json b;
  b["V"] = backbone.V;
  b["P"] = backbone.P;
  b["S"] = backbone.S;
  b["use_knn"] = backbone.use_knn;
  b["radius"] = backbone.radius;
  b["k"] = backbone.k;
  b["F"] = backbone.F;
  b["F_T"] = backbone.F_T;
  b["F_C"] = backbone.F_C;
  b["D"] = backbone.D;
  b["embed_channels"] = backbone.embed_channels;
  b["mask_rate"] = backbone.mask_rate;
  b["num_classes"] = backbone.num_classes;
  b["mixer"] = mixer_kind_name(backbone.mixer);
  j["backbone"] = b;
  json a;
  a["jitter_sigma"] = augment.jitter_sigma;
  a["rotate_up_axis"] = augment.rotate_up_axis;
  a["scale_min"] = augment.scale_min;
  a["scale_max"] = augment.scale_max;
  a["translate_range"] = augment.translate_range;
  j["augment"] = a;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config JSON parse failure: ") + e.what());
  }
  try {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr_max = j.at("lr_max").get<double>();
    c.lr_min = j.at("lr_min").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    c.task = j.at("task").get<std::string>() == "segmentation" ? Task::kSegmentation
                                                               : Task::kClassification;
    const json& b = j.at("backbone");
    c.backbone.V = b.at("V").get<int>();
    c.backbone.P = b.at("P").get<int>();
    c.backbone.S = b.at("S").get<int>();
    c.backbone.use_knn = b.at("use_knn").get<bool>();
    c.backbone.radius = b.at("radius").get<float>();
    c.backbone.k = b.at("k").get<int>();
    c.backbone.F = b.at("F").get<int>();
    c.backbone.F_T = b.at("F_T").get<int>();
    c.backbone.F_C = b.at("F_C").get<int>();
    c.backbone.D = b.at("D").get<int>();
    c.backbone.embed_channels = b.at("embed_channels").get<std::vector<int>>();
    c.backbone.mask_rate = b.at("mask_rate").get<double>();
    c.backbone.num_classes = b.at("num_classes").get<int>();
    c.backbone.mixer = mixer_kind_from(b.at("mixer").get<std::string>());
    const json& a = j.at("augment");
    c.augment.jitter_sigma = a.at("jitter_sigma").get<double>();
    c.augment.rotate_up_axis = a.at("rotate_up_axis").get<bool>();
    c.augment.scale_min = a.at("scale_min").get<double>();
    c.augment.scale_max = a.at("scale_max").get<double>();
    c.augment.translate_range = a.at("translate_range").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("config JSON field failure: ") + e.what());
  }
}

std::string EpochLog::to_json_line() const {
  json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["loss"] = loss;
  j["train_oa"] = train_oa;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Training

namespace {

int argmax_row(const std::vector<float>& vals, size_t row, int c) {
  int best = 0;
  float best_v = vals[row * c];
  for (int i = 1; i < c; ++i)
    if (vals[row * c + i] > best_v) {
      best_v = vals[row * c + i];
      best = i;
    }
  return best;
}

}  // namespace

TrainState train(const TrainConfig& cfg, const DatasetManifest& data,
                 const std::string& log_path, std::optional<TrainState> resume) {
  cfg.validate();
  for (const auto& e : data.entries) {
    if (cfg.task == Task::kClassification &&
        (e.category < 0 || e.category >= cfg.backbone.num_classes))
      throw DataError("train: manifest category out of range for " + e.path);
  }

  TrainState st;
  if (resume) {
    st = std::move(*resume);
    if (st.config.to_json() != cfg.to_json())
      throw DataError("train: resume checkpoint config differs from requested config");
  } else {
    st.config = cfg;
    Rng rng(cfg.seed);
    st.model = init_model<float>(cfg.backbone, cfg.task, rng);
    st.opt.momentum = static_cast<float>(cfg.momentum);
    st.opt.weight_decay = static_cast<float>(cfg.weight_decay);
    st.rng = rng;
    st.epoch = 0;
  }

  Batcher batcher(data, cfg.batch_size, cfg.backbone.V, Mode::kTrain);
  NamedParams<float> params = st.model.learnable();

  std::ofstream log_out;
  if (!log_path.empty()) {
    log_out.open(log_path, std::ios::app);
    if (!log_out) throw DataError("train: cannot open log file " + log_path);
  }

  for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
    st.opt.lr = static_cast<float>(lr);
    batcher.start_epoch(&st.rng);

    double loss_sum = 0;
    int batches = 0;
    int64_t correct = 0, seen = 0;
    while (auto batch = batcher.next(&st.rng)) {
      TensorT<float> loss;
      if (cfg.task == Task::kClassification) {
        ForwardOut<float> out = forward_classification_batch(
            batch->clouds, st.model, Mode::kTrain, &st.rng, &cfg.augment);
        loss = softmax_cross_entropy(out.logits, batch->categories);
        const auto& lv = out.logits.values();
        for (size_t i = 0; i < batch->categories.size(); ++i) {
          correct += argmax_row(lv, i, cfg.backbone.num_classes) == batch->categories[i];
          ++seen;
        }
      } else {
        ForwardOut<float> out = forward_segmentation_batch(
            batch->clouds, st.model, Mode::kTrain, &st.rng, &cfg.augment);
        std::vector<int> targets;
        for (size_t bi = 0; bi < batch->clouds.size(); ++bi) {
          if (!batch->clouds[bi].has_labels())
            throw DataError("train: segmentation requires per-vertex labels");
          std::vector<int> t = lift_labels(batch->clouds[bi].labels,
                                           out.patches[bi].sample_indices);
          targets.insert(targets.end(), t.begin(), t.end());
        }
        int rows = out.logits.dim(0) * out.logits.dim(1);
        TensorT<float> flat = reshape(out.logits, {rows, cfg.backbone.num_classes});
        loss = softmax_cross_entropy(flat, targets);
        const auto& lv = flat.values();
        for (size_t i = 0; i < targets.size(); ++i) {
          correct += argmax_row(lv, i, cfg.backbone.num_classes) == targets[i];
          ++seen;
        }
      }

      double lv = loss.item();
      if (!std::isfinite(lv)) {
        std::ostringstream os;
        os << "train: non-finite loss at epoch " << epoch << " batch " << batches
           << " lr " << lr;
        throw NumericError(os.str());
      }
      loss.backward();
      sgd_nesterov_step(params, st.opt);
      loss_sum += lv;
      ++batches;
    }

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.loss = batches ? loss_sum / batches : 0.0;
    el.train_oa = seen ? double(correct) / double(seen) : 0.0;
    st.log.push_back(el);
    if (log_out) log_out << el.to_json_line() << "\n" << std::flush;
    st.epoch = epoch + 1;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_named_f32(ByteWriter& w, const std::string& name,
                     const std::vector<int>& dims, const float* data, size_t n) {
  w.str(name);
  w.u8(static_cast<uint8_t>(dims.size()));
  for (int d : dims) w.u32(static_cast<uint32_t>(d));
  for (size_t i = 0; i < n; ++i) w.f32(data[i]);
}

struct NamedBlob {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
};

NamedBlob read_named_f32(ByteReader& r) {
  NamedBlob b;
  b.name = r.str();
  uint8_t nd = r.u8();
  int64_t n = 1;
  for (int i = 0; i < nd; ++i) {
    uint32_t d = r.u32();
    if (d == 0 || d > (1u << 28)) throw DataError("checkpoint: absurd tensor extent");
    b.dims.push_back(static_cast<int>(d));
    n *= d;
  }
  if (n > (int64_t(1) << 28)) throw DataError("checkpoint: absurd tensor size");
  b.data.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) b.data[static_cast<size_t>(i)] = r.f32();
  return b;
}

constexpr uint16_t kCheckpointVersion = 1;

}  // namespace

std::vector<uint8_t> encode_checkpoint(TrainState& state) {
  ByteWriter payload;
  payload.u16(kCheckpointVersion);
  payload.str(state.config.to_json());
  payload.u32(static_cast<uint32_t>(state.epoch));

  NamedParams<float> params = state.model.learnable();
  std::vector<std::pair<std::string, std::vector<float>*>> buffers;
  state.model.visit_buffers([&](const std::string& name, std::vector<float>& buf) {
    buffers.emplace_back(name, &buf);
  });

  payload.u32(static_cast<uint32_t>(params.items.size() + buffers.size()));
  for (auto& [name, t] : params.items)
    write_named_f32(payload, name, t.shape(), t.values().data(), t.values().size());
  for (auto& [name, buf] : buffers)
    write_named_f32(payload, name, {static_cast<int>(buf->size())}, buf->data(),
                    buf->size());

  payload.u32(static_cast<uint32_t>(state.opt.velocity.size()));
  for (auto& [name, v] : state.opt.velocity)
    write_named_f32(payload, name, {static_cast<int>(v.size())}, v.data(), v.size());

  auto [rs, ri] = state.rng.state();
  payload.u64(rs);
  payload.u64(ri);

  ByteWriter out;
  out.bytes("PMX1", 4);
  out.bytes(payload.data().data(), payload.data().size());
  out.u32(crc32(payload.data()));
  return std::move(out.data());
}

TrainState decode_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PMX1", 4) != 0)
    throw DataError("checkpoint: bad magic");
  if (bytes.size() < 8) throw DataError("checkpoint: truncated");
  size_t payload_len = bytes.size() - 8;
  uint32_t stored = ByteReader(bytes.data() + 4 + payload_len, 4).u32();
  if (stored != crc32(bytes.data() + 4, payload_len))
    throw DataError("checkpoint: CRC mismatch");

  ByteReader r(bytes.data() + 4, payload_len);
  uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));

  TrainState st;
  st.config = TrainConfig::from_json(r.str());
  st.config.validate();
  st.epoch = static_cast<int>(r.u32());

  Rng scratch(0);
  st.model = init_model<float>(st.config.backbone, st.config.task, scratch);
  NamedParams<float> params = st.model.learnable();
  std::vector<std::pair<std::string, std::vector<float>*>> buffers;
  st.model.visit_buffers([&](const std::string& name, std::vector<float>& buf) {
    buffers.emplace_back(name, &buf);
  });

  uint32_t n_tensors = r.u32();
  size_t filled = 0;
  for (uint32_t i = 0; i < n_tensors; ++i) {
    NamedBlob b = read_named_f32(r);
    if (TensorT<float>* t = params.find(b.name)) {
      if (t->shape() != Shape(b.dims))
        throw DataError("checkpoint: shape disagreement for " + b.name);
      t->values() = std::move(b.data);
      ++filled;
      continue;
    }
    bool found = false;
    for (auto& [name, buf] : buffers)
      if (name == b.name) {
        if (buf->size() != b.data.size())
          throw DataError("checkpoint: buffer length disagreement for " + b.name);
        *buf = std::move(b.data);
        found = true;
        ++filled;
        break;
      }
    if (!found) throw DataError("checkpoint: unknown tensor " + b.name);
  }
  if (filled != params.items.size() + buffers.size())
    throw DataError("checkpoint: tensor set incomplete");

  st.opt.momentum = static_cast<float>(st.config.momentum);
  st.opt.weight_decay = static_cast<float>(st.config.weight_decay);
  uint32_t n_vel = r.u32();
  for (uint32_t i = 0; i < n_vel; ++i) {
    NamedBlob b = read_named_f32(r);
    if (!params.find(b.name)) throw DataError("checkpoint: velocity for unknown " + b.name);
    st.opt.velocity[b.name] = std::move(b.data);
  }

  uint64_t rs = r.u64();
  uint64_t ri = r.u64();
  st.rng.restore(rs, ri);
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return st;
}

void save_checkpoint(const std::string& path, TrainState& state) {
  write_file_bytes(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(TrainState& state, const DatasetManifest& test) {
  const TrainConfig& cfg = state.config;
  NoGradGuard no_grad;
  EvalResult out;
  const int C = cfg.backbone.num_classes;
  out.confusion = ConfusionMatrix(C);

  Batcher batcher(test, cfg.batch_size, cfg.backbone.V, Mode::kEval);
  batcher.start_epoch(nullptr);
  int shapes = 0;

  while (auto batch = batcher.next(nullptr)) {
    if (cfg.task == Task::kClassification) {
      ForwardOut<float> fw = forward_classification_batch(batch->clouds, state.model,
                                                          Mode::kEval, nullptr, nullptr);
      const auto& logits = fw.logits.values();
      const auto& feats = fw.global_feature.values();
      int F = cfg.backbone.F;
      for (size_t i = 0; i < batch->clouds.size(); ++i) {
        int truth = batch->categories[i];
        if (truth < 0 || truth >= C)
          throw DataError("evaluate: manifest category out of range");
        int pred = argmax_row(logits, i, C);
        out.confusion.add(truth, pred);
        out.labels_true.push_back(truth);
        out.labels_pred.push_back(pred);
        std::vector<double> emb(F);
        for (int f = 0; f < F; ++f) emb[f] = feats[i * F + f];
        out.embeddings.push_back(std::move(emb));
        ++shapes;
      }
    } else {
      ForwardOut<float> fw = forward_segmentation_batch(batch->clouds, state.model,
                                                        Mode::kEval, nullptr, nullptr);
      const auto& logits = fw.logits.values();
      int rows_per_cloud = fw.logits.dim(1);
      for (size_t i = 0; i < batch->clouds.size(); ++i) {
        const PointCloud& pc = batch->clouds[i];
        if (!pc.has_labels())
          throw DataError("evaluate: segmentation requires per-vertex labels");
        std::vector<float> cloud_logits(
            logits.begin() + i * size_t(rows_per_cloud) * C,
            logits.begin() + (i + 1) * size_t(rows_per_cloud) * C);
        std::vector<int> voted =
            vertex_vote(cloud_logits, C, fw.patches[i].sample_indices, pc);
        for (int vtx = 0; vtx < pc.size(); ++vtx) {
          if (pc.labels[vtx] < 0 || pc.labels[vtx] >= C)
            throw DataError("evaluate: vertex label out of range");
          out.confusion.add(pc.labels[vtx], voted[vtx]);
        }
        ++shapes;
      }
    }
  }

  out.report.n_items = shapes;
  if (cfg.task == Task::kClassification) {
    out.report.oa = overall_accuracy(out.confusion);
    out.report.clustering =
        clustering_suite(out.labels_true, out.labels_pred, out.embeddings);
  } else {
    out.report.miou = mean_iou(out.confusion);
    out.report.oa = overall_accuracy(out.confusion);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transfer grid

GridResult transfer_grid(const TrainConfig& cfg, const std::vector<DomainData>& domains,
                         int jobs) {
  if (domains.empty()) throw UsageError("transfer_grid: no domains");
  struct CellOut {
    GridCellValue value;
    std::string report_json;
  };
  std::vector<std::vector<CellOut>> per_train(domains.size());
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;

  auto worker = [&] {
    for (;;) {
      size_t di = next.fetch_add(1);
      if (di >= domains.size()) return;
      try {
        TrainState st = train(cfg, domains[di].train);
        std::vector<CellOut> cells;
        for (const auto& dom : domains) {
          EvalResult ev = evaluate(st, dom.test);
          CellOut c;
          c.value = {domains[di].name, dom.name, ev.report.primary()};
          c.report_json = ev.report.to_json();
          cells.push_back(std::move(c));
        }
        per_train[di] = std::move(cells);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };

  int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(domains.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!first_error.empty()) throw Error("transfer_grid: " + first_error);

  GridResult out;
  for (auto& cells : per_train)
    for (auto& c : cells) {
      out.cells.push_back(c.value);
      out.cell_reports.push_back(std::move(c.report_json));
    }
  out.summary = transfer_table(out.cells);
  return out;
}

std::string grid_to_csv(const GridResult& grid) {
  std::ostringstream os;
  os << "train_domain,test_domain,value\n";
  for (const auto& c : grid.cells)
    os << c.train_domain << "," << c.test_domain << "," << c.value << "\n";
  for (const auto& row : grid.summary)
    os << row.train_domain << ",AvgTL," << row.avg_tl << "\n";
  return os.str();
}

std::string grid_to_json(const GridResult& grid) {
  json j;
  j["cells"] = json::array();
  for (size_t i = 0; i < grid.cells.size(); ++i) {
    json c;
    c["train_domain"] = grid.cells[i].train_domain;
    c["test_domain"] = grid.cells[i].test_domain;
    c["value"] = grid.cells[i].value;
    c["report"] = json::parse(grid.cell_reports[i]);
    j["cells"].push_back(c);
  }
  j["summary"] = json::array();
  for (const auto& row : grid.summary) {
    json s;
    s["train_domain"] = row.train_domain;
    s["same_domain"] = row.same_domain;
    s["avg_tl"] = row.avg_tl;
    s["tl_cells"] = row.tl_cells;
    j["summary"].push_back(s);
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationArm> parse_ablation_axes(const std::string& spec,
                                             const TrainConfig& base) {
  std::vector<MixerKind> mixers{base.backbone.mixer};
  std::vector<float> radii{base.backbone.radius};
  std::vector<int> depths{base.backbone.D};
  std::vector<int> batches{base.batch_size};

  std::istringstream in(spec);
  std::string axis;
  while (std::getline(in, axis, ';')) {
    if (axis.empty()) continue;
    size_t eq = axis.find('=');
    if (eq == std::string::npos)
      throw UsageError("ablation axes: expected key=v1,v2 in '" + axis + "'");
    std::string key = axis.substr(0, eq);
    std::string vals = axis.substr(eq + 1);
    std::vector<std::string> items;
    std::istringstream vs(vals);
    std::string item;
    while (std::getline(vs, item, ',')) items.push_back(item);
    if (items.empty()) throw UsageError("ablation axes: empty value list for " + key);
    if (key == "tm") {
      mixers.clear();
      for (auto& s : items) mixers.push_back(mixer_kind_from(s));
    } else if (key == "r") {
      radii.clear();
      for (auto& s : items) radii.push_back(std::stof(s));
    } else if (key == "d") {
      depths.clear();
      for (auto& s : items) depths.push_back(std::stoi(s));
    } else if (key == "b") {
      batches.clear();
      for (auto& s : items) batches.push_back(std::stoi(s));
    } else {
      throw UsageError("ablation axes: unknown key '" + key + "'");
    }
  }

  std::vector<AblationArm> arms;
  for (MixerKind m : mixers)
    for (float r : radii)
      for (int d : depths)
        for (int b : batches) arms.push_back({m, r, d, b});
  return arms;
}

std::vector<AblationRow> ablation_run(const TrainConfig& base,
                                      const std::vector<AblationArm>& arms,
                                      const std::vector<DomainData>& domains,
                                      int jobs) {
  std::vector<AblationRow> rows(arms.size());
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;

  auto worker = [&] {
    for (;;) {
      size_t ai = next.fetch_add(1);
      if (ai >= arms.size()) return;
      try {
        TrainConfig cfg = base;
        cfg.backbone.mixer = arms[ai].mixer;
        cfg.backbone.radius = arms[ai].radius;
        cfg.backbone.D = arms[ai].depth;
        cfg.batch_size = arms[ai].batch_size;
        GridResult grid = transfer_grid(cfg, domains, 1);
        AblationRow row;
        row.arm = arms[ai];
        row.cells = grid.cells;
        double tl_sum = 0;
        int tl_n = 0;
        for (const auto& c : grid.cells)
          if (c.train_domain != c.test_domain) {
            tl_sum += c.value;
            ++tl_n;
          }
        row.avg_tl = tl_n ? tl_sum / tl_n : 0.0;
        rows[ai] = std::move(row);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };

  int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(arms.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!first_error.empty()) throw Error("ablation_run: " + first_error);
  return rows;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "r,tm,att,d,b";
  if (!rows.empty())
    for (const auto& c : rows[0].cells)
      os << "," << c.train_domain << "->" << c.test_domain;
  os << ",avg_tl\n";
  for (const auto& row : rows) {
    os << row.arm.radius << "," << (row.arm.mixer != MixerKind::kNone ? 1 : 0) << ","
       << (row.arm.mixer == MixerKind::kAttentive ? 1 : 0) << "," << row.arm.depth
       << "," << row.arm.batch_size;
    for (const auto& c : row.cells) os << "," << c.value;
    os << "," << row.avg_tl << "\n";
  }
  return os.str();
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
  json j = json::array();
  for (const auto& row : rows) {
    json r;
    r["r"] = row.arm.radius;
    r["tm"] = row.arm.mixer != MixerKind::kNone;
    r["att"] = row.arm.mixer == MixerKind::kAttentive;
    r["d"] = row.arm.depth;
    r["b"] = row.arm.batch_size;
    r["cells"] = json::array();
    for (const auto& c : row.cells) {
      json cj;
      cj["train_domain"] = c.train_domain;
      cj["test_domain"] = c.test_domain;
      cj["value"] = c.value;
      r["cells"].push_back(cj);
    }
    r["avg_tl"] = row.avg_tl;
    j.push_back(r);
  }
  return j.dump(2);
}

}  // namespace pm
