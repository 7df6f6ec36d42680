// SPDX-License-Identifier: Apache-2.0
//
// Single executable for the whole pipeline: synthetic benchmark generation,
// training, evaluation, the transfer grid, the ablation runner, and a fast
// property self-test. Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchmixer/data.hpp"
#include "patchmixer/io_util.hpp"
#include "patchmixer/metrics.hpp"
#include "patchmixer/model.hpp"
#include "patchmixer/train.hpp"

namespace fs = std::filesystem;
using namespace pm;

namespace {

struct CliModelOpts {
  int V = 256;
  int P = 32;
  int S = 32;
  bool use_knn = false;
  float radius = 0.3f;
  int k = 32;
  int F = 128;
  int F_T = 64;
  int F_C = 64;
  int D = 1;
  std::string embed_channels = "16,128";
  double mask_rate = 0.3;
  int classes = 0;  // 0 = derive from the manifest
  std::string mixer = "attentive";
};

struct CliTrainOpts {
  int epochs = 50;
  int batch = 32;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  uint64_t seed = 1;
  std::string task = "classification";
  double jitter = 1e-2;
  bool rotate = true;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double translate = -1.0;  // <0 = task default (0.1 for segmentation)
};

void add_model_options(CLI::App* cmd, CliModelOpts& m) {
  cmd->add_option("--model.V", m.V, "input vertex count per shape");
  cmd->add_option("--model.P", m.P, "patch count");
  cmd->add_option("--model.S", m.S, "samples per patch");
  cmd->add_flag("--model.use-knn", m.use_knn, "use kNN neighborhoods instead of ball query");
  cmd->add_option("--model.radius", m.radius, "ball-query radius");
  cmd->add_option("--model.k", m.k, "kNN neighbor count");
  cmd->add_option("--model.F", m.F, "token feature width");
  cmd->add_option("--model.FT", m.F_T, "token-mixer hidden width");
  cmd->add_option("--model.FC", m.F_C, "channel-mixer hidden width");
  cmd->add_option("--model.D", m.D, "mixer depth");
  cmd->add_option("--model.embed-channels", m.embed_channels,
                  "comma list of embedding channels; last must equal F");
  cmd->add_option("--model.mask-rate", m.mask_rate, "train-time patch drop rate");
  cmd->add_option("--model.classes", m.classes, "class count (0 = from manifest)");
  cmd->add_option("--model.mixer", m.mixer, "attentive | vanilla | none");
}

void add_train_options(CLI::App* cmd, CliTrainOpts& t) {
  cmd->add_option("--train.epochs", t.epochs, "training epochs");
  cmd->add_option("--train.batch", t.batch, "mini-batch size");
  cmd->add_option("--train.lr-max", t.lr_max, "initial learning rate");
  cmd->add_option("--train.lr-min", t.lr_min, "final learning rate");
  cmd->add_option("--train.momentum", t.momentum, "Nesterov momentum");
  cmd->add_option("--train.weight-decay", t.weight_decay, "weight decay");
  cmd->add_option("--train.seed", t.seed, "RNG seed");
  cmd->add_option("--train.task", t.task, "classification | segmentation");
  cmd->add_option("--train.jitter", t.jitter, "augmentation jitter sigma");
  cmd->add_flag("--train.rotate,!--train.no-rotate", t.rotate, "random up-axis rotation");
  cmd->add_option("--train.scale-min", t.scale_min, "augmentation scale lower bound");
  cmd->add_option("--train.scale-max", t.scale_max, "augmentation scale upper bound");
  cmd->add_option("--train.translate", t.translate,
                  "augmentation translation range (<0 = task default)");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  if (out.empty()) throw UsageError("empty integer list: '" + s + "'");
  return out;
}

TrainConfig build_train_config(const CliModelOpts& m, const CliTrainOpts& t,
                               const DatasetManifest* manifest) {
  TrainConfig cfg;
  cfg.epochs = t.epochs;
  cfg.batch_size = t.batch;
  cfg.lr_max = t.lr_max;
  cfg.lr_min = t.lr_min;
  cfg.momentum = t.momentum;
  cfg.weight_decay = t.weight_decay;
  cfg.seed = t.seed;
  if (t.task == "classification")
    cfg.task = Task::kClassification;
  else if (t.task == "segmentation")
    cfg.task = Task::kSegmentation;
  else
    throw UsageError("unknown task: " + t.task);

  cfg.backbone.V = m.V;
  cfg.backbone.P = m.P;
  cfg.backbone.S = m.S;
  cfg.backbone.use_knn = m.use_knn;
  cfg.backbone.radius = m.radius;
  cfg.backbone.k = m.k;
  cfg.backbone.F = m.F;
  cfg.backbone.F_T = m.F_T;
  cfg.backbone.F_C = m.F_C;
  cfg.backbone.D = m.D;
  cfg.backbone.embed_channels = parse_int_list(m.embed_channels);
  cfg.backbone.mask_rate = m.mask_rate;
  cfg.backbone.mixer = mixer_kind_from(m.mixer);
  if (m.classes > 0) {
    cfg.backbone.num_classes = m.classes;
  } else {
    if (!manifest) throw UsageError("class count unset and no manifest to derive it from");
    int derived = manifest->num_classes();
    if (derived < 2) {
      // Per-vertex labeled manifests carry no category column; count parts.
      derived = 0;
      for (const auto& e : manifest->entries) {
        PointCloud pc = load_cloud(manifest->resolve(e.path));
        for (int l : pc.labels) derived = std::max(derived, l + 1);
      }
    }
    if (derived < 2) throw DataError("could not derive a class count from the manifest");
    cfg.backbone.num_classes = derived;
  }

  cfg.augment = TrainConfig::default_augment(cfg.task);
  cfg.augment.jitter_sigma = t.jitter;
  cfg.augment.rotate_up_axis = t.rotate;
  cfg.augment.scale_min = t.scale_min;
  cfg.augment.scale_max = t.scale_max;
  if (t.translate >= 0) cfg.augment.translate_range = t.translate;
  cfg.validate();
  return cfg;
}

std::string resolve_out_dir(std::string out, const std::string& command) {
  if (out.empty()) {
    const char* root = std::getenv("PATCHMIXER_OUT");
    if (!root || !*root)
      throw UsageError("--out not given and PATCHMIXER_OUT is unset");
    out = (fs::path(root) / command).string();
  }
  fs::create_directories(out);
  return out;
}

void emit_resolved_config(CLI::App* cmd, const std::string& out_dir) {
  write_file_text((fs::path(out_dir) / "resolved_config.ini").string(),
                  cmd->config_to_str(true, false));
}

std::vector<DomainData> scan_domains(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string fname = entry.path().filename().string();
    const std::string suffix = "_train.tsv";
    if (fname.size() > suffix.size() &&
        fname.compare(fname.size() - suffix.size(), suffix.size(), suffix) == 0)
      names.push_back(fname.substr(0, fname.size() - suffix.size()));
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no *_train.tsv manifests under " + dir);
  std::vector<DomainData> out;
  for (const std::string& n : names) {
    DomainData d;
    d.name = n;
    d.train = load_manifest((fs::path(dir) / (n + "_train.tsv")).string());
    std::string test_path = (fs::path(dir) / (n + "_test.tsv")).string();
    if (!fs::exists(test_path)) throw DataError("missing test manifest " + test_path);
    d.test = load_manifest(test_path);
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Self-test groups

using T64 = TensorT<double>;

T64 st_rand(Shape shape, Rng& rng) {
  T64 t(std::move(shape));
  for (double& v : t.values()) {
    double mag = rng.uniform(0.1, 1.0);
    v = (rng.uniform() < 0.5) ? -mag : mag;
  }
  return t;
}

bool selftest_gradients(bool inject_bug) {
  Rng rng(901);
  BackboneConfig cfg;
  cfg.V = 24;
  cfg.P = 3;
  cfg.S = 4;
  cfg.F = 5;
  cfg.F_T = 6;
  cfg.F_C = 6;
  cfg.D = 1;
  cfg.embed_channels = {4, 5};
  cfg.num_classes = 3;
  auto model = init_model<double>(cfg, Task::kClassification, rng);

  double worst = 0;
  {
    T64 a = st_rand({4, 3}, rng), b = st_rand({3, 2}, rng);
    worst = std::max(worst,
                     grad_check<double>([&] { return sum(matmul(a, b)); }, {a, b}, 1e-5));
  }
  {
    T64 x = st_rand({3, 4}, rng), w = st_rand({4, 2}, rng), b = st_rand({2}, rng);
    worst = std::max(worst, grad_check<double>(
                                [&] { return sum(mul(linear(x, w, b), linear(x, w, b))); },
                                {x, w, b}, 1e-5));
  }
  {
    T64 x = st_rand({5}, rng);
    worst = std::max(
        worst, grad_check<double>([&] { return sum(mul(sigmoid(x), x)); }, {x}, 1e-5));
  }
  {
    T64 x = st_rand({2, 3, 5}, rng);
    std::vector<T64> leaves;
    for (auto& [n, t] : model.learnable().items) leaves.push_back(t);
    leaves.push_back(x);
    worst = std::max(worst, grad_check<double>(
                                [&] {
                                  BnStateT<double> s1 = model.blocks[0].gate1_bn.state;
                                  BnStateT<double> s2 = model.blocks[0].gate2_bn.state;
                                  T64 out = mixer_stack(x, model, Mode::kTrain);
                                  model.blocks[0].gate1_bn.state = s1;
                                  model.blocks[0].gate2_bn.state = s2;
                                  return sum(mul(out, out));
                                },
                                leaves, 1e-5));
  }
  if (inject_bug) worst += 1e-2;  // fixture: prove the harness detects a bad gradient
  return worst <= 1e-4;
}

bool selftest_spatial() {
  Rng rng(902);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud pc;
    pc.points.resize(64 + rng.bounded(128));
    for (auto& p : pc.points)
      for (int a = 0; a < 3; ++a) p[a] = float(rng.uniform(-1, 1));
    int ci = int(rng.bounded(uint32_t(pc.size())));

    std::vector<int> ball = ball_query(pc, ci, 0.4f);
    std::vector<std::pair<double, int>> oracle;
    for (int i = 0; i < pc.size(); ++i) {
      double dx = double(pc.points[i][0]) - pc.points[ci][0];
      double dy = double(pc.points[i][1]) - pc.points[ci][1];
      double dz = double(pc.points[i][2]) - pc.points[ci][2];
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 <= 0.4 * 0.4 || i == ci) oracle.emplace_back(d2, i);
    }
    std::sort(oracle.begin(), oracle.end());
    if (oracle.size() != ball.size()) return false;
    for (size_t i = 0; i < ball.size(); ++i)
      if (ball[i] != oracle[i].second) return false;

    std::vector<int> kn = knn(pc, ci, 8);
    if (int(kn.size()) != 8 || kn[0] != ci) return false;
  }
  return true;
}

bool selftest_invariance() {
  Rng rng(903);
  BackboneConfig cfg;
  cfg.V = 48;
  cfg.P = 6;
  cfg.S = 8;
  cfg.F = 5;
  cfg.F_T = 6;
  cfg.F_C = 6;
  cfg.embed_channels = {4, 5};
  cfg.num_classes = 3;
  auto model = init_model<float>(cfg, Task::kClassification, rng);
  NoGradGuard ng;
  for (int trial = 0; trial < 4; ++trial) {
    PointCloud pc;
    pc.points.resize(48);
    for (auto& p : pc.points)
      for (int a = 0; a < 3; ++a) p[a] = float(rng.uniform(-1, 1));
    TensorT<float> base = forward_classification(pc, model, Mode::kEval);
    std::vector<int> perm(pc.size());
    for (int i = 0; i < pc.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    PointCloud shuffled;
    shuffled.points.resize(pc.size());
    for (int i = 0; i < pc.size(); ++i) shuffled.points[perm[i]] = pc.points[i];
    TensorT<float> moved = forward_classification(shuffled, model, Mode::kEval);
    for (size_t i = 0; i < base.values().size(); ++i)
      if (std::abs(base.values()[i] - moved.values()[i]) > 1e-5f) return false;
  }
  return true;
}

bool selftest_metrics() {
  Rng rng(904);
  for (int trial = 0; trial < 60; ++trial) {
    int n = 2 + int(rng.bounded(7));
    std::vector<int> lt(n), lp(n);
    for (int i = 0; i < n; ++i) {
      lt[i] = int(rng.bounded(3));
      lp[i] = int(rng.bounded(3));
    }
    std::vector<std::vector<double>> emb(n);
    for (auto& e : emb) e = {rng.gaussian(), rng.gaussian()};
    ClusteringScores s = clustering_suite(lt, lp, emb);

    // Pairwise ARI recomputation.
    double tp = 0, fn = 0, fp = 0, tn = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        bool st = lt[i] == lt[j], sp = lp[i] == lp[j];
        tp += st && sp;
        fn += st && !sp;
        fp += !st && sp;
        tn += !st && !sp;
      }
    double ari = (fn == 0 && fp == 0)
                     ? 1.0
                     : 2.0 * (tp * tn - fn * fp) /
                           ((tp + fn) * (fn + tn) + (tp + fp) * (fp + tn));
    if (std::abs(s.ari - ari) > 1e-12) return false;
  }
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(1, 1);
  cm.add(2, 0);
  if (std::abs(overall_accuracy(cm) - 2.0 / 3.0) > 1e-15) return false;
  return true;
}

bool selftest_formats() {
  Rng rng(905);
  PointCloud pc;
  pc.points.resize(32);
  for (auto& p : pc.points)
    for (int a = 0; a < 3; ++a) p[a] = float(rng.uniform(-1, 1));
  pc.labels.assign(32, 2);
  std::vector<uint8_t> bytes = encode_pcb(pc);
  PointCloud back = decode_pcb(bytes);
  if (back.points != pc.points || back.labels != pc.labels) return false;

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<uint8_t> bad = bytes;
    switch (rng.bounded(3)) {
      case 0: bad.resize(rng.bounded(uint32_t(bad.size()))); break;
      case 1: bad[rng.bounded(4)] ^= 0xFF; break;
      default: bad[4 + rng.bounded(uint32_t(bad.size() - 8))] ^= 0x01; break;
    }
    try {
      PointCloud p2 = decode_pcb(bad);
      if (bad != bytes) return false;  // corruption must never be accepted
    } catch (const DataError&) {
      // expected
    } catch (...) {
      return false;
    }
  }
  return true;
}

int run_selftest(bool inject_bug) {
  struct Group {
    const char* name;
    bool ok;
  };
  std::vector<Group> groups;
  groups.push_back({"gradients", selftest_gradients(inject_bug)});
  groups.push_back({"spatial", selftest_spatial()});
  groups.push_back({"invariance", selftest_invariance()});
  groups.push_back({"metrics", selftest_metrics()});
  groups.push_back({"formats", selftest_formats()});
  bool all = true;
  for (const auto& g : groups) {
    std::cout << (g.ok ? "PASS" : "FAIL") << "  " << g.name << "\n";
    all = all && g.ok;
  }
  return all ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"PatchMixer: point-cloud classification and part segmentation"};
  app.require_subcommand(1);

  // --- gen-data ---
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  std::string gen_out, gen_classes = "sphere,box,cylinder,cone", gen_domains_file;
  uint64_t gen_seed = 1;
  int gen_per_class = 100, gen_points = 256;
  double gen_train_fraction = 0.5;
  bool gen_labels = false, gen_force = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--classes", gen_classes, "comma list of shape categories");
  gen->add_option("--per-class", gen_per_class, "shapes per class per domain");
  gen->add_option("--points", gen_points, "vertices per shape");
  gen->add_option("--train-fraction", gen_train_fraction, "train split fraction");
  gen->add_option("--domains", gen_domains_file, "JSON file with domain specs");
  gen->add_flag("--labels", gen_labels, "emit per-vertex part labels");
  gen->add_flag("--force", gen_force, "allow writing into an existing directory");

  // --- train ---
  auto* tr = app.add_subcommand("train", "train a model on a manifest");
  tr->set_config("--config", "", "INI config file");
  tr->allow_config_extras(false);
  CliModelOpts tr_model;
  CliTrainOpts tr_train;
  add_model_options(tr, tr_model);
  add_train_options(tr, tr_train);
  std::string tr_data, tr_out, tr_resume;
  tr->add_option("--data", tr_data, "training manifest")->required();
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");

  // --- eval ---
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string ev_ckpt, ev_data, ev_out;
  bool ev_dump = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "test manifest")->required();
  ev->add_option("--out", ev_out, "output directory");
  ev->add_flag("--dump-embeddings", ev_dump, "write global features as CSV");

  // --- grid ---
  auto* gr = app.add_subcommand("grid", "transfer grid across domains");
  gr->set_config("--config", "", "INI config file");
  gr->allow_config_extras(false);
  CliModelOpts gr_model;
  CliTrainOpts gr_train;
  add_model_options(gr, gr_model);
  add_train_options(gr, gr_train);
  std::string gr_domains, gr_out;
  int gr_jobs = 1;
  gr->add_option("--domains", gr_domains, "directory with <name>_{train,test}.tsv")
      ->required();
  gr->add_option("--out", gr_out, "output directory");
  gr->add_option("--jobs", gr_jobs, "parallel trainings");

  // --- ablate ---
  auto* ab = app.add_subcommand("ablate", "ablation grid over config axes");
  ab->set_config("--config", "", "INI config file");
  ab->allow_config_extras(false);
  CliModelOpts ab_model;
  CliTrainOpts ab_train;
  add_model_options(ab, ab_model);
  add_train_options(ab, ab_train);
  std::string ab_domains, ab_out, ab_axes;
  int ab_jobs = 1;
  ab->add_option("--axes", ab_axes, "e.g. tm=attentive,vanilla,none;r=0.3")->required();
  ab->add_option("--domains", ab_domains, "directory with <name>_{train,test}.tsv")
      ->required();
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--jobs", ab_jobs, "parallel arms");

  // --- selftest ---
  auto* st = app.add_subcommand("selftest", "run the property suite");
  bool st_inject = false;
  st->add_flag("--inject-grad-bug", st_inject, "fixture: corrupt a gradient")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      if (gen_out.empty()) gen_out = resolve_out_dir("", "benchmark");
      if (fs::exists(gen_out) && !fs::is_empty(gen_out) && !gen_force)
        throw DataError("output directory exists and is not empty (use --force): " +
                        gen_out);
      BenchmarkConfig cfg;
      cfg.out_dir = gen_out;
      cfg.seed = gen_seed;
      cfg.per_class = gen_per_class;
      cfg.points_per_shape = gen_points;
      cfg.train_fraction = gen_train_fraction;
      cfg.with_part_labels = gen_labels;
      cfg.classes.clear();
      std::istringstream cs(gen_classes);
      std::string item;
      while (std::getline(cs, item, ','))
        if (!item.empty()) cfg.classes.push_back(shape_category_from(item));
      if (!gen_domains_file.empty()) {
        auto spec = nlohmann::json::parse(read_file_text(gen_domains_file));
        for (const auto& d : spec) {
          DomainSpec ds;
          ds.name = d.at("name").get<std::string>();
          ds.partiality = d.value("partiality", 0.0);
          ds.noise_sigma = d.value("noise", 0.0);
          ds.density = d.value("density", 1.0);
          ds.pose_jitter = d.value("pose_jitter", 0.0);
          cfg.domains.push_back(ds);
        }
      }
      BenchmarkOutput out = make_benchmark(cfg);
      emit_resolved_config(gen, gen_out);
      for (const auto& p : out.manifest_paths) std::cout << p << "\n";
      return 0;
    }

    if (tr->parsed()) {
      tr_out = resolve_out_dir(tr_out, "train");
      DatasetManifest data = load_manifest(tr_data);
      std::optional<TrainState> resume;
      TrainConfig cfg;
      if (!tr_resume.empty()) {
        resume = load_checkpoint(tr_resume);
        cfg = resume->config;
      } else {
        cfg = build_train_config(tr_model, tr_train, &data);
      }
      emit_resolved_config(tr, tr_out);
      TrainState state =
          train(cfg, data, (fs::path(tr_out) / "log.jsonl").string(), std::move(resume));
      save_checkpoint((fs::path(tr_out) / "checkpoint.pmx").string(), state);
      std::cout << "checkpoint: " << (fs::path(tr_out) / "checkpoint.pmx").string()
                << "\n";
      return 0;
    }

    if (ev->parsed()) {
      ev_out = resolve_out_dir(ev_out, "eval");
      TrainState state = load_checkpoint(ev_ckpt);
      DatasetManifest data = load_manifest(ev_data);
      EvalResult res = evaluate(state, data);
      write_file_text((fs::path(ev_out) / "report.json").string(),
                      res.report.to_json() + "\n");
      if (ev_dump) {
        std::ostringstream os;
        for (const auto& emb : res.embeddings) {
          for (size_t i = 0; i < emb.size(); ++i) os << (i ? "," : "") << emb[i];
          os << "\n";
        }
        write_file_text((fs::path(ev_out) / "embeddings.csv").string(), os.str());
      }
      emit_resolved_config(ev, ev_out);
      std::cout << res.report.to_json() << "\n";
      return 0;
    }

    if (gr->parsed()) {
      gr_out = resolve_out_dir(gr_out, "grid");
      std::vector<DomainData> domains = scan_domains(gr_domains);
      TrainConfig cfg = build_train_config(gr_model, gr_train, &domains[0].train);
      emit_resolved_config(gr, gr_out);
      GridResult grid = transfer_grid(cfg, domains, gr_jobs);
      write_file_text((fs::path(gr_out) / "grid.csv").string(), grid_to_csv(grid));
      write_file_text((fs::path(gr_out) / "grid.json").string(), grid_to_json(grid));
      std::cout << grid_to_csv(grid);
      return 0;
    }

    if (ab->parsed()) {
      ab_out = resolve_out_dir(ab_out, "ablate");
      std::vector<DomainData> domains = scan_domains(ab_domains);
      TrainConfig cfg = build_train_config(ab_model, ab_train, &domains[0].train);
      emit_resolved_config(ab, ab_out);
      std::vector<AblationArm> arms = parse_ablation_axes(ab_axes, cfg);
      std::vector<AblationRow> rows = ablation_run(cfg, arms, domains, ab_jobs);
      write_file_text((fs::path(ab_out) / "ablation.csv").string(), ablation_to_csv(rows));
      write_file_text((fs::path(ab_out) / "ablation.json").string(),
                      ablation_to_json(rows));
      std::cout << ablation_to_csv(rows);
      return 0;
    }

    if (st->parsed()) return run_selftest(st_inject);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DimError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
