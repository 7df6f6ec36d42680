// SPDX-License-Identifier: Apache-2.0
#include "patchmixer/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "patchmixer/io_util.hpp"

namespace fs = std::filesystem;

namespace pm {

namespace {

std::string label_sidecar_path(const std::string& path) {
  fs::path p(path);
  p.replace_extension(".lbl");
  return p.string();
}

bool parse_double(const char*& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s, &end);
  if (end == s) return false;
  s = end;
  return true;
}

}  // namespace

PointCloud load_xyz(const std::string& path) {
  std::string text = read_file_text(path);
  PointCloud pc;
  int line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const char* s = line.c_str();
    while (*s == ' ' || *s == '\t' || *s == '\r') ++s;
    if (*s == '\0') continue;  // blank line
    double x, y, z;
    if (!parse_double(s, x) || !parse_double(s, y) || !parse_double(s, z))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed coordinate line");
    while (*s == ' ' || *s == '\t' || *s == '\r') ++s;
    if (*s != '\0')
      throw DataError(path + ":" + std::to_string(line_no) + ": trailing characters");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw DataError(path + ":" + std::to_string(line_no) + ": non-finite coordinate");
    pc.points.push_back({static_cast<float>(x), static_cast<float>(y),
                         static_cast<float>(z)});
  }
  if (pc.points.empty()) throw DataError(path + ": no vertices");

  std::string lbl = label_sidecar_path(path);
  if (fs::exists(lbl)) {
    std::istringstream lin(read_file_text(lbl));
    int ln = 0;
    while (std::getline(lin, line)) {
      ++ln;
      const char* s = line.c_str();
      while (*s == ' ' || *s == '\t' || *s == '\r') ++s;
      if (*s == '\0') continue;
      char* end = nullptr;
      long v = std::strtol(s, &end, 10);
      if (end == s) throw DataError(lbl + ":" + std::to_string(ln) + ": malformed label");
      if (v < 0) throw DataError(lbl + ":" + std::to_string(ln) + ": negative label");
      pc.labels.push_back(static_cast<int>(v));
    }
    if (pc.labels.size() != pc.points.size())
      throw DataError(lbl + ": label count " + std::to_string(pc.labels.size()) +
                      " does not match vertex count " + std::to_string(pc.points.size()));
  }
  return pc;
}

void save_xyz(const std::string& path, const PointCloud& pc) {
  pc.validate();
  std::string out;
  out.reserve(pc.points.size() * 32);
  char buf[96];
  for (const Vec3& p : pc.points) {
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", double(p[0]), double(p[1]),
                  double(p[2]));
    out += buf;
  }
  write_file_text(path, out);
  if (pc.has_labels()) {
    std::string lo;
    for (int l : pc.labels) {
      std::snprintf(buf, sizeof buf, "%d\n", l);
      lo += buf;
    }
    write_file_text(label_sidecar_path(path), lo);
  }
}

std::vector<uint8_t> encode_pcb(const PointCloud& pc) {
  pc.validate();
  ByteWriter payload;
  payload.u32(static_cast<uint32_t>(pc.points.size()));
  for (const Vec3& p : pc.points) {
    payload.f32(p[0]);
    payload.f32(p[1]);
    payload.f32(p[2]);
  }
  payload.u8(pc.has_labels() ? 1 : 0);
  if (pc.has_labels()) {
    for (int l : pc.labels) {
      if (l < 0 || l > 0xFFFF)
        throw DataError("pcb labels must fit in u16, got " + std::to_string(l));
      payload.u16(static_cast<uint16_t>(l));
    }
  }
  ByteWriter out;
  out.bytes("PCB1", 4);
  out.bytes(payload.data().data(), payload.data().size());
  out.u32(crc32(payload.data()));
  return std::move(out.data());
}

PointCloud decode_pcb(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PCB1", 4) != 0)
    throw DataError("pcb: bad magic");
  if (bytes.size() < 8) throw DataError("pcb: truncated");
  size_t payload_len = bytes.size() - 8;
  uint32_t stored = ByteReader(bytes.data() + 4 + payload_len, 4).u32();
  uint32_t computed = crc32(bytes.data() + 4, payload_len);
  if (stored != computed) throw DataError("pcb: CRC mismatch");

  ByteReader r(bytes.data() + 4, payload_len);
  uint32_t v = r.u32();
  if (v == 0) throw DataError("pcb: empty cloud");
  PointCloud pc;
  pc.points.resize(v);
  for (uint32_t i = 0; i < v; ++i) {
    pc.points[i][0] = r.f32();
    pc.points[i][1] = r.f32();
    pc.points[i][2] = r.f32();
  }
  uint8_t flag = r.u8();
  if (flag > 1) throw DataError("pcb: bad label flag");
  if (flag == 1) {
    pc.labels.resize(v);
    for (uint32_t i = 0; i < v; ++i) pc.labels[i] = r.u16();
  }
  if (r.remaining() != 0) throw DataError("pcb: trailing bytes");
  pc.validate();
  return pc;
}

PointCloud load_pcb(const std::string& path) { return decode_pcb(read_file_bytes(path)); }

void save_pcb(const std::string& path, const PointCloud& pc) {
  write_file_bytes(path, encode_pcb(pc));
}

PointCloud load_cloud(const std::string& path) {
  fs::path p(path);
  std::string ext = p.extension().string();
  if (ext == ".xyz") return load_xyz(path);
  if (ext == ".pcb") return load_pcb(path);
  throw DataError("unsupported point-cloud extension: " + path);
}

// ---------------------------------------------------------------------------
// Manifests

int DatasetManifest::num_classes() const {
  int c = 0;
  for (const auto& e : entries) c = std::max(c, e.category + 1);
  return c;
}

std::string DatasetManifest::resolve(const std::string& rel) const {
  return (fs::path(base_dir) / rel).string();
}

DatasetManifest load_manifest(const std::string& path) {
  DatasetManifest m;
  m.name = fs::path(path).stem().string();
  m.base_dir = fs::path(path).parent_path().string();
  std::istringstream in(read_file_text(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected <path>\\t<label>");
    ManifestEntry e;
    e.path = line.substr(0, tab);
    std::string label = line.substr(tab + 1);
    if (e.path.empty() || label.empty())
      throw DataError(path + ":" + std::to_string(line_no) + ": empty field");
    int value = 0;
    auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), value);
    if (ec == std::errc() && ptr == label.data() + label.size()) {
      if (value < 0)
        throw DataError(path + ":" + std::to_string(line_no) + ": negative category");
      e.category = value;
    } else {
      e.label_path = label;
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw DataError(path + ": empty manifest");
  return m;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.path;
    out += '\t';
    out += e.label_path.empty() ? std::to_string(e.category) : e.label_path;
    out += '\n';
  }
  write_file_text(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic shapes

const char* shape_category_name(ShapeCategory c) {
  switch (c) {
    case ShapeCategory::kSphere: return "sphere";
    case ShapeCategory::kBox: return "box";
    case ShapeCategory::kCylinder: return "cylinder";
    case ShapeCategory::kCone: return "cone";
  }
  return "?";
}

ShapeCategory shape_category_from(const std::string& name) {
  if (name == "sphere") return ShapeCategory::kSphere;
  if (name == "box") return ShapeCategory::kBox;
  if (name == "cylinder") return ShapeCategory::kCylinder;
  if (name == "cone") return ShapeCategory::kCone;
  throw UsageError("unknown shape category: " + name);
}

namespace {

Vec3 random_unit_vector(Rng& rng) {
  for (;;) {
    double x = rng.gaussian(), y = rng.gaussian(), z = rng.gaussian();
    double n = std::sqrt(x * x + y * y + z * z);
    if (n > 1e-9)
      return {static_cast<float>(x / n), static_cast<float>(y / n),
              static_cast<float>(z / n)};
  }
}

PointCloud synth_sphere(int v, Rng& rng) {
  PointCloud pc;
  pc.points.resize(v);
  pc.labels.resize(v);
  for (int i = 0; i < v; ++i) {
    Vec3 d = random_unit_vector(rng);
    pc.points[i] = d;
    pc.labels[i] = d[2] >= 0 ? 0 : 1;  // upper / lower hemisphere
  }
  return pc;
}

PointCloud synth_box(int v, Rng& rng) {
  double ex = rng.uniform(0.2, 0.5);
  double ey = rng.uniform(0.2, 0.5);
  double ez = rng.uniform(0.2, 0.5);
  // Face order: +x,-x,+y,-y,+z,-z. Area-weighted face selection.
  double ax = 4 * ey * ez, ay = 4 * ex * ez, az = 4 * ex * ey;
  double areas[6] = {ax, ax, ay, ay, az, az};
  double total = 2 * (ax + ay + az);
  PointCloud pc;
  pc.points.resize(v);
  pc.labels.resize(v);
  for (int i = 0; i < v; ++i) {
    double pick = rng.uniform(0.0, total);
    int face = 0;
    double acc = 0;
    for (; face < 5; ++face) {
      acc += areas[face];
      if (pick < acc) break;
    }
    double u = rng.uniform(-1.0, 1.0), w = rng.uniform(-1.0, 1.0);
    Vec3 p{};
    switch (face) {
      case 0: p = {float(ex), float(u * ey), float(w * ez)}; break;
      case 1: p = {float(-ex), float(u * ey), float(w * ez)}; break;
      case 2: p = {float(u * ex), float(ey), float(w * ez)}; break;
      case 3: p = {float(u * ex), float(-ey), float(w * ez)}; break;
      case 4: p = {float(u * ex), float(w * ey), float(ez)}; break;
      default: p = {float(u * ex), float(w * ey), float(-ez)}; break;
    }
    pc.points[i] = p;
    pc.labels[i] = face;
  }
  return pc;
}

PointCloud synth_cylinder(int v, Rng& rng) {
  double r = rng.uniform(0.15, 0.4);
  double h = rng.uniform(0.3, 0.6);  // half-height
  double side = 2 * 3.14159265358979323846 * r * 2 * h;
  double cap = 3.14159265358979323846 * r * r;
  double total = side + 2 * cap;
  PointCloud pc;
  pc.points.resize(v);
  pc.labels.resize(v);
  for (int i = 0; i < v; ++i) {
    double pick = rng.uniform(0.0, total);
    double theta = rng.uniform(0.0, 2 * 3.14159265358979323846);
    if (pick < side) {
      double z = rng.uniform(-h, h);
      pc.points[i] = {float(r * std::cos(theta)), float(r * std::sin(theta)), float(z)};
      pc.labels[i] = 0;
    } else {
      double rr = r * std::sqrt(rng.uniform());
      bool top = pick < side + cap;
      pc.points[i] = {float(rr * std::cos(theta)), float(rr * std::sin(theta)),
                      float(top ? h : -h)};
      pc.labels[i] = top ? 1 : 2;
    }
  }
  return pc;
}

PointCloud synth_cone(int v, Rng& rng) {
  double r = rng.uniform(0.2, 0.5);
  double h = rng.uniform(0.4, 1.0);
  double slant = std::sqrt(r * r + h * h);
  double lateral = 3.14159265358979323846 * r * slant;
  double base = 3.14159265358979323846 * r * r;
  double total = lateral + base;
  PointCloud pc;
  pc.points.resize(v);
  pc.labels.resize(v);
  for (int i = 0; i < v; ++i) {
    double pick = rng.uniform(0.0, total);
    double theta = rng.uniform(0.0, 2 * 3.14159265358979323846);
    if (pick < lateral) {
      // t = fraction of the way from apex to rim; area density scales with t.
      double t = std::sqrt(rng.uniform());
      double rr = t * r;
      pc.points[i] = {float(rr * std::cos(theta)), float(rr * std::sin(theta)),
                      float(h * (1.0 - t))};
      pc.labels[i] = 0;
    } else {
      double rr = r * std::sqrt(rng.uniform());
      pc.points[i] = {float(rr * std::cos(theta)), float(rr * std::sin(theta)), 0.0f};
      pc.labels[i] = 1;
    }
  }
  return pc;
}

}  // namespace

PointCloud synth_shape(ShapeCategory category, int vertices, Rng& rng) {
  if (vertices < 1) throw DimError("synth_shape: need at least one vertex");
  PointCloud pc;
  switch (category) {
    case ShapeCategory::kSphere: pc = synth_sphere(vertices, rng); break;
    case ShapeCategory::kBox: pc = synth_box(vertices, rng); break;
    case ShapeCategory::kCylinder: pc = synth_cylinder(vertices, rng); break;
    case ShapeCategory::kCone: pc = synth_cone(vertices, rng); break;
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Domain corruption

void DomainSpec::validate() const {
  if (partiality < 0.0 || partiality >= 1.0)
    throw UsageError("domain spec: partiality must be in [0,1)");
  if (density <= 0.0) throw UsageError("domain spec: density must be positive");
  if (noise_sigma < 0.0) throw UsageError("domain spec: noise must be non-negative");
  if (pose_jitter < 0.0) throw UsageError("domain spec: pose jitter must be non-negative");
}

PointCloud apply_domain(const PointCloud& pc, const DomainSpec& spec, Rng& rng) {
  spec.validate();
  pc.validate();
  PointCloud out = pc;

  if (spec.pose_jitter > 0.0) {
    // Tilt about a random horizontal axis (training augmentation only spins
    // the up axis, so tilt is a genuine domain shift).
    double phi = rng.uniform(0.0, 2 * 3.14159265358979323846);
    double ang = rng.uniform(-spec.pose_jitter, spec.pose_jitter);
    double ux = std::cos(phi), uy = std::sin(phi);
    double c = std::cos(ang), s = std::sin(ang);
    for (Vec3& p : out.points) {
      double x = p[0], y = p[1], z = p[2];
      double dot = ux * x + uy * y;
      double rx = x * c + (uy * z) * s + ux * dot * (1 - c);
      double ry = y * c + (-ux * z) * s + uy * dot * (1 - c);
      double rz = z * c + (ux * y - uy * x) * s;
      p = {float(rx), float(ry), float(rz)};
    }
  }

  if (spec.partiality > 0.0) {
    Vec3 dir = random_unit_vector(rng);
    std::vector<std::pair<float, int>> proj(out.points.size());
    for (size_t i = 0; i < out.points.size(); ++i) {
      const Vec3& p = out.points[i];
      proj[i] = {p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2], int(i)};
    }
    int keep = std::max<int>(
        1, int(out.points.size()) -
               int(std::floor(spec.partiality * double(out.points.size()))));
    std::nth_element(proj.begin(), proj.begin() + keep, proj.end());
    std::vector<int> kept;
    for (int i = 0; i < keep; ++i) kept.push_back(proj[i].second);
    std::sort(kept.begin(), kept.end());  // preserve original ordering
    PointCloud cropped;
    cropped.category = out.category;
    for (int i : kept) {
      cropped.points.push_back(out.points[i]);
      if (out.has_labels()) cropped.labels.push_back(out.labels[i]);
    }
    out = std::move(cropped);
  }

  if (spec.noise_sigma > 0.0) {
    for (Vec3& p : out.points)
      for (int a = 0; a < 3; ++a) p[a] += float(rng.gaussian(spec.noise_sigma));
  }

  if (spec.density != 1.0) {
    int target = std::max<int>(1, int(std::lround(spec.density * double(pc.size()))));
    int cur = out.size();
    PointCloud resampled;
    resampled.category = out.category;
    if (target <= cur) {
      // Distinct vertices via partial Fisher-Yates.
      std::vector<int> idx(cur);
      for (int i = 0; i < cur; ++i) idx[i] = i;
      for (int i = 0; i < target; ++i) {
        int j = i + int(rng.bounded(uint32_t(cur - i)));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(target);
      std::sort(idx.begin(), idx.end());
      for (int i : idx) {
        resampled.points.push_back(out.points[i]);
        if (out.has_labels()) resampled.labels.push_back(out.labels[i]);
      }
    } else {
      resampled = out;
      for (int i = cur; i < target; ++i) {
        int j = int(rng.bounded(uint32_t(cur)));
        resampled.points.push_back(out.points[j]);
        if (out.has_labels()) resampled.labels.push_back(out.labels[j]);
      }
    }
    out = std::move(resampled);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark generation

std::vector<DomainSpec> BenchmarkConfig::default_domains() {
  DomainSpec a;
  a.name = "A";
  a.partiality = 0.0;
  a.noise_sigma = 0.005;
  a.density = 1.0;
  a.pose_jitter = 0.10;
  DomainSpec b;
  b.name = "B";
  b.partiality = 0.30;
  b.noise_sigma = 0.02;
  b.density = 0.70;
  b.pose_jitter = 0.35;
  return {a, b};
}

BenchmarkOutput make_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.classes.empty()) throw UsageError("benchmark: no classes requested");
  if (cfg.per_class < 2) throw UsageError("benchmark: need at least 2 shapes per class");
  if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0)
    throw UsageError("benchmark: train fraction must be in (0,1)");
  std::vector<DomainSpec> domains =
      cfg.domains.empty() ? BenchmarkConfig::default_domains() : cfg.domains;
  for (const auto& d : domains) d.validate();

  fs::create_directories(cfg.out_dir);
  BenchmarkOutput out;

  int train_count = std::max(1, int(std::floor(cfg.per_class * cfg.train_fraction)));
  if (train_count >= cfg.per_class) train_count = cfg.per_class - 1;

  for (size_t di = 0; di < domains.size(); ++di) {
    const DomainSpec& dom = domains[di];
    fs::path ddir = fs::path(cfg.out_dir) / ("domain_" + dom.name);
    fs::create_directories(ddir);
    std::vector<ManifestEntry> train_entries, test_entries;
    for (size_t ci = 0; ci < cfg.classes.size(); ++ci) {
      for (int i = 0; i < cfg.per_class; ++i) {
        // One independent stream per (domain, class, index): generation is
        // order-free and reproducible from the master seed alone.
        Rng rng = Rng(cfg.seed).fork(di * 1000000 + ci * 10000 + uint64_t(i));
        PointCloud shape = synth_shape(cfg.classes[ci], cfg.points_per_shape, rng);
        PointCloud domained = apply_domain(shape, dom, rng);
        domained.category = int(ci);
        if (!cfg.with_part_labels) domained.labels.clear();

        std::string fname = std::string(shape_category_name(cfg.classes[ci])) + "_" +
                            std::to_string(i) + ".xyz";
        std::string rel = (fs::path("domain_" + dom.name) / fname).string();
        save_xyz((fs::path(cfg.out_dir) / rel).string(), domained);
        out.files_written += 1;

        ManifestEntry e;
        e.path = rel;
        if (cfg.with_part_labels) {
          fs::path lp(rel);
          lp.replace_extension(".lbl");
          e.label_path = lp.string();
        } else {
          e.category = int(ci);
        }
        (i < train_count ? train_entries : test_entries).push_back(e);
      }
    }
    for (const char* split : {"train", "test"}) {
      std::string mpath =
          (fs::path(cfg.out_dir) / (dom.name + "_" + split + ".tsv")).string();
      save_manifest(mpath, std::string(split) == "train" ? train_entries : test_entries);
      out.manifest_paths.push_back(mpath);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

PointCloud subsample_vertices(const PointCloud& pc, int v_target, Mode mode, Rng* rng) {
  pc.validate();
  if (v_target < 1) throw DimError("subsample: v_target must be positive");
  int v = pc.size();
  PointCloud out;
  out.category = pc.category;

  auto push = [&](int i) {
    out.points.push_back(pc.points[i]);
    if (pc.has_labels()) out.labels.push_back(pc.labels[i]);
  };

  if (mode == Mode::kTrain) {
    if (!rng) throw Error("subsample: train mode requires an RNG");
    if (v_target <= v) {
      std::vector<int> idx(v);
      for (int i = 0; i < v; ++i) idx[i] = i;
      for (int i = 0; i < v_target; ++i) {
        int j = i + int(rng->bounded(uint32_t(v - i)));
        std::swap(idx[i], idx[j]);
      }
      for (int i = 0; i < v_target; ++i) push(idx[i]);
    } else {
      for (int i = 0; i < v; ++i) push(i);
      for (int i = v; i < v_target; ++i) push(int(rng->bounded(uint32_t(v))));
    }
  } else {
    // Canonical: lexicographic sort then stride selection, cycling if short.
    std::vector<int> order(v);
    for (int i = 0; i < v; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const Vec3 &pa = pc.points[a], &pb = pc.points[b];
      if (pa[0] != pb[0]) return pa[0] < pb[0];
      if (pa[1] != pb[1]) return pa[1] < pb[1];
      if (pa[2] != pb[2]) return pa[2] < pb[2];
      return a < b;
    });
    if (v >= v_target) {
      for (int i = 0; i < v_target; ++i)
        push(order[size_t(int64_t(i) * v / v_target)]);
    } else {
      for (int i = 0; i < v_target; ++i) push(order[i % v]);
    }
  }
  return out;
}

Batcher::Batcher(const DatasetManifest& manifest, int batch_size, int v_target,
                 Mode mode)
    : batch_size_(batch_size), v_target_(v_target), mode_(mode) {
  if (batch_size < 1) throw UsageError("batcher: batch size must be positive");
  for (const auto& e : manifest.entries) {
    PointCloud pc = load_cloud(manifest.resolve(e.path));
    // Per-vertex labels arrive embedded (.pcb) or via the .lbl sidecar that
    // load_xyz picks up; a manifest label column only asserts they exist.
    if (!e.label_path.empty() && !pc.has_labels())
      throw DataError("batcher: entry lists per-vertex labels but none were found: " +
                      e.path);
    pc.category = e.category;
    clouds_.push_back(std::move(pc));
    categories_.push_back(e.category);
  }
  order_.resize(clouds_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = int(i);
}

void Batcher::start_epoch(Rng* shuffle_rng) {
  cursor_ = 0;
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = int(i);
  if (mode_ == Mode::kTrain) {
    if (!shuffle_rng) throw Error("batcher: train epoch requires a shuffle RNG");
    shuffle_rng->shuffle(order_);
  }
}

std::optional<Batch> Batcher::next(Rng* subsample_rng) {
  if (cursor_ >= order_.size()) return std::nullopt;
  Batch b;
  while (cursor_ < order_.size() && int(b.clouds.size()) < batch_size_) {
    int i = order_[cursor_++];
    b.clouds.push_back(subsample_vertices(clouds_[i], v_target_, mode_, subsample_rng));
    b.categories.push_back(categories_[i]);
  }
  return b;
}

}  // namespace pm
