// SPDX-License-Identifier: Apache-2.0
//
// PatchMixer backbone and task heads: patch embedding over positional
// encodings, attentive/vanilla token mixing, channel mixing, masked global
// aggregation, and the classification / part-segmentation heads.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchmixer/geometry.hpp"
#include "patchmixer/optim.hpp"
#include "patchmixer/tensor.hpp"

namespace pm {

enum class MixerKind { kAttentive, kVanilla, kNone };
enum class Task { kClassification, kSegmentation };

inline const char* mixer_kind_name(MixerKind k) {
  switch (k) {
    case MixerKind::kAttentive: return "attentive";
    case MixerKind::kVanilla: return "vanilla";
    case MixerKind::kNone: return "none";
  }
  return "?";
}

inline MixerKind mixer_kind_from(const std::string& s) {
  if (s == "attentive") return MixerKind::kAttentive;
  if (s == "vanilla") return MixerKind::kVanilla;
  if (s == "none") return MixerKind::kNone;
  throw UsageError("unknown mixer kind: " + s);
}

struct BackboneConfig {
  int V = 1024;
  int P = 256;
  int S = 128;
  bool use_knn = false;
  float radius = 0.3f;
  int k = 64;
  int F = 1024;
  int F_T = 512;
  int F_C = 512;
  int D = 1;
  std::vector<int> embed_channels = {16, 32, 64, 128, 1024};
  double mask_rate = 0.3;
  int num_classes = 10;
  MixerKind mixer = MixerKind::kAttentive;

  static constexpr int kEncodingWidth = 7;  // relative xyz, distance, centroid xyz

  PatchQuery query() const {
    PatchQuery q;
    q.use_knn = use_knn;
    q.radius = radius;
    q.k = k;
    return q;
  }

  void validate() const {
    if (V < 1 || P < 1 || S < 1 || F < 1 || F_T < 1 || F_C < 1 || D < 1)
      throw UsageError("backbone config: extents must be positive");
    if (P > V) throw UsageError("backbone config: P must not exceed V");
    if (embed_channels.empty() || embed_channels.back() != F)
      throw UsageError("backbone config: embed_channels must end at F");
    if (mask_rate < 0.0 || mask_rate >= 1.0)
      throw UsageError("backbone config: mask_rate must be in [0,1)");
    if (num_classes < 2) throw UsageError("backbone config: need >= 2 classes");
    if (!use_knn && radius <= 0.0f)
      throw UsageError("backbone config: ball radius must be positive");
    if (use_knn && (k < 1 || k > V))
      throw UsageError("backbone config: k must be in [1,V]");
  }
};

// Head hidden sizes shared by both tasks.
inline const std::vector<int>& head_hidden_dims() {
  static const std::vector<int> dims{512, 256, 128};
  return dims;
}
constexpr double kHeadDropout = 0.5;

template <class Real>
struct LinearParamsT {
  TensorT<Real> w, b;
};

template <class Real>
struct NormAffineT {
  TensorT<Real> gamma, beta;
};

template <class Real>
struct BnParamsT {
  TensorT<Real> gamma, beta;
  BnStateT<Real> state;
};

template <class Real>
struct MixerBlockParamsT {
  // Token mixer (absent for MixerKind::kNone).
  NormAffineT<Real> ln_token;
  LinearParamsT<Real> gate1;  // P x P patch-axis mix
  BnParamsT<Real> gate1_bn;   // channels = P
  LinearParamsT<Real> lin1;   // F -> F_T
  LinearParamsT<Real> gate2;  // P x P
  BnParamsT<Real> gate2_bn;
  LinearParamsT<Real> lin2;  // F_T -> F
  // Channel mixer.
  NormAffineT<Real> ln_channel;
  LinearParamsT<Real> lin3;  // F -> F_C
  LinearParamsT<Real> lin4;  // F_C -> F
};

template <class Real>
struct ModelParamsT {
  BackboneConfig cfg;
  Task task = Task::kClassification;

  std::vector<LinearParamsT<Real>> embed_lin;
  std::vector<BnParamsT<Real>> embed_bn;
  std::vector<MixerBlockParamsT<Real>> blocks;
  NormAffineT<Real> final_ln;

  LinearParamsT<Real> seg_reduce;  // 3F -> F, segmentation only
  BnParamsT<Real> seg_reduce_bn;

  std::vector<LinearParamsT<Real>> head_lin;  // hidden blocks + final logits
  std::vector<BnParamsT<Real>> head_bn;

  /// Ordered learnable tensors; iteration order is the serialization order.
  NamedParams<Real> learnable() {
    NamedParams<Real> out;
    auto lin = [&](const std::string& name, LinearParamsT<Real>& l) {
      out.add(name + ".w", l.w);
      out.add(name + ".b", l.b);
    };
    auto norm = [&](const std::string& name, NormAffineT<Real>& n) {
      out.add(name + ".gamma", n.gamma);
      out.add(name + ".beta", n.beta);
    };
    auto bn = [&](const std::string& name, BnParamsT<Real>& n) {
      out.add(name + ".gamma", n.gamma);
      out.add(name + ".beta", n.beta);
    };
    for (size_t i = 0; i < embed_lin.size(); ++i) {
      lin("embed." + std::to_string(i), embed_lin[i]);
      bn("embed." + std::to_string(i) + ".bn", embed_bn[i]);
    }
    for (size_t d = 0; d < blocks.size(); ++d) {
      std::string p = "block." + std::to_string(d);
      auto& blk = blocks[d];
      if (cfg.mixer != MixerKind::kNone) {
        norm(p + ".ln_token", blk.ln_token);
        if (cfg.mixer == MixerKind::kAttentive) {
          lin(p + ".gate1", blk.gate1);
          bn(p + ".gate1.bn", blk.gate1_bn);
        }
        lin(p + ".lin1", blk.lin1);
        if (cfg.mixer == MixerKind::kAttentive) {
          lin(p + ".gate2", blk.gate2);
          bn(p + ".gate2.bn", blk.gate2_bn);
        }
        lin(p + ".lin2", blk.lin2);
      }
      norm(p + ".ln_channel", blk.ln_channel);
      lin(p + ".lin3", blk.lin3);
      lin(p + ".lin4", blk.lin4);
    }
    norm("final_ln", final_ln);
    if (task == Task::kSegmentation) {
      lin("seg.reduce", seg_reduce);
      bn("seg.reduce.bn", seg_reduce_bn);
    }
    for (size_t i = 0; i < head_lin.size(); ++i) {
      lin("head." + std::to_string(i), head_lin[i]);
      if (i < head_bn.size()) bn("head." + std::to_string(i) + ".bn", head_bn[i]);
    }
    return out;
  }

  /// Non-learnable batchnorm running statistics, in deterministic order.
  void visit_buffers(
      const std::function<void(const std::string&, std::vector<Real>&)>& fn) {
    auto bn = [&](const std::string& name, BnParamsT<Real>& b) {
      fn(name + ".running_mean", b.state.running_mean);
      fn(name + ".running_var", b.state.running_var);
    };
    for (size_t i = 0; i < embed_bn.size(); ++i)
      bn("embed." + std::to_string(i) + ".bn", embed_bn[i]);
    if (cfg.mixer == MixerKind::kAttentive)
      for (size_t d = 0; d < blocks.size(); ++d) {
        bn("block." + std::to_string(d) + ".gate1.bn", blocks[d].gate1_bn);
        bn("block." + std::to_string(d) + ".gate2.bn", blocks[d].gate2_bn);
      }
    if (task == Task::kSegmentation) bn("seg.reduce.bn", seg_reduce_bn);
    for (size_t i = 0; i < head_bn.size(); ++i)
      bn("head." + std::to_string(i) + ".bn", head_bn[i]);
  }

  int64_t count_params() { return learnable().total_scalars(); }
};

namespace detail {

template <class Real>
LinearParamsT<Real> init_linear(int fin, int fout, Rng& rng) {
  double bound = std::sqrt(1.0 / fin);
  LinearParamsT<Real> l;
  l.w = TensorT<Real>::uniform({fin, fout}, rng, -bound, bound);
  l.w.set_requires_grad(true);
  l.b = TensorT<Real>({fout});
  l.b.set_requires_grad(true);
  return l;
}

template <class Real>
NormAffineT<Real> init_norm(int extent) {
  NormAffineT<Real> n;
  n.gamma = TensorT<Real>({extent}, Real(1));
  n.gamma.set_requires_grad(true);
  n.beta = TensorT<Real>({extent});
  n.beta.set_requires_grad(true);
  return n;
}

template <class Real>
BnParamsT<Real> init_bn(int channels) {
  BnParamsT<Real> b;
  b.gamma = TensorT<Real>({channels}, Real(1));
  b.gamma.set_requires_grad(true);
  b.beta = TensorT<Real>({channels});
  b.beta.set_requires_grad(true);
  b.state = BnStateT<Real>(channels);
  return b;
}

}  // namespace detail

template <class Real>
ModelParamsT<Real> init_model(const BackboneConfig& cfg, Task task, Rng& rng) {
  cfg.validate();
  ModelParamsT<Real> m;
  m.cfg = cfg;
  m.task = task;

  int cin = BackboneConfig::kEncodingWidth;
  for (int cout : cfg.embed_channels) {
    m.embed_lin.push_back(detail::init_linear<Real>(cin, cout, rng));
    m.embed_bn.push_back(detail::init_bn<Real>(cout));
    cin = cout;
  }

  for (int d = 0; d < cfg.D; ++d) {
    MixerBlockParamsT<Real> blk;
    if (cfg.mixer != MixerKind::kNone) {
      blk.ln_token = detail::init_norm<Real>(cfg.F);
      if (cfg.mixer == MixerKind::kAttentive) {
        blk.gate1 = detail::init_linear<Real>(cfg.P, cfg.P, rng);
        blk.gate1_bn = detail::init_bn<Real>(cfg.P);
      }
      blk.lin1 = detail::init_linear<Real>(cfg.F, cfg.F_T, rng);
      if (cfg.mixer == MixerKind::kAttentive) {
        blk.gate2 = detail::init_linear<Real>(cfg.P, cfg.P, rng);
        blk.gate2_bn = detail::init_bn<Real>(cfg.P);
      }
      blk.lin2 = detail::init_linear<Real>(cfg.F_T, cfg.F, rng);
    }
    blk.ln_channel = detail::init_norm<Real>(cfg.F);
    blk.lin3 = detail::init_linear<Real>(cfg.F, cfg.F_C, rng);
    blk.lin4 = detail::init_linear<Real>(cfg.F_C, cfg.F, rng);
    m.blocks.push_back(std::move(blk));
  }
  m.final_ln = detail::init_norm<Real>(cfg.F);

  if (task == Task::kSegmentation) {
    m.seg_reduce = detail::init_linear<Real>(3 * cfg.F, cfg.F, rng);
    m.seg_reduce_bn = detail::init_bn<Real>(cfg.F);
  }

  int hin = cfg.F;
  for (int h : head_hidden_dims()) {
    m.head_lin.push_back(detail::init_linear<Real>(hin, h, rng));
    m.head_bn.push_back(detail::init_bn<Real>(h));
    hin = h;
  }
  m.head_lin.push_back(detail::init_linear<Real>(hin, cfg.num_classes, rng));
  return m;
}

// ---------------------------------------------------------------------------
// Positional encoding

/// Per sample: concat(x_j - x_i, ||x_j - x_i||, x_i) -> 7 values.
inline std::vector<float> positional_encoding(const std::vector<Vec3>& samples,
                                              const Vec3& centroid) {
  std::vector<float> out;
  out.reserve(samples.size() * BackboneConfig::kEncodingWidth);
  for (const Vec3& s : samples) {
    float dx = s[0] - centroid[0];
    float dy = s[1] - centroid[1];
    float dz = s[2] - centroid[2];
    double norm = std::sqrt(static_cast<double>(dx) * dx +
                            static_cast<double>(dy) * dy +
                            static_cast<double>(dz) * dz);
    out.push_back(dx);
    out.push_back(dy);
    out.push_back(dz);
    out.push_back(static_cast<float>(norm));
    out.push_back(centroid[0]);
    out.push_back(centroid[1]);
    out.push_back(centroid[2]);
  }
  return out;
}

/// Stack per-patch encodings of a batch of patch sets into a B x P x S x 7 tensor.
template <class Real>
TensorT<Real> encode_patches(const std::vector<PatchSet>& batch) {
  if (batch.empty()) throw DimError("encode_patches: empty batch");
  int B = static_cast<int>(batch.size());
  int P = batch[0].patch_count;
  int S = batch[0].samples_per_patch;
  const int W = BackboneConfig::kEncodingWidth;
  std::vector<Real> data;
  data.reserve(static_cast<size_t>(B) * P * S * W);
  for (const PatchSet& ps : batch) {
    if (ps.patch_count != P || ps.samples_per_patch != S)
      throw DimError("encode_patches: inconsistent patch extents in batch");
    for (int p = 0; p < P; ++p) {
      std::vector<Vec3> samples(ps.samples.begin() + static_cast<size_t>(p) * S,
                                ps.samples.begin() + static_cast<size_t>(p + 1) * S);
      std::vector<float> enc = positional_encoding(samples, ps.centroids[p]);
      for (float v : enc) data.push_back(static_cast<Real>(v));
    }
  }
  return TensorT<Real>::from({B, P, S, W}, std::move(data));
}

// ---------------------------------------------------------------------------
// Backbone blocks

template <class Real>
struct EmbedOut {
  TensorT<Real> tokens;  // B x P x F
  TensorT<Real> locals;  // B x P x S x F
};

/// Shared per-point MLP over encodings, then patch-wise max pooling.
template <class Real>
EmbedOut<Real> patch_embed(const TensorT<Real>& enc, ModelParamsT<Real>& m, Mode mode) {
  if (enc.ndim() != 4) throw DimError("patch_embed: expects B x P x S x W encodings");
  int B = enc.dim(0), P = enc.dim(1), S = enc.dim(2), W = enc.dim(3);
  if (W != BackboneConfig::kEncodingWidth)
    throw DimError("patch_embed: encoding width mismatch");
  TensorT<Real> x = reshape(enc, {B * P * S, W});
  for (size_t i = 0; i < m.embed_lin.size(); ++i) {
    x = linear(x, m.embed_lin[i].w, m.embed_lin[i].b);
    x = batch_norm1d(x, m.embed_bn[i].gamma, m.embed_bn[i].beta,
                     m.embed_bn[i].state, mode);
    x = relu(x);
  }
  EmbedOut<Real> out;
  out.locals = reshape(x, {B, P, S, m.cfg.F});
  out.tokens = max_over_axis(out.locals, 2).values;
  return out;
}

/// Gated token mixing: two sigmoid(BN(patch-axis conv)) attention maps wrap
/// the Lin1/Lin2 pair, with a residual back to the input tokens.
template <class Real>
TensorT<Real> attentive_token_mixer(const TensorT<Real>& t,
                                    MixerBlockParamsT<Real>& blk, Mode mode) {
  TensorT<Real> n = layer_norm(t, blk.ln_token.gamma, blk.ln_token.beta);
  TensorT<Real> a1 = sigmoid(batch_norm1d(patch_axis_mix(n, blk.gate1.w, blk.gate1.b),
                                          blk.gate1_bn.gamma, blk.gate1_bn.beta,
                                          blk.gate1_bn.state, mode));
  TensorT<Real> h = relu(linear(mul(a1, n), blk.lin1.w, blk.lin1.b));
  TensorT<Real> a2 = sigmoid(batch_norm1d(patch_axis_mix(h, blk.gate2.w, blk.gate2.b),
                                          blk.gate2_bn.gamma, blk.gate2_bn.beta,
                                          blk.gate2_bn.state, mode));
  return add(linear(mul(a2, h), blk.lin2.w, blk.lin2.b), t);
}

/// Ungated variant: H = Lin2(relu(Lin1(LN(T)))) + T.
template <class Real>
TensorT<Real> vanilla_token_mixer(const TensorT<Real>& t,
                                  MixerBlockParamsT<Real>& blk, Mode /*mode*/) {
  TensorT<Real> n = layer_norm(t, blk.ln_token.gamma, blk.ln_token.beta);
  return add(linear(relu(linear(n, blk.lin1.w, blk.lin1.b)), blk.lin2.w, blk.lin2.b), t);
}

template <class Real>
TensorT<Real> channel_mixer(const TensorT<Real>& h, MixerBlockParamsT<Real>& blk,
                            Mode /*mode*/) {
  TensorT<Real> n = layer_norm(h, blk.ln_channel.gamma, blk.ln_channel.beta);
  return add(linear(relu(linear(n, blk.lin3.w, blk.lin3.b)), blk.lin4.w, blk.lin4.b), h);
}

/// D sequential (token mixer -> channel mixer) blocks. Each mixer carries its
/// own residual, so the pair composes a skip path from block input to output.
template <class Real>
TensorT<Real> mixer_stack(const TensorT<Real>& tokens, ModelParamsT<Real>& m,
                          Mode mode) {
  TensorT<Real> x = tokens;
  for (auto& blk : m.blocks) {
    switch (m.cfg.mixer) {
      case MixerKind::kAttentive:
        x = attentive_token_mixer(x, blk, mode);
        break;
      case MixerKind::kVanilla:
        x = vanilla_token_mixer(x, blk, mode);
        break;
      case MixerKind::kNone:
        break;
    }
    x = channel_mixer(x, blk, mode);
  }
  return x;
}

/// Final layer norm followed by max pooling over unmasked patches.
template <class Real>
TensorT<Real> global_aggregate(const TensorT<Real>& g, const std::vector<uint8_t>& mask,
                               ModelParamsT<Real>& m) {
  TensorT<Real> n = layer_norm(g, m.final_ln.gamma, m.final_ln.beta);
  return masked_max_patches(n, mask);
}

namespace detail {

template <class Real>
TensorT<Real> maybe_dropout(const TensorT<Real>& x, double p, Mode mode, Rng* rng) {
  if (mode == Mode::kEval || p == 0.0) return x;
  if (!rng) throw Error("dropout in train mode requires an RNG");
  return dropout(x, p, mode, *rng);
}

/// Repeat each row of a 2-D tensor `times` times consecutively.
template <class Real>
TensorT<Real> repeat_rows(const TensorT<Real>& x, int times) {
  if (x.ndim() != 2) throw DimError("repeat_rows: expects a 2-D tensor");
  int rows = x.dim(0), f = x.dim(1);
  std::vector<Real> out(static_cast<size_t>(rows) * times * f);
  const Real* xp = x.values().data();
  for (int r = 0; r < rows; ++r)
    for (int t = 0; t < times; ++t)
      std::copy(xp + static_cast<size_t>(r) * f, xp + static_cast<size_t>(r + 1) * f,
                out.data() + (static_cast<size_t>(r) * times + t) * f);
  auto node = pm::detail::make_node(Shape{rows * times, f}, std::move(out), {x.node()});
  if (node->requires_grad) {
    auto px = x.node();
    node->backward_fn = [px, rows, times, f](TensorNode<Real>& self) {
      for (int r = 0; r < rows; ++r)
        for (int t = 0; t < times; ++t)
          for (int j = 0; j < f; ++j)
            px->grad[static_cast<size_t>(r) * f + j] +=
                self.grad[(static_cast<size_t>(r) * times + t) * f + j];
    };
  }
  return TensorT<Real>::wrap(node);
}

}  // namespace detail

/// Three (linear, BN, relu, dropout) blocks then a linear map to C logits.
template <class Real>
TensorT<Real> classify_head(const TensorT<Real>& g, ModelParamsT<Real>& m, Mode mode,
                            Rng* rng) {
  TensorT<Real> x = g;
  for (size_t i = 0; i < m.head_bn.size(); ++i) {
    x = linear(x, m.head_lin[i].w, m.head_lin[i].b);
    x = batch_norm1d(x, m.head_bn[i].gamma, m.head_bn[i].beta, m.head_bn[i].state, mode);
    x = relu(x);
    x = detail::maybe_dropout(x, kHeadDropout, mode, rng);
  }
  return linear(x, m.head_lin.back().w, m.head_lin.back().b);
}

/// Per-sample feature assembly for segmentation: channels [0,F) hold the
/// local feature, [F,2F) its patch token, [2F,3F) the global feature.
template <class Real>
TensorT<Real> segment_head_features(const TensorT<Real>& locals,
                                    const TensorT<Real>& tokens,
                                    const TensorT<Real>& global_feat) {
  if (locals.ndim() != 4) throw DimError("segment_head: locals must be B x P x S x F");
  int B = locals.dim(0), P = locals.dim(1), S = locals.dim(2), F = locals.dim(3);
  TensorT<Real> local_rows = reshape(locals, {B * P * S, F});
  TensorT<Real> token_rows =
      detail::repeat_rows(reshape(tokens, {B * P, F}), S);        // (B*P*S) x F
  TensorT<Real> global_rows =
      detail::repeat_rows(reshape(global_feat, {B, F}), P * S);   // (B*P*S) x F
  return concat_last<Real>({local_rows, token_rows, global_rows});
}

/// Per-sample concat(local F, patch token F, global F) -> 3F, a reduction
/// block 3F -> F, then the classification-head blocks. Output B x (P*S) x C.
template <class Real>
TensorT<Real> segment_head(const TensorT<Real>& locals, const TensorT<Real>& tokens,
                           const TensorT<Real>& global_feat, ModelParamsT<Real>& m,
                           Mode mode, Rng* rng) {
  int B = locals.dim(0), P = locals.dim(1), S = locals.dim(2);
  TensorT<Real> x = segment_head_features(locals, tokens, global_feat);

  x = linear(x, m.seg_reduce.w, m.seg_reduce.b);
  x = batch_norm1d(x, m.seg_reduce_bn.gamma, m.seg_reduce_bn.beta,
                   m.seg_reduce_bn.state, mode);
  x = relu(x);
  x = detail::maybe_dropout(x, kHeadDropout, mode, rng);

  for (size_t i = 0; i < m.head_bn.size(); ++i) {
    x = linear(x, m.head_lin[i].w, m.head_lin[i].b);
    x = batch_norm1d(x, m.head_bn[i].gamma, m.head_bn[i].beta, m.head_bn[i].state, mode);
    x = relu(x);
    x = detail::maybe_dropout(x, kHeadDropout, mode, rng);
  }
  x = linear(x, m.head_lin.back().w, m.head_lin.back().b);
  return reshape(x, {B, P * S, m.cfg.num_classes});
}

// ---------------------------------------------------------------------------
// Label lifting and vertex voting

/// t[(p,s)] = labels[sample_indices[p,s]].
inline std::vector<int> lift_labels(const std::vector<int>& labels,
                                    const std::vector<int>& sample_indices) {
  std::vector<int> t;
  t.reserve(sample_indices.size());
  for (int idx : sample_indices) {
    if (idx < 0 || idx >= static_cast<int>(labels.size()))
      throw DimError("lift_labels: sample index out of range");
    t.push_back(labels[idx]);
  }
  return t;
}

/// Average logits over all occurrences of each vertex, then argmax (lowest
/// class wins ties). Vertices never sampled inherit the label of the nearest
/// sampled vertex.
inline std::vector<int> vertex_vote(const std::vector<float>& sample_logits,
                                    int num_classes,
                                    const std::vector<int>& sample_indices,
                                    const PointCloud& cloud) {
  int v = cloud.size();
  if (sample_logits.size() != sample_indices.size() * static_cast<size_t>(num_classes))
    throw DimError("vertex_vote: logits extent mismatch");
  std::vector<double> sums(static_cast<size_t>(v) * num_classes, 0.0);
  std::vector<int> counts(v, 0);
  for (size_t s = 0; s < sample_indices.size(); ++s) {
    int idx = sample_indices[s];
    if (idx < 0 || idx >= v) throw DimError("vertex_vote: sample index out of range");
    counts[idx] += 1;
    for (int c = 0; c < num_classes; ++c)
      sums[static_cast<size_t>(idx) * num_classes + c] +=
          sample_logits[s * num_classes + c];
  }
  std::vector<int> out(v, -1);
  std::vector<int> covered;
  for (int i = 0; i < v; ++i) {
    if (counts[i] == 0) continue;
    covered.push_back(i);
    int best = 0;
    double best_v = sums[static_cast<size_t>(i) * num_classes] / counts[i];
    for (int c = 1; c < num_classes; ++c) {
      double val = sums[static_cast<size_t>(i) * num_classes + c] / counts[i];
      if (val > best_v) {
        best_v = val;
        best = c;
      }
    }
    out[i] = best;
  }
  if (covered.empty()) throw NumericError("vertex_vote: no vertex was sampled");
  for (int i = 0; i < v; ++i) {
    if (out[i] >= 0) continue;
    int nearest = covered[0];
    double nearest_d = 1e300;
    for (int j : covered) {
      double dx = static_cast<double>(cloud.points[i][0]) - cloud.points[j][0];
      double dy = static_cast<double>(cloud.points[i][1]) - cloud.points[j][1];
      double dz = static_cast<double>(cloud.points[i][2]) - cloud.points[j][2];
      double d = dx * dx + dy * dy + dz * dz;
      if (d < nearest_d) {
        nearest_d = d;
        nearest = j;
      }
    }
    out[i] = out[nearest];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-network forward passes

template <class Real>
struct ForwardOut {
  TensorT<Real> logits;          // classification: B x C; segmentation: B x (P*S) x C
  TensorT<Real> global_feature;  // B x F
  TensorT<Real> locals;          // B x P x S x F (segmentation path)
  std::vector<PatchSet> patches;
  std::vector<uint8_t> mask;  // B*P, nonzero = kept
};

/// Geometry stage shared by both tasks: normalize (eval) or augment (train),
/// extract patches, then build encodings and the train-time patch mask.
template <class Real>
ForwardOut<Real> forward_backbone(const std::vector<PointCloud>& clouds,
                                  ModelParamsT<Real>& m, Mode mode, Rng* rng,
                                  const AugmentConfig* aug) {
  if (clouds.empty()) throw DimError("forward: empty batch");
  const BackboneConfig& cfg = m.cfg;
  int B = static_cast<int>(clouds.size());

  ForwardOut<Real> out;
  out.patches.reserve(B);
  out.mask.reserve(static_cast<size_t>(B) * cfg.P);
  for (const PointCloud& raw : clouds) {
    PointCloud pc = (mode == Mode::kTrain && aug) ? augment(raw, *rng, *aug)
                                                  : normalize_shape(raw);
    out.patches.push_back(extract_patches(pc, cfg.P, cfg.query(), cfg.S, mode, rng));
    std::vector<uint8_t> keep =
        (mode == Mode::kTrain && cfg.mask_rate > 0.0 && rng)
            ? patch_mask(cfg.P, cfg.mask_rate, *rng)
            : std::vector<uint8_t>(cfg.P, 1);
    out.mask.insert(out.mask.end(), keep.begin(), keep.end());
  }

  TensorT<Real> enc = encode_patches<Real>(out.patches);
  EmbedOut<Real> emb = patch_embed(enc, m, mode);
  out.locals = emb.locals;

  TensorT<Real> tokens = emb.tokens;
  bool any_dropped = false;
  for (uint8_t k : out.mask) any_dropped = any_dropped || (k == 0);
  if (any_dropped) {
    // Zero dropped patches' tokens; extents stay static for the P x P mixes.
    TensorT<Real> mask_t({B, cfg.P, cfg.F});
    for (int b = 0; b < B; ++b)
      for (int p = 0; p < cfg.P; ++p) {
        Real mv = out.mask[static_cast<size_t>(b) * cfg.P + p] ? Real(1) : Real(0);
        for (int f = 0; f < cfg.F; ++f)
          mask_t.values()[(static_cast<size_t>(b) * cfg.P + p) * cfg.F + f] = mv;
      }
    tokens = mul(tokens, mask_t);
  }

  TensorT<Real> mixed = mixer_stack(tokens, m, mode);
  out.global_feature = global_aggregate(mixed, out.mask, m);
  return out;
}

template <class Real>
ForwardOut<Real> forward_classification_batch(const std::vector<PointCloud>& clouds,
                                               ModelParamsT<Real>& m, Mode mode,
                                               Rng* rng, const AugmentConfig* aug) {
  ForwardOut<Real> out = forward_backbone(clouds, m, mode, rng, aug);
  out.logits = classify_head(out.global_feature, m, mode, rng);
  return out;
}

template <class Real>
ForwardOut<Real> forward_segmentation_batch(const std::vector<PointCloud>& clouds,
                                             ModelParamsT<Real>& m, Mode mode,
                                             Rng* rng, const AugmentConfig* aug) {
  ForwardOut<Real> out = forward_backbone(clouds, m, mode, rng, aug);
  // Tokens re-derived from locals so the head sees pre-mixer patch features.
  TensorT<Real> tokens = max_over_axis(out.locals, 2).values;
  out.logits = segment_head(out.locals, tokens, out.global_feature, m, mode, rng);
  return out;
}

/// Single-cloud convenience wrapper; returns 1 x C logits.
template <class Real>
TensorT<Real> forward_classification(const PointCloud& pc, ModelParamsT<Real>& m,
                                     Mode mode, Rng* rng = nullptr,
                                     const AugmentConfig* aug = nullptr) {
  std::vector<PointCloud> batch{pc};
  return forward_classification_batch(batch, m, mode, rng, aug).logits;
}

}  // namespace pm
