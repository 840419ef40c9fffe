#pragma once

#include <memory>
#include <string>
#include <vector>

#include "amr/config.hpp"
#include "amr/graph.hpp"
#include "amr/rng.hpp"

namespace amr {

enum class Variant { kBase, kMultiPatch, kAttMultiPatch, kMultiRoi, kAttMultiRoi };

Variant variant_from(const std::string& name);
const char* variant_name(Variant v);

inline bool uses_encoder(Variant v) {
  return v == Variant::kAttMultiPatch || v == Variant::kAttMultiRoi;
}
inline bool uses_landmarks(Variant v) {
  return v == Variant::kMultiRoi || v == Variant::kAttMultiRoi;
}
inline bool uses_locals(Variant v) { return v != Variant::kBase; }

struct ModelConfig {
  Variant variant = Variant::kAttMultiRoi;
  int patch_n = 3;            // grid dimension for the patch variants
  int input_size = 24;        // modality side length S
  std::vector<int> widths = {6, 12, 24};  // extractor block channel widths
  int dim = 32;               // token embedding width D
  int heads = 4;              // attention heads k (D divisible by k)
  int layers = 2;             // encoder depth L
  int mlp_hidden = 64;        // encoder MLP hidden width
  int reg_hidden = 16;        // regressor hidden width

  int modalities() const;
  int head_dim() const { return dim / heads; }
  void validate() const;
  static ModelConfig from(const RunConfig& cfg);
};

// Optional capture of the encoder attention matrices of the last forward
// pass, one (T x T) entry per (layer, sample, head).
template <class T>
struct AttnTrace {
  std::vector<TensorData<T>> matrices;
};

template <class T>
struct Model {
  ModelConfig cfg;

  // shared convolutional extractor: per block conv3x3 -> ReLU -> conv3x3 ->
  // ReLU -> 2x2 max pool, then global average pool and a projection to D
  std::vector<Parameter<T>> conv_w, conv_b;  // two per block
  Parameter<T> proj_w, proj_b;

  // encoder symbols (attention variants only)
  Parameter<T> bmd_token;  // (1, D)
  Parameter<T> pos_embed;  // (M+1, D)
  struct EncoderLayer {
    Parameter<T> ln1_g, ln1_b;
    Parameter<T> qkv_w;  // (D, 3D), heads fused
    Parameter<T> msa_w;  // (k*Dh, D)
    Parameter<T> ln2_g, ln2_b;
    Parameter<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  std::vector<EncoderLayer> enc;

  // two-linear-layer regressors with one ReLU
  Parameter<T> glob_w1, glob_b1, glob_w2, glob_b2;
  struct LocalRegressor {
    Parameter<T> w1, b1, w2, b2;
  };
  std::vector<LocalRegressor> locals;

  std::vector<Parameter<T>*> parameters();  // canonical checkpoint order
  int64_t parameter_count();
};

// Deterministic initialization: uniform +-1/sqrt(fan_in) for conv/linear
// weights, zeros for biases and positional embeddings, N(0, 0.02) for the
// bmd token, ones/zeros for LayerNorm.
template <class T>
Model<T> init_model(const ModelConfig& cfg, uint64_t seed);

struct BatchOutput {
  Var global = -1;       // (B, 1)
  Var local_all = -1;    // (B*M, 1) in modality-major order, -1 when absent
  Var features = -1;     // (B*M, D) extractor output
};

// Shared convolutional feature extraction: (B*M, S, S) modalities to
// (B*M, D) feature rows. Identical modalities yield identical features.
template <class T>
Var extract_features(Graph<T>& g, Model<T>& m, const TensorData<T>& modalities,
                     int batch);

// Transformer-encoder fusion over per-sample token sequences. feats holds
// B*M feature rows; a learnable bmd token is prepended per sample, learned
// positional embeddings added, then `layers` rounds of pre-norm multi-head
// self-attention and MLP with residuals. Returns the pooled global feature
// (B, D), the mean over all final rows including the token, and the final
// token matrix (B*(M+1), D).
template <class T>
std::pair<Var, Var> encoder_forward(Graph<T>& g, Model<T>& m, Var feats,
                                    int batch, AttnTrace<T>* trace = nullptr);

// Plain fusion: concatenates a sample's feature rows into one long vector.
template <class T>
Var concat_fuse(Graph<T>& g, Var feats, int batch) {
  const auto& F = g.val(feats);
  return g.reshape(feats, {batch, (int)(F.size() / batch)});
}

// Forward pass over a batch of stacked modalities (B*M, S, S), modality
// index varying fastest.
template <class T>
BatchOutput model_forward(Graph<T>& g, Model<T>& m,
                          const TensorData<T>& modalities, int batch,
                          AttnTrace<T>* trace = nullptr);

// (global - t)^2 + local_weight/M * sum_i (local_i - t)^2, averaged over the
// batch. The Base variant has no local term.
template <class T>
Var model_loss(Graph<T>& g, const BatchOutput& out,
               const TensorData<T>& targets, T local_weight);

// Checkpoint file: magic "AMRW", u32-LE JSON header length, JSON header
// (variant, config, tensor directory), then f32-LE payloads in order.
void save_checkpoint(Model<float>& m, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// template implementations

template <class T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (size_t i = 0; i < conv_w.size(); ++i) {
    out.push_back(&conv_w[i]);
    out.push_back(&conv_b[i]);
  }
  out.push_back(&proj_w);
  out.push_back(&proj_b);
  if (uses_encoder(cfg.variant)) {
    out.push_back(&bmd_token);
    out.push_back(&pos_embed);
    for (auto& l : enc)
      for (auto* p : {&l.ln1_g, &l.ln1_b, &l.qkv_w, &l.msa_w, &l.ln2_g,
                      &l.ln2_b, &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2})
        out.push_back(p);
  }
  for (auto* p : {&glob_w1, &glob_b1, &glob_w2, &glob_b2}) out.push_back(p);
  for (auto& l : locals)
    for (auto* p : {&l.w1, &l.b1, &l.w2, &l.b2}) out.push_back(p);
  return out;
}

template <class T>
int64_t Model<T>::parameter_count() {
  int64_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <class T>
Model<T> init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  Rng rng = Rng(seed).child(0x1217);

  auto uniform_fan = [&](std::string name, std::vector<int> shape, int fan_in,
                         bool decay = true) {
    Parameter<T> p(std::move(name), TensorData<T>(std::move(shape)), decay);
    const double b = 1.0 / std::sqrt((double)fan_in);
    for (auto& v : p.value.v) v = (T)rng.uniform(-b, b);
    return p;
  };
  auto zeros = [&](std::string name, std::vector<int> shape) {
    return Parameter<T>(std::move(name), TensorData<T>(std::move(shape)), false);
  };
  auto ones = [&](std::string name, std::vector<int> shape) {
    Parameter<T> p(std::move(name), TensorData<T>(std::move(shape)), false);
    std::fill(p.value.v.begin(), p.value.v.end(), T(1));
    return p;
  };

  int cin = 1;
  for (size_t b = 0; b < cfg.widths.size(); ++b) {
    const int cout = cfg.widths[b];
    for (int k = 0; k < 2; ++k) {
      const int ci = k == 0 ? cin : cout;
      m.conv_w.push_back(uniform_fan(strfmt("extractor.b%zu.conv%d.w", b, k),
                                     {cout, ci, 3, 3}, ci * 9));
      m.conv_b.push_back(zeros(strfmt("extractor.b%zu.conv%d.b", b, k), {cout}));
    }
    cin = cout;
  }
  m.proj_w = uniform_fan("extractor.proj.w", {cin, cfg.dim}, cin);
  m.proj_b = zeros("extractor.proj.b", {cfg.dim});

  const int M = cfg.modalities();
  if (uses_encoder(cfg.variant)) {
    m.bmd_token = Parameter<T>("encoder.bmd_token", TensorData<T>({1, cfg.dim}), false);
    for (auto& v : m.bmd_token.value.v) v = (T)rng.normal(0.0, 0.02);
    m.pos_embed = zeros("encoder.pos_embed", {M + 1, cfg.dim});
    for (int l = 0; l < cfg.layers; ++l) {
      typename Model<T>::EncoderLayer lay;
      lay.ln1_g = ones(strfmt("encoder.l%d.ln1.g", l), {cfg.dim});
      lay.ln1_b = zeros(strfmt("encoder.l%d.ln1.b", l), {cfg.dim});
      lay.qkv_w = uniform_fan(strfmt("encoder.l%d.qkv.w", l),
                              {cfg.dim, 3 * cfg.dim}, cfg.dim);
      lay.msa_w = uniform_fan(strfmt("encoder.l%d.msa.w", l),
                              {cfg.dim, cfg.dim}, cfg.dim);
      lay.ln2_g = ones(strfmt("encoder.l%d.ln2.g", l), {cfg.dim});
      lay.ln2_b = zeros(strfmt("encoder.l%d.ln2.b", l), {cfg.dim});
      lay.mlp_w1 = uniform_fan(strfmt("encoder.l%d.mlp.w1", l),
                               {cfg.dim, cfg.mlp_hidden}, cfg.dim);
      lay.mlp_b1 = zeros(strfmt("encoder.l%d.mlp.b1", l), {cfg.mlp_hidden});
      lay.mlp_w2 = uniform_fan(strfmt("encoder.l%d.mlp.w2", l),
                               {cfg.mlp_hidden, cfg.dim}, cfg.mlp_hidden);
      lay.mlp_b2 = zeros(strfmt("encoder.l%d.mlp.b2", l), {cfg.dim});
      m.enc.push_back(std::move(lay));
    }
  }

  const int gin = (cfg.variant == Variant::kMultiPatch ||
                   cfg.variant == Variant::kMultiRoi)
                      ? M * cfg.dim
                      : cfg.dim;
  m.glob_w1 = uniform_fan("regressor.global.w1", {gin, cfg.reg_hidden}, gin);
  m.glob_b1 = zeros("regressor.global.b1", {cfg.reg_hidden});
  m.glob_w2 = uniform_fan("regressor.global.w2", {cfg.reg_hidden, 1},
                          cfg.reg_hidden);
  m.glob_b2 = zeros("regressor.global.b2", {1});

  if (uses_locals(cfg.variant)) {
    for (int i = 0; i < M; ++i) {
      typename Model<T>::LocalRegressor lr;
      lr.w1 = uniform_fan(strfmt("regressor.local%d.w1", i),
                          {cfg.dim, cfg.reg_hidden}, cfg.dim);
      lr.b1 = zeros(strfmt("regressor.local%d.b1", i), {cfg.reg_hidden});
      lr.w2 = uniform_fan(strfmt("regressor.local%d.w2", i), {cfg.reg_hidden, 1},
                          cfg.reg_hidden);
      lr.b2 = zeros(strfmt("regressor.local%d.b2", i), {1});
      m.locals.push_back(std::move(lr));
    }
  }
  return m;
}

template <class T>
Var extract_features(Graph<T>& g, Model<T>& m, const TensorData<T>& modalities,
                     int batch) {
  const ModelConfig& cfg = m.cfg;
  const int M = cfg.modalities();
  const int S = cfg.input_size;
  if (modalities.ndim() != 3 || modalities.dim(0) != batch * M ||
      modalities.dim(1) != S || modalities.dim(2) != S)
    throw UsageError(strfmt(
        "extract_features: expected (%d,%d,%d) modalities for variant %s, got %s",
        batch * M, S, S, variant_name(cfg.variant),
        shape_str(modalities.shape).c_str()));
  Var x = g.input(modalities);
  x = g.reshape(x, {batch * M, 1, S, S});
  for (size_t b = 0; b < cfg.widths.size(); ++b) {
    for (int k = 0; k < 2; ++k) {
      const size_t ci = b * 2 + (size_t)k;
      x = g.conv2d(x, g.leaf(m.conv_w[ci]), 1, 1);
      x = g.channel_bias(x, g.leaf(m.conv_b[ci]));
      x = g.relu(x);
    }
    x = g.maxpool2(x);
  }
  return g.linear(g.global_avg_pool(x), g.leaf(m.proj_w), g.leaf(m.proj_b));
}

template <class T>
std::pair<Var, Var> encoder_forward(Graph<T>& g, Model<T>& m, Var feats,
                                    int batch, AttnTrace<T>* trace) {
  const ModelConfig& cfg = m.cfg;
  const int M = cfg.modalities();
  const int D = cfg.dim, T_ = M + 1, Dh = cfg.head_dim();
  Var token = g.leaf(m.bmd_token);
  Var pos = g.leaf(m.pos_embed);
  std::vector<Var> rows, poss;
  for (int b = 0; b < batch; ++b) {
    rows.push_back(token);
    rows.push_back(g.block(feats, b * M, M, 0, D));
    poss.push_back(pos);
  }
  Var z = g.add(g.concat(rows, 0), g.concat(poss, 0));  // (B*T, D)
  const T inv_sqrt = (T)(1.0 / std::sqrt((double)Dh));
  for (int l = 0; l < cfg.layers; ++l) {
    auto& lay = m.enc[(size_t)l];
    Var n1 = g.layer_norm(z, g.leaf(lay.ln1_g), g.leaf(lay.ln1_b), (T)1e-5);
    Var qkv = g.matmul(n1, g.leaf(lay.qkv_w));  // (B*T, 3D)
    std::vector<Var> sample_rows;
    for (int b = 0; b < batch; ++b) {
      std::vector<Var> heads;
      for (int h = 0; h < cfg.heads; ++h) {
        Var q = g.block(qkv, b * T_, T_, h * Dh, Dh);
        Var k = g.block(qkv, b * T_, T_, D + h * Dh, Dh);
        Var v = g.block(qkv, b * T_, T_, 2 * D + h * Dh, Dh);
        Var att =
            g.softmax_rows(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt));
        if (trace) trace->matrices.push_back(g.val(att));
        heads.push_back(g.matmul(att, v));
      }
      sample_rows.push_back(g.concat(heads, 1));  // (T, D)
    }
    Var msa = g.matmul(g.concat(sample_rows, 0), g.leaf(lay.msa_w));
    z = g.add(g.dbg_tag(msa, "msa"), z);
    Var n2 = g.layer_norm(z, g.leaf(lay.ln2_g), g.leaf(lay.ln2_b), (T)1e-5);
    Var h1 = g.gelu(g.linear(n2, g.leaf(lay.mlp_w1), g.leaf(lay.mlp_b1)));
    Var h2 = g.linear(h1, g.leaf(lay.mlp_w2), g.leaf(lay.mlp_b2));
    z = g.add(h2, z);
  }
  // global feature: mean over all final-layer rows, bmd token included
  std::vector<Var> pooled;
  for (int b = 0; b < batch; ++b)
    pooled.push_back(g.mean_rows(g.block(z, b * T_, T_, 0, D)));
  return {g.concat(pooled, 0), z};  // (B, D), (B*T, D)
}

template <class T>
BatchOutput model_forward(Graph<T>& g, Model<T>& m,
                          const TensorData<T>& modalities, int batch,
                          AttnTrace<T>* trace) {
  const ModelConfig& cfg = m.cfg;
  const int M = cfg.modalities();
  Var feats = extract_features(g, m, modalities, batch);

  auto regressor = [&](Var in, Parameter<T>& w1, Parameter<T>& b1,
                       Parameter<T>& w2, Parameter<T>& b2) {
    Var h = g.relu(g.linear(in, g.leaf(w1), g.leaf(b1)));
    return g.linear(h, g.leaf(w2), g.leaf(b2));
  };

  BatchOutput out;
  out.features = feats;

  Var global_in;
  switch (cfg.variant) {
    case Variant::kBase:
      global_in = feats;  // M == 1
      break;
    case Variant::kMultiPatch:
    case Variant::kMultiRoi:
      global_in = concat_fuse(g, feats, batch);
      break;
    case Variant::kAttMultiPatch:
    case Variant::kAttMultiRoi:
      global_in = encoder_forward(g, m, feats, batch, trace).first;
      break;
  }
  out.global = regressor(global_in, m.glob_w1, m.glob_b1, m.glob_w2, m.glob_b2);

  if (uses_locals(cfg.variant)) {
    std::vector<Var> parts;
    for (int i = 0; i < M; ++i) {
      std::vector<int> idx(batch);
      for (int b = 0; b < batch; ++b) idx[(size_t)b] = b * M + i;
      Var fi = g.gather_rows(feats, idx);
      auto& lr = m.locals[(size_t)i];
      parts.push_back(regressor(fi, lr.w1, lr.b1, lr.w2, lr.b2));
    }
    out.local_all = g.concat(parts, 0);  // (M*B, 1), modality-major
  }
  return out;
}

template <class T>
Var model_loss(Graph<T>& g, const BatchOutput& out,
               const TensorData<T>& targets, T local_weight) {
  Var tgt = g.input(targets);
  Var loss = g.mse(out.global, tgt);
  if (out.local_all >= 0) {
    const int B = targets.dim(0);
    const auto& locals = g.val(out.local_all);
    const int MB = locals.dim(0);
    TensorData<T> tiled({MB, 1});
    for (int i = 0; i < MB; ++i) tiled.v[(size_t)i] = targets.v[(size_t)(i % B)];
    // mean over M*B equals the average local MSE: (1/M) sum_i mse_i
    Var lterm = g.mse(out.local_all, g.input(tiled));
    loss = g.add(loss, g.scale(lterm, local_weight));
  }
  return loss;
}

}  // namespace amr
