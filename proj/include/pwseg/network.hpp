#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pwseg/autodiff.hpp"
#include "pwseg/config.hpp"
#include "pwseg/error.hpp"
#include "pwseg/losses.hpp"
#include "pwseg/pmsa.hpp"
#include "pwseg/pseudolabel.hpp"
#include "pwseg/rng.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

/// Shape of a network: the volume grid it was built for plus the transformer
/// hyperparameters. One input channel.
struct Architecture {
  Dims grid{32, 32, 32};
  std::size_t patch = 8;
  std::size_t embed = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t score_hidden = 16;
  std::size_t mlp_hidden = 256;

  Dims patch_grid() const { return {grid.x / patch, grid.y / patch, grid.z / patch}; }
  std::size_t tokens() const { return patch_grid().count(); }
  std::size_t patch_voxels() const { return patch * patch * patch; }
  std::size_t head_dim() const { return embed / heads; }

  void validate() const {
    require(patch >= 1 && grid.x % patch == 0 && grid.y % patch == 0 && grid.z % patch == 0,
            ErrorKind::shape, "patch size " + std::to_string(patch) + " does not divide " + grid.str());
    require(embed >= 1 && heads >= 1 && embed % heads == 0, ErrorKind::shape,
            "embedding width must be a positive multiple of the head count");
    require(score_hidden >= 1 && mlp_hidden >= 1, ErrorKind::shape, "hidden widths must be >= 1");
  }

  static Architecture from_config(const PipelineConfig& c, Dims grid) {
    Architecture a{grid,          c.patch_size_P,           c.embed_dim_K,           c.heads_H,
                   c.layers_L,    c.resolved_score_hidden(), c.resolved_mlp_hidden()};
    a.validate();
    return a;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <class T>
struct LayerWeights {
  T ln1_g, ln1_b;
  AttentionWeights<T> attn;
  ScoreMlpWeights<T> score;
  T ln2_g, ln2_b;
  T mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "ln1_g", self.ln1_g);
    f(prefix + "ln1_b", self.ln1_b);
    AttentionWeights<T>::visit(self.attn, [&](const char* n, auto& m) { f(prefix + "attn." + n, m); });
    ScoreMlpWeights<T>::visit(self.score, [&](const char* n, auto& m) { f(prefix + "score." + n, m); });
    f(prefix + "ln2_g", self.ln2_g);
    f(prefix + "ln2_b", self.ln2_b);
    f(prefix + "mlp_w1", self.mlp_w1);
    f(prefix + "mlp_b1", self.mlp_b1);
    f(prefix + "mlp_w2", self.mlp_w2);
    f(prefix + "mlp_b2", self.mlp_b2);
  }
};

template <class T>
struct ModelWeights {
  T patch_embed;  // (P^3) x K
  T pos_embed;    // N x K
  std::vector<LayerWeights<T>> layers;
  T head_w, head_b;  // K x P^3, 1 x P^3

  /// Visits every tensor in a fixed order with a dotted name.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("patch_embed"), self.patch_embed);
    f(std::string("pos_embed"), self.pos_embed);
    for (std::size_t l = 0; l < self.layers.size(); ++l)
      LayerWeights<T>::visit(self.layers[l], "layer" + std::to_string(l) + ".", f);
    f(std::string("head_w"), self.head_w);
    f(std::string("head_b"), self.head_b);
  }
};

struct ModelParams {
  Architecture arch;
  ModelWeights<Matrix> weights;

  template <class F>
  void for_each(F&& f) {
    ModelWeights<Matrix>::visit(weights, f);
  }
  template <class F>
  void for_each(F&& f) const {
    ModelWeights<Matrix>::visit(weights, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

template <class T>
bool operator==(const LayerWeights<T>& a, const LayerWeights<T>& b) {
  bool eq = true;
  std::vector<const T*> lhs;
  LayerWeights<T>::visit(a, "", [&](const std::string&, const T& m) { lhs.push_back(&m); });
  std::size_t i = 0;
  LayerWeights<T>::visit(b, "", [&](const std::string&, const T& m) { eq = eq && *lhs[i++] == m; });
  return eq;
}

template <class T>
bool operator==(const ModelWeights<T>& a, const ModelWeights<T>& b) {
  return a.patch_embed == b.patch_embed && a.pos_embed == b.pos_embed && a.layers == b.layers &&
         a.head_w == b.head_w && a.head_b == b.head_b;
}

/// Zero-filled weights of the right shapes (layer norms at identity).
inline ModelParams zero_params(const Architecture& arch) {
  arch.validate();
  const std::size_t k = arch.embed, p3 = arch.patch_voxels();
  ModelParams mp{arch, {}};
  auto& w = mp.weights;
  w.patch_embed = Matrix(p3, k);
  w.pos_embed = Matrix(arch.tokens(), k);
  for (std::size_t l = 0; l < arch.layers; ++l) {
    LayerWeights<Matrix> lw;
    lw.ln1_g = Matrix(1, k, 1.0);
    lw.ln1_b = Matrix(1, k);
    lw.attn = zero_attention_params(k);
    lw.score = zero_score_params(arch.head_dim(), arch.score_hidden);
    lw.ln2_g = Matrix(1, k, 1.0);
    lw.ln2_b = Matrix(1, k);
    lw.mlp_w1 = Matrix(k, arch.mlp_hidden);
    lw.mlp_b1 = Matrix(1, arch.mlp_hidden);
    lw.mlp_w2 = Matrix(arch.mlp_hidden, k);
    lw.mlp_b2 = Matrix(1, k);
    w.layers.push_back(std::move(lw));
  }
  w.head_w = Matrix(k, p3);
  w.head_b = Matrix(1, p3);
  return mp;
}

/// Gaussian initialisation, std 1/sqrt(fan_in) for weight matrices, 0.02 for
/// the positional table, 0.1/sqrt(fan_in) for the score MLP output layer so
/// the mean starts close to the scaled dot product. Biases start at zero and
/// layer-norm scales at one. Draws are taken in visit order.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams mp = zero_params(arch);
  Rng rng(seed);
  mp.for_each([&](const std::string& name, Matrix& m) {
    const auto ends_with = [&](const char* s) {
      const std::string suffix(s);
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double std = 0.0;
    if (name == "pos_embed")
      std = 0.02;
    else if (ends_with("score.w1q") || ends_with("score.w1k"))
      std = 1.0 / std::sqrt(2.0 * static_cast<double>(m.rows));
    else if (ends_with("score.w2"))
      std = 0.1 / std::sqrt(static_cast<double>(m.rows));
    else if (m.rows > 1)
      std = 1.0 / std::sqrt(static_cast<double>(m.rows));
    if (std == 0.0) return;
    for (auto& v : m.data) v = std * rng.normal();
  });
  return mp;
}

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

/// Flattened non-overlapping P^3 patches, one row per patch. Rows follow the
/// patch grid x-fastest; within a row voxels are x-fastest.
struct PatchSequence {
  Matrix tokens;
  std::size_t patch = 1;
  Dims grid;  // patch-grid dims
};

/// index[t * P^3 + u] = linear voxel index of voxel u of patch t.
inline std::vector<std::size_t> patch_index(const Dims& dims, std::size_t p) {
  require(p >= 1 && dims.x % p == 0 && dims.y % p == 0 && dims.z % p == 0, ErrorKind::shape,
          "patch size " + std::to_string(p) + " does not divide " + dims.str());
  const Dims g{dims.x / p, dims.y / p, dims.z / p};
  std::vector<std::size_t> idx;
  idx.reserve(dims.count());
  for (std::size_t gz = 0; gz < g.z; ++gz)
    for (std::size_t gy = 0; gy < g.y; ++gy)
      for (std::size_t gx = 0; gx < g.x; ++gx)
        for (std::size_t z = 0; z < p; ++z)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
              idx.push_back((gx * p + x) + dims.x * ((gy * p + y) + dims.y * (gz * p + z)));
  return idx;
}

inline PatchSequence patchify(const VolumeGrid& volume, std::size_t p) {
  const auto idx = patch_index(volume.dims(), p);
  const Dims& d = volume.dims();
  PatchSequence seq{Matrix(d.count() / (p * p * p), p * p * p), p, {d.x / p, d.y / p, d.z / p}};
  for (std::size_t i = 0; i < idx.size(); ++i) seq.tokens.data[i] = volume[idx[i]];
  return seq;
}

inline VolumeGrid unpatchify(const PatchSequence& seq) {
  const std::size_t p = seq.patch;
  const Dims d{seq.grid.x * p, seq.grid.y * p, seq.grid.z * p};
  const auto idx = patch_index(d, p);
  std::vector<double> data(d.count());
  for (std::size_t i = 0; i < idx.size(); ++i) data[idx[i]] = seq.tokens.data[i];
  return VolumeGrid(d, std::move(data));
}

/// Inverse permutation of patch_index: position of each voxel in token layout.
inline std::shared_ptr<const std::vector<std::size_t>> voxel_to_token_index(const Dims& dims, std::size_t p) {
  const auto idx = patch_index(dims, p);
  auto inv = std::make_shared<std::vector<std::size_t>>(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) (*inv)[idx[i]] = i;
  return inv;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

inline Var embed(Var patches, Var patch_embed, Var pos_embed) {
  require(patches.cols() == patch_embed.rows(), ErrorKind::shape, "embed: patch length vs E rows");
  require(pos_embed.rows() == patches.rows() && pos_embed.cols() == patch_embed.cols(),
          ErrorKind::shape, "embed: positional table shape");
  return ad::add(ad::matmul(patches, patch_embed), pos_embed);
}

inline Matrix embed(const PatchSequence& seq, const Matrix& patch_embed, const Matrix& pos_embed) {
  Tape t;
  return embed(t.constant(seq.tokens), t.constant(patch_embed), t.constant(pos_embed)).value();
}

struct ForwardOptions {
  ScoreMode mode = ScoreMode::sampled;
  bool zero_sigma = false;
};

struct EncoderResult {
  Var tokens;
  std::vector<DistributionVars> layers;
  std::vector<std::vector<Matrix>> epsilon;  // [layer][head]
};

/// Pre-norm transformer blocks:
///   z' = PMSA(LN(z)) + z,  z = MLP(LN(z')) + z'
/// Layer l draws its scores from rng.split(l) and sees layer l-1's sampled
/// output, so its scores are conditioned on the earlier draws.
inline EncoderResult encoder_forward(Var z0, const ModelWeights<Var>& w, std::size_t heads, const Rng& rng,
                                     ForwardOptions opt = {}) {
  EncoderResult r;
  Var z = z0;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    const Var a = ad::layer_norm(z, lw.ln1_g, lw.ln1_b);
    PmsaResult pm = pmsa_forward(a, lw.attn, lw.score, heads, rng.split(l), {opt.mode, opt.zero_sigma});
    const Var z1 = ad::add(pm.out, z);
    const Var b = ad::layer_norm(z1, lw.ln2_g, lw.ln2_b);
    const Var hidden = ad::gelu(ad::add_row(ad::matmul(b, lw.mlp_w1), lw.mlp_b1));
    z = ad::add(ad::add_row(ad::matmul(hidden, lw.mlp_w2), lw.mlp_b2), z1);
    require(all_finite(z.value()), ErrorKind::numeric,
            "non-finite activation after layer " + std::to_string(l));
    r.layers.push_back(std::move(pm.dist));
    r.epsilon.push_back(std::move(pm.epsilon));
  }
  r.tokens = z;
  return r;
}

/// Linear map of each token to its patch's P^3 logits (token layout, N x P^3).
inline Var seg_head(Var tokens, Var head_w, Var head_b) {
  return ad::add_row(ad::matmul(tokens, head_w), head_b);
}

struct ForwardResult {
  Var logits;         // 1 x V, volume (x-fastest) layout
  Var probabilities;  // sigmoid(logits)
  EncoderResult encoder;
};

inline ForwardResult forward(Tape& tape, const ModelWeights<Var>& w, const Architecture& arch,
                             const VolumeGrid& volume, const Rng& rng, ForwardOptions opt = {}) {
  require_same_dims(volume.dims(), arch.grid, "network input");
  const PatchSequence seq = patchify(volume, arch.patch);
  const Var z0 = embed(tape.constant(seq.tokens), w.patch_embed, w.pos_embed);
  ForwardResult r;
  r.encoder = encoder_forward(z0, w, arch.heads, rng, opt);
  const Var tok_logits = seg_head(r.encoder.tokens, w.head_w, w.head_b);
  r.logits = ad::gather(tok_logits, voxel_to_token_index(arch.grid, arch.patch), 1, arch.grid.count());
  r.probabilities = ad::sigmoid(r.logits);
  return r;
}

inline ModelWeights<Var> record(Tape& tape, const ModelWeights<Matrix>& w, bool trainable) {
  ModelWeights<Var> out;
  out.layers.resize(w.layers.size());
  std::vector<Var> vars;
  ModelWeights<Matrix>::visit(w, [&](const std::string&, const Matrix& m) {
    vars.push_back(trainable ? tape.parameter(m) : tape.constant(m));
  });
  std::size_t i = 0;
  ModelWeights<Var>::visit(out, [&](const std::string&, Var& slot) { slot = vars[i++]; });
  return out;
}

// Value-level forms of the pieces above.

inline Matrix encoder_forward(const Matrix& z0, const ModelParams& params, const Rng& rng,
                              ScoreMode mode = ScoreMode::sampled) {
  Tape t;
  return encoder_forward(t.constant(z0), record(t, params.weights, false), params.arch.heads, rng,
                         {mode, false})
      .tokens.value();
}

inline VolumeGrid seg_head(const Matrix& tokens, const ModelParams& params) {
  Tape t;
  const Var out = seg_head(t.constant(tokens), t.constant(params.weights.head_w),
                           t.constant(params.weights.head_b));
  PatchSequence seq{out.value(), params.arch.patch, params.arch.patch_grid()};
  const VolumeGrid vol = unpatchify(seq);
  return VolumeGrid(vol.dims(), vol.data(), ValueKind::logit);
}

/// Foreground probabilities of one pass.
inline VolumeGrid predict(const ModelParams& params, const VolumeGrid& volume, const Rng& rng,
                          ForwardOptions opt = {}) {
  Tape t;
  const ForwardResult r = forward(t, record(t, params.weights, false), params.arch, volume, rng, opt);
  return VolumeGrid(volume.dims(), r.probabilities.value().data, ValueKind::probability);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingPair {
  VolumeGrid image;
  PseudoLabel label;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossBreakdown> trace;  // one entry per iteration
};

/// Loss and parameter gradients of one sampled pass (epsilon fixed by rng).
struct LossAndGrad {
  LossBreakdown loss;
  ModelWeights<Matrix> grad;
};

inline LossAndGrad loss_and_grad(const ModelParams& params, const TrainingPair& pair,
                                 const PipelineConfig& config, const Rng& rng, ForwardOptions opt = {}) {
  Tape t;
  const ModelWeights<Var> w = record(t, params.weights, true);
  const ForwardResult r = forward(t, w, params.arch, pair.image, rng, opt);
  const LossVars loss = total_loss(r.probabilities, pair.label, r.encoder.layers, config);
  t.backward(loss.total);
  LossAndGrad out{loss.breakdown(), zero_params(params.arch).weights};
  std::vector<const Matrix*> grads;
  ModelWeights<Var>::visit(w, [&](const std::string&, const Var& v) { grads.push_back(&t.grad(v.id)); });
  std::size_t i = 0;
  ModelWeights<Matrix>::visit(out.grad, [&](const std::string&, Matrix& g) {
    const Matrix& src = *grads[i++];
    if (src.size() == g.size()) g = src;  // untouched leaves keep a zero gradient
  });
  return out;
}

/// Loss of one pass without recording gradients.
inline LossBreakdown evaluate_loss(const ModelParams& params, const TrainingPair& pair, const PipelineConfig& config,
                                   const Rng& rng, ForwardOptions opt = {}) {
  Tape t;
  const ForwardResult r = forward(t, record(t, params.weights, false), params.arch, pair.image, rng, opt);
  return total_loss(r.probabilities, pair.label, r.encoder.layers, config).breakdown();
}

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(const ModelParams& shape, const PipelineConfig& c)
      : lr_(c.learning_rate), b1_(c.adam_beta1), b2_(c.adam_beta2), eps_(c.adam_eps), wd_(c.weight_decay) {
    shape.for_each([&](const std::string&, const Matrix& m) {
      m_.emplace_back(m.size(), 0.0);
      v_.emplace_back(m.size(), 0.0);
    });
  }

  void step(ModelParams& params, ModelWeights<Matrix>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    std::vector<Matrix*> gs;
    ModelWeights<Matrix>::visit(grad, [&](const std::string&, Matrix& g) { gs.push_back(&g); });
    std::size_t k = 0;
    params.for_each([&](const std::string&, Matrix& p) {
      auto& m = m_[k];
      auto& v = v_[k];
      const auto& g = gs[k]->data;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
        v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        p.data[i] -= lr_ * (update + wd_ * p.data[i]);
      }
      ++k;
    });
  }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

using TrainCallback = std::function<void(std::size_t iteration, const LossBreakdown&, const ModelParams&)>;

/// Single-sample training: each iteration draws one set of scores per pass
/// (iteration rng = rng.split(iteration)), averages the gradients of
/// `batch_size` pairs taken round-robin, and takes one AdamW step.
inline TrainResult train(const std::vector<TrainingPair>& data, const PipelineConfig& config,
                         ModelParams init, const Rng& rng, const TrainCallback& on_step = {}) {
  require(!data.empty(), ErrorKind::parameter, "training needs at least one pair");
  config.validate();
  for (const auto& pair : data) {
    require_same_dims(pair.image.dims(), init.arch.grid, "training image");
    require_same_dims(pair.label.confidence.dims(), init.arch.grid, "training label");
  }
  TrainResult result{std::move(init), {}};
  AdamW opt(result.params, config);
  std::size_t cursor = 0;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const Rng it_rng = rng.split(it);
    ModelWeights<Matrix> grad = zero_params(result.params.arch).weights;
    LossBreakdown mean{};
    const double inv = 1.0 / static_cast<double>(config.batch_size);
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto& pair = data[cursor++ % data.size()];
      LossAndGrad lg = loss_and_grad(result.params, pair, config, it_rng.split(b));
      require(std::isfinite(lg.loss.total), ErrorKind::numeric,
              "non-finite loss at iteration " + std::to_string(it));
      std::vector<const Matrix*> src;
      ModelWeights<Matrix>::visit(lg.grad, [&](const std::string&, const Matrix& g) { src.push_back(&g); });
      std::size_t k = 0;
      ModelWeights<Matrix>::visit(grad, [&](const std::string&, Matrix& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += inv * src[k]->data[i];
        ++k;
      });
      mean.dice += inv * lg.loss.dice;
      mean.pce += inv * lg.loss.pce;
      mean.kl += inv * lg.loss.kl;
    }
    mean = compose_losses(mean.dice, mean.pce, mean.kl, config.kl_weight_w);
    opt.step(result.params, grad);
    result.trace.push_back(mean);
    if (on_step) on_step(it, mean, result.params);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct Segmentation {
  VolumeGrid probability;
  BinaryMask mask;
};

/// Mean of M sampled passes (pass m uses rng.split(m)); foreground where the
/// averaged probability is >= 0.5, i.e. the two-class argmax with ties to
/// foreground.
inline Segmentation mc_infer(const VolumeGrid& volume, const ModelParams& params, std::size_t M,
                             const Rng& rng, ForwardOptions opt = {}) {
  require(M >= 1, ErrorKind::parameter, "MC inference needs M >= 1");
  std::vector<double> acc(volume.size(), 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    const VolumeGrid p = predict(params, volume, rng.split(m), opt);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  for (auto& v : acc) v /= static_cast<double>(M);
  VolumeGrid prob(volume.dims(), std::move(acc), ValueKind::probability);
  return {prob, threshold_label(prob, 0.5)};
}

/// Window start offsets along one axis: multiples of window * (1 - overlap),
/// with a final window clamped to end at the volume edge.
inline std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, double overlap) {
  require(extent >= window, ErrorKind::shape,
          "volume extent " + std::to_string(extent) + " smaller than window " + std::to_string(window));
  require(overlap >= 0.0 && overlap < 1.0, ErrorKind::parameter, "overlap must lie in [0,1)");
  const auto step = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(window) * (1.0 - overlap))));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= extent; s += step) starts.push_back(s);
  if (starts.back() + window < extent) starts.push_back(extent - window);
  return starts;
}

/// Tiles the volume with training-grid windows, runs mc_infer on each with
/// the same rng and averages probabilities uniformly over covering windows.
inline VolumeGrid sliding_window_infer(const VolumeGrid& volume, const ModelParams& params, std::size_t M,
                                       double overlap, const Rng& rng, ForwardOptions opt = {}) {
  const Dims& d = volume.dims();
  const Dims& w = params.arch.grid;
  const auto xs = window_starts(d.x, w.x, overlap);
  const auto ys = window_starts(d.y, w.y, overlap);
  const auto zs = window_starts(d.z, w.z, overlap);
  std::vector<double> sum(d.count(), 0.0), count(d.count(), 0.0);
  std::vector<double> crop(w.count());
  for (std::size_t oz : zs)
    for (std::size_t oy : ys)
      for (std::size_t ox : xs) {
        std::size_t i = 0;
        for (std::size_t z = 0; z < w.z; ++z)
          for (std::size_t y = 0; y < w.y; ++y)
            for (std::size_t x = 0; x < w.x; ++x) crop[i++] = volume[(ox + x) + d.x * ((oy + y) + d.y * (oz + z))];
        const Segmentation s = mc_infer(VolumeGrid(w, crop), params, M, rng, opt);
        i = 0;
        for (std::size_t z = 0; z < w.z; ++z)
          for (std::size_t y = 0; y < w.y; ++y)
            for (std::size_t x = 0; x < w.x; ++x, ++i) {
              const std::size_t g = (ox + x) + d.x * ((oy + y) + d.y * (oz + z));
              sum[g] += s.probability[i];
              count[g] += 1.0;
            }
      }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
  return VolumeGrid(d, std::move(sum), ValueKind::probability);
}

}  // namespace pwseg
