#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pwseg/autodiff.hpp"
#include "pwseg/error.hpp"
#include "pwseg/rng.hpp"

namespace pwseg {

// ---------------------------------------------------------------------------
// Weights. Templated on the element so the same layout serves plain values
// (T = Matrix) and recorded graph nodes (T = Var).
// ---------------------------------------------------------------------------

/// Query/key/value projections (K x K weights, 1 x K biases) and the output map.
template <class T>
struct AttentionWeights {
  T wq, bq, wk, bk, wv, bv, wo, bo;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("wq", self.wq);
    f("bq", self.bq);
    f("wk", self.wk);
    f("bk", self.bk);
    f("wv", self.wv);
    f("bv", self.bv);
    f("wo", self.wo);
    f("bo", self.bo);
  }
};

/// Two-layer score MLP on concat(q_i, k_j). The first layer's weight is
/// stored split into its query half (w1q) and key half (w1k); the output
/// layer has two units, the mean correction and the pre-softplus spread.
template <class T>
struct ScoreMlpWeights {
  T w1q, w1k, b1, w2, b2;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("w1q", self.w1q);
    f("w1k", self.w1k);
    f("b1", self.b1);
    f("w2", self.w2);
    f("b2", self.b2);
  }
};

using AttentionParams = AttentionWeights<Matrix>;
using ScoreMlpParams = ScoreMlpWeights<Matrix>;

template <template <class> class W>
W<Var> record(Tape& tape, const W<Matrix>& w, bool trainable) {
  std::vector<Var> vars;
  W<Matrix>::visit(w, [&](const char*, const Matrix& m) {
    vars.push_back(trainable ? tape.parameter(m) : tape.constant(m));
  });
  W<Var> out;
  std::size_t i = 0;
  W<Var>::visit(out, [&](const char*, Var& slot) { slot = vars[i++]; });
  return out;
}

inline AttentionParams zero_attention_params(std::size_t k) {
  return {Matrix(k, k), Matrix(1, k), Matrix(k, k), Matrix(1, k),
          Matrix(k, k), Matrix(1, k), Matrix(k, k), Matrix(1, k)};
}

inline ScoreMlpParams zero_score_params(std::size_t head_dim, std::size_t hidden) {
  return {Matrix(head_dim, hidden), Matrix(head_dim, hidden), Matrix(1, hidden), Matrix(hidden, 2),
          Matrix(1, 2)};
}

// ---------------------------------------------------------------------------
// Value types
// ---------------------------------------------------------------------------

/// Per-head projections, each N x (K / H).
struct QKV {
  std::vector<Matrix> q, k, v;
};

/// Gaussian dependency scores alpha_ij ~ N(mu_ij, sigma_ij^2), per head N x N.
struct AttentionDistribution {
  std::vector<Matrix> mu, sigma;
};

/// alpha = mu + sigma * epsilon with the epsilon draws kept.
struct SampledScores {
  std::vector<Matrix> alpha, epsilon;
};

// ---------------------------------------------------------------------------
// Recorded (differentiable) forms
// ---------------------------------------------------------------------------

struct HeadVars {
  std::vector<Var> q, k, v;
};

/// mu, sigma and the deterministic scaled dot-product score (the KL prior
/// mean) for every head.
struct DistributionVars {
  std::vector<Var> mu, sigma, prior;
};

enum class ScoreMode { sampled, mean };

inline HeadVars project_qkv(Var tokens, const AttentionWeights<Var>& w, std::size_t heads) {
  const std::size_t k = tokens.cols();
  require(heads >= 1 && k % heads == 0, ErrorKind::shape,
          "embedding width " + std::to_string(k) + " not divisible by " + std::to_string(heads) +
              " heads");
  require(w.wq.rows() == k && w.wq.cols() == k, ErrorKind::shape, "projection weight shape");
  const Var q = ad::add_row(ad::matmul(tokens, w.wq), w.bq);
  const Var kk = ad::add_row(ad::matmul(tokens, w.wk), w.bk);
  const Var v = ad::add_row(ad::matmul(tokens, w.wv), w.bv);
  const std::size_t dk = k / heads;
  HeadVars out;
  for (std::size_t h = 0; h < heads; ++h) {
    out.q.push_back(ad::slice_cols(q, h * dk, dk));
    out.k.push_back(ad::slice_cols(kk, h * dk, dk));
    out.v.push_back(ad::slice_cols(v, h * dk, dk));
  }
  return out;
}

/// dot(q_i, k_j) / sqrt(d_k), per head.
inline Var scaled_dot_scores(Var q, Var k) {
  return ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
}

/// For every pair (i, j): the score MLP sees concat(q_i, k_j) and emits
/// (m, s); mu_ij = m + dot(q_i, k_j)/sqrt(d_k) and sigma_ij = softplus(s).
inline DistributionVars score_distribution(const std::vector<Var>& q, const std::vector<Var>& k,
                                           const ScoreMlpWeights<Var>& w) {
  require(q.size() == k.size() && !q.empty(), ErrorKind::shape, "score_distribution head count");
  DistributionVars out;
  for (std::size_t h = 0; h < q.size(); ++h) {
    const std::size_t n = q[h].rows(), dk = q[h].cols();
    require(k[h].rows() == n && k[h].cols() == dk, ErrorKind::shape, "query/key shape mismatch");
    require(w.w1q.rows() == dk && w.w1k.rows() == dk, ErrorKind::shape, "score MLP input width");
    const Var hidden = ad::pair_relu(ad::matmul(q[h], w.w1q), ad::matmul(k[h], w.w1k), w.b1);
    const Var head_out = ad::add_row(ad::matmul(hidden, w.w2), w.b2);
    const Var prior = scaled_dot_scores(q[h], k[h]);
    out.prior.push_back(prior);
    out.mu.push_back(ad::add(ad::column_square(head_out, 0, n), prior));
    out.sigma.push_back(ad::softplus(ad::column_square(head_out, 1, n)));
  }
  return out;
}

/// One standard-normal matrix per head; head h draws row-major from
/// rng.split(h), so every (head, i, j) gets its own draw.
inline std::vector<Matrix> draw_epsilon(const Rng& rng, std::size_t heads, std::size_t n) {
  std::vector<Matrix> eps;
  for (std::size_t h = 0; h < heads; ++h) {
    Rng hr = rng.split(h);
    Matrix e(n, n);
    for (auto& v : e.data) v = hr.normal();
    eps.push_back(std::move(e));
  }
  return eps;
}

/// Reparameterised draw alpha = mu + sigma * epsilon; epsilon is a constant
/// of the graph so d alpha / d mu = 1 and d alpha / d sigma = epsilon.
inline std::vector<Var> sample_scores(const DistributionVars& dist, const std::vector<Matrix>& eps) {
  require(eps.size() == dist.mu.size(), ErrorKind::shape, "epsilon head count");
  std::vector<Var> alpha;
  for (std::size_t h = 0; h < dist.mu.size(); ++h) {
    Tape& t = *dist.mu[h].tape;
    alpha.push_back(ad::add(dist.mu[h], ad::mul(dist.sigma[h], t.constant(eps[h]))));
  }
  return alpha;
}

/// Per head softmax_j(alpha_ij) V, heads concatenated, then the output map.
inline Var attention_output(const std::vector<Var>& alpha, const std::vector<Var>& v,
                            const AttentionWeights<Var>& w) {
  require(alpha.size() == v.size(), ErrorKind::shape, "attention head count");
  std::vector<Var> heads;
  for (std::size_t h = 0; h < alpha.size(); ++h) {
    require(alpha[h].cols() == v[h].rows(), ErrorKind::shape, "score/value shape mismatch");
    heads.push_back(ad::matmul(ad::softmax_rows(alpha[h]), v[h]));
  }
  return ad::add_row(ad::matmul(ad::concat_cols(heads), w.wo), w.bo);
}

struct PmsaOptions {
  ScoreMode mode = ScoreMode::sampled;
  bool zero_sigma = false;  // ablation hook: alpha = mu exactly
};

struct PmsaResult {
  Var out;
  DistributionVars dist;
  std::vector<Matrix> epsilon;  // empty unless sampled
};

/// Full probabilistic attention layer on N x K tokens.
inline PmsaResult pmsa_forward(Var tokens, const AttentionWeights<Var>& w,
                               const ScoreMlpWeights<Var>& score, std::size_t heads, const Rng& rng,
                               PmsaOptions opt = {}) {
  const HeadVars qkv = project_qkv(tokens, w, heads);
  PmsaResult r;
  r.dist = score_distribution(qkv.q, qkv.k, score);
  std::vector<Var> alpha;
  if (opt.mode == ScoreMode::sampled && !opt.zero_sigma) {
    r.epsilon = draw_epsilon(rng, heads, tokens.rows());
    alpha = sample_scores(r.dist, r.epsilon);
  } else {
    alpha = r.dist.mu;
  }
  r.out = attention_output(alpha, qkv.v, w);
  return r;
}

/// Deterministic softmax(Q K^T / sqrt(d_k)) V baseline with the same projections.
inline Var msa_forward(Var tokens, const AttentionWeights<Var>& w, std::size_t heads) {
  const HeadVars qkv = project_qkv(tokens, w, heads);
  std::vector<Var> scores;
  for (std::size_t h = 0; h < heads; ++h) scores.push_back(scaled_dot_scores(qkv.q[h], qkv.k[h]));
  return attention_output(scores, qkv.v, w);
}

// ---------------------------------------------------------------------------
// Value-level API. Each call records onto a scratch tape, so there is one
// implementation of every formula.
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<Var> constants(Tape& t, const std::vector<Matrix>& ms) {
  std::vector<Var> out;
  for (const auto& m : ms) out.push_back(t.constant(m));
  return out;
}
inline std::vector<Matrix> values(const std::vector<Var>& vs) {
  std::vector<Matrix> out;
  for (const auto& v : vs) out.push_back(v.value());
  return out;
}
}  // namespace detail

inline QKV project_qkv(const Matrix& tokens, const AttentionParams& w, std::size_t heads) {
  Tape t;
  const HeadVars hv = project_qkv(t.constant(tokens), record(t, w, false), heads);
  return {detail::values(hv.q), detail::values(hv.k), detail::values(hv.v)};
}

inline AttentionDistribution score_distribution(const QKV& qkv, const ScoreMlpParams& w) {
  Tape t;
  const auto d = score_distribution(detail::constants(t, qkv.q), detail::constants(t, qkv.k),
                                    record(t, w, false));
  return {detail::values(d.mu), detail::values(d.sigma)};
}

/// alpha = mu + sigma * epsilon with caller-supplied epsilon.
inline SampledScores sample_scores(const AttentionDistribution& dist, std::vector<Matrix> epsilon) {
  require(dist.mu.size() == dist.sigma.size() && dist.mu.size() == epsilon.size() &&
              !dist.mu.empty(),
          ErrorKind::shape, "distribution head count");
  Tape t;
  DistributionVars dv;
  for (std::size_t h = 0; h < dist.mu.size(); ++h) {
    require(dist.mu[h].same_shape(dist.sigma[h]) && dist.mu[h].same_shape(epsilon[h]),
            ErrorKind::shape, "mu/sigma/epsilon shape mismatch");
    for (double s : dist.sigma[h].data)
      require(s >= 0.0, ErrorKind::numeric, "negative attention sigma");
    dv.mu.push_back(t.constant(dist.mu[h]));
    dv.sigma.push_back(t.constant(dist.sigma[h]));
  }
  SampledScores out;
  out.alpha = detail::values(sample_scores(dv, epsilon));
  out.epsilon = std::move(epsilon);
  return out;
}

/// Fresh i.i.d. standard normal epsilon per (head, i, j).
inline SampledScores sample_scores(const AttentionDistribution& dist, const Rng& rng) {
  require(!dist.mu.empty(), ErrorKind::shape, "distribution has no heads");
  return sample_scores(dist, draw_epsilon(rng, dist.mu.size(), dist.mu.front().rows));
}

inline Matrix attention_output(const SampledScores& scores, const std::vector<Matrix>& v,
                               const AttentionParams& w) {
  Tape t;
  return attention_output(detail::constants(t, scores.alpha), detail::constants(t, v),
                          record(t, w, false))
      .value();
}

inline Matrix msa_baseline(const Matrix& tokens, const AttentionParams& w, std::size_t heads) {
  Tape t;
  return msa_forward(t.constant(tokens), record(t, w, false), heads).value();
}

}  // namespace pwseg
