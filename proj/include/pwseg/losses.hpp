#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "pwseg/autodiff.hpp"
#include "pwseg/config.hpp"
#include "pwseg/error.hpp"
#include "pwseg/pmsa.hpp"
#include "pwseg/pseudolabel.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

inline constexpr double kDiceSmoothing = 1e-5;
inline constexpr double kProbabilityClamp = 1e-7;

struct LossBreakdown {
  double dice = 0, pce = 0, seg = 0, kl = 0, total = 0;
  double kl_weight = 0;
};

// ---------------------------------------------------------------------------
// Scalar kernels
// ---------------------------------------------------------------------------

/// 1 - (2 sum p s + eps) / (sum p + sum s + eps)
inline double dice_loss(std::span<const double> p, std::span<const double> s) {
  require(p.size() == s.size(), ErrorKind::shape, "dice_loss: length mismatch");
  double inter = 0, sp = 0, ss = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * s[i];
    sp += p[i];
    ss += s[i];
  }
  return 1.0 - (2.0 * inter + kDiceSmoothing) / (sp + ss + kDiceSmoothing);
}

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

/// Confidence-weighted negative log-likelihood of one voxel:
/// -s log p when s >= T, otherwise -(1 - s) log(1 - p).
inline double pce_voxel(double p, double s, double T) {
  const double pc = clamp_probability(p);
  return s >= T ? -s * std::log(pc) : -(1.0 - s) * std::log(1.0 - pc);
}

/// d pce_voxel / d p; zero where the clamp is active.
inline double pce_voxel_grad(double p, double s, double T) {
  if (p <= kProbabilityClamp || p >= 1.0 - kProbabilityClamp) return 0.0;
  return s >= T ? -s / p : (1.0 - s) / (1.0 - p);
}

inline double pce_loss(std::span<const double> p, std::span<const double> s, double T) {
  require(p.size() == s.size() && !p.empty(), ErrorKind::shape, "pce_loss: length mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += pce_voxel(p[i], s[i], T);
  return acc / static_cast<double>(p.size());
}

/// KL( N(mu, sigma^2) || N(prior, prior_variance) ).
inline double kl_term(double mu, double sigma, double prior, double prior_variance) {
  require(sigma > 0.0, ErrorKind::numeric, "attention sigma must be > 0 for the KL term");
  const double d = mu - prior;
  return std::log(std::sqrt(prior_variance) / sigma) + (sigma * sigma + d * d) / (2.0 * prior_variance) -
         0.5;
}

// ---------------------------------------------------------------------------
// Volume-level API
// ---------------------------------------------------------------------------

inline std::vector<double> as_reals(const BinaryMask& m) {
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 1.0 : 0.0;
  return out;
}

inline double dice_loss(const VolumeGrid& p, const BinaryMask& target) {
  require_same_dims(p.dims(), target.dims(), "dice_loss");
  return dice_loss(p.data(), as_reals(target));
}

inline double pce_loss(const VolumeGrid& p, const VolumeGrid& confidence, double T) {
  require_same_dims(p.dims(), confidence.dims(), "pce_loss");
  return pce_loss(p.data(), confidence.data(), T);
}

inline double pce_loss(const VolumeGrid& p, const PseudoLabel& label, double T) {
  return pce_loss(p, label.confidence, T);
}

/// Prior means alpha'_ij = dot(q_i, k_j) / sqrt(d_k), per head.
inline std::vector<Matrix> make_kl_prior(const std::vector<Matrix>& q, const std::vector<Matrix>& k) {
  require(q.size() == k.size(), ErrorKind::shape, "make_kl_prior head count");
  std::vector<Matrix> out;
  for (std::size_t h = 0; h < q.size(); ++h) {
    require(q[h].cols == k[h].cols, ErrorKind::shape, "make_kl_prior head width");
    Matrix m(q[h].rows, k[h].rows);
    la::gemm_nt_acc(q[h], k[h], m);
    const double s = 1.0 / std::sqrt(static_cast<double>(q[h].cols));
    for (auto& v : m.data) v *= s;
    out.push_back(std::move(m));
  }
  return out;
}

inline std::vector<Matrix> make_kl_prior(const QKV& qkv) { return make_kl_prior(qkv.q, qkv.k); }

/// Sum over layers, heads and pairs of the closed-form Gaussian KL.
/// priors[l][h] holds the prior means for layer l, head h.
inline double kl_loss(const std::vector<AttentionDistribution>& dists,
                      const std::vector<std::vector<Matrix>>& priors, double prior_variance) {
  require(prior_variance > 0.0, ErrorKind::parameter, "KL prior variance must be > 0");
  require(dists.size() == priors.size(), ErrorKind::shape, "kl_loss layer count");
  double acc = 0;
  for (std::size_t l = 0; l < dists.size(); ++l) {
    const auto& d = dists[l];
    require(d.mu.size() == d.sigma.size() && d.mu.size() == priors[l].size(), ErrorKind::shape,
            "kl_loss head count");
    for (std::size_t h = 0; h < d.mu.size(); ++h) {
      require(d.mu[h].same_shape(d.sigma[h]) && d.mu[h].same_shape(priors[l][h]), ErrorKind::shape,
              "kl_loss pair shape");
      for (std::size_t i = 0; i < d.mu[h].size(); ++i)
        acc += kl_term(d.mu[h].data[i], d.sigma[h].data[i], priors[l][h].data[i], prior_variance);
    }
  }
  return acc;
}

inline LossBreakdown compose_losses(double dice, double pce, double kl, double w) {
  LossBreakdown b{dice, pce, dice + pce, kl, 0.0, w};
  b.total = b.seg + w * kl;
  require(std::isfinite(b.total), ErrorKind::numeric, "non-finite total loss");
  return b;
}

/// Dice against the thresholded map S_T, PCE against the soft map S, plus the
/// weighted KL regulariser.
inline LossBreakdown total_loss(const VolumeGrid& p, const PseudoLabel& label,
                                const std::vector<AttentionDistribution>& dists,
                                const std::vector<std::vector<Matrix>>& priors,
                                const PipelineConfig& config) {
  const double dice = dice_loss(p, threshold_label(label, config.threshold_T));
  const double pce = pce_loss(p, label, config.threshold_T);
  const double kl = kl_loss(dists, priors, config.kl_prior_variance);
  return compose_losses(dice, pce, kl, config.kl_weight_w);
}

// ---------------------------------------------------------------------------
// Recorded loss nodes
// ---------------------------------------------------------------------------

namespace ad {

/// Soft Dice of `p` (any shape) against a fixed 0/1 target of the same size.
inline Var dice_loss(Var p, std::shared_ptr<const std::vector<double>> target) {
  require(p.value().size() == target->size(), ErrorKind::shape, "dice_loss: length mismatch");
  const double value = pwseg::dice_loss(p.value().data, *target);
  return p.tape->push(Matrix(1, 1, value), {p}, [p, target](Tape& t, std::size_t self) {
    const auto& pv = p.value().data;
    const auto& s = *target;
    double inter = 0, sum = 0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      inter += pv[i] * s[i];
      sum += pv[i] + s[i];
    }
    const double den = sum + kDiceSmoothing;
    const double num = 2.0 * inter + kDiceSmoothing;
    const double g = t.grad(self).data[0];
    auto& gp = t.grad(p.id).data;
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * -(2.0 * s[i] * den - num) / (den * den);
  });
}

inline Var pce_loss(Var p, std::shared_ptr<const std::vector<double>> confidence, double T) {
  const double value = pwseg::pce_loss(p.value().data, *confidence, T);
  return p.tape->push(Matrix(1, 1, value), {p}, [p, confidence, T](Tape& t, std::size_t self) {
    const auto& pv = p.value().data;
    const auto& s = *confidence;
    const double g = t.grad(self).data[0] / static_cast<double>(pv.size());
    auto& gp = t.grad(p.id).data;
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * pce_voxel_grad(pv[i], s[i], T);
  });
}

/// KL summed over every head of every layer's recorded distribution.
inline Var kl_loss(const std::vector<DistributionVars>& layers, double prior_variance) {
  require(prior_variance > 0.0, ErrorKind::parameter, "KL prior variance must be > 0");
  require(!layers.empty(), ErrorKind::shape, "kl_loss needs at least one layer");
  std::vector<Var> inputs;
  double value = 0;
  for (const auto& d : layers)
    for (std::size_t h = 0; h < d.mu.size(); ++h) {
      const auto& mu = d.mu[h].value().data;
      const auto& sg = d.sigma[h].value().data;
      const auto& pr = d.prior[h].value().data;
      for (std::size_t i = 0; i < mu.size(); ++i) value += kl_term(mu[i], sg[i], pr[i], prior_variance);
      inputs.insert(inputs.end(), {d.mu[h], d.sigma[h], d.prior[h]});
    }
  Tape& tape = *inputs.front().tape;
  return tape.push(Matrix(1, 1, value), inputs, [inputs, prior_variance](Tape& t, std::size_t self) {
    const double g = t.grad(self).data[0];
    for (std::size_t k = 0; k < inputs.size(); k += 3) {
      const Var mu = inputs[k], sigma = inputs[k + 1], prior = inputs[k + 2];
      const auto& mv = mu.value().data;
      const auto& sv = sigma.value().data;
      const auto& pv = prior.value().data;
      if (t.requires_grad(mu.id) || t.requires_grad(prior.id)) {
        std::vector<double> d(mv.size());
        for (std::size_t i = 0; i < mv.size(); ++i) d[i] = g * (mv[i] - pv[i]) / prior_variance;
        if (t.requires_grad(mu.id)) {
          auto& gm = t.grad(mu.id).data;
          for (std::size_t i = 0; i < d.size(); ++i) gm[i] += d[i];
        }
        if (t.requires_grad(prior.id)) {
          auto& gpr = t.grad(prior.id).data;
          for (std::size_t i = 0; i < d.size(); ++i) gpr[i] -= d[i];
        }
      }
      if (t.requires_grad(sigma.id)) {
        auto& gs = t.grad(sigma.id).data;
        for (std::size_t i = 0; i < sv.size(); ++i) gs[i] += g * (-1.0 / sv[i] + sv[i] / prior_variance);
      }
    }
  });
}

}  // namespace ad

struct LossVars {
  Var dice, pce, kl, total;
  double kl_weight = 0;

  LossBreakdown breakdown() const {
    return compose_losses(dice.scalar(), pce.scalar(), kl.scalar(), kl_weight);
  }
};

/// Recorded total loss for probabilities `p` laid out like `label`.
inline LossVars total_loss(Var p, const PseudoLabel& label, const std::vector<DistributionVars>& layers,
                           const PipelineConfig& config) {
  auto target = std::make_shared<const std::vector<double>>(
      as_reals(threshold_label(label, config.threshold_T)));
  auto conf = std::make_shared<const std::vector<double>>(label.confidence.data());
  LossVars out;
  out.kl_weight = config.kl_weight_w;
  out.dice = ad::dice_loss(p, target);
  out.pce = ad::pce_loss(p, conf, config.threshold_T);
  Var seg = ad::add(out.dice, out.pce);
  if (layers.empty()) {
    out.kl = p.tape->constant(Matrix(1, 1, 0.0));
    out.total = seg;
  } else {
    out.kl = ad::kl_loss(layers, config.kl_prior_variance);
    out.total = ad::add(seg, ad::scale(out.kl, config.kl_weight_w));
  }
  return out;
}

}  // namespace pwseg
