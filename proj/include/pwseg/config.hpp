#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "pwseg/error.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

/// Every tunable of a pipeline run. Defaults are the full-scale values;
/// toy_preset() gives the desk-scale network used by the tests.
struct PipelineConfig {
  // Pseudo labels.
  std::optional<double> kernel_variance;  // nullopt: mean nearest-neighbour distance squared
  double threshold_T = 0.5;
  std::size_t point_count_n = 200;

  // Loss.
  double kl_prior_variance = 1.0;
  double kl_weight_w = 0.01;

  // Inference.
  std::size_t mc_samples_M = 6;
  double window_overlap = 0.5;

  // Network.
  std::size_t layers_L = 12;
  std::size_t embed_dim_K = 768;
  std::size_t patch_size_P = 16;
  std::size_t heads_H = 12;
  std::size_t score_hidden = 0;  // 0: K / H
  std::size_t mlp_hidden = 0;    // 0: 4 K

  // Optimizer (AdamW).
  double learning_rate = 1e-4;
  std::size_t iterations = 6000;
  std::size_t batch_size = 1;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t head_dim() const { return embed_dim_K / heads_H; }
  std::size_t resolved_score_hidden() const { return score_hidden ? score_hidden : head_dim(); }
  std::size_t resolved_mlp_hidden() const { return mlp_hidden ? mlp_hidden : 4 * embed_dim_K; }

  /// Throws ErrorKind::config naming the offending key.
  void validate() const {
    auto check = [](bool ok, const char* key, const std::string& why) {
      require(ok, ErrorKind::config, std::string(key) + ": " + why);
    };
    if (kernel_variance) check(*kernel_variance > 0.0, "kernel_variance", "must be > 0");
    check(threshold_T > 0.0 && threshold_T < 1.0, "threshold_T", "must lie in (0,1)");
    check(point_count_n >= 1, "point_count_n", "must be >= 1");
    check(kl_prior_variance > 0.0, "kl_prior_variance", "must be > 0");
    check(kl_weight_w >= 0.0, "kl_weight_w", "must be >= 0");
    check(mc_samples_M >= 1, "mc_samples_M", "must be >= 1");
    check(window_overlap >= 0.0 && window_overlap < 1.0, "window_overlap", "must lie in [0,1)");
    check(embed_dim_K >= 1, "embed_dim_K", "must be >= 1");
    check(patch_size_P >= 1, "patch_size_P", "must be >= 1");
    check(heads_H >= 1, "heads_H", "must be >= 1");
    check(embed_dim_K % heads_H == 0, "heads_H", "must divide embed_dim_K");
    check(learning_rate >= 0.0, "learning_rate", "must be >= 0");
    check(batch_size >= 1, "batch_size", "must be >= 1");
    check(weight_decay >= 0.0, "weight_decay", "must be >= 0");
    check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0,1)");
    check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0,1)");
    check(adam_eps > 0.0, "adam_eps", "must be > 0");
  }

  void require_patch_divides(const Dims& d) const {
    require(d.x % patch_size_P == 0 && d.y % patch_size_P == 0 && d.z % patch_size_P == 0,
            ErrorKind::shape,
            "patch_size_P " + std::to_string(patch_size_P) + " does not divide " + d.str());
  }
};

/// Desk-scale network: 32^3 volumes, P=8, K=64, H=4, L=2.
inline PipelineConfig toy_preset() {
  PipelineConfig c;
  c.point_count_n = 50;
  c.layers_L = 2;
  c.embed_dim_K = 64;
  c.patch_size_P = 8;
  c.heads_H = 4;
  c.learning_rate = 1e-3;
  c.iterations = 300;
  return c;
}

enum class Organ { spleen, liver, left_kidney, right_kidney };

/// Annotation budget per organ, proportional to organ volume.
constexpr std::size_t default_point_count(Organ organ) {
  switch (organ) {
    case Organ::spleen: return 200;
    case Organ::liver: return 400;
    case Organ::left_kidney:
    case Organ::right_kidney: return 50;
  }
  return 200;
}

}  // namespace pwseg
