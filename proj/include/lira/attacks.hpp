#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "lira/score_store.hpp"
#include "lira/shadow_lab.hpp"

namespace lira {

// Variances never drop below this; a fully memorized example can produce
// identical confidences across every shadow model.
inline constexpr double kVarianceFloor = 1e-12;

enum class VarianceMode : std::uint8_t { kPerExample, kGlobal };

std::string_view to_string(VarianceMode m);
VarianceMode parse_variance_mode(std::string_view name);

// Spherical Gaussian fits of one example's IN and OUT observations.
struct GaussianFit {
  std::vector<double> mu_in;   // per augmentation; empty when k_in = 0
  std::vector<double> mu_out;  // per augmentation; empty when k_out = 0
  double var_in = kVarianceFloor;
  double var_out = kVarianceFloor;
  std::size_t k_in = 0;
  std::size_t k_out = 0;
};

// Which sides of the fit an operation needs; decides the sample-count check.
enum class FitSides : std::uint8_t { kBoth, kOutOnly };

// Pooled within-example variances (residuals about each example's own mean,
// unbiased, pooled over examples and augmentation columns).
struct GlobalVariance {
  double var_in = kVarianceFloor;
  double var_out = kVarianceFloor;
};
GlobalVariance pooled_variance(const ScoreStore& store);

// Fit for one example. Per-example mode needs k >= 2 on each required side,
// global mode k >= 1; otherwise throws std::invalid_argument. Requires a
// logit or hinge store.
GaussianFit fit_gaussians(const ScoreStore& store, std::size_t example, VarianceMode mode,
                          FitSides sides = FitSides::kBoth);

// All examples at once (global variance computed once).
std::vector<GaussianFit> fit_all(const ScoreStore& store, VarianceMode mode,
                                 FitSides sides = FitSides::kBoth);

struct AttackScores {
  std::string attack_id;
  std::vector<double> scores;  // higher = more likely member
};

// ---------------------------------------------------------------------------
// LiRA
// ---------------------------------------------------------------------------

// log N(v; mu_in, var_in I) - log N(v; mu_out, var_out I), summed over
// augmentation columns.
AttackScores lira_online(const ScoreStore& store, const QueryScores& target, VarianceMode mode);

// Phi( sum_a (v_a - mu_out_a) / (sigma_out * sqrt(n_aug)) ).
AttackScores lira_offline(const ScoreStore& store, const QueryScores& target, VarianceMode mode);

// ---------------------------------------------------------------------------
// Baselines. The calibrated ones read augmentation column 0 only.
// ---------------------------------------------------------------------------

// LOSS: -loss for log_loss targets, the statistic itself otherwise.
AttackScores loss_attack(const QueryScores& target);

// v - (mu_in + mu_out) / 2
AttackScores midpoint_attack(const ScoreStore& store, const QueryScores& target);

// v - mu_out
AttackScores out_mean_attack(const ScoreStore& store, const QueryScores& target);

// v - (alpha-quantile of the example's OUT values), linear interpolation
// between order statistics.
AttackScores out_quantile_attack(const ScoreStore& store, const QueryScores& target, double alpha);

// v - tau_y, tau_y the mean OUT value over all examples of class y.
AttackScores per_class_attack(const ScoreStore& store, const QueryScores& target,
                              std::span<const int> labels);

// Type-7 empirical quantile of `values` (sorted copy, linear interpolation).
double empirical_quantile(std::vector<double> values, double alpha);

struct ShokriOptions {
  std::size_t hidden = 64;
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::size_t max_pairs_per_class = 8192;
  std::uint64_t seed = 0;
  // Test hook: shuffle the membership labels before training.
  bool shuffle_labels = false;
};

// Per-class binary MLP on sorted softmax vectors. `store` holds softmax
// vectors (n_aug = n_classes), `target` the target model's vectors.
AttackScores shokri_attack(const ScoreStore& store, const QueryScores& target,
                           std::span<const int> labels, const ShokriOptions& options);

struct MerlinOptions {
  double noise_sigma = 0.01;
  std::size_t n_probes = 100;
  std::uint64_t seed = 0;
};

// Fraction of Gaussian-perturbed queries whose loss strictly exceeds the
// clean loss. Needs live access to the model.
AttackScores merlin_attack(const Mlp& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                           const MerlinOptions& options);

}  // namespace lira
