#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lira/attacks.hpp"
#include "lira/score_store.hpp"

namespace lira {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // predict member when score >= threshold

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct TprAtFpr {
  double level = 0.0;
  double tpr = 0.0;
  double achieved_fpr = 0.0;
  double threshold = 0.0;
  // Level below 1/n_neg: the curve cannot resolve it.
  bool resolution_limited = false;
};

struct RocReport {
  std::vector<RocPoint> points;
  double auc = 0.0;
  double balanced_accuracy = 0.0;
  std::vector<TprAtFpr> tpr_at;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

inline const std::vector<double> kDefaultFprLevels = {0.001, 0.01};

/*!
 * Empirical ROC curve.
 *
 * The threshold sweeps the distinct score values in descending order and a
 * group of tied scores always flips together. Points are: (0,0) at +inf, one
 * point per distinct score, and a closing (1,1) at -inf. AUC is the
 * trapezoid area under that step curve, which equals the Mann-Whitney
 * statistic with ties counted half. Throws std::invalid_argument unless
 * both classes are present and every score is finite.
 */
RocReport roc(std::span<const double> scores, std::span<const std::uint8_t> labels,
              std::span<const double> fpr_levels = kDefaultFprLevels);

// Best curve point with fpr <= level; no interpolation.
TprAtFpr tpr_at_fpr(const RocReport& report, double level);

// (TPR + TNR) / 2 when predicting member for score >= threshold.
double balanced_accuracy(std::span<const double> scores, std::span<const std::uint8_t> labels,
                         double threshold);

// |mu_in - mu_out| / (sigma_in + sigma_out) from per-example column-0 fits.
std::vector<double> privacy_scores(const ScoreStore& store);

// `fpr,tpr,threshold` CSV with 17 significant digits, plus `<path>.summary`.
void export_roc(const RocReport& report, const std::string& path);
std::vector<RocPoint> read_roc_csv(const std::string& path);

// Formats a double with 17 significant digits.
std::string format_double(double v);

}  // namespace lira
