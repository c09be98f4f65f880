#include "lira/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "lira/rng.hpp"

namespace lira {

namespace {

void require_gaussian_statistic(const ScoreStore& store) {
  if (store.transform != Transform::kLogit && store.transform != Transform::kHinge)
    throw std::invalid_argument("Gaussian fits need a logit or hinge store, got " +
                                std::string(to_string(store.transform)));
}

void require_compatible(const ScoreStore& store, const QueryScores& target, bool all_columns) {
  if (store.transform != target.transform)
    throw std::invalid_argument("transform mismatch: store holds " +
                                std::string(to_string(store.transform)) + ", target holds " +
                                std::string(to_string(target.transform)));
  if (target.values.rows() != store.n_examples)
    throw std::invalid_argument("target has " + std::to_string(target.values.rows()) +
                                " examples, store has " + std::to_string(store.n_examples));
  if (all_columns ? target.values.cols() != store.n_aug : target.values.cols() < 1)
    throw std::invalid_argument("target augmentation count does not match the store");
}

struct SideStats {
  std::vector<double> mean;
  double sum_sq = 0.0;  // squared residuals over all columns
  std::size_t k = 0;
};

SideStats side_stats(const ScoreStore& store, std::size_t example, bool in_side) {
  SideStats s;
  s.mean.assign(store.n_aug, 0.0);
  for (std::size_t m = 0; m < store.n_models; ++m) {
    if (store.is_in(m, example) != in_side) continue;
    ++s.k;
    for (std::size_t a = 0; a < store.n_aug; ++a) s.mean[a] += store.at(m, example, a);
  }
  if (s.k == 0) {
    s.mean.clear();
    return s;
  }
  for (double& v : s.mean) v /= static_cast<double>(s.k);
  for (std::size_t m = 0; m < store.n_models; ++m) {
    if (store.is_in(m, example) != in_side) continue;
    for (std::size_t a = 0; a < store.n_aug; ++a) {
      const double r = store.at(m, example, a) - s.mean[a];
      s.sum_sq += r * r;
    }
  }
  return s;
}

double floored(double v) { return std::max(v, kVarianceFloor); }

double per_example_variance(const SideStats& s, std::size_t n_aug) {
  return floored(s.sum_sq / static_cast<double>(n_aug * (s.k - 1)));
}

void check_counts(const GaussianFit& f, std::size_t example, VarianceMode mode, FitSides sides) {
  const std::size_t need = mode == VarianceMode::kPerExample ? 2 : 1;
  auto fail = [&](const char* side, std::size_t k) {
    throw std::invalid_argument("example " + std::to_string(example) + " has " + std::to_string(k) +
                                " " + side + " observations; " + std::string(to_string(mode)) +
                                " variance needs at least " + std::to_string(need));
  };
  if (sides == FitSides::kBoth && f.k_in < need) fail("IN", f.k_in);
  if (f.k_out < need) fail("OUT", f.k_out);
}

GaussianFit make_fit(const ScoreStore& store, std::size_t example, VarianceMode mode,
                     FitSides sides, const GlobalVariance* global) {
  const SideStats in = side_stats(store, example, true);
  const SideStats out = side_stats(store, example, false);
  GaussianFit f;
  f.mu_in = in.mean;
  f.mu_out = out.mean;
  f.k_in = in.k;
  f.k_out = out.k;
  check_counts(f, example, mode, sides);
  if (mode == VarianceMode::kGlobal) {
    f.var_in = global->var_in;
    f.var_out = global->var_out;
  } else {
    if (in.k >= 2) f.var_in = per_example_variance(in, store.n_aug);
    f.var_out = per_example_variance(out, store.n_aug);
  }
  return f;
}

double log_normal_density(double v, double mu, double var) {
  const double d = v - mu;
  return -0.5 * (d * d / var + std::log(2.0 * std::numbers::pi * var));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

std::string_view to_string(VarianceMode m) {
  return m == VarianceMode::kGlobal ? "global" : "per_example";
}

VarianceMode parse_variance_mode(std::string_view name) {
  if (name == "per_example") return VarianceMode::kPerExample;
  if (name == "global") return VarianceMode::kGlobal;
  throw std::invalid_argument("unknown variance mode '" + std::string(name) + "'");
}

GlobalVariance pooled_variance(const ScoreStore& store) {
  double ss_in = 0.0, ss_out = 0.0, dof_in = 0.0, dof_out = 0.0;
  for (std::size_t e = 0; e < store.n_examples; ++e) {
    const SideStats in = side_stats(store, e, true);
    const SideStats out = side_stats(store, e, false);
    if (in.k >= 2) {
      ss_in += in.sum_sq;
      dof_in += static_cast<double>((in.k - 1) * store.n_aug);
    }
    if (out.k >= 2) {
      ss_out += out.sum_sq;
      dof_out += static_cast<double>((out.k - 1) * store.n_aug);
    }
  }
  GlobalVariance g;
  if (dof_in > 0) g.var_in = floored(ss_in / dof_in);
  if (dof_out > 0) g.var_out = floored(ss_out / dof_out);
  return g;
}

GaussianFit fit_gaussians(const ScoreStore& store, std::size_t example, VarianceMode mode,
                          FitSides sides) {
  require_gaussian_statistic(store);
  if (example >= store.n_examples) throw std::out_of_range("example index out of range");
  GlobalVariance g;
  if (mode == VarianceMode::kGlobal) g = pooled_variance(store);
  return make_fit(store, example, mode, sides, &g);
}

std::vector<GaussianFit> fit_all(const ScoreStore& store, VarianceMode mode, FitSides sides) {
  require_gaussian_statistic(store);
  GlobalVariance g;
  if (mode == VarianceMode::kGlobal) g = pooled_variance(store);
  std::vector<GaussianFit> fits;
  fits.reserve(store.n_examples);
  for (std::size_t e = 0; e < store.n_examples; ++e) fits.push_back(make_fit(store, e, mode, sides, &g));
  return fits;
}

AttackScores lira_online(const ScoreStore& store, const QueryScores& target, VarianceMode mode) {
  require_compatible(store, target, true);
  const auto fits = fit_all(store, mode, FitSides::kBoth);
  AttackScores out{"lira_online", std::vector<double>(store.n_examples)};
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    const GaussianFit& f = fits[j];
    double s = 0.0;
    for (std::size_t a = 0; a < store.n_aug; ++a) {
      const double v = target.values(j, a);
      s += log_normal_density(v, f.mu_in[a], f.var_in) - log_normal_density(v, f.mu_out[a], f.var_out);
    }
    out.scores[j] = s;
  }
  return out;
}

AttackScores lira_offline(const ScoreStore& store, const QueryScores& target, VarianceMode mode) {
  require_compatible(store, target, true);
  const auto fits = fit_all(store, mode, FitSides::kOutOnly);
  AttackScores out{"lira_offline", std::vector<double>(store.n_examples)};
  const double scale = std::sqrt(static_cast<double>(store.n_aug));
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    const GaussianFit& f = fits[j];
    double z = 0.0;
    for (std::size_t a = 0; a < store.n_aug; ++a) z += target.values(j, a) - f.mu_out[a];
    out.scores[j] = normal_cdf(z / (std::sqrt(f.var_out) * scale));
  }
  return out;
}

AttackScores loss_attack(const QueryScores& target) {
  if (target.values.cols() != 1)
    throw std::invalid_argument("the LOSS attack is single-query; got " +
                                std::to_string(target.values.cols()) + " columns");
  AttackScores out{"loss", std::vector<double>(target.values.rows())};
  const double sign = target.transform == Transform::kLogLoss ? -1.0 : 1.0;
  for (std::size_t j = 0; j < target.values.rows(); ++j) out.scores[j] = sign * target.values(j, 0);
  return out;
}

namespace {

// Mean of the example's IN (in_side) or OUT observations in column 0.
double column0_mean(const ScoreStore& store, std::size_t example, bool in_side, const char* attack) {
  double s = 0.0;
  std::size_t k = 0;
  for (std::size_t m = 0; m < store.n_models; ++m)
    if (store.is_in(m, example) == in_side) {
      s += store.at(m, example, 0);
      ++k;
    }
  if (k == 0)
    throw std::invalid_argument(std::string(attack) + ": example " + std::to_string(example) +
                                " has no " + (in_side ? "IN" : "OUT") + " observations");
  return s / static_cast<double>(k);
}

}  // namespace

AttackScores midpoint_attack(const ScoreStore& store, const QueryScores& target) {
  require_compatible(store, target, false);
  AttackScores out{"midpoint", std::vector<double>(store.n_examples)};
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    const double mid = 0.5 * (column0_mean(store, j, true, "midpoint") +
                              column0_mean(store, j, false, "midpoint"));
    out.scores[j] = target.values(j, 0) - mid;
  }
  return out;
}

AttackScores out_mean_attack(const ScoreStore& store, const QueryScores& target) {
  require_compatible(store, target, false);
  AttackScores out{"out_mean", std::vector<double>(store.n_examples)};
  for (std::size_t j = 0; j < store.n_examples; ++j)
    out.scores[j] = target.values(j, 0) - column0_mean(store, j, false, "out_mean");
  return out;
}

double empirical_quantile(std::vector<double> values, double alpha) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = alpha * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

AttackScores out_quantile_attack(const ScoreStore& store, const QueryScores& target, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  require_compatible(store, target, false);
  AttackScores out{"out_quantile", std::vector<double>(store.n_examples)};
  std::vector<double> outs;
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    outs.clear();
    for (std::size_t m = 0; m < store.n_models; ++m)
      if (!store.is_in(m, j)) outs.push_back(store.at(m, j, 0));
    if (outs.empty())
      throw std::invalid_argument("out_quantile: example " + std::to_string(j) +
                                  " has no OUT observations");
    out.scores[j] = target.values(j, 0) - empirical_quantile(outs, alpha);
  }
  return out;
}

AttackScores per_class_attack(const ScoreStore& store, const QueryScores& target,
                              std::span<const int> labels) {
  require_compatible(store, target, false);
  if (labels.size() != store.n_examples)
    throw std::invalid_argument("per_class: one class label per example required");
  const int n_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<double> sum(static_cast<std::size_t>(n_classes), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    if (labels[j] < 0) throw std::invalid_argument("per_class: negative class label");
    for (std::size_t m = 0; m < store.n_models; ++m)
      if (!store.is_in(m, j)) {
        sum[labels[j]] += store.at(m, j, 0);
        ++count[labels[j]];
      }
  }
  AttackScores out{"per_class", std::vector<double>(store.n_examples)};
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    const auto y = static_cast<std::size_t>(labels[j]);
    if (count[y] == 0)
      throw std::invalid_argument("per_class: class " + std::to_string(y) +
                                  " has no OUT observations");
    out.scores[j] = target.values(j, 0) - sum[y] / static_cast<double>(count[y]);
  }
  return out;
}

namespace {

Eigen::VectorXd sorted_desc(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  return Eigen::Map<Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
}

}  // namespace

AttackScores shokri_attack(const ScoreStore& store, const QueryScores& target,
                           std::span<const int> labels, const ShokriOptions& options) {
  if (store.transform != Transform::kConfidence || target.transform != Transform::kConfidence)
    throw std::invalid_argument("shokri: needs softmax-vector stores (confidence transform)");
  if (target.values.rows() != store.n_examples || target.values.cols() != store.n_aug)
    throw std::invalid_argument("shokri: target softmax vectors do not match the store");
  if (labels.size() != store.n_examples)
    throw std::invalid_argument("shokri: one class label per example required");
  const std::size_t width = store.n_aug;
  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;

  std::vector<Mlp> attack_models(static_cast<std::size_t>(n_classes));
  std::vector<std::uint8_t> has_model(static_cast<std::size_t>(n_classes), 0);
  for (int y = 0; y < n_classes; ++y) {
    std::vector<std::size_t> examples;
    for (std::size_t j = 0; j < store.n_examples; ++j)
      if (labels[j] == y) examples.push_back(j);
    if (examples.empty()) continue;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (model, example)
    for (std::size_t m = 0; m < store.n_models; ++m)
      for (std::size_t j : examples) pairs.emplace_back(m, j);
    Stream pick(options.seed, "shokri.pairs", static_cast<std::uint64_t>(y));
    std::shuffle(pairs.begin(), pairs.end(), pick);
    if (pairs.size() > options.max_pairs_per_class) pairs.resize(options.max_pairs_per_class);
    if (pairs.size() < 32)
      throw std::invalid_argument("shokri: class " + std::to_string(y) + " has only " +
                                  std::to_string(pairs.size()) + " training pairs (need 32)");

    Eigen::MatrixXd x(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(pairs.size()));
    std::vector<int> member(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto [m, j] = pairs[i];
      const std::span<const double> p(&store.values[(m * store.n_examples + j) * width], width);
      x.col(static_cast<Eigen::Index>(i)) = sorted_desc(p);
      member[i] = store.is_in(m, j) ? 1 : 0;
    }
    if (options.shuffle_labels) {
      Stream s(options.seed, "shokri.shuffle", static_cast<std::uint64_t>(y));
      std::shuffle(member.begin(), member.end(), s);
    }
    TrainConfig cfg;
    cfg.learning_rate = options.learning_rate;
    cfg.batch_size = options.batch_size;
    cfg.epochs = options.epochs;
    cfg.weight_decay = 0.0;
    cfg.optimizer = Optimizer::kSgdMomentum;
    cfg.hidden = options.hidden;
    cfg.seed = derive_key(options.seed, "shokri.train", static_cast<std::uint64_t>(y));
    attack_models[y] = train(derive_key(options.seed, "shokri.init", static_cast<std::uint64_t>(y)),
                             x, member, 2, cfg);
    has_model[y] = 1;
  }

  AttackScores out{"shokri", std::vector<double>(store.n_examples)};
  for (std::size_t j = 0; j < store.n_examples; ++j) {
    const Eigen::MatrixXd v = sorted_desc(target.values.row(j));
    out.scores[j] = attack_models[labels[j]].probabilities(v)(1, 0);
  }
  return out;
}

AttackScores merlin_attack(const Mlp& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                           const MerlinOptions& options) {
  if (options.n_probes == 0) throw std::invalid_argument("merlin: n_probes must be positive");
  if (!(options.noise_sigma >= 0.0)) throw std::invalid_argument("merlin: noise_sigma must be >= 0");
  if (static_cast<std::size_t>(x.cols()) != labels.size())
    throw std::invalid_argument("merlin: features/labels misaligned");
  AttackScores out{"merlin", std::vector<double>(labels.size())};
  // Clean and noisy inputs go through the same single-column path so that a
  // zero perturbation reproduces the clean loss bit-for-bit.
  auto loss_of = [&](const Eigen::MatrixXd& col, int y) {
    const int label[] = {y};
    return model.losses(col, label)[0];
  };
  Eigen::MatrixXd probe(x.rows(), 1);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto jc = static_cast<Eigen::Index>(j);
    const double clean = loss_of(x.col(jc), labels[j]);
    Stream s(options.seed, "merlin.probe", j);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::size_t worse = 0;
    for (std::size_t p = 0; p < options.n_probes; ++p) {
      for (Eigen::Index d = 0; d < x.rows(); ++d) probe(d, 0) = x(d, jc) + options.noise_sigma * noise(s);
      if (loss_of(probe, labels[j]) > clean) ++worse;
    }
    out.scores[j] = static_cast<double>(worse) / static_cast<double>(options.n_probes);
  }
  return out;
}

}  // namespace lira
