#include "lira/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace lira {

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::kConfidence: return "confidence";
    case Transform::kLogLoss: return "log_loss";
    case Transform::kLogit: return "logit";
    case Transform::kHinge: return "hinge";
  }
  return "unknown";
}

Transform parse_transform(std::string_view name) {
  if (name == "confidence") return Transform::kConfidence;
  if (name == "log_loss") return Transform::kLogLoss;
  if (name == "logit") return Transform::kLogit;
  if (name == "hinge") return Transform::kHinge;
  throw std::invalid_argument("unknown transform '" + std::string(name) + "'");
}

bool is_valid_transform_id(std::uint8_t id) { return id <= 3; }

double logsumexp(std::span<const double> z) {
  if (z.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> out(z.size());
  if (z.empty()) return out;
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

namespace {

void check_prob_vector(std::span<const double> p, std::size_t label) {
  if (label >= p.size()) throw std::invalid_argument("label out of range");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("probability entry negative or NaN");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("probability vector does not sum to one");
}

}  // namespace

double cross_entropy(std::span<const double> probs, std::size_t label) {
  check_prob_vector(probs, label);
  return -std::log(probs[label] + kLogEpsilon);
}

double logit_stable(std::span<const double> probs, std::size_t label) {
  check_prob_vector(probs, label);
  // Off-class mass is summed directly; 1 - p_y cancels catastrophically.
  double rest = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (i != label) rest += probs[i];
  return std::log(probs[label] + kLogEpsilon) - std::log(rest + kLogEpsilon);
}

double hinge(std::span<const double> features, std::size_t label) {
  if (features.size() < 2) throw std::invalid_argument("hinge needs at least two classes");
  if (label >= features.size()) throw std::invalid_argument("label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < features.size(); ++i)
    if (i != label) best_other = std::max(best_other, features[i]);
  return features[label] - best_other;
}

double statistic_from_features(Transform t, std::span<const double> features,
                               std::size_t label) {
  if (t == Transform::kHinge) return hinge(features, label);
  const std::vector<double> p = softmax(features);
  switch (t) {
    case Transform::kConfidence: return p.at(label);
    case Transform::kLogLoss: return cross_entropy(p, label);
    case Transform::kLogit: return logit_stable(p, label);
    case Transform::kHinge: break;
  }
  throw std::invalid_argument("unknown transform");
}

}  // namespace lira
