#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace lira {

// Which per-example statistic a score tensor holds. Values are the on-disk
// transform_id byte.
enum class Transform : std::uint8_t {
  kConfidence = 0,  // f(x)_y
  kLogLoss = 1,     // -log f(x)_y
  kLogit = 2,       // log f(x)_y - log sum_{y' != y} f(x)_y'
  kHinge = 3,       // z_y - max_{y' != y} z_y'
};

std::string_view to_string(Transform t);
// Throws std::invalid_argument on unknown names.
Transform parse_transform(std::string_view name);
bool is_valid_transform_id(std::uint8_t id);

// Added inside every logarithm so saturated confidences stay finite.
inline constexpr double kLogEpsilon = 1e-30;

double logsumexp(std::span<const double> z);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> z);

// The probability-vector statistics validate their input: entries
// non-negative, sum within 1e-6 of one, label in range. Violations throw
// std::invalid_argument.
double cross_entropy(std::span<const double> probs, std::size_t label);
double logit_stable(std::span<const double> probs, std::size_t label);

// Requires at least two classes.
double hinge(std::span<const double> features, std::size_t label);

// Statistic `t` for one example given its pre-softmax features.
double statistic_from_features(Transform t, std::span<const double> features,
                               std::size_t label);

}  // namespace lira
