#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lira/matrix.hpp"
#include "lira/transforms.hpp"

namespace lira {

// Self-describing metadata carried next to every binary payload. Serialized
// as sorted `key=value` lines.
using Manifest = std::map<std::string, std::string>;

std::string manifest_to_text(const Manifest& m);
Manifest manifest_from_text(const std::string& text);

inline constexpr char kStoreMagic[8] = {'L', 'I', 'R', 'A', 'S', 'T', 'O', 'R'};
inline constexpr std::uint8_t kStoreVersion = 1;

// Manifest key marking a store whose keep mask came from a balanced plan.
inline constexpr const char* kBalancedKey = "balanced";

/*!
 * Shadow-model score tensor.
 *
 * values is [model][example][aug], model-major; keep is [model][example] with
 * 1 where the example was in that model's training set. A store is immutable
 * once built; attacks only read it.
 */
struct ScoreStore {
  std::size_t n_models = 0;
  std::size_t n_examples = 0;
  std::size_t n_aug = 0;
  Transform transform = Transform::kLogit;
  std::vector<double> values;
  std::vector<std::uint8_t> keep;
  Manifest manifest;

  static ScoreStore zeros(std::size_t n_models, std::size_t n_examples, std::size_t n_aug,
                          Transform transform);

  double& at(std::size_t model, std::size_t example, std::size_t aug) {
    return values[(model * n_examples + example) * n_aug + aug];
  }
  double at(std::size_t model, std::size_t example, std::size_t aug) const {
    return values[(model * n_examples + example) * n_aug + aug];
  }
  bool is_in(std::size_t model, std::size_t example) const {
    return keep[model * n_examples + example] != 0;
  }
  void set_in(std::size_t model, std::size_t example, bool in) {
    keep[model * n_examples + example] = in ? 1 : 0;
  }

  bool balanced() const;

  // Throws NumericError for a non-finite value and DataError for any other
  // broken invariant: tensor sizes, confidence range, or exact balance when
  // flagged balanced.
  void validate() const;

  // Store restricted to the first `count` models (manifest copied; the
  // balanced flag is kept only if the prefix is itself balanced).
  ScoreStore model_prefix(std::size_t count) const;
  // Store restricted to the given augmentation columns.
  ScoreStore aug_subset(const std::vector<std::size_t>& cols) const;
  // Store restricted to the given examples, in order.
  ScoreStore example_subset(const std::vector<std::size_t>& examples) const;

  friend bool operator==(const ScoreStore&, const ScoreStore&) = default;
};

// Target-model query results as seen by attacks: no membership labels.
struct QueryScores {
  Transform transform = Transform::kLogit;
  Matrix values;  // [example][aug]

  QueryScores column(std::size_t c) const;
};

// Target query results plus ground truth, for evaluation only.
struct TargetScores {
  QueryScores query;
  std::vector<std::uint8_t> labels;
  Manifest manifest;
};

// Container I/O. write_* validate before touching the file.
void write_store(const ScoreStore& store, const std::string& path);
ScoreStore read_store(const std::string& path);
std::vector<std::uint8_t> encode_store(const ScoreStore& store);
ScoreStore decode_store(const std::vector<std::uint8_t>& bytes);

// Targets reuse the container with n_models = 1 and keep = labels.
void write_target(const TargetScores& target, const std::string& path);
TargetScores read_target(const std::string& path);

// IN and OUT observations of one example, rows in ascending model order.
struct InOutSamples {
  Matrix in;   // [k_in][n_aug]
  Matrix out;  // [k_out][n_aug]
  std::vector<std::size_t> in_models;
  std::vector<std::size_t> out_models;
};

InOutSamples split_in_out(const ScoreStore& store, std::size_t example);

}  // namespace lira
