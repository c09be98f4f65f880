#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lira {

enum class SplitMode : std::uint8_t {
  kBalancedOnline = 0,
  kOfflineOutOnly = 1,
  kDisjointPool = 2,
};

std::string_view to_string(SplitMode m);
SplitMode parse_split_mode(std::string_view name);

// Which examples each shadow model trains on.
struct SplitPlan {
  std::size_t n_models = 0;
  std::size_t n_examples = 0;
  std::vector<std::uint8_t> keep;  // [model][example]
  SplitMode mode = SplitMode::kBalancedOnline;
  std::uint64_t seed = 0;

  bool in(std::size_t model, std::size_t example) const {
    return keep[model * n_examples + example] != 0;
  }
  std::size_t column_sum(std::size_t example) const;
  std::vector<std::size_t> training_set(std::size_t model) const;

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

/*!
 * Every example lands in exactly n_models/2 training sets.
 *
 * Models are grouped in complementary pairs (2k, 2k+1): for each example a
 * fair coin keyed by (seed, example, pair) decides which model of the pair
 * trains on it. Column sums are therefore exactly n_models/2 and every even
 * model prefix is itself balanced, which lets one large suite be subsampled
 * into smaller balanced suites without retraining.
 */
SplitPlan plan_balanced(std::size_t n_models, std::size_t n_examples, std::uint64_t seed);

// No model trains on any of `targets`; other cells are independent fair coins.
SplitPlan plan_offline(std::size_t n_models, std::size_t n_examples,
                       std::span<const std::size_t> targets, std::uint64_t seed);

// Examples [0, pool_a) form the target pool and are never trained on; examples
// [pool_a, pool_a + pool_b) are coin-filled.
SplitPlan plan_disjoint(std::size_t n_models, std::size_t pool_a, std::size_t pool_b,
                        std::uint64_t seed);

// Standalone export: `LIRAPLAN`, version, mode, 2 reserved bytes, u64
// n_models, n_examples, seed, then the packed keep bits.
void write_plan(const SplitPlan& plan, const std::string& path);
SplitPlan read_plan(const std::string& path);

}  // namespace lira
