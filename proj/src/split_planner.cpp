#include "lira/split_planner.hpp"

#include <cstring>
#include <stdexcept>

#include "lira/binary_io.hpp"
#include "lira/errors.hpp"
#include "lira/rng.hpp"

namespace lira {

namespace {

constexpr char kPlanMagic[8] = {'L', 'I', 'R', 'A', 'P', 'L', 'A', 'N'};

SplitPlan empty_plan(std::size_t n_models, std::size_t n_examples, SplitMode mode,
                     std::uint64_t seed) {
  SplitPlan p;
  p.n_models = n_models;
  p.n_examples = n_examples;
  p.keep.assign(n_models * n_examples, 0);
  p.mode = mode;
  p.seed = seed;
  return p;
}

void coin_fill_column(SplitPlan& p, std::size_t example, std::uint64_t seed) {
  Stream s(seed, "plan.coin", example);
  for (std::size_t m = 0; m < p.n_models; ++m)
    p.keep[m * p.n_examples + example] = static_cast<std::uint8_t>(s() >> 63);
}

}  // namespace

std::string_view to_string(SplitMode m) {
  switch (m) {
    case SplitMode::kBalancedOnline: return "balanced_online";
    case SplitMode::kOfflineOutOnly: return "offline_out_only";
    case SplitMode::kDisjointPool: return "disjoint_pool";
  }
  return "unknown";
}

SplitMode parse_split_mode(std::string_view name) {
  if (name == "balanced_online") return SplitMode::kBalancedOnline;
  if (name == "offline_out_only") return SplitMode::kOfflineOutOnly;
  if (name == "disjoint_pool") return SplitMode::kDisjointPool;
  throw std::invalid_argument("unknown split mode '" + std::string(name) + "'");
}

std::size_t SplitPlan::column_sum(std::size_t example) const {
  std::size_t k = 0;
  for (std::size_t m = 0; m < n_models; ++m) k += in(m, example);
  return k;
}

std::vector<std::size_t> SplitPlan::training_set(std::size_t model) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < n_examples; ++e)
    if (in(model, e)) out.push_back(e);
  return out;
}

SplitPlan plan_balanced(std::size_t n_models, std::size_t n_examples, std::uint64_t seed) {
  if (n_models < 2 || n_models % 2 != 0)
    throw std::invalid_argument("balanced plan needs an even model count >= 2, got " +
                                std::to_string(n_models));
  SplitPlan p = empty_plan(n_models, n_examples, SplitMode::kBalancedOnline, seed);
  for (std::size_t e = 0; e < n_examples; ++e) {
    Stream s(seed, "plan.balanced", e);
    for (std::size_t pair = 0; pair < n_models / 2; ++pair) {
      const std::size_t first = s() >> 63;
      p.keep[(2 * pair + first) * n_examples + e] = 1;
    }
  }
  return p;
}

SplitPlan plan_offline(std::size_t n_models, std::size_t n_examples,
                       std::span<const std::size_t> targets, std::uint64_t seed) {
  SplitPlan p = empty_plan(n_models, n_examples, SplitMode::kOfflineOutOnly, seed);
  std::vector<std::uint8_t> is_target(n_examples, 0);
  for (std::size_t t : targets) {
    if (t >= n_examples) throw std::invalid_argument("target index outside the pool");
    is_target[t] = 1;
  }
  for (std::size_t e = 0; e < n_examples; ++e)
    if (!is_target[e]) coin_fill_column(p, e, seed);
  return p;
}

SplitPlan plan_disjoint(std::size_t n_models, std::size_t pool_a, std::size_t pool_b,
                        std::uint64_t seed) {
  if (pool_a == 0 || pool_b == 0) throw std::invalid_argument("disjoint plan needs two nonempty pools");
  SplitPlan p = empty_plan(n_models, pool_a + pool_b, SplitMode::kDisjointPool, seed);
  for (std::size_t e = pool_a; e < pool_a + pool_b; ++e) coin_fill_column(p, e, seed);
  return p;
}

void write_plan(const SplitPlan& plan, const std::string& path) {
  io::ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kPlanMagic), 8});
  w.u8(1);
  w.u8(static_cast<std::uint8_t>(plan.mode));
  w.u8(0);
  w.u8(0);
  w.u64(plan.n_models);
  w.u64(plan.n_examples);
  w.u64(plan.seed);
  w.bytes(io::pack_bits(plan.keep));
  io::write_file(path, w.buffer());
}

SplitPlan read_plan(const std::string& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPlanMagic, 8) != 0)
    throw DataError("not a split plan (bad magic)");
  io::ByteReader r(bytes);
  r.bytes(8);
  if (r.u8() != 1) throw DataError("unsupported plan version");
  const std::uint8_t mode = r.u8();
  if (mode > 2) throw DataError("unknown split mode id");
  r.bytes(2);
  SplitPlan p;
  p.mode = static_cast<SplitMode>(mode);
  p.n_models = r.u64();
  p.n_examples = r.u64();
  p.seed = r.u64();
  const std::size_t bits = p.n_models * p.n_examples;
  if (r.remaining() != (bits + 7) / 8) throw DataError("plan payload length mismatch");
  p.keep = io::unpack_bits(r.bytes((bits + 7) / 8), bits);
  return p;
}

}  // namespace lira
