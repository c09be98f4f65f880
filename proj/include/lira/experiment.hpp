#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lira/attacks.hpp"
#include "lira/evaluation.hpp"
#include "lira/score_store.hpp"
#include "lira/shadow_lab.hpp"
#include "lira/split_planner.hpp"

namespace lira {

// One entry of the attack list. `name` labels the output (defaults to id).
struct AttackSpec {
  std::string id;
  std::string name;
  VarianceMode variance_mode = VarianceMode::kPerExample;
  double alpha = 0.99;
  double merlin_sigma = 0.01;
  std::size_t merlin_probes = 100;

  const std::string& label() const { return name.empty() ? id : name; }
};

inline const std::vector<std::string> kKnownAttacks = {
    "loss", "lira_online", "lira_offline", "midpoint", "out_mean",
    "out_quantile", "per_class", "shokri", "merlin"};

/*!
 * Everything that determines an experiment's outputs.
 *
 * Every seed in the pipeline is derived from `seed`. The task generates
 * task.pool_size + shadow_pool examples; the first task.pool_size form the
 * evaluation pool, from which the target draws its members. balanced_online
 * shadows train on the evaluation pool, disjoint_pool shadows only on the
 * extra examples, and offline_out_only evaluates a random half of the pool
 * while its shadows train on the other half.
 */
struct ExperimentConfig {
  std::uint64_t seed = 0;
  TaskParams task{0, 4000, 10, 3.0, false};
  std::size_t n_models = 64;
  SplitMode split = SplitMode::kBalancedOnline;
  std::size_t target_members = 2000;
  std::size_t shadow_pool = 4000;
  TrainConfig target_train = default_train();
  TrainConfig shadow_train = default_train();
  Transform transform = Transform::kLogit;
  Augmentation augmentation = Augmentation::kMirror;  // query augmentation
  std::vector<AttackSpec> attacks = default_attacks();
  std::vector<double> fpr_levels = {0.001, 0.01};
  std::string output_dir = "out";
  std::size_t jobs = 1;

  static TrainConfig default_train();
  static std::vector<AttackSpec> default_attacks();

  // Throws ConfigError.
  void validate() const;
  // Hash of every field that shapes the shadow artifacts (everything except
  // attacks, fpr_levels, output_dir and jobs). Recorded in each output and
  // checked when a later stage reads earlier files.
  std::string digest() const;
  nlohmann::json to_json() const;
  // Missing keys take defaults; unknown keys are a ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

// In-memory results of the shadow stage.
struct ShadowArtifacts {
  MiniTask task;                          // evaluation pool, in store column order
  std::vector<std::size_t> eval_examples; // their indices in the generated pool
  ScoreStore store;                       // columns = evaluation pool
  TargetScores target;
  Mlp target_model;
  ScoreStore probabilities;               // softmax vectors, only with shokri
  QueryScores target_probabilities;
};

ShadowArtifacts run_shadow_stage(const ExperimentConfig& cfg);

// File names inside an artifact directory.
namespace files {
inline constexpr const char* kStore = "shadow.store";
inline constexpr const char* kTarget = "target.scores";
inline constexpr const char* kTask = "task.data";
inline constexpr const char* kModel = "target.model";
inline constexpr const char* kPlan = "split.plan";
inline constexpr const char* kProbStore = "shadow_probs.store";
inline constexpr const char* kProbTarget = "target_probs.scores";
inline constexpr const char* kMetrics = "metrics.csv";
}  // namespace files

void write_artifacts(const ShadowArtifacts& a, const ExperimentConfig& cfg, const std::string& dir);

// Inputs an attack may draw on; optional members are null when absent.
struct AttackInputs {
  const ScoreStore* store = nullptr;
  const QueryScores* target = nullptr;
  const MiniTask* task = nullptr;  // class labels and features of the evaluation pool
  const Mlp* model = nullptr;
  const ScoreStore* probabilities = nullptr;
  const QueryScores* target_probabilities = nullptr;
  std::uint64_t seed = 0;
};

// Runs one attack; throws ConfigError when its inputs are missing or
// incompatible with the store.
AttackScores run_attack(const AttackSpec& spec, const AttackInputs& in);
AttackInputs attack_inputs(const ShadowArtifacts& a, const ExperimentConfig& cfg);

struct ScoreRow {
  std::size_t example_id = 0;
  double score = 0.0;
  std::uint8_t true_label = 0;
};

// `example_id,attack_id,score,true_label` with 17-digit scores.
void write_scores_csv(const AttackScores& scores, std::span<const std::uint8_t> labels,
                      const std::string& path);
struct ScoreCsv {
  std::string attack_id;
  std::vector<ScoreRow> rows;
};
ScoreCsv read_scores_csv(const std::string& path);

struct MetricsRow {
  std::string attack;
  RocReport report;
};

// attack,auc,balanced_accuracy,tpr_at_<level>... one row per attack.
std::string metrics_table(const std::vector<MetricsRow>& rows, std::span<const double> levels);

// ---------------------------------------------------------------------------
// Subcommands. Each returns the paths it wrote.
// ---------------------------------------------------------------------------

std::vector<std::string> cmd_shadow(const ExperimentConfig& cfg);

struct AttackPaths {
  std::string store;
  std::string target;
  std::string task;   // optional: class labels and features
  std::string model;  // optional: live target model (MERLIN)
  std::string prob_store;
  std::string prob_target;
};
AttackPaths default_attack_paths(const std::string& dir);
std::vector<std::string> cmd_attack(const ExperimentConfig& cfg, const AttackPaths& paths);

std::vector<std::string> cmd_eval(const std::vector<std::string>& score_csvs,
                                  std::span<const double> fpr_levels, const std::string& out_dir);

enum class SweepAxis : std::uint8_t {
  kNModels,
  kNAug,
  kVarianceMode,
  kMismatchWidth,
  kMismatchOptimizer,
  kMismatchAugmentation,
  kDisjoint,
};
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view name);

struct SweepRow {
  std::string value;
  std::string attack;
  RocReport report;
};
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                const std::vector<std::string>& values);
std::vector<std::string> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                   const std::vector<std::string>& values);

struct Injection {
  OodKind kind;
  std::size_t count;
};
struct OodResult {
  std::vector<std::uint8_t> origin;  // 0 = baseline pool, 1 + OodKind otherwise
  std::vector<double> privacy;       // per example
  double median_of(std::uint8_t origin_tag) const;
};
OodResult run_ood(const ExperimentConfig& cfg, const std::vector<Injection>& injections);
std::vector<std::string> cmd_ood(const ExperimentConfig& cfg, OodKind kind, std::size_t count);

double median(std::vector<double> v);

}  // namespace lira
