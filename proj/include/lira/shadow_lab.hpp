#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "lira/matrix.hpp"
#include "lira/score_store.hpp"
#include "lira/split_planner.hpp"
#include "lira/transforms.hpp"

namespace lira {

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

inline constexpr std::size_t kGridSide = 8;
inline constexpr std::size_t kInputDim = kGridSide * kGridSide;

struct TaskParams {
  std::uint64_t seed = 0;
  std::size_t pool_size = 4000;
  std::size_t n_classes = 10;
  double noise_sigma = 1.0;
  // When set, every class mean is invariant under the mirror augmentation.
  bool mirror_symmetric = false;
};

enum class OodKind : std::uint8_t {
  kShifted = 0,
  kMislabeled = 1,
  kDisjointClassMislabeled = 2,
};

std::string_view to_string(OodKind k);
OodKind parse_ood_kind(std::string_view name);

// Gaussian-mixture classification pool. Examples are columns of `features`.
struct MiniTask {
  TaskParams params;
  Eigen::MatrixXd class_means;      // kInputDim x n_classes
  Eigen::MatrixXd features;         // kInputDim x size()
  std::vector<int> labels;
  std::vector<int> source_class;    // generating mean; -1 for unseen classes
  std::vector<std::uint8_t> origin; // 0 = base pool, 1 + OodKind for injected

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> examples_with_origin(std::uint8_t origin_tag) const;
};

MiniTask gen_task(const TaskParams& params);

// Appends `count` out-of-distribution examples (count <= 10% of the current
// pool). Shifted examples come from class means displaced by 2*noise_sigma per
// coordinate; mislabeled ones are in-distribution with a wrong label;
// disjoint-class ones come from fresh unseen means with random labels.
MiniTask inject_ood(const MiniTask& task, OodKind kind, std::size_t count, std::uint64_t seed);

// Reverses each length-8 row of the 8x8 grid, column by column.
Eigen::MatrixXd mirror(const Eigen::MatrixXd& x);

// `LIRADATA` export: magic, version, 3 zero bytes, u64 n_examples, dim,
// n_classes, features row-major [example][dim] as f64, labels as bytes, then
// a length-prefixed manifest. Class means are not exported.
void write_task(const MiniTask& task, const std::string& path);
MiniTask read_task(const std::string& path);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct MlpShape {
  std::size_t inputs = kInputDim;
  std::size_t hidden = 32;
  std::size_t outputs = 10;

  std::size_t n_params() const { return hidden * inputs + hidden + outputs * hidden + outputs; }
  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

// One-hidden-layer ReLU network with a softmax head. Parameters live in one
// flat vector: W1 (hidden x inputs, column-major), b1, W2 (outputs x hidden),
// b2. Inputs are standardized by a fixed (non-trainable) shift and scale
// that train() fits on the training set.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const MlpShape& shape, std::uint64_t init_seed);

  const MlpShape& shape() const { return shape_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  // Pre-softmax outputs, one column per input column.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x) const;
  // Per-example cross-entropy.
  std::vector<double> losses(const Eigen::MatrixXd& x, std::span<const int> labels) const;

  // Mean cross-entropy plus weight_decay/2 * |W|^2 (biases excluded). Writes
  // the gradient by backpropagation when `grad` is non-null.
  double objective(const Eigen::MatrixXd& x, std::span<const int> labels, double weight_decay,
                   Eigen::VectorXd* grad) const;

  const Eigen::VectorXd& input_shift() const { return input_shift_; }
  double input_scale() const { return input_scale_; }
  void set_input_normalization(Eigen::VectorXd shift, double scale);
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const;

  bool trained = false;

 private:
  MlpShape shape_;
  Eigen::VectorXd params_;
  Eigen::VectorXd input_shift_;
  double input_scale_ = 1.0;
};

void write_model(const Mlp& model, const std::string& path);
Mlp read_model(const std::string& path);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Optimizer : std::uint8_t { kSgd, kSgdMomentum, kAdam };
enum class Augmentation : std::uint8_t { kNone, kMirror };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);
std::string_view to_string(Augmentation a);
Augmentation parse_augmentation(std::string_view name);
inline std::size_t n_queries(Augmentation a) { return a == Augmentation::kMirror ? 2 : 1; }

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::size_t epochs = 80;
  double weight_decay = 1e-4;
  Optimizer optimizer = Optimizer::kSgdMomentum;
  Augmentation augmentation = Augmentation::kNone;
  std::uint64_t seed = 0;
  std::size_t hidden = 32;

  // Throws std::invalid_argument.
  void validate() const;
  // Canonical one-line description; digest() hashes it.
  std::string describe() const;
  std::string digest() const;
};

struct TrainStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

// Minibatch training on the columns of `x`. Throws NumericError naming the
// step if the batch loss becomes non-finite.
Mlp train(std::uint64_t model_init_seed, const Eigen::MatrixXd& x, std::span<const int> labels,
          std::size_t n_classes, const TrainConfig& cfg, TrainStats* stats = nullptr);

// Transformed statistic per example and augmentation query; column 0 is the
// plain query, column 1 the mirrored one.
Matrix query(const Mlp& model, const Eigen::MatrixXd& x, std::span<const int> labels,
             Augmentation augmentation, Transform transform);

// Full softmax vectors, one row per example.
Matrix query_probabilities(const Mlp& model, const Eigen::MatrixXd& x);

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, std::span<const std::size_t> cols);

struct SuiteOptions {
  std::size_t jobs = 1;
  // Also collect the full softmax vectors (needed by the Shokri baseline).
  bool probability_vectors = false;
};

struct ShadowSuite {
  ScoreStore scores;
  ScoreStore probabilities;  // empty unless requested
};

// Trains one model per plan row and queries it on the whole pool. Model i
// draws its streams from (cfg.seed, i), so results do not depend on `jobs`.
ShadowSuite run_shadow_suite(const MiniTask& task, const SplitPlan& plan, const TrainConfig& cfg,
                             Transform transform, Augmentation query_augmentation,
                             const SuiteOptions& options = {});

}  // namespace lira
