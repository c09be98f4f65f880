#include "lira/shadow_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "lira/errors.hpp"
#include "lira/rng.hpp"
#include "test_util.hpp"

namespace lira {
namespace {

TaskParams small_params(std::uint64_t seed, std::size_t pool = 200, double sigma = 1.0) {
  TaskParams p;
  p.seed = seed;
  p.pool_size = pool;
  p.noise_sigma = sigma;
  return p;
}

TrainConfig quick_config(std::size_t epochs = 20) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = 5;
  return c;
}

std::vector<int> labels_of(const MiniTask& t, std::span<const std::size_t> idx) {
  std::vector<int> y;
  for (std::size_t i : idx) y.push_back(t.labels[i]);
  return y;
}

double accuracy(const Mlp& m, const Eigen::MatrixXd& x, std::span<const int> y) {
  const Eigen::MatrixXd z = m.logits(x);
  std::size_t ok = 0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    Eigen::Index arg;
    z.col(static_cast<Eigen::Index>(j)).maxCoeff(&arg);
    ok += arg == y[j];
  }
  return static_cast<double>(ok) / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Task generation
// ---------------------------------------------------------------------------

TEST(GenTask, ZeroNoiseGivesClassMeans) {
  const MiniTask t = gen_task(small_params(1, 100, 0.0));
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_EQ(t.features.col(static_cast<Eigen::Index>(i)), t.class_means.col(t.labels[i]));
}

TEST(GenTask, DeterministicFromSeed) {
  const MiniTask a = gen_task(small_params(3));
  const MiniTask b = gen_task(small_params(3));
  const MiniTask c = gen_task(small_params(4));
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.features, c.features);
}

TEST(GenTask, LabelsBalanced) {
  for (std::size_t pool : {20u, 97u, 4000u}) {
    const MiniTask t = gen_task(small_params(2, pool));
    std::vector<std::size_t> counts(10, 0);
    for (int y : t.labels) ++counts[y];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    EXPECT_LE(*hi - *lo, 1u);
  }
}

TEST(GenTask, DistinctClassMeans) {
  const MiniTask t = gen_task(small_params(8));
  for (Eigen::Index a = 0; a < t.class_means.cols(); ++a)
    for (Eigen::Index b = a + 1; b < t.class_means.cols(); ++b)
      EXPECT_GT((t.class_means.col(a) - t.class_means.col(b)).norm(), 0.0);
}

TEST(GenTask, NoiseHasRequestedScale) {
  const MiniTask t = gen_task(small_params(9, 2000, 2.5));
  double ss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    ss += (t.features.col(static_cast<Eigen::Index>(i)) - t.class_means.col(t.labels[i])).squaredNorm();
  const double n = static_cast<double>(t.size() * kInputDim);
  // Sample variance of n standard normals has sd sqrt(2/n); allow 6 of those.
  EXPECT_NEAR(ss / n / 6.25, 1.0, 6.0 * std::sqrt(2.0 / n));
}

TEST(GenTask, RejectsDegenerateSizes) {
  EXPECT_THROW(gen_task(small_params(1, 19)), std::invalid_argument);
  TaskParams p = small_params(1);
  p.n_classes = 1;
  EXPECT_THROW(gen_task(p), std::invalid_argument);
}

TEST(Mirror, IsAnInvolutionThatReversesRows) {
  Eigen::MatrixXd x(kInputDim, 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = static_cast<double>(i);
  const Eigen::MatrixXd m = mirror(x);
  EXPECT_EQ(m(0, 0), 7.0);
  EXPECT_EQ(m(7, 0), 0.0);
  EXPECT_EQ(m(8, 0), 15.0);
  EXPECT_EQ(mirror(m), x);
}

TEST(GenTask, SymmetricMeansAreMirrorInvariant) {
  TaskParams p = small_params(4);
  p.mirror_symmetric = true;
  const MiniTask t = gen_task(p);
  EXPECT_TRUE(mirror(t.class_means).isApprox(t.class_means, 0.0));
}

// ---------------------------------------------------------------------------
// OOD injection
// ---------------------------------------------------------------------------

TEST(InjectOod, ZeroCountIsNoOp) {
  const MiniTask t = gen_task(small_params(1));
  const MiniTask u = inject_ood(t, OodKind::kShifted, 0, 3);
  EXPECT_EQ(u.features, t.features);
  EXPECT_EQ(u.labels, t.labels);
}

TEST(InjectOod, CountLimitedToTenPercent) {
  const MiniTask t = gen_task(small_params(1, 200));
  EXPECT_NO_THROW(inject_ood(t, OodKind::kMislabeled, 20, 3));
  EXPECT_THROW(inject_ood(t, OodKind::kMislabeled, 21, 3), std::invalid_argument);
}

TEST(InjectOod, MislabeledHaveWrongLabels) {
  const MiniTask t = inject_ood(gen_task(small_params(2, 1000)), OodKind::kMislabeled, 100, 4);
  const auto injected = t.examples_with_origin(1 + static_cast<int>(OodKind::kMislabeled));
  ASSERT_EQ(injected.size(), 100u);
  for (std::size_t i : injected) {
    EXPECT_NE(t.labels[i], t.source_class[i]);
    EXPECT_GE(t.labels[i], 0);
    EXPECT_LT(t.labels[i], 10);
  }
}

TEST(InjectOod, DisjointClassesComeFromUnseenMeans) {
  const MiniTask t = inject_ood(gen_task(small_params(2, 1000)), OodKind::kDisjointClassMislabeled, 50, 4);
  for (std::size_t i : t.examples_with_origin(1 + static_cast<int>(OodKind::kDisjointClassMislabeled)))
    EXPECT_EQ(t.source_class[i], -1);
}

TEST(InjectOod, ShiftedExamplesLieOutsideClassClouds) {
  const MiniTask base = gen_task(small_params(6, 2000, 1.0));
  const MiniTask t = inject_ood(base, OodKind::kShifted, 200, 7);
  // Empirical 99th percentile of each pool example's distance to its own mean.
  std::vector<double> own;
  for (std::size_t i = 0; i < base.size(); ++i)
    own.push_back((base.features.col(static_cast<Eigen::Index>(i)) - base.class_means.col(base.labels[i])).norm());
  std::sort(own.begin(), own.end());
  const double q99 = own[static_cast<std::size_t>(0.99 * static_cast<double>(own.size() - 1))];
  for (std::size_t i : t.examples_with_origin(1 + static_cast<int>(OodKind::kShifted))) {
    double nearest = 1e300;
    for (Eigen::Index c = 0; c < base.class_means.cols(); ++c)
      nearest = std::min(nearest, (t.features.col(static_cast<Eigen::Index>(i)) - base.class_means.col(c)).norm());
    EXPECT_GT(nearest, q99);
  }
}

TEST(InjectOod, KindNames) {
  for (OodKind k : {OodKind::kShifted, OodKind::kMislabeled, OodKind::kDisjointClassMislabeled})
    EXPECT_EQ(parse_ood_kind(to_string(k)), k);
  EXPECT_THROW(parse_ood_kind("noisy"), std::invalid_argument);
}

TEST(TaskFile, RoundTrip) {
  testing::TempDir dir("task");
  const MiniTask t = inject_ood(gen_task(small_params(3, 100)), OodKind::kShifted, 10, 1);
  write_task(t, dir.file("t.bin"));
  const MiniTask back = read_task(dir.file("t.bin"));
  EXPECT_EQ(back.features, t.features);
  EXPECT_EQ(back.labels, t.labels);
  EXPECT_EQ(back.origin, t.origin);
  EXPECT_EQ(back.params.seed, t.params.seed);
}

// ---------------------------------------------------------------------------
// Model and training
// ---------------------------------------------------------------------------

double relative_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int instance = 0; instance < 20; ++instance) {
    const MlpShape shape{3 + rng() % 6, 2 + rng() % 6, 2 + rng() % 4};
    Mlp m(shape, rng());
    const std::size_t n = 1 + rng() % 8;
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(shape.inputs), static_cast<Eigen::Index>(n));
    m.set_input_normalization(Eigen::VectorXd::Random(static_cast<Eigen::Index>(shape.inputs)), 0.7);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng() % shape.outputs);
    const double wd = 1e-3;
    Eigen::VectorXd grad;
    m.objective(x, y, wd, &grad);
    Eigen::VectorXd numeric(grad.size());
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      const double keep = m.params()[k];
      m.params()[k] = keep + h;
      const double up = m.objective(x, y, wd, nullptr);
      m.params()[k] = keep - h;
      const double down = m.objective(x, y, wd, nullptr);
      m.params()[k] = keep;
      numeric[k] = (up - down) / (2 * h);
    }
    EXPECT_LE(relative_gap(grad, numeric), 1e-4) << "instance " << instance;
  }
}

TEST(Mlp, ProbabilitiesAndLossesAgree) {
  Mlp m(MlpShape{kInputDim, 8, 4}, 3);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(kInputDim, 5);
  const std::vector<int> y = {0, 1, 2, 3, 0};
  const Eigen::MatrixXd p = m.probabilities(x);
  const auto l = m.losses(x, y);
  for (int j = 0; j < 5; ++j) {
    EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-12);
    EXPECT_NEAR(l[j], -std::log(p(y[j], j)), 1e-10);
  }
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  const MiniTask t = gen_task(small_params(1));
  TrainConfig c = quick_config(3);
  c.learning_rate = 0.0;
  for (Optimizer o : {Optimizer::kSgd, Optimizer::kSgdMomentum, Optimizer::kAdam}) {
    c.optimizer = o;
    const Mlp trained = train(77, t.features, t.labels, 10, c);
    EXPECT_EQ(trained.params(), Mlp(trained.shape(), 77).params());
  }
}

TEST(Train, LossDecreases) {
  const MiniTask t = gen_task(small_params(2, 400, 2.0));
  TrainStats s;
  train(1, t.features, t.labels, 10, quick_config(10), &s);
  EXPECT_LE(s.final_loss, s.initial_loss);
  EXPECT_EQ(s.steps, 10u * ((400 + 31) / 32));
}

TEST(Train, OptimizersDifferButStayFinite) {
  const MiniTask t = gen_task(small_params(2, 200, 2.0));
  TrainConfig c = quick_config(5);
  c.optimizer = Optimizer::kSgd;
  const Mlp a = train(1, t.features, t.labels, 10, c);
  c.optimizer = Optimizer::kSgdMomentum;
  const Mlp b = train(1, t.features, t.labels, 10, c);
  EXPECT_TRUE(a.params().allFinite());
  EXPECT_TRUE(b.params().allFinite());
  EXPECT_NE(a.params(), b.params());
}

TEST(Train, Deterministic) {
  const MiniTask t = gen_task(small_params(2, 200, 2.0));
  TrainConfig c = quick_config(5);
  c.augmentation = Augmentation::kMirror;
  EXPECT_EQ(train(4, t.features, t.labels, 10, c).params(), train(4, t.features, t.labels, 10, c).params());
}

TEST(Train, DivergenceNamesTheStep) {
  const MiniTask t = gen_task(small_params(2, 200, 2.0));
  TrainConfig c = quick_config(5);
  c.learning_rate = 1e300;
  c.optimizer = Optimizer::kSgd;
  try {
    train(4, t.features, t.labels, 10, c);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, RejectsInvalidConfig) {
  const MiniTask t = gen_task(small_params(2));
  TrainConfig c = quick_config();
  c.epochs = 0;
  EXPECT_THROW(train(1, t.features, t.labels, 10, c), std::invalid_argument);
  c = quick_config();
  c.learning_rate = -1;
  EXPECT_THROW(train(1, t.features, t.labels, 10, c), std::invalid_argument);
}

// Perceptron on raw features with a bias; reaching zero mistakes certifies
// that the two classes are linearly separable.
bool perceptron_separates(const Eigen::MatrixXd& x, std::span<const int> y) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.rows());
  double b = 0.0;
  for (int pass = 0; pass < 10000; ++pass) {
    bool clean = true;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double s = y[static_cast<std::size_t>(j)] == 1 ? 1.0 : -1.0;
      if (s * (w.dot(x.col(j)) + b) <= 0.0) {
        w += s * x.col(j);
        b += s;
        clean = false;
      }
    }
    if (clean) return true;
  }
  return false;
}

TEST(Train, FitsLinearlySeparableSubset) {
  const MiniTask t = gen_task(small_params(14, 400, 1.0));
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t.labels[i] == 0 || t.labels[i] == 1) idx.push_back(i);
  const Eigen::MatrixXd x = gather_columns(t.features, idx);
  const std::vector<int> y = labels_of(t, idx);
  ASSERT_TRUE(perceptron_separates(x, y));
  TrainConfig c = quick_config(200);
  const Mlp m = train(3, x, y, 2, c);
  EXPECT_EQ(accuracy(m, x, y), 1.0);
}

// ---------------------------------------------------------------------------
// Queries and suites
// ---------------------------------------------------------------------------

TEST(Query, ShapesAndRanges) {
  const MiniTask t = gen_task(small_params(5, 100));
  const Mlp m = train(1, t.features, t.labels, 10, quick_config(3));
  EXPECT_EQ(query(m, t.features, t.labels, Augmentation::kNone, Transform::kLogit).cols(), 1u);
  const Matrix conf = query(m, t.features, t.labels, Augmentation::kMirror, Transform::kConfidence);
  EXPECT_EQ(conf.cols(), 2u);
  for (double v : conf.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Query, SymmetricInputsGiveEqualColumns) {
  TaskParams p = small_params(5, 100, 0.0);
  p.mirror_symmetric = true;
  const MiniTask t = gen_task(p);
  const Mlp m = train(1, t.features, t.labels, 10, quick_config(3));
  const Matrix q = query(m, t.features, t.labels, Augmentation::kMirror, Transform::kLogit);
  for (std::size_t j = 0; j < q.rows(); ++j) EXPECT_NEAR(q(j, 0), q(j, 1), 1e-9);
}

TEST(Query, ColumnZeroIsUnaugmented) {
  const MiniTask t = gen_task(small_params(5, 100));
  const Mlp m = train(1, t.features, t.labels, 10, quick_config(3));
  const Matrix plain = query(m, t.features, t.labels, Augmentation::kNone, Transform::kHinge);
  const Matrix both = query(m, t.features, t.labels, Augmentation::kMirror, Transform::kHinge);
  const Matrix flipped = query(m, mirror(t.features), t.labels, Augmentation::kNone, Transform::kHinge);
  for (std::size_t j = 0; j < plain.rows(); ++j) {
    EXPECT_EQ(both(j, 0), plain(j, 0));
    EXPECT_EQ(both(j, 1), flipped(j, 0));
  }
}

TEST(ModelFile, RoundTrip) {
  testing::TempDir dir("model");
  const MiniTask t = gen_task(small_params(5, 100));
  const Mlp m = train(1, t.features, t.labels, 10, quick_config(3));
  write_model(m, dir.file("m.bin"));
  const Mlp back = read_model(dir.file("m.bin"));
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.logits(t.features), m.logits(t.features));
}

TEST(ShadowSuite, ShapeDeterminismAndJobs) {
  const MiniTask t = gen_task(small_params(5, 100));
  const SplitPlan plan = plan_balanced(4, 100, 2);
  const TrainConfig c = quick_config(3);
  const ShadowSuite a = run_shadow_suite(t, plan, c, Transform::kLogit, Augmentation::kMirror);
  EXPECT_EQ(a.scores.n_models, 4u);
  EXPECT_EQ(a.scores.n_examples, 100u);
  EXPECT_EQ(a.scores.n_aug, 2u);
  EXPECT_EQ(a.scores.keep, plan.keep);
  EXPECT_TRUE(a.scores.balanced());
  EXPECT_EQ(a.scores.manifest.at("train_digest"), c.digest());
  SuiteOptions o;
  o.jobs = 3;
  const ShadowSuite b = run_shadow_suite(t, plan, c, Transform::kLogit, Augmentation::kMirror, o);
  EXPECT_EQ(encode_store(a.scores), encode_store(b.scores));
}

TEST(ShadowSuite, ProbabilityVectors) {
  const MiniTask t = gen_task(small_params(5, 100));
  SuiteOptions o;
  o.probability_vectors = true;
  const ShadowSuite s = run_shadow_suite(t, plan_balanced(2, 100, 1), quick_config(2), Transform::kLogit,
                                         Augmentation::kNone, o);
  EXPECT_EQ(s.probabilities.n_aug, 10u);
  for (std::size_t j = 0; j < 100; ++j) {
    double sum = 0;
    for (std::size_t c = 0; c < 10; ++c) sum += s.probabilities.at(1, j, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(ShadowSuite, FailureNamesTheModel) {
  const MiniTask t = gen_task(small_params(5, 100));
  TrainConfig c = quick_config(2);
  c.learning_rate = 1e300;
  c.optimizer = Optimizer::kSgd;
  try {
    run_shadow_suite(t, plan_balanced(2, 100, 1), c, Transform::kLogit, Augmentation::kNone);
    FAIL() << "expected failure";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("shadow model 0"), std::string::npos);
  }
}

TEST(ShadowSuite, PlanMustMatchPool) {
  const MiniTask t = gen_task(small_params(5, 100));
  EXPECT_THROW(run_shadow_suite(t, plan_balanced(2, 99, 1), quick_config(1), Transform::kLogit,
                                Augmentation::kNone),
               std::invalid_argument);
}

// One-sided Mann-Whitney z statistic of IN over OUT logits pooled over the
// suite.
TEST(ShadowSuite, InLogitsDominateOutLogits) {
  const MiniTask t = gen_task(small_params(21, 600, 3.0));
  const ShadowSuite s = run_shadow_suite(t, plan_balanced(16, 600, 3), quick_config(40), Transform::kLogit,
                                         Augmentation::kNone);
  std::vector<double> in, out;
  for (std::size_t m = 0; m < 16; ++m)
    for (std::size_t j = 0; j < 600; ++j) (s.scores.is_in(m, j) ? in : out).push_back(s.scores.at(m, j, 0));
  EXPECT_GT(std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(in.size()),
            std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size()));
  std::vector<double> all = in;
  all.insert(all.end(), out.begin(), out.end());
  const std::vector<double> r = testing::ranks(all);
  const double n1 = static_cast<double>(in.size()), n2 = static_cast<double>(out.size());
  const double rank_sum = std::accumulate(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(in.size()), 0.0) +
                          n1;  // ranks() is zero-based
  const double u = rank_sum - n1 * (n1 + 1) / 2;
  const double z = (u - n1 * n2 / 2) / std::sqrt(n1 * n2 * (n1 + n2 + 1) / 12);
  EXPECT_GT(z, 3.0);
}

TEST(ShadowSuite, MirrorTrainingHelpsMirroredQueries) {
  double with = 0.0, without = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const MiniTask t = gen_task(small_params(seed, 600, 3.0));
    std::vector<std::size_t> members(300);
    std::iota(members.begin(), members.end(), std::size_t{0});
    const Eigen::MatrixXd x = gather_columns(t.features, members);
    const std::vector<int> y = labels_of(t, members);
    TrainConfig c = quick_config(40);
    c.augmentation = Augmentation::kMirror;
    const Mlp aug = train(seed, x, y, 10, c);
    c.augmentation = Augmentation::kNone;
    const Mlp plain = train(seed, x, y, 10, c);
    const Matrix qa = query(aug, t.features, t.labels, Augmentation::kMirror, Transform::kLogit);
    const Matrix qp = query(plain, t.features, t.labels, Augmentation::kMirror, Transform::kLogit);
    for (std::size_t j = 0; j < t.size(); ++j) {
      with += qa(j, 1);
      without += qp(j, 1);
    }
  }
  EXPECT_GE(with, without);
}

TEST(TrainConfig, DigestTracksEveryField) {
  const TrainConfig base;
  TrainConfig c = base;
  c.hidden = 16;
  EXPECT_NE(c.digest(), base.digest());
  c = base;
  c.optimizer = Optimizer::kAdam;
  EXPECT_NE(c.digest(), base.digest());
  EXPECT_EQ(TrainConfig{}.digest(), base.digest());
}

}  // namespace
}  // namespace lira
