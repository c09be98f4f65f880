#include "lira/shadow_lab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "lira/binary_io.hpp"
#include "lira/errors.hpp"
#include "lira/rng.hpp"

namespace lira {

namespace {

constexpr char kDataMagic[8] = {'L', 'I', 'R', 'A', 'D', 'A', 'T', 'A'};
constexpr char kModelMagic[8] = {'L', 'I', 'R', 'A', 'M', 'O', 'D', 'L'};

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = kDigits[v & 0xf];
  return s;
}

void fill_normal(Eigen::Ref<Eigen::VectorXd> v, Stream& s, double sd) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sd * n(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Task
// ---------------------------------------------------------------------------

std::string_view to_string(OodKind k) {
  switch (k) {
    case OodKind::kShifted: return "shifted";
    case OodKind::kMislabeled: return "mislabeled";
    case OodKind::kDisjointClassMislabeled: return "disjoint_class_mislabeled";
  }
  return "unknown";
}

OodKind parse_ood_kind(std::string_view name) {
  if (name == "shifted") return OodKind::kShifted;
  if (name == "mislabeled") return OodKind::kMislabeled;
  if (name == "disjoint_class_mislabeled") return OodKind::kDisjointClassMislabeled;
  throw std::invalid_argument("unknown OOD kind '" + std::string(name) + "'");
}

std::vector<std::size_t> MiniTask::examples_with_origin(std::uint8_t origin_tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < origin.size(); ++i)
    if (origin[i] == origin_tag) out.push_back(i);
  return out;
}

MiniTask gen_task(const TaskParams& params) {
  if (params.n_classes < 2) throw std::invalid_argument("task needs at least two classes");
  if (params.pool_size < 2 * params.n_classes)
    throw std::invalid_argument("pool_size must be at least 2 * n_classes");
  if (!(params.noise_sigma >= 0.0) || !std::isfinite(params.noise_sigma))
    throw std::invalid_argument("noise_sigma must be finite and non-negative");

  MiniTask t;
  t.params = params;
  t.class_means.resize(kInputDim, params.n_classes);
  Stream means(params.seed, "task.means");
  for (std::size_t c = 0; c < params.n_classes; ++c) fill_normal(t.class_means.col(c), means, 1.0);
  if (params.mirror_symmetric) t.class_means = 0.5 * (t.class_means + mirror(t.class_means));

  t.labels.resize(params.pool_size);
  for (std::size_t i = 0; i < params.pool_size; ++i)
    t.labels[i] = static_cast<int>(i % params.n_classes);
  Stream order(params.seed, "task.labels");
  std::shuffle(t.labels.begin(), t.labels.end(), order);

  t.features.resize(kInputDim, params.pool_size);
  for (std::size_t i = 0; i < params.pool_size; ++i) {
    Stream noise(params.seed, "task.noise", i);
    fill_normal(t.features.col(i), noise, params.noise_sigma);
    t.features.col(i) += t.class_means.col(t.labels[i]);
  }
  t.source_class = t.labels;
  t.origin.assign(params.pool_size, 0);
  return t;
}

MiniTask inject_ood(const MiniTask& task, OodKind kind, std::size_t count, std::uint64_t seed) {
  if (count * 10 > task.size())
    throw std::invalid_argument("at most 10% of the pool may be injected");
  MiniTask t = task;
  if (count == 0) return t;
  const std::size_t n = task.size();
  const auto n_classes = static_cast<int>(task.params.n_classes);
  const double sigma = task.params.noise_sigma;
  const std::uint64_t key = derive_key(seed, to_string(kind));

  Eigen::MatrixXd centers = task.class_means;
  if (kind == OodKind::kShifted) {
    Stream s(key, "shift");
    for (int c = 0; c < n_classes; ++c) {
      Eigen::VectorXd d(kInputDim);
      fill_normal(d, s, 2.0 * sigma);
      centers.col(c) += d;
    }
  } else if (kind == OodKind::kDisjointClassMislabeled) {
    Stream s(key, "unseen_means");
    for (int c = 0; c < n_classes; ++c) fill_normal(centers.col(c), s, 1.0);
  }

  t.features.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(n + count));
  for (std::size_t i = 0; i < count; ++i) {
    Stream s(key, "example", i);
    std::uniform_int_distribution<int> cls(0, n_classes - 1);
    const int source = cls(s);
    int label = source;
    if (kind == OodKind::kMislabeled) {
      std::uniform_int_distribution<int> other(0, n_classes - 2);
      label = other(s);
      if (label >= source) ++label;
    } else if (kind == OodKind::kDisjointClassMislabeled) {
      label = cls(s);
    }
    Eigen::VectorXd x(kInputDim);
    fill_normal(x, s, sigma);
    t.features.col(static_cast<Eigen::Index>(n + i)) = x + centers.col(source);
    t.labels.push_back(label);
    t.source_class.push_back(kind == OodKind::kDisjointClassMislabeled ? -1 : source);
    t.origin.push_back(static_cast<std::uint8_t>(1 + static_cast<int>(kind)));
  }
  return t;
}

Eigen::MatrixXd mirror(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  const auto side = static_cast<Eigen::Index>(kGridSide);
  for (Eigen::Index r = 0; r < side; ++r)
    for (Eigen::Index c = 0; c < side; ++c) out.row(r * side + c) = x.row(r * side + side - 1 - c);
  return out;
}

void write_task(const MiniTask& task, const std::string& path) {
  io::ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kDataMagic), 8});
  w.u8(1);
  w.u8(0);
  w.u8(0);
  w.u8(0);
  w.u64(task.size());
  w.u64(kInputDim);
  w.u64(task.params.n_classes);
  for (std::size_t i = 0; i < task.size(); ++i)
    for (std::size_t d = 0; d < kInputDim; ++d)
      w.f64(task.features(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)));
  for (int y : task.labels) w.u8(static_cast<std::uint8_t>(y));
  Manifest m;
  m["seed"] = std::to_string(task.params.seed);
  m["pool_size"] = std::to_string(task.params.pool_size);
  m["noise_sigma"] = std::to_string(task.params.noise_sigma);
  m["mirror_symmetric"] = task.params.mirror_symmetric ? "true" : "false";
  std::string origin;
  for (std::uint8_t o : task.origin) origin += static_cast<char>('0' + o);
  m["origin"] = origin;
  const std::string text = manifest_to_text(m);
  w.u64(text.size());
  w.text(text);
  io::write_file(path, w.buffer());
}

MiniTask read_task(const std::string& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kDataMagic, 8) != 0)
    throw DataError("not a task file (bad magic)");
  io::ByteReader r(bytes);
  r.bytes(8);
  if (r.u8() != 1) throw DataError("unsupported task file version");
  r.bytes(3);
  const std::size_t n = r.u64();
  const std::size_t dim = r.u64();
  const std::size_t n_classes = r.u64();
  if (dim != kInputDim) throw DataError("task feature dimension mismatch");
  if (n * dim * 8 + n + 8 > r.remaining()) throw DataError("task payload truncated");
  MiniTask t;
  t.features.resize(kInputDim, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d)
      t.features(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)) = r.f64();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t y = r.u8();
    if (y >= n_classes) throw DataError("task label out of range");
    t.labels.push_back(y);
  }
  const std::size_t len = r.u64();
  if (len != r.remaining()) throw DataError("task manifest length mismatch");
  auto text = r.bytes(len);
  Manifest m = manifest_from_text(std::string(text.begin(), text.end()));
  t.params.n_classes = n_classes;
  t.params.seed = std::stoull(m["seed"]);
  t.params.pool_size = std::stoull(m["pool_size"]);
  t.params.noise_sigma = std::stod(m["noise_sigma"]);
  t.params.mirror_symmetric = m["mirror_symmetric"] == "true";
  const std::string& origin = m["origin"];
  if (origin.size() != n) throw DataError("task origin tags do not match example count");
  for (char c : origin) t.origin.push_back(static_cast<std::uint8_t>(c - '0'));
  t.source_class.assign(n, -1);
  return t;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace {

struct ParamViews {
  Eigen::Map<const Eigen::MatrixXd> w1;
  Eigen::Map<const Eigen::VectorXd> b1;
  Eigen::Map<const Eigen::MatrixXd> w2;
  Eigen::Map<const Eigen::VectorXd> b2;
};

ParamViews views(const MlpShape& s, const Eigen::VectorXd& p) {
  const auto h = static_cast<Eigen::Index>(s.hidden);
  const auto in = static_cast<Eigen::Index>(s.inputs);
  const auto out = static_cast<Eigen::Index>(s.outputs);
  const double* d = p.data();
  return {Eigen::Map<const Eigen::MatrixXd>(d, h, in),
          Eigen::Map<const Eigen::VectorXd>(d + h * in, h),
          Eigen::Map<const Eigen::MatrixXd>(d + h * in + h, out, h),
          Eigen::Map<const Eigen::VectorXd>(d + h * in + h + out * h, out)};
}

// Column-wise softmax in place; returns per-column log-sum-exp.
Eigen::RowVectorXd softmax_columns(Eigen::MatrixXd& z) {
  Eigen::RowVectorXd lse(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double m = z.col(j).maxCoeff();
    z.col(j) = (z.col(j).array() - m).exp();
    const double s = z.col(j).sum();
    z.col(j) /= s;
    lse[j] = m + std::log(s);
  }
  return lse;
}

}  // namespace

Mlp::Mlp(const MlpShape& shape, std::uint64_t init_seed) : shape_(shape) {
  if (shape.inputs == 0 || shape.hidden == 0 || shape.outputs < 2)
    throw std::invalid_argument("degenerate MLP shape");
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.n_params()));
  input_shift_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.inputs));
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto in = static_cast<Eigen::Index>(shape.inputs);
  const auto out = static_cast<Eigen::Index>(shape.outputs);
  Stream s(init_seed, "mlp.init");
  fill_normal(params_.segment(0, h * in), s, std::sqrt(2.0 / static_cast<double>(in)));
  fill_normal(params_.segment(h * in + h, out * h), s, std::sqrt(1.0 / static_cast<double>(h)));
}

void Mlp::set_input_normalization(Eigen::VectorXd shift, double scale) {
  if (shift.size() != static_cast<Eigen::Index>(shape_.inputs) || !(scale > 0.0))
    throw std::invalid_argument("bad input normalization");
  input_shift_ = std::move(shift);
  input_scale_ = scale;
}

Eigen::MatrixXd Mlp::normalize(const Eigen::MatrixXd& x) const {
  return (x.colwise() - input_shift_) * input_scale_;
}

Eigen::MatrixXd Mlp::logits(const Eigen::MatrixXd& x) const {
  const auto v = views(shape_, params_);
  Eigen::MatrixXd hidden = ((v.w1 * normalize(x)).colwise() + v.b1).cwiseMax(0.0);
  return (v.w2 * hidden).colwise() + v.b2;
}

Eigen::MatrixXd Mlp::probabilities(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd z = logits(x);
  softmax_columns(z);
  return z;
}

std::vector<double> Mlp::losses(const Eigen::MatrixXd& x, std::span<const int> labels) const {
  Eigen::MatrixXd z = logits(x);
  std::vector<double> out(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const double m = z.col(col).maxCoeff();
    const double lse = m + std::log((z.col(col).array() - m).exp().sum());
    out[j] = lse - z(labels[j], col);
  }
  return out;
}

double Mlp::objective(const Eigen::MatrixXd& raw, std::span<const int> labels, double weight_decay,
                      Eigen::VectorXd* grad) const {
  const auto v = views(shape_, params_);
  const Eigen::MatrixXd x = normalize(raw);
  const Eigen::Index n = x.cols();
  const Eigen::MatrixXd pre = (v.w1 * x).colwise() + v.b1;
  const Eigen::MatrixXd hidden = pre.cwiseMax(0.0);
  Eigen::MatrixXd probs = (v.w2 * hidden).colwise() + v.b2;
  Eigen::VectorXd picked(n);
  for (Eigen::Index j = 0; j < n; ++j) picked[j] = probs(labels[j], j);
  const Eigen::RowVectorXd lse = softmax_columns(probs);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double data_loss = (lse.transpose() - picked).sum() * inv_n;
  const double reg = 0.5 * weight_decay * (v.w1.squaredNorm() + v.w2.squaredNorm());

  if (grad != nullptr) {
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    const auto in = static_cast<Eigen::Index>(shape_.inputs);
    const auto out = static_cast<Eigen::Index>(shape_.outputs);
    grad->resize(params_.size());
    Eigen::MatrixXd& dz = probs;
    for (Eigen::Index j = 0; j < n; ++j) dz(labels[j], j) -= 1.0;
    dz *= inv_n;
    double* g = grad->data();
    Eigen::Map<Eigen::MatrixXd> gw1(g, h, in);
    Eigen::Map<Eigen::VectorXd> gb1(g + h * in, h);
    Eigen::Map<Eigen::MatrixXd> gw2(g + h * in + h, out, h);
    Eigen::Map<Eigen::VectorXd> gb2(g + h * in + h + out * h, out);
    gw2.noalias() = dz * hidden.transpose();
    gw2 += weight_decay * v.w2;
    gb2 = dz.rowwise().sum();
    Eigen::MatrixXd dh = v.w2.transpose() * dz;
    dh = dh.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    gw1.noalias() = dh * x.transpose();
    gw1 += weight_decay * v.w1;
    gb1 = dh.rowwise().sum();
  }
  return data_loss + reg;
}

void write_model(const Mlp& model, const std::string& path) {
  io::ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kModelMagic), 8});
  w.u8(1);
  w.u8(model.trained ? 1 : 0);
  w.u8(0);
  w.u8(0);
  w.u64(model.shape().inputs);
  w.u64(model.shape().hidden);
  w.u64(model.shape().outputs);
  for (Eigen::Index i = 0; i < model.params().size(); ++i) w.f64(model.params()[i]);
  for (Eigen::Index i = 0; i < model.input_shift().size(); ++i) w.f64(model.input_shift()[i]);
  w.f64(model.input_scale());
  io::write_file(path, w.buffer());
}

Mlp read_model(const std::string& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kModelMagic, 8) != 0)
    throw DataError("not a model file (bad magic)");
  io::ByteReader r(bytes);
  r.bytes(8);
  if (r.u8() != 1) throw DataError("unsupported model file version");
  const bool trained = r.u8() != 0;
  r.bytes(2);
  MlpShape shape;
  shape.inputs = r.u64();
  shape.hidden = r.u64();
  shape.outputs = r.u64();
  if (r.remaining() != (shape.n_params() + shape.inputs + 1) * 8)
    throw DataError("model payload length mismatch");
  Mlp m(shape, 0);
  for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] = r.f64();
  Eigen::VectorXd shift(static_cast<Eigen::Index>(shape.inputs));
  for (Eigen::Index i = 0; i < shift.size(); ++i) shift[i] = r.f64();
  const double scale = r.f64();
  m.set_input_normalization(std::move(shift), scale);
  m.trained = trained;
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

std::string_view to_string(Optimizer o) {
  switch (o) {
    case Optimizer::kSgd: return "sgd";
    case Optimizer::kSgdMomentum: return "sgd_momentum";
    case Optimizer::kAdam: return "adam";
  }
  return "unknown";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return Optimizer::kSgd;
  if (name == "sgd_momentum") return Optimizer::kSgdMomentum;
  if (name == "adam") return Optimizer::kAdam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(Augmentation a) {
  return a == Augmentation::kMirror ? "mirror" : "none";
}

Augmentation parse_augmentation(std::string_view name) {
  if (name == "none") return Augmentation::kNone;
  if (name == "mirror") return Augmentation::kMirror;
  throw std::invalid_argument("unknown augmentation '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be finite and non-negative");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (hidden < 1) throw std::invalid_argument("hidden width must be at least 1");
}

std::string TrainConfig::describe() const {
  std::ostringstream s;
  s.precision(17);
  s << "lr=" << learning_rate << ";batch=" << batch_size << ";epochs=" << epochs
    << ";wd=" << weight_decay << ";opt=" << to_string(optimizer)
    << ";aug=" << to_string(augmentation) << ";seed=" << seed << ";hidden=" << hidden;
  return s.str();
}

std::string TrainConfig::digest() const { return hex64(mix64(hash_tag(describe()))); }

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& x, std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(cols[i]));
  return out;
}

Mlp train(std::uint64_t model_init_seed, const Eigen::MatrixXd& x, std::span<const int> labels,
          std::size_t n_classes, const TrainConfig& cfg, TrainStats* stats) {
  cfg.validate();
  const std::size_t n = labels.size();
  if (n == 0 || static_cast<std::size_t>(x.cols()) != n)
    throw std::invalid_argument("training data empty or features/labels misaligned");
  Mlp model(MlpShape{static_cast<std::size_t>(x.rows()), cfg.hidden, n_classes}, model_init_seed);
  {
    const Eigen::VectorXd shift = x.rowwise().mean();
    const double rms = std::sqrt((x.colwise() - shift).squaredNorm() / static_cast<double>(x.size()));
    model.set_input_normalization(shift, rms > 0.0 ? 1.0 / rms : 1.0);
  }

  const double initial = model.objective(x, labels, cfg.weight_decay, nullptr);
  Eigen::VectorXd grad;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(model.params().size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(model.params().size());
  constexpr double kMomentum = 0.9, kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;
  Eigen::MatrixXd batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Stream shuffle(cfg.seed, "train.shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    Stream flips(cfg.seed, "train.flip", epoch);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      batch = gather_columns(x, idx);
      batch_labels.resize(len);
      for (std::size_t i = 0; i < len; ++i) batch_labels[i] = labels[idx[i]];
      if (cfg.augmentation == Augmentation::kMirror) {
        for (std::size_t i = 0; i < len; ++i) {
          if (flips() >> 63) {
            const auto c = static_cast<Eigen::Index>(i);
            batch.col(c) = mirror(batch.col(c));
          }
        }
      }
      const double loss = model.objective(batch, batch_labels, cfg.weight_decay, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericError("training diverged: non-finite loss at step " + std::to_string(step) +
                           " (epoch " + std::to_string(epoch) + ")");
      ++step;
      Eigen::VectorXd& p = model.params();
      switch (cfg.optimizer) {
        case Optimizer::kSgd:
          p -= cfg.learning_rate * grad;
          break;
        case Optimizer::kSgdMomentum:
          m1 = kMomentum * m1 + grad;
          p -= cfg.learning_rate * m1;
          break;
        case Optimizer::kAdam: {
          m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
          m2 = kBeta2 * m2 + (1.0 - kBeta2) * grad.cwiseProduct(grad);
          const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
          const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
          p.array() -= cfg.learning_rate * (m1.array() / c1) /
                       ((m2.array() / c2).sqrt() + kAdamEps);
          break;
        }
      }
    }
  }
  model.trained = true;
  if (stats != nullptr) {
    stats->initial_loss = initial;
    stats->final_loss = model.objective(x, labels, cfg.weight_decay, nullptr);
    stats->steps = step;
  }
  return model;
}

Matrix query(const Mlp& model, const Eigen::MatrixXd& x, std::span<const int> labels,
             Augmentation augmentation, Transform transform) {
  if (static_cast<std::size_t>(x.cols()) != labels.size())
    throw std::invalid_argument("query features/labels misaligned");
  const std::size_t n_aug = n_queries(augmentation);
  Matrix out(labels.size(), n_aug);
  for (std::size_t a = 0; a < n_aug; ++a) {
    const Eigen::MatrixXd z = model.logits(a == 0 ? x : mirror(x));
    for (std::size_t j = 0; j < labels.size(); ++j) {
      const auto col = z.col(static_cast<Eigen::Index>(j));
      out(j, a) = statistic_from_features(transform, {col.data(), static_cast<std::size_t>(col.size())},
                                          static_cast<std::size_t>(labels[j]));
    }
  }
  return out;
}

Matrix query_probabilities(const Mlp& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd p = model.probabilities(x);
  Matrix out(static_cast<std::size_t>(p.cols()), static_cast<std::size_t>(p.rows()));
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    for (Eigen::Index c = 0; c < p.rows(); ++c)
      out(static_cast<std::size_t>(j), static_cast<std::size_t>(c)) = p(c, j);
  return out;
}

ShadowSuite run_shadow_suite(const MiniTask& task, const SplitPlan& plan, const TrainConfig& cfg,
                             Transform transform, Augmentation query_augmentation,
                             const SuiteOptions& options) {
  cfg.validate();
  if (plan.n_examples != task.size())
    throw std::invalid_argument("plan covers " + std::to_string(plan.n_examples) +
                                " examples but the task pool has " + std::to_string(task.size()));
  const std::size_t n_aug = n_queries(query_augmentation);
  const std::size_t n_classes = task.params.n_classes;
  ShadowSuite suite;
  suite.scores = ScoreStore::zeros(plan.n_models, task.size(), n_aug, transform);
  suite.scores.keep = plan.keep;
  if (options.probability_vectors)
    suite.probabilities = ScoreStore::zeros(plan.n_models, task.size(), n_classes,
                                            Transform::kConfidence);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t failed_model = plan.n_models;
  std::string failure;

  auto worker = [&] {
    for (std::size_t i = next++; i < plan.n_models; i = next++) {
      try {
        const std::vector<std::size_t> members = plan.training_set(i);
        if (members.empty()) throw std::invalid_argument("empty training set");
        const Eigen::MatrixXd x = gather_columns(task.features, members);
        std::vector<int> y(members.size());
        for (std::size_t k = 0; k < members.size(); ++k) y[k] = task.labels[members[k]];
        TrainConfig model_cfg = cfg;
        model_cfg.seed = derive_key(cfg.seed, "shadow.train", i);
        const Mlp model = train(derive_key(cfg.seed, "shadow.init", i), x, y, n_classes, model_cfg);
        const Matrix scores = query(model, task.features, task.labels, query_augmentation, transform);
        std::copy(scores.data().begin(), scores.data().end(),
                  suite.scores.values.begin() +
                      static_cast<std::ptrdiff_t>(i * task.size() * n_aug));
        if (options.probability_vectors) {
          const Matrix probs = query_probabilities(model, task.features);
          std::copy(probs.data().begin(), probs.data().end(),
                    suite.probabilities.values.begin() +
                        static_cast<std::ptrdiff_t>(i * task.size() * n_classes));
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (i < failed_model) {
          failed_model = i;
          failure = e.what();
        }
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, plan.n_models));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  if (failed_model < plan.n_models)
    throw NumericError("shadow model " + std::to_string(failed_model) + " failed: " + failure);

  Manifest m;
  m["kind"] = "shadow_suite";
  m["task_seed"] = std::to_string(task.params.seed);
  m["plan_seed"] = std::to_string(plan.seed);
  m["split_mode"] = std::string(to_string(plan.mode));
  m["train_config"] = cfg.describe();
  m["train_digest"] = cfg.digest();
  m["query_augmentation"] = std::string(to_string(query_augmentation));
  m[kBalancedKey] = plan.mode == SplitMode::kBalancedOnline ? "true" : "false";
  suite.scores.manifest = m;
  if (options.probability_vectors) {
    suite.probabilities.keep = plan.keep;
    suite.probabilities.manifest = m;
    suite.probabilities.manifest["layout"] = "softmax_vector";
  }
  return suite;
}

}  // namespace lira
