#include "lira/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "lira/errors.hpp"
#include "lira/rng.hpp"

namespace lira {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Shortest round-trip form, for column names.
std::string short_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class Enum, class Parse>
Enum parse_config_enum(const json& j, const char* key, Parse parse) {
  if (!j.is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
  try {
    return parse(j.get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("'") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_number(const json& j, const char* key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(std::string("'") + key + "' must be true or false");
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
      throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
  } else {
    if (!j.is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  }
  return j.get<T>();
}

json train_to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
          {"epochs", t.epochs},               {"weight_decay", t.weight_decay},
          {"optimizer", to_string(t.optimizer)}, {"augmentation", to_string(t.augmentation)},
          {"hidden", t.hidden}};
}

TrainConfig train_from_json(const json& j, const char* where) {
  check_keys(j, where,
             {"learning_rate", "batch_size", "epochs", "weight_decay", "optimizer", "augmentation",
              "hidden"});
  TrainConfig t = ExperimentConfig::default_train();
  if (j.contains("learning_rate")) t.learning_rate = get_number<double>(j["learning_rate"], "learning_rate");
  if (j.contains("batch_size")) t.batch_size = get_number<std::size_t>(j["batch_size"], "batch_size");
  if (j.contains("epochs")) t.epochs = get_number<std::size_t>(j["epochs"], "epochs");
  if (j.contains("weight_decay")) t.weight_decay = get_number<double>(j["weight_decay"], "weight_decay");
  if (j.contains("optimizer"))
    t.optimizer = parse_config_enum<Optimizer>(j["optimizer"], "optimizer", parse_optimizer);
  if (j.contains("augmentation"))
    t.augmentation = parse_config_enum<Augmentation>(j["augmentation"], "augmentation", parse_augmentation);
  if (j.contains("hidden")) t.hidden = get_number<std::size_t>(j["hidden"], "hidden");
  return t;
}

json attack_to_json(const AttackSpec& a) {
  json j = {{"id", a.id}, {"variance_mode", to_string(a.variance_mode)}, {"alpha", a.alpha},
            {"merlin_sigma", a.merlin_sigma}, {"merlin_probes", a.merlin_probes}};
  if (!a.name.empty()) j["name"] = a.name;
  return j;
}

AttackSpec attack_from_json(const json& j) {
  AttackSpec a;
  if (j.is_string()) {
    a.id = j.get<std::string>();
    return a;
  }
  check_keys(j, "attack entry", {"id", "name", "variance_mode", "alpha", "merlin_sigma", "merlin_probes"});
  if (!j.contains("id") || !j["id"].is_string()) throw ConfigError("attack entry needs a string 'id'");
  a.id = j["id"].get<std::string>();
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ConfigError("attack 'name' must be a string");
    a.name = j["name"].get<std::string>();
  }
  if (j.contains("variance_mode"))
    a.variance_mode = parse_config_enum<VarianceMode>(j["variance_mode"], "variance_mode", parse_variance_mode);
  if (j.contains("alpha")) a.alpha = get_number<double>(j["alpha"], "alpha");
  if (j.contains("merlin_sigma")) a.merlin_sigma = get_number<double>(j["merlin_sigma"], "merlin_sigma");
  if (j.contains("merlin_probes")) a.merlin_probes = get_number<std::size_t>(j["merlin_probes"], "merlin_probes");
  return a;
}

bool uses_probabilities(const ExperimentConfig& cfg) {
  return std::any_of(cfg.attacks.begin(), cfg.attacks.end(),
                     [](const AttackSpec& a) { return a.id == "shokri"; });
}

MiniTask subset_task(const MiniTask& t, const std::vector<std::size_t>& idx) {
  MiniTask s;
  s.params = t.params;
  s.params.pool_size = idx.size();
  s.class_means = t.class_means;
  s.features = gather_columns(t.features, idx);
  for (std::size_t i : idx) {
    s.labels.push_back(t.labels[i]);
    s.source_class.push_back(t.source_class[i]);
    s.origin.push_back(t.origin[i]);
  }
  return s;
}

// Minimum IN and OUT counts over the store's examples.
std::pair<std::size_t, std::size_t> min_counts(const ScoreStore& s) {
  std::size_t min_in = s.n_models, min_out = s.n_models;
  for (std::size_t e = 0; e < s.n_examples; ++e) {
    std::size_t k = 0;
    for (std::size_t m = 0; m < s.n_models; ++m) k += s.is_in(m, e);
    min_in = std::min(min_in, k);
    min_out = std::min(min_out, s.n_models - k);
  }
  return {min_in, min_out};
}

std::string split_of(const ScoreStore& s) {
  const auto it = s.manifest.find("split_mode");
  return it == s.manifest.end() ? "unknown" : it->second;
}

void require_side(const AttackSpec& spec, const ScoreStore& store, bool in_side, std::size_t need) {
  const auto [min_in, min_out] = min_counts(store);
  const std::size_t have = in_side ? min_in : min_out;
  if (have >= need) return;
  const char* side = in_side ? "IN" : "OUT";
  throw ConfigError(spec.id + " needs at least " + std::to_string(need) + " " + side +
                    " shadow models for every target example, but the store (split=" + split_of(store) +
                    ") has an example with only " + std::to_string(have));
}

std::size_t needed(VarianceMode m) { return m == VarianceMode::kPerExample ? 2 : 1; }

void write_sidecar(const std::string& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << manifest_to_text(m);
}

Manifest read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::ostringstream s;
  s << in.rdbuf();
  return manifest_from_text(s.str());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("write to '" + path + "' failed");
}

void check_digest(const Manifest& m, const std::string& expected, const std::string& what) {
  const auto it = m.find("config_digest");
  if (it == m.end()) throw DataError(what + " carries no config digest");
  if (it->second != expected)
    throw DataError(what + " was built from config " + it->second + " but the current config is " +
                    expected);
}

std::string file_safe(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TrainConfig ExperimentConfig::default_train() {
  TrainConfig t;
  t.augmentation = Augmentation::kMirror;
  return t;
}

std::vector<AttackSpec> ExperimentConfig::default_attacks() {
  std::vector<AttackSpec> v;
  for (const char* id : {"loss", "midpoint", "out_mean", "lira_offline", "lira_online"}) {
    AttackSpec a;
    a.id = id;
    v.push_back(a);
  }
  return v;
}

void ExperimentConfig::validate() const {
  if (task.pool_size < 2) throw ConfigError("task.pool_size must be at least 2");
  if (task.n_classes < 2) throw ConfigError("task.n_classes must be at least 2");
  if (!(task.noise_sigma > 0.0) || !std::isfinite(task.noise_sigma))
    throw ConfigError("task.noise_sigma must be positive");
  if (n_models < 1) throw ConfigError("n_models must be at least 1");
  if (split == SplitMode::kBalancedOnline && n_models % 2 != 0)
    throw ConfigError("n_models must be even for split=balanced_online (got " + std::to_string(n_models) + ")");
  if (target_members < 1 || target_members >= task.pool_size)
    throw ConfigError("target_members must lie in [1, pool_size)");
  if (split == SplitMode::kDisjointPool && shadow_pool < 1)
    throw ConfigError("shadow_pool must be positive for split=disjoint_pool");
  for (const TrainConfig* t : {&target_train, &shadow_train}) {
    try {
      t->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(t == &target_train ? "target_train: " : "shadow_train: ") + e.what());
    }
  }
  if (fpr_levels.empty()) throw ConfigError("fpr_levels must not be empty");
  for (double l : fpr_levels)
    if (!(l > 0.0 && l <= 1.0)) throw ConfigError("fpr level " + short_double(l) + " is outside (0, 1]");
  if (attacks.empty()) throw ConfigError("attack list is empty");
  std::set<std::string> labels;
  for (const AttackSpec& a : attacks) {
    if (std::find(kKnownAttacks.begin(), kKnownAttacks.end(), a.id) == kKnownAttacks.end())
      throw ConfigError("unknown attack '" + a.id + "'");
    if (!labels.insert(a.label()).second) throw ConfigError("duplicate attack name '" + a.label() + "'");
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw ConfigError(a.label() + ": alpha must lie in (0, 1)");
    if (!(a.merlin_sigma >= 0.0)) throw ConfigError(a.label() + ": merlin_sigma must be non-negative");
    if (a.merlin_probes < 1) throw ConfigError(a.label() + ": merlin_probes must be positive");
  }
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
}

json ExperimentConfig::to_json() const {
  json attacks_json = json::array();
  for (const AttackSpec& a : attacks) attacks_json.push_back(attack_to_json(a));
  return {{"seed", seed},
          {"task",
           {{"pool_size", task.pool_size},
            {"n_classes", task.n_classes},
            {"noise_sigma", task.noise_sigma},
            {"mirror_symmetric", task.mirror_symmetric}}},
          {"n_models", n_models},
          {"split", to_string(split)},
          {"target_members", target_members},
          {"shadow_pool", shadow_pool},
          {"target_train", train_to_json(target_train)},
          {"shadow_train", train_to_json(shadow_train)},
          {"transform", to_string(transform)},
          {"augmentation", to_string(augmentation)},
          {"attacks", attacks_json},
          {"fpr_levels", fpr_levels},
          {"output_dir", output_dir},
          {"jobs", jobs}};
}

std::string ExperimentConfig::digest() const {
  json j = to_json();
  for (const char* k : {"attacks", "fpr_levels", "output_dir", "jobs"}) j.erase(k);
  return hex64(mix64(hash_tag(j.dump())));
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "config",
             {"seed", "task", "n_models", "split", "target_members", "shadow_pool", "target_train",
              "shadow_train", "transform", "augmentation", "attacks", "fpr_levels", "output_dir", "jobs"});
  ExperimentConfig c;
  if (j.contains("seed")) c.seed = get_number<std::uint64_t>(j["seed"], "seed");
  if (j.contains("task")) {
    const json& t = j["task"];
    check_keys(t, "task", {"pool_size", "n_classes", "noise_sigma", "mirror_symmetric"});
    if (t.contains("pool_size")) c.task.pool_size = get_number<std::size_t>(t["pool_size"], "pool_size");
    if (t.contains("n_classes")) c.task.n_classes = get_number<std::size_t>(t["n_classes"], "n_classes");
    if (t.contains("noise_sigma")) c.task.noise_sigma = get_number<double>(t["noise_sigma"], "noise_sigma");
    if (t.contains("mirror_symmetric"))
      c.task.mirror_symmetric = get_number<bool>(t["mirror_symmetric"], "mirror_symmetric");
  }
  if (j.contains("n_models")) c.n_models = get_number<std::size_t>(j["n_models"], "n_models");
  if (j.contains("split")) c.split = parse_config_enum<SplitMode>(j["split"], "split", parse_split_mode);
  if (j.contains("target_members"))
    c.target_members = get_number<std::size_t>(j["target_members"], "target_members");
  if (j.contains("shadow_pool")) c.shadow_pool = get_number<std::size_t>(j["shadow_pool"], "shadow_pool");
  if (j.contains("target_train")) c.target_train = train_from_json(j["target_train"], "target_train");
  if (j.contains("shadow_train")) c.shadow_train = train_from_json(j["shadow_train"], "shadow_train");
  if (j.contains("transform"))
    c.transform = parse_config_enum<Transform>(j["transform"], "transform", parse_transform);
  if (j.contains("augmentation"))
    c.augmentation = parse_config_enum<Augmentation>(j["augmentation"], "augmentation", parse_augmentation);
  if (j.contains("attacks")) {
    if (!j["attacks"].is_array()) throw ConfigError("'attacks' must be a list");
    c.attacks.clear();
    for (const json& a : j["attacks"]) c.attacks.push_back(attack_from_json(a));
  }
  if (j.contains("fpr_levels")) {
    if (!j["fpr_levels"].is_array()) throw ConfigError("'fpr_levels' must be a list");
    c.fpr_levels.clear();
    for (const json& l : j["fpr_levels"]) c.fpr_levels.push_back(get_number<double>(l, "fpr_levels"));
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("'output_dir' must be a string");
    c.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("jobs")) c.jobs = get_number<std::size_t>(j["jobs"], "jobs");
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Shadow stage
// ---------------------------------------------------------------------------

ShadowArtifacts run_shadow_stage(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t pool = cfg.task.pool_size;

  // The shadow-only pool is always generated so that the evaluation pool is
  // the same examples whatever the split mode.
  TaskParams params = cfg.task;
  params.seed = derive_key(cfg.seed, "task");
  params.pool_size = pool + cfg.shadow_pool;
  MiniTask full = gen_task(params);
  if (cfg.split != SplitMode::kDisjointPool) {
    std::vector<std::size_t> first(pool);
    std::iota(first.begin(), first.end(), std::size_t{0});
    full = subset_task(full, first);
  }

  // Target model trains on a random subset of the first `pool` examples.
  std::vector<std::size_t> perm(pool);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Stream member_stream(cfg.seed, "target.members");
  std::shuffle(perm.begin(), perm.end(), member_stream);
  std::vector<std::size_t> members(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cfg.target_members));
  std::sort(members.begin(), members.end());
  std::vector<std::uint8_t> is_member(full.size(), 0);
  for (std::size_t i : members) is_member[i] = 1;

  // Evaluation pool: the whole first pool, except offline_out_only which
  // holds out a random half as targets and lets shadows train on the rest.
  std::vector<std::size_t> eval(pool);
  std::iota(eval.begin(), eval.end(), std::size_t{0});
  const std::uint64_t plan_seed = derive_key(cfg.seed, "plan");
  SplitPlan plan;
  switch (cfg.split) {
    case SplitMode::kBalancedOnline:
      plan = plan_balanced(cfg.n_models, full.size(), plan_seed);
      break;
    case SplitMode::kOfflineOutOnly: {
      std::vector<std::size_t> order(pool);
      std::iota(order.begin(), order.end(), std::size_t{0});
      Stream target_stream(cfg.seed, "offline.targets");
      std::shuffle(order.begin(), order.end(), target_stream);
      eval.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool / 2));
      std::sort(eval.begin(), eval.end());
      plan = plan_offline(cfg.n_models, full.size(), eval, plan_seed);
      break;
    }
    case SplitMode::kDisjointPool:
      plan = plan_disjoint(cfg.n_models, pool, cfg.shadow_pool, plan_seed);
      break;
  }

  const std::string digest = cfg.digest();
  ShadowArtifacts a;
  a.eval_examples = eval;
  a.task = subset_task(full, eval);

  TrainConfig target_cfg = cfg.target_train;
  target_cfg.seed = derive_key(cfg.seed, "target.train");
  {
    const Eigen::MatrixXd x = gather_columns(full.features, members);
    std::vector<int> y;
    for (std::size_t i : members) y.push_back(full.labels[i]);
    a.target_model = train(derive_key(cfg.seed, "target.init"), x, y, cfg.task.n_classes, target_cfg);
  }
  a.target.query.transform = cfg.transform;
  a.target.query.values = query(a.target_model, a.task.features, a.task.labels, cfg.augmentation, cfg.transform);
  for (std::size_t i : eval) a.target.labels.push_back(is_member[i]);
  a.target.manifest = {{"role", "target"},
                       {"config_digest", digest},
                       {"train_config", target_cfg.describe()},
                       {"query_augmentation", std::string(to_string(cfg.augmentation))},
                       {"n_members", std::to_string(std::count(a.target.labels.begin(), a.target.labels.end(), 1))}};

  TrainConfig shadow_cfg = cfg.shadow_train;
  shadow_cfg.seed = derive_key(cfg.seed, "shadow");
  SuiteOptions options;
  options.jobs = cfg.jobs;
  options.probability_vectors = uses_probabilities(cfg);
  ShadowSuite suite = run_shadow_suite(full, plan, shadow_cfg, cfg.transform, cfg.augmentation, options);
  const bool whole = eval.size() == full.size();
  a.store = whole ? std::move(suite.scores) : suite.scores.example_subset(eval);
  a.store.manifest["config_digest"] = digest;
  a.store.manifest["n_eval_examples"] = std::to_string(eval.size());
  if (options.probability_vectors) {
    a.probabilities = whole ? std::move(suite.probabilities) : suite.probabilities.example_subset(eval);
    a.probabilities.manifest["config_digest"] = digest;
    a.target_probabilities.transform = Transform::kConfidence;
    a.target_probabilities.values = query_probabilities(a.target_model, a.task.features);
  }
  return a;
}

void write_artifacts(const ShadowArtifacts& a, const ExperimentConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_store(a.store, (d / files::kStore).string());
  write_target(a.target, (d / files::kTarget).string());
  write_task(a.task, (d / files::kTask).string());
  write_model(a.target_model, (d / files::kModel).string());
  if (!a.probabilities.values.empty()) {
    write_store(a.probabilities, (d / files::kProbStore).string());
    TargetScores tp{a.target_probabilities, a.target.labels, a.target.manifest};
    tp.manifest["layout"] = "softmax_vector";
    write_target(tp, (d / files::kProbTarget).string());
  }
  json j = cfg.to_json();
  j.erase("output_dir");
  j.erase("jobs");
  write_text((d / "config.json").string(), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Attacks
// ---------------------------------------------------------------------------

AttackInputs attack_inputs(const ShadowArtifacts& a, const ExperimentConfig& cfg) {
  AttackInputs in;
  in.store = &a.store;
  in.target = &a.target.query;
  in.task = &a.task;
  in.model = &a.target_model;
  if (!a.probabilities.values.empty()) {
    in.probabilities = &a.probabilities;
    in.target_probabilities = &a.target_probabilities;
  }
  in.seed = cfg.seed;
  return in;
}

AttackScores run_attack(const AttackSpec& spec, const AttackInputs& in) {
  auto need_scores = [&] {
    if (in.target == nullptr) throw ConfigError(spec.id + " needs target scores");
    if (in.store == nullptr && spec.id != "loss") throw ConfigError(spec.id + " needs a shadow score store");
    if (in.store != nullptr) {
      if (in.store->transform != in.target->transform)
        throw ConfigError(spec.id + ": incompatible transform, store holds " +
                          std::string(to_string(in.store->transform)) + " but target holds " +
                          std::string(to_string(in.target->transform)));
      if (in.store->n_examples != in.target->values.rows() || in.store->n_aug != in.target->values.cols())
        throw ConfigError(spec.id + ": store and target shapes differ");
    }
  };
  auto need_task = [&] {
    if (in.task == nullptr) throw ConfigError(spec.id + " needs the task file for class labels");
    if (in.target != nullptr && in.task->size() != in.target->values.rows())
      throw ConfigError(spec.id + ": task pool and target scores differ in size");
  };
  auto fitted = [&](AttackScores s) {
    s.attack_id = spec.label();
    return s;
  };

  try {
    if (spec.id == "loss") {
      if (in.target == nullptr) throw ConfigError("loss needs target scores");
      return fitted(loss_attack(in.target->column(0)));
    }
    if (spec.id == "lira_online") {
      need_scores();
      const std::size_t k = needed(spec.variance_mode);
      require_side(spec, *in.store, true, k);
      require_side(spec, *in.store, false, k);
      return fitted(lira_online(*in.store, *in.target, spec.variance_mode));
    }
    if (spec.id == "lira_offline") {
      need_scores();
      require_side(spec, *in.store, false, needed(spec.variance_mode));
      return fitted(lira_offline(*in.store, *in.target, spec.variance_mode));
    }
    if (spec.id == "midpoint") {
      need_scores();
      require_side(spec, *in.store, true, 2);
      require_side(spec, *in.store, false, 2);
      return fitted(midpoint_attack(*in.store, *in.target));
    }
    if (spec.id == "out_mean") {
      need_scores();
      require_side(spec, *in.store, false, 2);
      return fitted(out_mean_attack(*in.store, *in.target));
    }
    if (spec.id == "out_quantile") {
      need_scores();
      require_side(spec, *in.store, false, 1);
      return fitted(out_quantile_attack(*in.store, *in.target, spec.alpha));
    }
    if (spec.id == "per_class") {
      need_scores();
      need_task();
      require_side(spec, *in.store, false, 1);
      return fitted(per_class_attack(*in.store, *in.target, in.task->labels));
    }
    if (spec.id == "shokri") {
      need_task();
      if (in.probabilities == nullptr || in.target_probabilities == nullptr)
        throw ConfigError("shokri needs softmax-vector stores (shadow_probs.store, target_probs.scores)");
      ShokriOptions o;
      o.seed = derive_key(in.seed, "attack.shokri");
      return fitted(shokri_attack(*in.probabilities, *in.target_probabilities, in.task->labels, o));
    }
    if (spec.id == "merlin") {
      if (in.model == nullptr)
        throw ConfigError("merlin needs query access to the target model (pass --model)");
      need_task();
      MerlinOptions o;
      o.noise_sigma = spec.merlin_sigma;
      o.n_probes = spec.merlin_probes;
      o.seed = derive_key(in.seed, "attack.merlin");
      return fitted(merlin_attack(*in.model, in.task->features, in.task->labels, o));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(spec.label() + ": " + e.what());
  }
  throw ConfigError("unknown attack '" + spec.id + "'");
}

void write_scores_csv(const AttackScores& scores, std::span<const std::uint8_t> labels,
                      const std::string& path) {
  if (labels.size() != scores.scores.size()) throw DataError("scores and labels differ in length");
  std::ostringstream s;
  s << "example_id,attack_id,score,true_label\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    s << i << ',' << scores.attack_id << ',' << format_double(scores.scores[i]) << ','
      << static_cast<int>(labels[i]) << '\n';
  write_text(path, s.str());
}

ScoreCsv read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "example_id,attack_id,score,true_label")
    throw DataError("'" + path + "' is not a scores CSV (bad header)");
  ScoreCsv csv;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, attack, score, label;
    if (!std::getline(row, id, ',') || !std::getline(row, attack, ',') || !std::getline(row, score, ',') ||
        !std::getline(row, label))
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row");
    ScoreRow r;
    try {
      r.example_id = std::stoull(id);
      r.score = std::stod(score);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": unreadable number");
    }
    if (label != "0" && label != "1") throw DataError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1");
    r.true_label = label == "1";
    if (csv.attack_id.empty()) csv.attack_id = attack;
    if (attack != csv.attack_id) throw DataError(path + ": mixes attack ids");
    csv.rows.push_back(r);
  }
  if (csv.rows.empty()) throw DataError("'" + path + "' holds no scores");
  return csv;
}

std::string metrics_table(const std::vector<MetricsRow>& rows, std::span<const double> levels) {
  std::ostringstream s;
  s << "attack,auc,balanced_accuracy";
  for (double l : levels) s << ",tpr_at_" << short_double(l);
  s << '\n';
  for (const MetricsRow& r : rows) {
    s << r.attack << ',' << format_double(r.report.auc) << ',' << format_double(r.report.balanced_accuracy);
    for (double l : levels) s << ',' << format_double(tpr_at_fpr(r.report, l).tpr);
    s << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

std::vector<std::string> cmd_shadow(const ExperimentConfig& cfg) {
  const ShadowArtifacts a = run_shadow_stage(cfg);
  write_artifacts(a, cfg, cfg.output_dir);
  const fs::path d(cfg.output_dir);
  std::vector<std::string> out = {(d / files::kStore).string(), (d / files::kTarget).string(),
                                  (d / files::kTask).string(), (d / files::kModel).string()};
  if (!a.probabilities.values.empty()) {
    out.push_back((d / files::kProbStore).string());
    out.push_back((d / files::kProbTarget).string());
  }
  return out;
}

AttackPaths default_attack_paths(const std::string& dir) {
  const fs::path d(dir);
  AttackPaths p;
  p.store = (d / files::kStore).string();
  p.target = (d / files::kTarget).string();
  auto optional = [&](const char* name) {
    const fs::path f = d / name;
    return fs::exists(f) ? f.string() : std::string();
  };
  p.task = optional(files::kTask);
  p.model = optional(files::kModel);
  p.prob_store = optional(files::kProbStore);
  p.prob_target = optional(files::kProbTarget);
  return p;
}

std::vector<std::string> cmd_attack(const ExperimentConfig& cfg, const AttackPaths& paths) {
  cfg.validate();
  const std::string digest = cfg.digest();
  const ScoreStore store = read_store(paths.store);
  const TargetScores target = read_target(paths.target);
  check_digest(store.manifest, digest, "store '" + paths.store + "'");
  check_digest(target.manifest, digest, "target '" + paths.target + "'");

  MiniTask task;
  Mlp model;
  ScoreStore probs;
  TargetScores target_probs;
  AttackInputs in;
  in.store = &store;
  in.target = &target.query;
  in.seed = cfg.seed;
  if (!paths.task.empty()) {
    task = read_task(paths.task);
    in.task = &task;
  }
  if (!paths.model.empty()) {
    model = read_model(paths.model);
    in.model = &model;
  }
  if (!paths.prob_store.empty() && !paths.prob_target.empty()) {
    probs = read_store(paths.prob_store);
    target_probs = read_target(paths.prob_target);
    check_digest(probs.manifest, digest, "store '" + paths.prob_store + "'");
    in.probabilities = &probs;
    in.target_probabilities = &target_probs.query;
  }

  // Check every attack before writing anything.
  std::vector<AttackScores> results;
  for (const AttackSpec& spec : cfg.attacks) results.push_back(run_attack(spec, in));

  fs::create_directories(cfg.output_dir);
  std::vector<std::string> written;
  for (const AttackScores& r : results) {
    const std::string path = (fs::path(cfg.output_dir) / ("scores_" + file_safe(r.attack_id) + ".csv")).string();
    write_scores_csv(r, target.labels, path);
    write_sidecar(path + ".manifest", {{"attack_id", r.attack_id}, {"config_digest", digest}});
    written.push_back(path);
  }
  return written;
}

std::vector<std::string> cmd_eval(const std::vector<std::string>& score_csvs,
                                  std::span<const double> fpr_levels, const std::string& out_dir) {
  if (score_csvs.empty()) throw ConfigError("no score files given");
  for (double l : fpr_levels)
    if (!(l > 0.0 && l <= 1.0)) throw ConfigError("fpr level " + short_double(l) + " is outside (0, 1]");

  std::vector<ScoreCsv> csvs;
  std::string digest;
  for (const std::string& p : score_csvs) {
    csvs.push_back(read_scores_csv(p));
    const Manifest m = read_sidecar(p + ".manifest");
    const auto it = m.find("config_digest");
    if (it == m.end()) continue;
    if (!digest.empty() && it->second != digest)
      throw DataError("'" + p + "' comes from config " + it->second + ", earlier files from " + digest);
    digest = it->second;
  }

  // Align every file on the first one's example ids.
  std::map<std::size_t, std::uint8_t> reference;
  for (const ScoreRow& r : csvs[0].rows)
    if (!reference.emplace(r.example_id, r.true_label).second)
      throw DataError("'" + score_csvs[0] + "' repeats example id " + std::to_string(r.example_id));
  std::vector<std::uint8_t> labels;
  for (const auto& [id, label] : reference) labels.push_back(label);

  std::vector<MetricsRow> rows;
  std::set<std::string> seen;
  for (std::size_t f = 0; f < csvs.size(); ++f) {
    std::map<std::size_t, const ScoreRow*> by_id;
    for (const ScoreRow& r : csvs[f].rows) {
      if (!reference.count(r.example_id))
        throw DataError("example id " + std::to_string(r.example_id) + " of '" + score_csvs[f] +
                        "' is missing from '" + score_csvs[0] + "'");
      if (!by_id.emplace(r.example_id, &r).second)
        throw DataError("'" + score_csvs[f] + "' repeats example id " + std::to_string(r.example_id));
    }
    std::vector<double> scores;
    for (const auto& [id, label] : reference) {
      const auto it = by_id.find(id);
      if (it == by_id.end())
        throw DataError("example id " + std::to_string(id) + " is missing from '" + score_csvs[f] + "'");
      if (it->second->true_label != label)
        throw DataError("example id " + std::to_string(id) + " has conflicting labels across files");
      scores.push_back(it->second->score);
    }
    if (!seen.insert(csvs[f].attack_id).second)
      throw DataError("attack '" + csvs[f].attack_id + "' appears twice");
    try {
      rows.push_back({csvs[f].attack_id, roc(scores, labels, fpr_levels)});
    } catch (const std::invalid_argument& e) {
      throw DataError("'" + score_csvs[f] + "': " + e.what());
    }
  }

  fs::create_directories(out_dir);
  std::vector<std::string> written;
  for (const MetricsRow& r : rows) {
    const std::string path = (fs::path(out_dir) / ("roc_" + file_safe(r.attack) + ".csv")).string();
    export_roc(r.report, path);
    written.push_back(path);
  }
  const std::string table = (fs::path(out_dir) / files::kMetrics).string();
  write_text(table, metrics_table(rows, fpr_levels));
  if (!digest.empty()) write_sidecar(table + ".manifest", {{"config_digest", digest}});
  written.push_back(table);
  return written;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kNModels: return "n_models";
    case SweepAxis::kNAug: return "n_aug";
    case SweepAxis::kVarianceMode: return "variance_mode";
    case SweepAxis::kMismatchWidth: return "mismatch_width";
    case SweepAxis::kMismatchOptimizer: return "mismatch_optimizer";
    case SweepAxis::kMismatchAugmentation: return "mismatch_augmentation";
    case SweepAxis::kDisjoint: return "disjoint";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  for (SweepAxis a : {SweepAxis::kNModels, SweepAxis::kNAug, SweepAxis::kVarianceMode,
                      SweepAxis::kMismatchWidth, SweepAxis::kMismatchOptimizer,
                      SweepAxis::kMismatchAugmentation, SweepAxis::kDisjoint})
    if (to_string(a) == name) return a;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "'");
}

namespace {

std::size_t parse_count(const std::string& v, std::string_view axis) {
  std::size_t n = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), n);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("sweep " + std::string(axis) + ": '" + v + "' is not a count");
  return n;
}

bool parse_flag(const std::string& v) {
  if (v == "true" || v == "1" || v == "disjoint") return true;
  if (v == "false" || v == "0" || v == "overlap") return false;
  throw ConfigError("sweep disjoint: '" + v + "' is not true/false");
}

bool needs_in_models(const std::string& id) { return id == "lira_online" || id == "midpoint"; }

void add_rows(std::vector<SweepRow>& out, const std::string& value, const ExperimentConfig& cfg,
              const AttackInputs& in, std::span<const std::uint8_t> labels, bool skip_in_attacks) {
  for (const AttackSpec& spec : cfg.attacks) {
    if (skip_in_attacks && needs_in_models(spec.id)) continue;
    const AttackScores s = run_attack(spec, in);
    out.push_back({value, s.attack_id, roc(s.scores, labels, cfg.fpr_levels)});
  }
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                const std::vector<std::string>& values) {
  cfg.validate();
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  const std::string_view axis_name = to_string(axis);

  // Validate values before any training.
  for (const std::string& v : values) {
    switch (axis) {
      case SweepAxis::kNModels: {
        const std::size_t n = parse_count(v, axis_name);
        if (n < 1 || n > cfg.n_models)
          throw ConfigError("sweep n_models: " + v + " is outside [1, " + std::to_string(cfg.n_models) + "]");
        if (cfg.split == SplitMode::kBalancedOnline && n % 2 != 0)
          throw ConfigError("sweep n_models: " + v + " is odd, balanced prefixes need even counts");
        break;
      }
      case SweepAxis::kNAug: {
        const std::size_t n = parse_count(v, axis_name);
        if (n < 1 || n > n_queries(cfg.augmentation))
          throw ConfigError("sweep n_aug: " + v + " exceeds the " + std::to_string(n_queries(cfg.augmentation)) +
                            " queries of augmentation=" + std::string(to_string(cfg.augmentation)));
        break;
      }
      case SweepAxis::kVarianceMode:
        parse_config_enum<VarianceMode>(json(v), "variance_mode", parse_variance_mode);
        break;
      case SweepAxis::kMismatchWidth:
        if (parse_count(v, axis_name) < 1) throw ConfigError("sweep mismatch_width: width must be positive");
        break;
      case SweepAxis::kMismatchOptimizer:
        parse_config_enum<Optimizer>(json(v), "optimizer", parse_optimizer);
        break;
      case SweepAxis::kMismatchAugmentation:
        parse_config_enum<Augmentation>(json(v), "augmentation", parse_augmentation);
        break;
      case SweepAxis::kDisjoint:
        parse_flag(v);
        break;
    }
  }

  const bool reuse = axis == SweepAxis::kNModels || axis == SweepAxis::kNAug || axis == SweepAxis::kVarianceMode;
  if (reuse) {
    const ShadowArtifacts a = run_shadow_stage(cfg);
    for (const std::string& v : values) {
      AttackInputs in = attack_inputs(a, cfg);
      ExperimentConfig local = cfg;
      ScoreStore store;
      QueryScores target;
      if (axis == SweepAxis::kNModels) {
        store = a.store.model_prefix(parse_count(v, axis_name));
        in.store = &store;
      } else if (axis == SweepAxis::kNAug) {
        std::vector<std::size_t> cols(parse_count(v, axis_name));
        std::iota(cols.begin(), cols.end(), std::size_t{0});
        store = a.store.aug_subset(cols);
        target.transform = a.target.query.transform;
        target.values = a.target.query.values.select_cols(cols);
        in.store = &store;
        in.target = &target;
      } else {
        const VarianceMode m = parse_variance_mode(v);
        for (AttackSpec& s : local.attacks) s.variance_mode = m;
      }
      add_rows(rows, v, local, in, a.target.labels, false);
    }
    return rows;
  }

  for (const std::string& v : values) {
    ExperimentConfig local = cfg;
    switch (axis) {
      case SweepAxis::kMismatchWidth: local.shadow_train.hidden = parse_count(v, axis_name); break;
      case SweepAxis::kMismatchOptimizer: local.shadow_train.optimizer = parse_optimizer(v); break;
      case SweepAxis::kMismatchAugmentation: local.shadow_train.augmentation = parse_augmentation(v); break;
      case SweepAxis::kDisjoint:
        local.split = parse_flag(v) ? SplitMode::kDisjointPool : SplitMode::kBalancedOnline;
        break;
      default: break;
    }
    const ShadowArtifacts a = run_shadow_stage(local);
    add_rows(rows, v, local, attack_inputs(a, local), a.target.labels,
             local.split != SplitMode::kBalancedOnline);
  }
  return rows;
}

std::vector<std::string> cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                   const std::vector<std::string>& values) {
  const std::vector<SweepRow> rows = run_sweep(cfg, axis, values);
  std::ostringstream s;
  s << "value,attack,auc,balanced_accuracy";
  for (double l : cfg.fpr_levels) s << ",tpr_at_" << short_double(l);
  s << '\n';
  for (const SweepRow& r : rows) {
    s << r.value << ',' << r.attack << ',' << format_double(r.report.auc) << ','
      << format_double(r.report.balanced_accuracy);
    for (const TprAtFpr& t : r.report.tpr_at) s << ',' << format_double(t.tpr);
    s << '\n';
  }
  fs::create_directories(cfg.output_dir);
  const std::string path = (fs::path(cfg.output_dir) / ("sweep_" + std::string(to_string(axis)) + ".csv")).string();
  write_text(path, s.str());
  write_sidecar(path + ".manifest", {{"axis", std::string(to_string(axis))}, {"config_digest", cfg.digest()}});
  return {path};
}

// ---------------------------------------------------------------------------
// OOD injection
// ---------------------------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double OodResult::median_of(std::uint8_t origin_tag) const {
  std::vector<double> v;
  for (std::size_t i = 0; i < origin.size(); ++i)
    if (origin[i] == origin_tag) v.push_back(privacy[i]);
  return median(std::move(v));
}

OodResult run_ood(const ExperimentConfig& cfg, const std::vector<Injection>& injections) {
  cfg.validate();
  if (cfg.split != SplitMode::kBalancedOnline)
    throw ConfigError("ood needs split=balanced_online: privacy scores use both IN and OUT fits");
  TaskParams params = cfg.task;
  params.seed = derive_key(cfg.seed, "task");
  MiniTask task = gen_task(params);
  for (std::size_t k = 0; k < injections.size(); ++k) {
    if (injections[k].count == 0) continue;
    try {
      task = inject_ood(task, injections[k].kind, injections[k].count, derive_key(cfg.seed, "ood", k));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  const SplitPlan plan = plan_balanced(cfg.n_models, task.size(), derive_key(cfg.seed, "plan"));
  TrainConfig shadow_cfg = cfg.shadow_train;
  shadow_cfg.seed = derive_key(cfg.seed, "shadow");
  SuiteOptions options;
  options.jobs = cfg.jobs;
  const ShadowSuite suite = run_shadow_suite(task, plan, shadow_cfg, cfg.transform, cfg.augmentation, options);
  return {task.origin, privacy_scores(suite.scores)};
}

std::vector<std::string> cmd_ood(const ExperimentConfig& cfg, OodKind kind, std::size_t count) {
  const OodResult r = run_ood(cfg, {{kind, count}});
  const std::string stem = "ood_" + std::string(to_string(kind));
  fs::create_directories(cfg.output_dir);
  const fs::path d(cfg.output_dir);

  std::ostringstream s;
  s << "example_id,is_injected,d\n";
  for (std::size_t i = 0; i < r.privacy.size(); ++i)
    s << i << ',' << (r.origin[i] != 0 ? 1 : 0) << ',' << format_double(r.privacy[i]) << '\n';
  const std::string scores_path = (d / (stem + ".csv")).string();
  write_text(scores_path, s.str());

  std::ostringstream sum;
  sum << "group,count,median_d\n";
  for (std::uint8_t tag : {std::uint8_t{0}, static_cast<std::uint8_t>(1 + static_cast<int>(kind))}) {
    const auto n = static_cast<std::size_t>(std::count(r.origin.begin(), r.origin.end(), tag));
    if (n == 0) continue;
    sum << (tag == 0 ? std::string("baseline") : std::string(to_string(kind))) << ',' << n << ','
        << format_double(r.median_of(tag)) << '\n';
  }
  const std::string summary_path = (d / (stem + "_summary.csv")).string();
  write_text(summary_path, sum.str());
  const Manifest m = {{"config_digest", cfg.digest()}, {"count", std::to_string(count)},
                      {"kind", std::string(to_string(kind))}};
  write_sidecar(scores_path + ".manifest", m);
  return {scores_path, summary_path};
}

}  // namespace lira
