#include "lira/score_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "lira/binary_io.hpp"
#include "lira/errors.hpp"

namespace lira {

std::string manifest_to_text(const Manifest& m) {
  std::string out;
  for (const auto& [k, v] : m) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw std::invalid_argument("manifest entry '" + k + "' not representable");
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

Manifest manifest_from_text(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw DataError("malformed manifest line '" + line + "'");
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

ScoreStore ScoreStore::zeros(std::size_t n_models, std::size_t n_examples, std::size_t n_aug,
                             Transform transform) {
  ScoreStore s;
  s.n_models = n_models;
  s.n_examples = n_examples;
  s.n_aug = n_aug;
  s.transform = transform;
  s.values.assign(n_models * n_examples * n_aug, 0.0);
  s.keep.assign(n_models * n_examples, 0);
  return s;
}

bool ScoreStore::balanced() const {
  auto it = manifest.find(kBalancedKey);
  return it != manifest.end() && it->second == "true";
}

void ScoreStore::validate() const {
  if (values.size() != n_models * n_examples * n_aug)
    throw DataError("score tensor size does not match declared shape");
  if (keep.size() != n_models * n_examples)
    throw DataError("keep mask size does not match declared shape");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw NumericError("score tensor holds a non-finite value at flat index " + std::to_string(i));
    if (transform == Transform::kConfidence && (values[i] < 0.0 || values[i] > 1.0))
      throw DataError("confidence value outside [0,1] at flat index " + std::to_string(i));
  }
  if (balanced()) {
    if (n_models % 2 != 0) throw DataError("balanced store with odd model count");
    for (std::size_t e = 0; e < n_examples; ++e) {
      std::size_t k = 0;
      for (std::size_t m = 0; m < n_models; ++m) k += is_in(m, e);
      if (k != n_models / 2)
        throw DataError("balanced store: example " + std::to_string(e) + " is IN for " +
                        std::to_string(k) + " models");
    }
  }
}

ScoreStore ScoreStore::model_prefix(std::size_t count) const {
  if (count > n_models) throw std::invalid_argument("model prefix longer than store");
  ScoreStore s = zeros(count, n_examples, n_aug, transform);
  std::copy_n(values.begin(), count * n_examples * n_aug, s.values.begin());
  std::copy_n(keep.begin(), count * n_examples, s.keep.begin());
  s.manifest = manifest;
  s.manifest["n_models_prefix"] = std::to_string(count);
  bool ok = count % 2 == 0 && count > 0;
  for (std::size_t e = 0; ok && e < n_examples; ++e) {
    std::size_t k = 0;
    for (std::size_t m = 0; m < count; ++m) k += s.is_in(m, e);
    ok = k == count / 2;
  }
  s.manifest[kBalancedKey] = (ok && balanced()) ? "true" : "false";
  return s;
}

ScoreStore ScoreStore::aug_subset(const std::vector<std::size_t>& cols) const {
  for (std::size_t c : cols)
    if (c >= n_aug) throw std::invalid_argument("augmentation column out of range");
  ScoreStore s = zeros(n_models, n_examples, cols.size(), transform);
  for (std::size_t m = 0; m < n_models; ++m)
    for (std::size_t e = 0; e < n_examples; ++e)
      for (std::size_t a = 0; a < cols.size(); ++a) s.at(m, e, a) = at(m, e, cols[a]);
  s.keep = keep;
  s.manifest = manifest;
  return s;
}

ScoreStore ScoreStore::example_subset(const std::vector<std::size_t>& examples) const {
  ScoreStore s = zeros(n_models, examples.size(), n_aug, transform);
  for (std::size_t m = 0; m < n_models; ++m)
    for (std::size_t j = 0; j < examples.size(); ++j) {
      const std::size_t e = examples[j];
      if (e >= n_examples) throw std::invalid_argument("example index out of range");
      for (std::size_t a = 0; a < n_aug; ++a) s.at(m, j, a) = at(m, e, a);
      s.set_in(m, j, is_in(m, e));
    }
  s.manifest = manifest;
  return s;
}

QueryScores QueryScores::column(std::size_t c) const {
  const std::size_t cols[] = {c};
  return {transform, values.select_cols(cols)};
}

std::vector<std::uint8_t> encode_store(const ScoreStore& store) {
  store.validate();
  io::ByteWriter w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(kStoreMagic), 8});
  w.u8(kStoreVersion);
  w.u8(static_cast<std::uint8_t>(store.transform));
  w.u8(0);
  w.u8(0);
  w.u64(store.n_models);
  w.u64(store.n_examples);
  w.u64(store.n_aug);
  for (double v : store.values) w.f64(v);
  w.bytes(io::pack_bits(store.keep));
  const std::string text = manifest_to_text(store.manifest);
  w.u64(text.size());
  w.text(text);
  return w.buffer();
}

ScoreStore decode_store(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kStoreMagic, 8) != 0)
    throw DataError("not a score store (bad magic)");
  r.bytes(8);
  const std::uint8_t version = r.u8();
  if (version != kStoreVersion) throw DataError("unsupported store version " + std::to_string(version));
  const std::uint8_t tid = r.u8();
  if (!is_valid_transform_id(tid)) throw DataError("unknown transform_id " + std::to_string(tid));
  r.bytes(2);
  ScoreStore s;
  s.transform = static_cast<Transform>(tid);
  s.n_models = r.u64();
  s.n_examples = r.u64();
  s.n_aug = r.u64();
  const unsigned __int128 cells =
      static_cast<unsigned __int128>(s.n_models) * s.n_examples * s.n_aug;
  const unsigned __int128 mask_bits = static_cast<unsigned __int128>(s.n_models) * s.n_examples;
  const unsigned __int128 need = cells * 8 + (mask_bits + 7) / 8 + 8;
  if (need > r.remaining()) throw DataError("declared shape exceeds payload length");
  s.values.resize(static_cast<std::size_t>(cells));
  for (double& v : s.values) v = r.f64();
  const std::size_t n_mask = static_cast<std::size_t>(mask_bits);
  s.keep = io::unpack_bits(r.bytes((n_mask + 7) / 8), n_mask);
  const std::uint64_t len = r.u64();
  if (len != r.remaining()) throw DataError("manifest length does not match payload");
  auto text = r.bytes(len);
  s.manifest = manifest_from_text(std::string(text.begin(), text.end()));
  s.validate();
  return s;
}

void write_store(const ScoreStore& store, const std::string& path) {
  io::write_file(path, encode_store(store));
}

ScoreStore read_store(const std::string& path) { return decode_store(io::read_file(path)); }

void write_target(const TargetScores& target, const std::string& path) {
  const Matrix& v = target.query.values;
  if (target.labels.size() != v.rows()) throw DataError("target labels do not match value rows");
  ScoreStore s = ScoreStore::zeros(1, v.rows(), v.cols(), target.query.transform);
  s.values = v.data();
  for (std::size_t e = 0; e < v.rows(); ++e) s.set_in(0, e, target.labels[e] != 0);
  s.manifest = target.manifest;
  s.manifest["role"] = "target";
  write_store(s, path);
}

TargetScores read_target(const std::string& path) {
  ScoreStore s = read_store(path);
  if (s.n_models != 1 || s.manifest["role"] != "target")
    throw DataError("'" + path + "' is not a target score file");
  TargetScores t;
  t.query.transform = s.transform;
  t.query.values = Matrix(s.n_examples, s.n_aug);
  t.query.values.data() = s.values;
  t.labels = s.keep;
  t.manifest = s.manifest;
  return t;
}

InOutSamples split_in_out(const ScoreStore& store, std::size_t example) {
  if (example >= store.n_examples) throw std::out_of_range("example index out of range");
  InOutSamples r;
  for (std::size_t m = 0; m < store.n_models; ++m)
    (store.is_in(m, example) ? r.in_models : r.out_models).push_back(m);
  auto gather = [&](const std::vector<std::size_t>& models) {
    Matrix out(models.size(), store.n_aug);
    for (std::size_t i = 0; i < models.size(); ++i)
      for (std::size_t a = 0; a < store.n_aug; ++a) out(i, a) = store.at(models[i], example, a);
    return out;
  };
  r.in = gather(r.in_models);
  r.out = gather(r.out_models);
  return r;
}

}  // namespace lira
