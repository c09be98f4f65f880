#include "lira/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lira/errors.hpp"

namespace lira {

namespace {

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels,
                  std::size_t& n_pos, std::size_t& n_neg) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw std::invalid_argument("non-finite score at index " + std::to_string(i));
    n_pos += labels[i] != 0;
  }
  n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("ROC needs both members and non-members");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

RocReport roc(std::span<const double> scores, std::span<const std::uint8_t> labels,
              std::span<const double> fpr_levels) {
  RocReport r;
  check_inputs(scores, labels, r.n_pos, r.n_neg);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double inf = std::numeric_limits<double>::infinity();
  const auto pos = static_cast<double>(r.n_pos);
  const auto neg = static_cast<double>(r.n_neg);
  r.points.push_back({0.0, 0.0, inf});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp)++;
    r.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s});
  }
  r.points.push_back({1.0, 1.0, -inf});

  // Trapezoids on integer counts keep the area exact up to one division.
  double twice_area = 0.0;
  std::size_t prev_tp = 0, prev_fp = 0;
  tp = fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp)++;
    twice_area += static_cast<double>((fp - prev_fp) * (tp + prev_tp));
    prev_tp = tp;
    prev_fp = fp;
  }
  r.auc = twice_area / (2.0 * pos * neg);

  for (const RocPoint& p : r.points)
    r.balanced_accuracy = std::max(r.balanced_accuracy, 0.5 * (p.tpr + 1.0 - p.fpr));
  for (double level : fpr_levels) r.tpr_at.push_back(tpr_at_fpr(r, level));
  return r;
}

TprAtFpr tpr_at_fpr(const RocReport& report, double level) {
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument("FPR level must lie in (0, 1]");
  TprAtFpr best;
  best.level = level;
  best.threshold = std::numeric_limits<double>::infinity();
  for (const RocPoint& p : report.points) {
    if (p.fpr <= level && p.tpr > best.tpr) {
      best.tpr = p.tpr;
      best.achieved_fpr = p.fpr;
      best.threshold = p.threshold;
    }
  }
  best.resolution_limited = report.n_neg == 0 || level < 1.0 / static_cast<double>(report.n_neg);
  return best;
}

double balanced_accuracy(std::span<const double> scores, std::span<const std::uint8_t> labels,
                         double threshold) {
  std::size_t n_pos = 0, n_neg = 0;
  check_inputs(scores, labels, n_pos, n_neg);
  std::size_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] && predicted) ++tp;
    if (!labels[i] && !predicted) ++tn;
  }
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(n_pos) +
                static_cast<double>(tn) / static_cast<double>(n_neg));
}

std::vector<double> privacy_scores(const ScoreStore& store) {
  const ScoreStore first = store.n_aug == 1 ? store : store.aug_subset({0});
  const auto fits = fit_all(first, VarianceMode::kPerExample, FitSides::kBoth);
  std::vector<double> d(fits.size());
  for (std::size_t j = 0; j < fits.size(); ++j) {
    const GaussianFit& f = fits[j];
    d[j] = std::abs(f.mu_in[0] - f.mu_out[0]) / (std::sqrt(f.var_in) + std::sqrt(f.var_out));
  }
  return d;
}

void export_roc(const RocReport& report, const std::string& path) {
  {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "fpr,tpr,threshold\n";
    for (const RocPoint& p : report.points)
      out << format_double(p.fpr) << ',' << format_double(p.tpr) << ',' << format_double(p.threshold) << '\n';
    if (!out) throw DataError("write to '" + path + "' failed");
  }
  std::ofstream sum(path + ".summary", std::ios::trunc);
  if (!sum) throw DataError("cannot open '" + path + ".summary' for writing");
  sum << "auc=" << format_double(report.auc) << '\n'
      << "balanced_accuracy=" << format_double(report.balanced_accuracy) << '\n'
      << "n_neg=" << report.n_neg << '\n'
      << "n_pos=" << report.n_pos << '\n';
  for (const TprAtFpr& t : report.tpr_at) {
    const std::string key = "tpr_at." + format_double(t.level);
    sum << key << ".tpr=" << format_double(t.tpr) << '\n'
        << key << ".achieved_fpr=" << format_double(t.achieved_fpr) << '\n'
        << key << ".threshold=" << format_double(t.threshold) << '\n'
        << key << ".resolution_limited=" << (t.resolution_limited ? "true" : "false") << '\n';
  }
}

std::vector<RocPoint> read_roc_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "fpr,tpr,threshold") throw DataError("bad ROC CSV header");
  std::vector<RocPoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
      throw DataError("malformed ROC CSV row '" + line + "'");
    pts.push_back({std::stod(a), std::stod(b), std::strtod(c.c_str(), nullptr)});
  }
  return pts;
}

}  // namespace lira
