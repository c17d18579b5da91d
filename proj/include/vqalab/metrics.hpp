#pragma once

// Evaluation instruments: accuracy, overlap, CPIG, Spearman correlation,
// Welch and paired t-tests, the subset-sampling protocol, and the
// prediction CSV format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vqalab/error.hpp"
#include "vqalab/rng.hpp"
#include "vqalab/synthcp.hpp"

namespace vqalab {

struct PredictionRecord {
  InstanceId instance_id = 0;
  std::string run_id;
  std::string variant;
  Split split = Split::test;
  AnswerId predicted_answer = 0;
  bool correct = false;
  std::size_t top_sensitive_region = 0;
  AnswerType answer_type = AnswerType::other;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct AccuracyResult {
  double overall = 0.0;  // percent
  std::map<AnswerType, double> by_answer_type;
};

inline AccuracyResult accuracy(std::span<const PredictionRecord> records) {
  require(!records.empty(), ErrorKind::empty_input, "accuracy of an empty record set");
  std::map<AnswerType, std::pair<std::size_t, std::size_t>> counts;  // hits, total
  std::size_t hits = 0;
  for (const auto& r : records) {
    hits += r.correct;
    auto& c = counts[r.answer_type];
    c.first += r.correct;
    ++c.second;
  }
  AccuracyResult out;
  out.overall = 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
  for (const auto& [type, c] : counts)
    out.by_answer_type[type] = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
  return out;
}

namespace detail {

inline std::map<InstanceId, bool> correctness_by_id(std::span<const PredictionRecord> records,
                                                    const char* side) {
  std::map<InstanceId, bool> m;
  for (const auto& r : records) {
    const bool fresh = m.emplace(r.instance_id, r.correct).second;
    require(fresh, ErrorKind::alignment,
            std::string("duplicate instance id ") + std::to_string(r.instance_id) + " in " + side);
  }
  return m;
}

}  // namespace detail

/// Percent of instances on which both sides are correct or both incorrect.
inline double overlap(std::span<const PredictionRecord> a, std::span<const PredictionRecord> b) {
  const auto ma = detail::correctness_by_id(a, "first record set");
  const auto mb = detail::correctness_by_id(b, "second record set");
  require(ma.size() == mb.size(), ErrorKind::alignment, "overlap: record sets cover different ids");
  require(!ma.empty(), ErrorKind::empty_input, "overlap of empty record sets");
  std::size_t same = 0;
  for (auto ia = ma.begin(), ib = mb.begin(); ia != ma.end(); ++ia, ++ib) {
    require(ia->first == ib->first, ErrorKind::alignment, "overlap: record sets cover different ids");
    same += ia->second == ib->second;
  }
  return 100.0 * static_cast<double>(same) / static_cast<double>(ma.size());
}

/// Percent of correct records whose most sensitive region lies outside the
/// instance's three most relevant regions. Empty when nothing is correct.
inline std::optional<double> cpig(std::span<const PredictionRecord> records,
                                  const DatasetBundle& bundle) {
  std::size_t correct = 0, improper = 0;
  for (const auto& r : records) {
    if (!r.correct) continue;
    ++correct;
    const auto top = bundle.instance(r.instance_id).top3_relevant();
    if (std::find(top.begin(), top.end(), r.top_sensitive_region) == top.end()) ++improper;
  }
  if (correct == 0) return std::nullopt;
  return 100.0 * static_cast<double>(improper) / static_cast<double>(correct);
}

/// 1-based ranks; tied values share the mean of their rank range.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Pearson correlation; empty if either side is constant.
inline std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorKind::shape, "pearson: length mismatch");
  require(xs.size() >= 2, ErrorKind::empty_input, "pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

/// Spearman rank correlation; empty (degenerate) if either input is constant.
inline std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorKind::shape, "spearman: length mismatch");
  require(xs.size() >= 2, ErrorKind::empty_input, "spearman: need at least two points");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

// ---------------------------------------------------------------------------
// t-tests

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double tol = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < tol) return h;
  }
  throw Error(ErrorKind::numeric, "incomplete beta continued fraction did not converge");
}

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorKind::config, "incomplete_beta: a and b must be positive");
  require(x >= 0.0 && x <= 1.0, ErrorKind::config, "incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-tailed p-value of Student's t with `dof` degrees of freedom.
inline double student_t_two_tailed(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  return std::clamp(incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t)), 0.0, 1.0);
}

struct StatResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
  /// Zero variance with unequal means: p is 0 by convention.
  bool degenerate = false;

  friend bool operator==(const StatResult&, const StatResult&) = default;
};

namespace detail {

inline std::pair<double, double> mean_var(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, ss / (n - 1.0)};
}

}  // namespace detail

/// Unequal-variance two-sample t-test with Welch-Satterthwaite dof.
inline StatResult welch_t_test(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() >= 2 && ys.size() >= 2, ErrorKind::empty_input,
          "welch_t_test: each sample needs at least two values");
  const auto [mx, vx] = detail::mean_var(xs);
  const auto [my, vy] = detail::mean_var(ys);
  const double n = static_cast<double>(xs.size()), m = static_cast<double>(ys.size());
  const double qx = vx / n, qy = vy / m;
  StatResult r;
  r.dof = n + m - 2.0;
  if (qx + qy == 0.0) {
    if (mx == my) return r;
    r.t = mx > my ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = (mx - my) / std::sqrt(qx + qy);
  r.dof = (qx + qy) * (qx + qy) / (qx * qx / (n - 1.0) + qy * qy / (m - 1.0));
  r.p = student_t_two_tailed(r.t, r.dof);
  return r;
}

/// One-sample t-test that the mean of xs[i] - ys[i] is zero.
inline StatResult paired_t_test(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size(), ErrorKind::alignment, "paired_t_test: samples differ in length");
  require(xs.size() >= 2, ErrorKind::empty_input, "paired_t_test: need at least two pairs");
  std::vector<double> diff(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) diff[i] = xs[i] - ys[i];
  const auto [md, vd] = detail::mean_var(diff);
  const double n = static_cast<double>(diff.size());
  StatResult r;
  r.dof = n - 1.0;
  if (vd == 0.0) {
    if (md == 0.0) return r;
    r.t = md > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = md / std::sqrt(vd / n);
  r.p = student_t_two_tailed(r.t, r.dof);
  return r;
}

// ---------------------------------------------------------------------------
// Subset protocol

/// Random partition of `ids` into `cells` near-equal groups.
inline std::vector<std::vector<InstanceId>> partition_ids(std::vector<InstanceId> ids, std::size_t cells,
                                                          std::uint64_t seed) {
  require(cells >= 1, ErrorKind::config, "subset count must be >= 1");
  require(cells <= ids.size(), ErrorKind::config,
          "subset count " + std::to_string(cells) + " exceeds " + std::to_string(ids.size()) + " instances");
  std::sort(ids.begin(), ids.end());
  Rng rng({seed, 0x5b5e7ULL});
  rng.shuffle(ids);
  std::vector<std::vector<InstanceId>> out(cells);
  for (std::size_t i = 0; i < ids.size(); ++i) out[i % cells].push_back(ids[i]);
  return out;
}

/// Partitions the test ids into `cells` groups and returns, per group, the
/// accuracy (fraction) averaged over runs.
inline std::vector<double> subset_accuracy_samples(
    const std::vector<std::vector<PredictionRecord>>& records_per_run, std::size_t cells,
    std::uint64_t seed) {
  require(!records_per_run.empty(), ErrorKind::empty_input, "subset_accuracy_samples: no runs");
  std::vector<std::map<InstanceId, bool>> runs;
  for (const auto& recs : records_per_run) runs.push_back(detail::correctness_by_id(recs, "run"));
  std::vector<InstanceId> ids;
  for (const auto& [id, ok] : runs.front()) ids.push_back(id);
  for (const auto& run : runs) {
    require(run.size() == ids.size(), ErrorKind::alignment,
            "subset_accuracy_samples: runs cover different ids");
    std::size_t i = 0;
    for (const auto& [id, ok] : run)
      require(id == ids[i++], ErrorKind::alignment, "subset_accuracy_samples: runs cover different ids");
  }
  const auto parts = partition_ids(ids, cells, seed);
  std::vector<double> out;
  out.reserve(parts.size());
  for (const auto& part : parts) {
    double sum = 0.0;
    for (const auto& run : runs) {
      std::size_t hits = 0;
      for (InstanceId id : part) hits += run.at(id);
      sum += static_cast<double>(hits) / static_cast<double>(part.size());
    }
    out.push_back(sum / static_cast<double>(runs.size()));
  }
  return out;
}

/// Default subset count: min(500, n / 10), at least 1.
inline std::size_t default_subset_count(std::size_t n) { return std::max<std::size_t>(1, std::min<std::size_t>(500, n / 10)); }

// ---------------------------------------------------------------------------
// predictions.csv

inline constexpr const char* kPredictionHeader =
    "instance_id,run_id,variant,split,predicted_answer,correct,top_sensitive_region,answer_type";

inline void write_predictions(std::ostream& out, std::span<const PredictionRecord> records) {
  out << kPredictionHeader << '\n';
  for (const auto& r : records)
    out << r.instance_id << ',' << r.run_id << ',' << r.variant << ',' << to_string(r.split) << ','
        << r.predicted_answer << ',' << (r.correct ? 1 : 0) << ',' << r.top_sensitive_region << ','
        << to_string(r.answer_type) << '\n';
}

inline void write_predictions(const std::string& path, std::span<const PredictionRecord> records) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path + "' for writing");
  write_predictions(out, records);
  require(static_cast<bool>(out), ErrorKind::io, "write to '" + path + "' failed");
}

inline std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == kPredictionHeader, ErrorKind::io,
          "predictions: missing or wrong header");
  std::vector<PredictionRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 8, ErrorKind::io, "predictions line " + std::to_string(lineno) + ": expected 8 fields");
    try {
      PredictionRecord r;
      r.instance_id = std::stoll(f[0]);
      r.run_id = f[1];
      r.variant = f[2];
      r.split = split_from_string(f[3]);
      r.predicted_answer = std::stoull(f[4]);
      require(f[5] == "0" || f[5] == "1", ErrorKind::io, "correct must be 0 or 1");
      r.correct = f[5] == "1";
      r.top_sensitive_region = std::stoull(f[6]);
      r.answer_type = answer_type_from_string(f[7]);
      out.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw Error(ErrorKind::io, "predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path + "'");
  return read_predictions(in);
}

}  // namespace vqalab
