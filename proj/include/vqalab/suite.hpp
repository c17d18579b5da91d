#pragma once

// The experiment grid: pretrain per seed, fine-tune every cell, then reduce
// the per-run outputs into an ExperimentReport with five sections
// (accuracy, pairwise comparisons, sensitivity/relevance correlation,
// per-answer-type accuracy, zero-out subset-size sweep).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqalab/error.hpp"
#include "vqalab/metrics.hpp"
#include "vqalab/runner.hpp"
#include "vqalab/synthcp.hpp"

namespace vqalab {

enum class CellKind { baseline, bce_finetune, hint, scr, zero_out };

inline std::string to_string(CellKind k) {
  switch (k) {
    case CellKind::baseline: return "baseline";
    case CellKind::bce_finetune: return "bce_finetune";
    case CellKind::hint: return "hint";
    case CellKind::scr: return "scr";
    case CellKind::zero_out: return "zero_out";
  }
  return "baseline";
}

inline CellKind cell_kind_from_string(const std::string& s) {
  for (CellKind k : {CellKind::baseline, CellKind::bce_finetune, CellKind::hint, CellKind::scr, CellKind::zero_out})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::config, "unknown cell method '" + s + "'");
}

inline std::string format_number(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

struct CellSpec {
  CellKind kind = CellKind::baseline;
  CueVariant variant = CueVariant::relevant;  // hint / scr
  double r = 0.01;                            // zero_out
  SubsetMode mode = SubsetMode::fixed;        // zero_out
  /// Also run this cell on the matched-prior control splits.
  bool control = false;

  std::string label() const {
    switch (kind) {
      case CellKind::hint:
      case CellKind::scr: return to_string(kind) + "/" + to_string(variant);
      case CellKind::zero_out: return "zero_out/r=" + format_number("%g", r) + "/" + to_string(mode);
      default: return to_string(kind);
    }
  }

  /// Row group in the accuracy table.
  std::string group() const {
    switch (kind) {
      case CellKind::baseline:
      case CellKind::bce_finetune: return "baseline";
      case CellKind::zero_out: return "zero_out";
      default: break;
    }
    switch (variant) {
      case CueVariant::relevant: return "relevant";
      case CueVariant::irrelevant: return "irrelevant";
      case CueVariant::fixed_random: return "fixed_random";
      case CueVariant::variable_random: return "variable_random";
    }
    return "relevant";
  }

  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

inline void to_json(nlohmann::json& j, const CellSpec& c) {
  j = nlohmann::json{{"method", to_string(c.kind)}, {"control", c.control}};
  if (c.kind == CellKind::hint || c.kind == CellKind::scr) j["variant"] = to_string(c.variant);
  if (c.kind == CellKind::zero_out) {
    j["r"] = c.r;
    j["subset_mode"] = to_string(c.mode);
  }
}

inline void from_json(const nlohmann::json& j, CellSpec& c) {
  c = CellSpec{};
  c.kind = cell_kind_from_string(j.at("method").get<std::string>());
  c.variant = cue_variant_from_string(j.value("variant", std::string("relevant")));
  c.r = j.value("r", 0.01);
  c.mode = subset_mode_from_string(j.value("subset_mode", std::string("fixed")));
  c.control = j.value("control", false);
  require(c.r > 0.0 && c.r <= 1.0, ErrorKind::config, "cell r must lie in (0, 1]");
}

struct SuiteConfig {
  std::size_t seeds = 5;
  std::uint64_t first_seed = 1;
  std::string profile = "desk";
  Schedule schedule = Schedule::desk();
  /// Cells of the subset protocol (B).
  std::size_t subset_count = 200;
  std::uint64_t subset_seed = 0;
  std::vector<CellSpec> cells = default_cells();

  static std::vector<CellSpec> default_cells() {
    std::vector<CellSpec> cells;
    cells.push_back({CellKind::baseline, CueVariant::relevant, 0.01, SubsetMode::fixed, true});
    cells.push_back({CellKind::bce_finetune, CueVariant::relevant, 0.01, SubsetMode::fixed, true});
    for (CellKind k : {CellKind::hint, CellKind::scr})
      for (CueVariant v : {CueVariant::relevant, CueVariant::irrelevant, CueVariant::fixed_random,
                           CueVariant::variable_random})
        cells.push_back({k, v, 0.01, SubsetMode::fixed, v == CueVariant::relevant});
    cells.push_back({CellKind::zero_out, CueVariant::relevant, 0.01, SubsetMode::variable, false});
    for (double r : {0.01, 0.05, 0.1, 0.25, 0.5, 1.0})
      cells.push_back({CellKind::zero_out, CueVariant::relevant, r, SubsetMode::fixed, r == 0.01});
    return cells;
  }

  void validate() const {
    require(seeds >= 1, ErrorKind::config, "seeds must be >= 1");
    require(subset_count >= 1, ErrorKind::config, "subset_count must be >= 1");
    require(!cells.empty(), ErrorKind::config, "suite has no cells");
    schedule.validate();
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t j = i + 1; j < cells.size(); ++j)
        require(cells[i].label() != cells[j].label(), ErrorKind::config, "duplicate cell " + cells[i].label());
  }
};

inline void to_json(nlohmann::json& j, const SuiteConfig& c) {
  j = nlohmann::json{{"seeds", c.seeds},
                     {"first_seed", c.first_seed},
                     {"profile", c.profile},
                     {"schedule", c.schedule},
                     {"subset_count", c.subset_count},
                     {"subset_seed", c.subset_seed},
                     {"cells", c.cells}};
}

/// `schedule` overrides individual fields of the named profile.
inline void from_json(const nlohmann::json& j, SuiteConfig& c) {
  const SuiteConfig d;
  c.seeds = j.value("seeds", d.seeds);
  c.first_seed = j.value("first_seed", d.first_seed);
  c.profile = j.value("profile", d.profile);
  c.schedule = Schedule::named(c.profile);
  if (j.contains("schedule")) from_json(j.at("schedule"), c.schedule);
  c.subset_count = j.value("subset_count", d.subset_count);
  c.subset_seed = j.value("subset_seed", d.subset_seed);
  c.cells = j.contains("cells") ? j.at("cells").get<std::vector<CellSpec>>() : d.cells;
}

// ---------------------------------------------------------------------------
// Report types

/// Mean, sample standard deviation and count over seeds.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;

  static Summary of(const std::vector<double>& xs) {
    Summary s;
    s.n = xs.size();
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
  }

  friend bool operator==(const Summary&, const Summary&) = default;
};

inline void to_json(nlohmann::json& j, const Summary& s) {
  j = nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}
inline void from_json(const nlohmann::json& j, Summary& s) {
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.n = j.at("n").get<std::size_t>();
}

struct DomainResult {
  bool failed = false;
  std::string error;
  Summary train;  // percent
  Summary eval;   // percent
  /// Over runs where CPIG is defined; `cpig_undefined` counts the others.
  Summary cpig;
  std::size_t cpig_undefined = 0;
  std::vector<std::size_t> report_epochs;

  friend bool operator==(const DomainResult&, const DomainResult&) = default;
};

inline void to_json(nlohmann::json& j, const DomainResult& r) {
  j = nlohmann::json{{"failed", r.failed}, {"error", r.error},   {"train", r.train},
                     {"eval", r.eval},     {"cpig", r.cpig},     {"cpig_undefined", r.cpig_undefined},
                     {"report_epochs", r.report_epochs}};
}
inline void from_json(const nlohmann::json& j, DomainResult& r) {
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.train = j.at("train").get<Summary>();
  r.eval = j.at("eval").get<Summary>();
  r.cpig = j.at("cpig").get<Summary>();
  r.cpig_undefined = j.at("cpig_undefined").get<std::size_t>();
  r.report_epochs = j.at("report_epochs").get<std::vector<std::size_t>>();
}

struct CellRow {
  CellSpec spec;
  std::string label;
  std::string group;
  DomainResult shifted;
  std::optional<DomainResult> control;

  friend bool operator==(const CellRow&, const CellRow&) = default;
};

inline void to_json(nlohmann::json& j, const CellRow& r) {
  j = nlohmann::json{{"spec", r.spec}, {"label", r.label}, {"group", r.group}, {"shifted", r.shifted},
                     {"control", r.control ? nlohmann::json(*r.control) : nlohmann::json()}};
}
inline void from_json(const nlohmann::json& j, CellRow& r) {
  r.spec = j.at("spec").get<CellSpec>();
  r.label = j.at("label").get<std::string>();
  r.group = j.at("group").get<std::string>();
  r.shifted = j.at("shifted").get<DomainResult>();
  r.control.reset();
  if (!j.at("control").is_null()) r.control = j.at("control").get<DomainResult>();
}

/// Test-split comparison of two cells under the subset protocol.
struct Comparison {
  std::string a, b;
  StatResult welch;
  StatResult paired;
  /// Mean over seeds of the per-seed overlap (percent).
  double overlap = 0.0;
  double subset_mean_a = 0.0;  // percent
  double subset_mean_b = 0.0;

  friend bool operator==(const Comparison&, const Comparison&) = default;
};

inline void to_json(nlohmann::json& j, const StatResult& s) {
  j = nlohmann::json{{"t", s.t}, {"dof", s.dof}, {"p", s.p}, {"degenerate", s.degenerate}};
  // JSON has no infinities; degenerate tests store the sign of t.
  if (std::isinf(s.t)) j["t"] = s.t > 0 ? "inf" : "-inf";
}
inline void from_json(const nlohmann::json& j, StatResult& s) {
  if (j.at("t").is_string())
    s.t = j.at("t").get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                : -std::numeric_limits<double>::infinity();
  else
    s.t = j.at("t").get<double>();
  s.dof = j.at("dof").get<double>();
  s.p = j.at("p").get<double>();
  s.degenerate = j.at("degenerate").get<bool>();
}

inline void to_json(nlohmann::json& j, const Comparison& c) {
  j = nlohmann::json{{"a", c.a},           {"b", c.b},
                     {"welch", c.welch},   {"paired", c.paired},
                     {"overlap", c.overlap}, {"subset_mean_a", c.subset_mean_a},
                     {"subset_mean_b", c.subset_mean_b}};
}
inline void from_json(const nlohmann::json& j, Comparison& c) {
  c.a = j.at("a").get<std::string>();
  c.b = j.at("b").get<std::string>();
  c.welch = j.at("welch").get<StatResult>();
  c.paired = j.at("paired").get<StatResult>();
  c.overlap = j.at("overlap").get<double>();
  c.subset_mean_a = j.at("subset_mean_a").get<double>();
  c.subset_mean_b = j.at("subset_mean_b").get<double>();
}

struct SpearmanRow {
  std::string label;
  /// Per-seed mean rho over cue-annotated test instances.
  Summary rho;
  std::size_t degenerate = 0;

  friend bool operator==(const SpearmanRow&, const SpearmanRow&) = default;
};

inline void to_json(nlohmann::json& j, const SpearmanRow& r) {
  j = nlohmann::json{{"label", r.label}, {"rho", r.rho}, {"degenerate", r.degenerate}};
}
inline void from_json(const nlohmann::json& j, SpearmanRow& r) {
  r.label = j.at("label").get<std::string>();
  r.rho = j.at("rho").get<Summary>();
  r.degenerate = j.at("degenerate").get<std::size_t>();
}

struct AnswerTypeRow {
  std::string label;
  std::map<std::string, Summary> by_type;  // test accuracy, percent

  friend bool operator==(const AnswerTypeRow&, const AnswerTypeRow&) = default;
};

inline void to_json(nlohmann::json& j, const AnswerTypeRow& r) {
  j = nlohmann::json{{"label", r.label}, {"by_type", r.by_type}};
}
inline void from_json(const nlohmann::json& j, AnswerTypeRow& r) {
  r.label = j.at("label").get<std::string>();
  r.by_type = j.at("by_type").get<std::map<std::string, Summary>>();
}

struct SweepPoint {
  double r = 0.0;
  bool failed = false;
  Summary train;
  Summary test;

  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

inline void to_json(nlohmann::json& j, const SweepPoint& s) {
  j = nlohmann::json{{"r", s.r}, {"failed", s.failed}, {"train", s.train}, {"test", s.test}};
}
inline void from_json(const nlohmann::json& j, SweepPoint& s) {
  s.r = j.at("r").get<double>();
  s.failed = j.at("failed").get<bool>();
  s.train = j.at("train").get<Summary>();
  s.test = j.at("test").get<Summary>();
}

struct ExperimentReport {
  nlohmann::json config;
  nlohmann::json dataset;
  std::vector<CellRow> cells;
  std::vector<Comparison> comparisons;
  std::vector<SpearmanRow> spearman;
  std::vector<AnswerTypeRow> answer_types;
  std::vector<SweepPoint> r_sweep;

  const CellRow* cell(const std::string& label) const {
    for (const auto& c : cells)
      if (c.label == label) return &c;
    return nullptr;
  }

  /// The comparison of a and b in either order.
  const Comparison* comparison(const std::string& a, const std::string& b) const {
    for (const auto& c : comparisons)
      if ((c.a == a && c.b == b) || (c.a == b && c.b == a)) return &c;
    return nullptr;
  }

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
  j = nlohmann::json{{"format", "vqalab-report/1"},
                     {"config", r.config},
                     {"dataset", r.dataset},
                     {"accuracy", r.cells},
                     {"comparisons", r.comparisons},
                     {"spearman", r.spearman},
                     {"answer_types", r.answer_types},
                     {"r_sweep", r.r_sweep}};
}
inline void from_json(const nlohmann::json& j, ExperimentReport& r) {
  require(j.value("format", std::string()) == "vqalab-report/1", ErrorKind::io, "not a vqalab report");
  r.config = j.at("config");
  r.dataset = j.at("dataset");
  r.cells = j.at("accuracy").get<std::vector<CellRow>>();
  r.comparisons = j.at("comparisons").get<std::vector<Comparison>>();
  r.spearman = j.at("spearman").get<std::vector<SpearmanRow>>();
  r.answer_types = j.at("answer_types").get<std::vector<AnswerTypeRow>>();
  r.r_sweep = j.at("r_sweep").get<std::vector<SweepPoint>>();
}

// ---------------------------------------------------------------------------
// run_suite

/// Output of one (cell, domain, seed) run.
struct CellRun {
  bool failed = false;
  std::string error;
  double train = 0.0;  // percent
  double eval = 0.0;
  std::size_t report_epoch = 0;
  std::vector<PredictionRecord> eval_records;
  std::optional<double> cpig;
  std::optional<double> spearman;
  std::size_t spearman_degenerate = 0;
};

inline RunConfig cell_run_config(const Schedule& s, const CellSpec& cell, Domain d, std::uint64_t seed) {
  RunConfig c;
  switch (cell.kind) {
    case CellKind::baseline:
      c = RunConfig::from(s, Method::baseline, d, seed);
      c.epochs = 0;
      break;
    case CellKind::bce_finetune: c = RunConfig::from(s, Method::baseline, d, seed); break;
    case CellKind::hint: c = RunConfig::from(s, Method::hint, d, seed); break;
    case CellKind::scr: c = RunConfig::from(s, Method::scr, d, seed); break;
    case CellKind::zero_out:
      c = RunConfig::from(s, Method::zero_out, d, seed);
      c.subset_fraction = cell.r;
      c.subset_mode = cell.mode;
      c.learning_rate = s.zero_out_base_lr / cell.r;
      break;
  }
  c.variant = cell.variant;
  c.run_id = "s" + std::to_string(seed);
  c.variant_label = cell.label();
  return c;
}

inline CellRun run_cell(const DatasetBundle& bundle, const Checkpoint& start, const RunConfig& cfg) {
  CellRun out;
  const FinetuneResult res = finetune_any(bundle, start, cfg);
  out.train = 100.0 * res.train_accuracy;
  out.eval = 100.0 * res.eval_accuracy;
  out.report_epoch = res.report_epoch;
  const Split ev = eval_split(cfg.domain);
  for (const auto& r : res.records)
    if (r.split == ev) out.eval_records.push_back(r);
  out.cpig = cpig(out.eval_records, bundle);
  if (!res.spearman_values.empty()) {
    double s = 0.0;
    for (double v : res.spearman_values) s += v;
    out.spearman = s / static_cast<double>(res.spearman_values.size());
  }
  out.spearman_degenerate = res.spearman_degenerate;
  return out;
}

namespace detail {

inline DomainResult summarize(const std::vector<CellRun>& runs) {
  DomainResult d;
  std::vector<double> train, eval, cp;
  for (const auto& r : runs) {
    if (r.failed) {
      d.failed = true;
      if (d.error.empty()) d.error = r.error;
      continue;
    }
    train.push_back(r.train);
    eval.push_back(r.eval);
    d.report_epochs.push_back(r.report_epoch);
    if (r.cpig)
      cp.push_back(*r.cpig);
    else
      ++d.cpig_undefined;
  }
  if (d.failed) {
    d.report_epochs.clear();
    d.cpig_undefined = 0;
    return d;
  }
  d.train = Summary::of(train);
  d.eval = Summary::of(eval);
  d.cpig = Summary::of(cp);
  return d;
}

}  // namespace detail

using ProgressFn = std::function<void(const std::string&)>;

/// Runs every cell for every seed and reduces the outputs into a report.
/// A cell that throws is marked failed; the rest of the suite continues.
inline ExperimentReport run_suite(const DatasetBundle& bundle, const SuiteConfig& cfg,
                                  const ProgressFn& progress = {}) {
  cfg.validate();
  require(cfg.subset_count <= bundle.test.size(), ErrorKind::config,
          "subset_count exceeds the test split size");
  const auto note = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const std::size_t n_cells = cfg.cells.size();
  const bool any_control =
      std::any_of(cfg.cells.begin(), cfg.cells.end(), [](const CellSpec& c) { return c.control; });
  // runs[domain][cell][seed]
  std::vector<std::vector<std::vector<CellRun>>> runs(2, std::vector<std::vector<CellRun>>(n_cells));

  for (std::size_t si = 0; si < cfg.seeds; ++si) {
    const std::uint64_t seed = cfg.first_seed + si;
    for (Domain dom : {Domain::shifted, Domain::control}) {
      if (dom == Domain::control && !any_control) continue;
      const std::size_t di = dom == Domain::control ? 1 : 0;
      note("seed " + std::to_string(seed) + ": pretrain " + to_string(dom));
      std::optional<Checkpoint> start;
      std::string pretrain_error;
      try {
        start = pretrain(bundle, PretrainConfig::from(cfg.schedule, dom, seed)).checkpoint;
      } catch (const Error& e) {
        pretrain_error = std::string("pretrain: ") + e.what();
      }
      for (std::size_t ci = 0; ci < n_cells; ++ci) {
        const CellSpec& cell = cfg.cells[ci];
        if (dom == Domain::control && !cell.control) continue;
        CellRun run;
        if (!start) {
          run.failed = true;
          run.error = pretrain_error;
        } else {
          note("seed " + std::to_string(seed) + ": " + cell.label() + " (" + to_string(dom) + ")");
          try {
            run = run_cell(bundle, *start, cell_run_config(cfg.schedule, cell, dom, seed));
          } catch (const Error& e) {
            run = CellRun{};
            run.failed = true;
            run.error = e.what();
          }
        }
        runs[di][ci].push_back(std::move(run));
      }
    }
  }

  ExperimentReport rep;
  rep.config = cfg;
  rep.dataset = nlohmann::json{{"seed", bundle.seed}, {"config", bundle.config}};

  for (std::size_t ci = 0; ci < n_cells; ++ci) {
    const CellSpec& cell = cfg.cells[ci];
    CellRow row{cell, cell.label(), cell.group(), detail::summarize(runs[0][ci]), std::nullopt};
    if (cell.control) row.control = detail::summarize(runs[1][ci]);
    rep.cells.push_back(std::move(row));
  }

  // Subset-protocol samples per usable cell, shifted domain, test split.
  std::vector<std::optional<std::vector<double>>> samples(n_cells);
  std::vector<std::vector<std::vector<PredictionRecord>>> records(n_cells);
  for (std::size_t ci = 0; ci < n_cells; ++ci) {
    if (rep.cells[ci].shifted.failed) continue;
    for (const auto& run : runs[0][ci]) records[ci].push_back(run.eval_records);
    samples[ci] = subset_accuracy_samples(records[ci], cfg.subset_count, cfg.subset_seed);
  }
  for (std::size_t i = 0; i < n_cells; ++i) {
    for (std::size_t j = i + 1; j < n_cells; ++j) {
      if (!samples[i] || !samples[j]) continue;
      Comparison c;
      c.a = rep.cells[i].label;
      c.b = rep.cells[j].label;
      c.welch = welch_t_test(*samples[i], *samples[j]);
      c.paired = paired_t_test(*samples[i], *samples[j]);
      double ov = 0.0;
      for (std::size_t s = 0; s < records[i].size(); ++s) ov += overlap(records[i][s], records[j][s]);
      c.overlap = ov / static_cast<double>(records[i].size());
      c.subset_mean_a = 100.0 * Summary::of(*samples[i]).mean;
      c.subset_mean_b = 100.0 * Summary::of(*samples[j]).mean;
      rep.comparisons.push_back(std::move(c));
    }
  }

  for (std::size_t ci = 0; ci < n_cells; ++ci) {
    if (rep.cells[ci].shifted.failed) continue;
    SpearmanRow sr;
    sr.label = rep.cells[ci].label;
    std::vector<double> rhos;
    for (const auto& run : runs[0][ci]) {
      if (run.spearman) rhos.push_back(*run.spearman);
      sr.degenerate += run.spearman_degenerate;
    }
    sr.rho = Summary::of(rhos);
    rep.spearman.push_back(std::move(sr));

    AnswerTypeRow ar;
    ar.label = rep.cells[ci].label;
    std::map<std::string, std::vector<double>> per_type;
    for (const auto& run : runs[0][ci])
      for (const auto& [type, acc] : accuracy(run.eval_records).by_answer_type)
        per_type[to_string(type)].push_back(acc);
    for (const auto& [type, xs] : per_type) ar.by_type[type] = Summary::of(xs);
    rep.answer_types.push_back(std::move(ar));
  }

  for (const auto& row : rep.cells) {
    if (row.spec.kind != CellKind::zero_out || row.spec.mode != SubsetMode::fixed) continue;
    rep.r_sweep.push_back({row.spec.r, row.shifted.failed, row.shifted.train, row.shifted.eval});
  }
  std::stable_sort(rep.r_sweep.begin(), rep.r_sweep.end(),
                   [](const SweepPoint& a, const SweepPoint& b) { return a.r < b.r; });
  return rep;
}

// ---------------------------------------------------------------------------
// emit_report

enum class ReportFormat { csv, markdown, json };

inline ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "md" || s == "markdown") return ReportFormat::markdown;
  if (s == "json") return ReportFormat::json;
  throw Error(ErrorKind::config, "unknown report format '" + s + "'");
}

inline std::string report_to_json_string(const ExperimentReport& r) {
  return nlohmann::json(r).dump(2) + "\n";
}

inline ExperimentReport report_from_json_string(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<ExperimentReport>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, std::string("malformed report: ") + e.what());
  }
}

namespace detail {

inline std::string pct(const Summary& s) {
  if (s.n == 0) return "n/a";
  return format_number("%.2f", s.mean) + " ± " + format_number("%.2f", s.std);
}

inline std::string pvalue(double p) { return p < 1e-4 ? format_number("%.1e", p) : format_number("%.4f", p); }

inline std::string domain_cell(const DomainResult& d, bool train) {
  if (d.failed) return "failed";
  return pct(train ? d.train : d.eval);
}

inline std::string csv_double(double v) { return format_number("%.17g", v); }

}  // namespace detail

inline std::string report_markdown(const ExperimentReport& r) {
  std::string md = "# Experiment report\n\n";
  md += "Accuracies are percentages, mean ± std over seeds (n = seed count).\n\n";

  md += "## 1. Accuracy\n\n";
  md += "| Group | Cell | Train | Test | Control train | Control val | CPIG | n |\n";
  md += "|---|---|---|---|---|---|---|---|\n";
  const std::vector<std::pair<std::string, std::string>> groups = {
      {"baseline", "Baseline"},         {"relevant", "Relevant cues"},
      {"irrelevant", "Irrelevant cues"}, {"fixed_random", "Fixed random cues"},
      {"variable_random", "Variable random cues"}, {"zero_out", "Zero-out"}};
  for (const auto& [key, title] : groups) {
    for (const auto& row : r.cells) {
      if (row.group != key) continue;
      md += "| " + title + " | " + row.label + " | " + detail::domain_cell(row.shifted, true) + " | " +
            detail::domain_cell(row.shifted, false) + " | " +
            (row.control ? detail::domain_cell(*row.control, true) : std::string("-")) + " | " +
            (row.control ? detail::domain_cell(*row.control, false) : std::string("-")) + " | " +
            (row.shifted.failed ? std::string("-") : detail::pct(row.shifted.cpig)) + " | " +
            std::to_string(row.shifted.train.n) + " |\n";
    }
  }
  for (const auto& row : r.cells)
    if (row.shifted.failed) md += "\nFailed: " + row.label + ": " + row.shifted.error + "\n";

  md += "\n## 2. Pairwise comparisons (test split)\n\n";
  if (r.comparisons.empty()) {
    md += "No comparisons.\n";
  } else {
    md += "| A | B | Mean A | Mean B | Welch t | dof | Welch p | Paired p | Overlap % |\n";
    md += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& c : r.comparisons)
      md += "| " + c.a + " | " + c.b + " | " + format_number("%.2f", c.subset_mean_a) + " | " +
            format_number("%.2f", c.subset_mean_b) + " | " + format_number("%.3f", c.welch.t) + " | " +
            format_number("%.1f", c.welch.dof) + " | " + detail::pvalue(c.welch.p) + " | " +
            detail::pvalue(c.paired.p) + " | " + format_number("%.2f", c.overlap) + " |\n";
  }

  md += "\n## 3. Sensitivity vs relevance (Spearman, cue-annotated test instances)\n\n";
  md += "| Cell | rho | Degenerate |\n|---|---|---|\n";
  for (const auto& s : r.spearman)
    md += "| " + s.label + " | " +
          (s.rho.n == 0 ? std::string("n/a")
                        : format_number("%.4f", s.rho.mean) + " ± " + format_number("%.4f", s.rho.std)) +
          " | " + std::to_string(s.degenerate) + " |\n";

  md += "\n## 4. Test accuracy by answer type\n\n";
  std::vector<std::string> types;
  for (const auto& a : r.answer_types)
    for (const auto& [t, s] : a.by_type)
      if (std::find(types.begin(), types.end(), t) == types.end()) types.push_back(t);
  md += "| Cell |";
  for (const auto& t : types) md += " " + t + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < types.size(); ++i) md += "---|";
  md += "\n";
  for (const auto& a : r.answer_types) {
    md += "| " + a.label + " |";
    for (const auto& t : types) {
      auto it = a.by_type.find(t);
      md += " " + (it == a.by_type.end() ? std::string("n/a") : detail::pct(it->second)) + " |";
    }
    md += "\n";
  }

  md += "\n## 5. Zero-out accuracy vs subset size\n\n";
  md += "| r | Train | Test |\n|---|---|---|\n";
  for (const auto& s : r.r_sweep)
    md += "| " + format_number("%g", s.r) + " | " + (s.failed ? "failed" : detail::pct(s.train)) + " | " +
          (s.failed ? "failed" : detail::pct(s.test)) + " |\n";
  return md;
}

/// One row per (cell, split) with mean, std and seed count.
inline std::string report_accuracy_csv(const ExperimentReport& r) {
  std::string csv = "cell,group,split,mean,std,n,failed\n";
  auto row = [&](const CellRow& c, const char* split, const DomainResult& d, bool train) {
    const Summary& s = train ? d.train : d.eval;
    csv += c.label + "," + c.group + "," + split + "," + detail::csv_double(s.mean) + "," +
           detail::csv_double(s.std) + "," + std::to_string(s.n) + "," + (d.failed ? "1" : "0") + "\n";
  };
  for (const auto& c : r.cells) {
    row(c, "train", c.shifted, true);
    row(c, "test", c.shifted, false);
    if (c.control) {
      row(c, "control_train", *c.control, true);
      row(c, "control_val", *c.control, false);
    }
  }
  return csv;
}

inline std::map<std::string, std::string> report_section_csvs(const ExperimentReport& r) {
  std::map<std::string, std::string> out;
  out["report.csv"] = report_accuracy_csv(r);
  std::string cmp = "a,b,mean_a,mean_b,welch_t,welch_dof,welch_p,welch_degenerate,paired_t,paired_p,overlap\n";
  for (const auto& c : r.comparisons)
    cmp += c.a + "," + c.b + "," + detail::csv_double(c.subset_mean_a) + "," + detail::csv_double(c.subset_mean_b) +
           "," + detail::csv_double(c.welch.t) + "," + detail::csv_double(c.welch.dof) + "," +
           detail::csv_double(c.welch.p) + "," + (c.welch.degenerate ? "1" : "0") + "," +
           detail::csv_double(c.paired.t) + "," + detail::csv_double(c.paired.p) + "," +
           detail::csv_double(c.overlap) + "\n";
  out["report_comparisons.csv"] = cmp;
  std::string sp = "cell,mean,std,n,degenerate\n";
  for (const auto& s : r.spearman)
    sp += s.label + "," + detail::csv_double(s.rho.mean) + "," + detail::csv_double(s.rho.std) + "," +
          std::to_string(s.rho.n) + "," + std::to_string(s.degenerate) + "\n";
  out["report_spearman.csv"] = sp;
  std::string at = "cell,answer_type,mean,std,n\n";
  for (const auto& a : r.answer_types)
    for (const auto& [t, s] : a.by_type)
      at += a.label + "," + t + "," + detail::csv_double(s.mean) + "," + detail::csv_double(s.std) + "," +
            std::to_string(s.n) + "\n";
  out["report_answer_types.csv"] = at;
  std::string sw = "r,split,mean,std,n,failed\n";
  for (const auto& s : r.r_sweep) {
    sw += detail::csv_double(s.r) + ",train," + detail::csv_double(s.train.mean) + "," +
          detail::csv_double(s.train.std) + "," + std::to_string(s.train.n) + "," + (s.failed ? "1" : "0") + "\n";
    sw += detail::csv_double(s.r) + ",test," + detail::csv_double(s.test.mean) + "," +
          detail::csv_double(s.test.std) + "," + std::to_string(s.test.n) + "," + (s.failed ? "1" : "0") + "\n";
  }
  out["report_r_sweep.csv"] = sw;
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::io, "write to '" + path.string() + "' failed");
}

/// Writes report.json, report.md, or report.csv plus one csv per further
/// section. Returns the paths written.
inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, ReportFormat fmt,
                                                      const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorKind::io,
          "cannot create output directory '" + dir.string() + "'");
  std::vector<std::filesystem::path> written;
  switch (fmt) {
    case ReportFormat::json:
      written.push_back(dir / "report.json");
      write_text(written.back(), report_to_json_string(r));
      break;
    case ReportFormat::markdown:
      written.push_back(dir / "report.md");
      write_text(written.back(), report_markdown(r));
      break;
    case ReportFormat::csv:
      for (const auto& [name, text] : report_section_csvs(r)) {
        written.push_back(dir / name);
        write_text(written.back(), text);
      }
      break;
  }
  return written;
}

inline ExperimentReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open report '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return report_from_json_string(text);
}

}  // namespace vqalab
