#pragma once

// Pretraining and fine-tuning runs: schedules, per-epoch logs, reporting
// epoch selection and prediction dumps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqalab/error.hpp"
#include "vqalab/losses.hpp"
#include "vqalab/metrics.hpp"
#include "vqalab/model.hpp"
#include "vqalab/rng.hpp"
#include "vqalab/synthcp.hpp"
#include "vqalab/training.hpp"

namespace vqalab {

/// Which pair of splits a run trains and evaluates on.
enum class Domain { shifted, control };

inline std::string to_string(Domain d) { return d == Domain::control ? "control" : "shifted"; }

inline Domain domain_from_string(const std::string& s) {
  if (s == "shifted") return Domain::shifted;
  if (s == "control") return Domain::control;
  throw Error(ErrorKind::config, "unknown domain '" + s + "'");
}

inline Split train_split(Domain d) { return d == Domain::control ? Split::control_train : Split::train; }
inline Split eval_split(Domain d) { return d == Domain::control ? Split::control_val : Split::test; }

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::momentum ? "momentum" : "sgd"; }

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "momentum") return OptimizerKind::momentum;
  throw Error(ErrorKind::config, "unknown optimizer '" + s + "'");
}

/// Learning rates, epochs and batch size for every kind of run.
struct Schedule {
  std::size_t hidden = 32;
  Activation activation = Activation::softplus;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  std::size_t batch_size = 50;
  double pretrain_lr = 10.0;
  std::size_t pretrain_epochs = 40;
  double hint_lr = 2e-4;
  std::size_t hint_epochs = 12;
  double scr_phase1_lr = 5e-4;
  std::size_t scr_phase1_epochs = 12;
  double scr_phase2_lr = 1e-3;
  std::size_t scr_phase2_epochs = 6;
  /// Zero-out runs use zero_out_base_lr / r.
  double zero_out_base_lr = 1e-2;
  std::size_t zero_out_epochs = 8;
  std::size_t zero_out_report_epoch = 8;
  /// bce-only continuation, matched to the HINT schedule.
  double bce_finetune_lr = 2e-4;
  std::size_t bce_finetune_epochs = 12;
  /// Add a full-train bce batch alongside every cue or subset batch.
  bool full_train_bce = false;

  /// Values from the original training recipe. Tuned for a large detector-
  /// feature model; far too small to move the desk-scale model.
  static Schedule paper() {
    Schedule s;
    s.batch_size = 384;
    s.pretrain_lr = 1e-3;
    s.hint_lr = 2e-5;
    s.scr_phase1_lr = 5e-5;
    s.scr_phase2_lr = 1e-4;
    s.zero_out_base_lr = 2e-6;
    s.bce_finetune_lr = 2e-5;
    return s;
  }

  /// Desk-scale default, fixed by pilot runs on the default bundle.
  static Schedule desk() { return Schedule{}; }

  static Schedule named(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw Error(ErrorKind::config, "unknown profile '" + name + "'");
  }

  void validate() const {
    for (double lr : {pretrain_lr, hint_lr, scr_phase1_lr, scr_phase2_lr, zero_out_base_lr, bce_finetune_lr})
      require(lr > 0.0 && std::isfinite(lr), ErrorKind::config, "learning rates must be > 0");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
    require(hidden >= 1, ErrorKind::config, "hidden must be >= 1");
    require(zero_out_report_epoch >= 1 && zero_out_report_epoch <= zero_out_epochs, ErrorKind::config,
            "zero_out_report_epoch must lie in [1, zero_out_epochs]");
  }

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

inline void to_json(nlohmann::json& j, const Schedule& s) {
  j = nlohmann::json{{"hidden", s.hidden},
                     {"activation", to_string(s.activation)},
                     {"optimizer", to_string(s.optimizer)},
                     {"momentum", s.momentum},
                     {"batch_size", s.batch_size},
                     {"pretrain_lr", s.pretrain_lr},
                     {"pretrain_epochs", s.pretrain_epochs},
                     {"hint_lr", s.hint_lr},
                     {"hint_epochs", s.hint_epochs},
                     {"scr_phase1_lr", s.scr_phase1_lr},
                     {"scr_phase1_epochs", s.scr_phase1_epochs},
                     {"scr_phase2_lr", s.scr_phase2_lr},
                     {"scr_phase2_epochs", s.scr_phase2_epochs},
                     {"zero_out_base_lr", s.zero_out_base_lr},
                     {"zero_out_epochs", s.zero_out_epochs},
                     {"zero_out_report_epoch", s.zero_out_report_epoch},
                     {"bce_finetune_lr", s.bce_finetune_lr},
                     {"bce_finetune_epochs", s.bce_finetune_epochs},
                     {"full_train_bce", s.full_train_bce}};
}

/// Missing keys keep the values already in `s`, so a partial object
/// overrides a base profile.
inline void from_json(const nlohmann::json& j, Schedule& s) {
  const Schedule d = s;
  s.hidden = j.value("hidden", d.hidden);
  s.activation = activation_from_string(j.value("activation", to_string(d.activation)));
  s.optimizer = optimizer_kind_from_string(j.value("optimizer", to_string(d.optimizer)));
  s.momentum = j.value("momentum", d.momentum);
  s.batch_size = j.value("batch_size", d.batch_size);
  s.pretrain_lr = j.value("pretrain_lr", d.pretrain_lr);
  s.pretrain_epochs = j.value("pretrain_epochs", d.pretrain_epochs);
  s.hint_lr = j.value("hint_lr", d.hint_lr);
  s.hint_epochs = j.value("hint_epochs", d.hint_epochs);
  s.scr_phase1_lr = j.value("scr_phase1_lr", d.scr_phase1_lr);
  s.scr_phase1_epochs = j.value("scr_phase1_epochs", d.scr_phase1_epochs);
  s.scr_phase2_lr = j.value("scr_phase2_lr", d.scr_phase2_lr);
  s.scr_phase2_epochs = j.value("scr_phase2_epochs", d.scr_phase2_epochs);
  s.zero_out_base_lr = j.value("zero_out_base_lr", d.zero_out_base_lr);
  s.zero_out_epochs = j.value("zero_out_epochs", d.zero_out_epochs);
  s.zero_out_report_epoch = j.value("zero_out_report_epoch", d.zero_out_report_epoch);
  s.bce_finetune_lr = j.value("bce_finetune_lr", d.bce_finetune_lr);
  s.bce_finetune_epochs = j.value("bce_finetune_epochs", d.bce_finetune_epochs);
  s.full_train_bce = j.value("full_train_bce", d.full_train_bce);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  /// Produce PredictionRecords (needs one backward pass per instance).
  bool records = false;
  std::string run_id;
  std::string variant;
  /// Spearman between S(a_gt, .) and gt_relevance on cue instances.
  bool spearman = false;
};

struct SplitEval {
  double accuracy = 0.0;  // fraction
  double mean_loss = 0.0;
  std::vector<PredictionRecord> records;
  std::vector<double> spearman_values;
  std::size_t spearman_degenerate = 0;
};

inline SplitEval evaluate_split(const Parameters& p, std::span<const Instance> split, const EvalOptions& opt) {
  SplitEval out;
  if (split.empty()) return out;
  std::size_t hits = 0;
  double loss = 0.0;
  for (const Instance& inst : split) {
    ForwardPass f = build_forward(p, inst);
    const auto& scores = f.graph.value(f.scores).data();
    const AnswerId pred = argmax(scores);
    hits += pred == inst.gt_answer;
    for (std::size_t a = 0; a < scores.size(); ++a) {
      const double q = std::clamp(scores[a], kBceEpsilon, 1.0 - kBceEpsilon);
      loss -= a == inst.gt_answer ? std::log(q) : std::log1p(-q);
    }
    if (opt.records) {
      PredictionRecord r;
      r.instance_id = inst.id;
      r.run_id = opt.run_id;
      r.variant = opt.variant;
      r.split = inst.split;
      r.predicted_answer = pred;
      r.correct = pred == inst.gt_answer;
      r.top_sensitive_region = argmax(sensitivity_values(f, pred));
      r.answer_type = inst.answer_type;
      out.records.push_back(std::move(r));
    }
    if (opt.spearman && inst.has_cues) {
      const auto s = sensitivity_values(f, inst.gt_answer);
      if (auto rho = spearman(s, inst.gt_relevance))
        out.spearman_values.push_back(*rho);
      else
        ++out.spearman_degenerate;
    }
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(split.size());
  out.mean_loss = loss / static_cast<double>(split.size() * p.config.answers);
  return out;
}

struct EpochLog {
  std::string phase;
  std::size_t epoch = 0;
  /// Mean training objective over the epoch's batches (0 for epoch 0).
  double objective = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  double train_loss = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

inline void to_json(nlohmann::json& j, const EpochLog& e) {
  j = nlohmann::json{{"phase", e.phase},
                     {"epoch", e.epoch},
                     {"objective", e.objective},
                     {"train_accuracy", e.train_accuracy},
                     {"eval_accuracy", e.eval_accuracy},
                     {"train_loss", e.train_loss}};
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  Domain domain = Domain::shifted;
  double learning_rate = 10.0;
  std::size_t epochs = 40;
  std::size_t batch_size = 50;
  std::uint64_t seed = 1;
  std::size_t hidden = 32;
  Activation activation = Activation::softplus;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;

  static PretrainConfig from(const Schedule& s, Domain d, std::uint64_t seed) {
    PretrainConfig c;
    c.domain = d;
    c.learning_rate = s.pretrain_lr;
    c.epochs = s.pretrain_epochs;
    c.batch_size = s.batch_size;
    c.seed = seed;
    c.hidden = s.hidden;
    c.activation = s.activation;
    c.optimizer = s.optimizer;
    c.momentum = s.momentum;
    return c;
  }

  void validate() const {
    require(learning_rate > 0.0, ErrorKind::config, "learning_rate must be > 0");
    require(epochs >= 1, ErrorKind::config, "epochs must be >= 1");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"domain", to_string(c.domain)},   {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},              {"batch_size", c.batch_size},
                     {"seed", c.seed},                  {"hidden", c.hidden},
                     {"activation", to_string(c.activation)}, {"optimizer", to_string(c.optimizer)},
                     {"momentum", c.momentum}};
}

/// Missing keys keep the current values of `c`.
inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  const PretrainConfig d = c;
  c.domain = domain_from_string(j.value("domain", to_string(d.domain)));
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.hidden = j.value("hidden", d.hidden);
  c.activation = activation_from_string(j.value("activation", to_string(d.activation)));
  c.optimizer = optimizer_kind_from_string(j.value("optimizer", to_string(d.optimizer)));
  c.momentum = j.value("momentum", d.momentum);
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

namespace detail {

inline std::vector<const Instance*> pointers(std::span<const Instance> split) {
  std::vector<const Instance*> out;
  out.reserve(split.size());
  for (const Instance& i : split) out.push_back(&i);
  return out;
}

/// Shuffles `pool` and runs one epoch of minibatch steps. `spec_for`
/// receives false for instances drawn from the optional full-train bce
/// stream. Returns the mean batch objective.
inline double run_epoch(Parameters& p, Optimizer& opt, std::vector<const Instance*>& pool,
                        std::size_t batch_size, Rng& rng,
                        const std::function<ObjectiveSpec(const Instance&, bool)>& spec_for,
                        const std::vector<const Instance*>* extra_bce, const std::string& where) {
  rng.shuffle(pool);
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, pool.size() - start);
    std::vector<const Instance*> batch(pool.begin() + static_cast<std::ptrdiff_t>(start),
                                       pool.begin() + static_cast<std::ptrdiff_t>(start + n));
    if (extra_bce != nullptr && !extra_bce->empty())
      for (std::size_t i = 0; i < n; ++i) batch.push_back((*extra_bce)[rng.below(extra_bce->size())]);
    // train_batch visits the batch in order.
    std::size_t position = 0;
    double loss = 0.0;
    try {
      loss = train_batch(p, opt, batch, [&](const Instance& inst) { return spec_for(inst, position++ < n); });
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      throw Error(ErrorKind::numeric, where + ", batch " + std::to_string(batches) + ": " + e.what() +
                                          (p.all_finite() ? "" : " (parameters non-finite)"));
    }
    if (!std::isfinite(loss))
      throw Error(ErrorKind::numeric, where + ", batch " + std::to_string(batches) + ": non-finite loss");
    total += loss;
    ++batches;
  }
  return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

}  // namespace detail

/// Minibatch descent on bce over the domain's train split.
inline PretrainResult pretrain(const DatasetBundle& bundle, const PretrainConfig& cfg) {
  cfg.validate();
  const auto& train = bundle.split(train_split(cfg.domain));
  const auto& eval = bundle.split(eval_split(cfg.domain));
  require(!train.empty(), ErrorKind::empty_input, "pretrain: empty train split");
  PretrainResult out;
  Parameters p = init(model_config_for(bundle, cfg.hidden, cfg.activation), cfg.seed);
  Optimizer opt({cfg.optimizer, cfg.learning_rate, cfg.momentum}, p);

  auto log_epoch = [&](std::size_t epoch, double objective) {
    const SplitEval tr = evaluate_split(p, train, {});
    EpochLog e{"pretrain", epoch, objective, tr.accuracy, evaluate_split(p, eval, {}).accuracy, tr.mean_loss};
    out.log.push_back(e);
  };
  log_epoch(0, 0.0);

  ObjectiveSpec spec;
  spec.loss = LossConfig::defaults(Method::baseline);
  auto pool = detail::pointers(train);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng({cfg.seed, 0x9e7aULL, epoch});
    const double obj = detail::run_epoch(p, opt, pool, cfg.batch_size, rng,
                                         [&](const Instance&, bool) { return spec; }, nullptr,
                                         "pretrain epoch " + std::to_string(epoch));
    log_epoch(epoch, obj);
  }
  out.checkpoint = {std::move(p), cfg.epochs, "pretrain-" + to_string(cfg.domain) + "-s" + std::to_string(cfg.seed)};
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct RunConfig {
  Domain domain = Domain::shifted;
  LossConfig loss = LossConfig::defaults(Method::hint);
  CueVariant variant = CueVariant::relevant;
  double learning_rate = 2e-4;
  std::size_t epochs = 12;
  std::size_t batch_size = 50;
  double subset_fraction = 0.01;
  SubsetMode subset_mode = SubsetMode::fixed;
  std::uint64_t seed = 1;
  /// SCR second phase.
  double phase2_learning_rate = 1e-3;
  std::size_t phase2_epochs = 6;
  /// Fixed reporting epoch; when empty the best eval-accuracy epoch is used.
  std::optional<std::size_t> report_epoch;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  bool full_train_bce = false;
  /// Keep prediction records for every epoch, not just the reporting one.
  bool records_every_epoch = false;
  std::string run_id;
  std::string variant_label;

  /// Defaults for `method` under a schedule. Zero-out uses base_lr / r.
  static RunConfig from(const Schedule& s, Method method, Domain d, std::uint64_t seed) {
    RunConfig c;
    c.domain = d;
    c.loss = LossConfig::defaults(method);
    c.batch_size = s.batch_size;
    c.seed = seed;
    c.optimizer = s.optimizer;
    c.momentum = s.momentum;
    c.full_train_bce = s.full_train_bce;
    switch (method) {
      case Method::baseline:
        c.learning_rate = s.bce_finetune_lr;
        c.epochs = s.bce_finetune_epochs;
        break;
      case Method::hint:
        c.learning_rate = s.hint_lr;
        c.epochs = s.hint_epochs;
        break;
      case Method::scr:
        c.learning_rate = s.scr_phase1_lr;
        c.epochs = s.scr_phase1_epochs;
        c.phase2_learning_rate = s.scr_phase2_lr;
        c.phase2_epochs = s.scr_phase2_epochs;
        break;
      case Method::zero_out:
        c.learning_rate = s.zero_out_base_lr / c.subset_fraction;
        c.epochs = s.zero_out_epochs;
        c.report_epoch = s.zero_out_report_epoch;
        break;
    }
    return c;
  }

  void validate(std::size_t regions) const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::config, "learning_rate must be > 0");
    require(batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
    require(subset_fraction > 0.0 && subset_fraction <= 1.0, ErrorKind::config,
            "subset fraction r must lie in (0, 1]");
    if (loss.method == Method::scr)
      require(phase2_learning_rate > 0.0, ErrorKind::config, "phase-2 learning_rate must be > 0");
    if (report_epoch && epochs > 0)
      require(*report_epoch >= 1 && *report_epoch <= epochs, ErrorKind::config,
              "report_epoch must lie in [1, epochs]");
    loss.validate(regions);
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"domain", to_string(c.domain)},
                     {"method", to_string(c.loss.method)},
                     {"loss_weight", c.loss.loss_weight},
                     {"lambda", c.loss.lambda},
                     {"n_influential", c.loss.n_influential},
                     {"n_competitors", c.loss.n_competitors},
                     {"vqa_loss_weight", c.loss.vqa_loss_weight},
                     {"phase2_weight", c.loss.phase2_weight},
                     {"normalize_sensitivities", c.loss.normalize_sensitivities},
                     {"variant", to_string(c.variant)},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"subset_fraction", c.subset_fraction},
                     {"subset_mode", to_string(c.subset_mode)},
                     {"seed", c.seed},
                     {"phase2_learning_rate", c.phase2_learning_rate},
                     {"phase2_epochs", c.phase2_epochs},
                     {"report_epoch", c.report_epoch ? nlohmann::json(*c.report_epoch) : nlohmann::json()},
                     {"optimizer", to_string(c.optimizer)},
                     {"momentum", c.momentum},
                     {"full_train_bce", c.full_train_bce},
                     {"records_every_epoch", c.records_every_epoch},
                     {"run_id", c.run_id},
                     {"variant_label", c.variant_label}};
}

/// Missing keys keep the current values of `c`.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d = c;
  c.domain = domain_from_string(j.value("domain", to_string(d.domain)));
  if (j.contains("method")) {
    const Method m = method_from_string(j.at("method").get<std::string>());
    if (m != d.loss.method) c.loss = LossConfig::defaults(m);
  }
  c.loss.loss_weight = j.value("loss_weight", c.loss.loss_weight);
  c.loss.lambda = j.value("lambda", c.loss.lambda);
  c.loss.n_influential = j.value("n_influential", c.loss.n_influential);
  c.loss.n_competitors = j.value("n_competitors", c.loss.n_competitors);
  c.loss.vqa_loss_weight = j.value("vqa_loss_weight", c.loss.vqa_loss_weight);
  c.loss.phase2_weight = j.value("phase2_weight", c.loss.phase2_weight);
  c.loss.normalize_sensitivities = j.value("normalize_sensitivities", c.loss.normalize_sensitivities);
  c.variant = cue_variant_from_string(j.value("variant", to_string(d.variant)));
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.subset_fraction = j.value("subset_fraction", d.subset_fraction);
  c.subset_mode = subset_mode_from_string(j.value("subset_mode", to_string(d.subset_mode)));
  c.seed = j.value("seed", d.seed);
  c.phase2_learning_rate = j.value("phase2_learning_rate", d.phase2_learning_rate);
  c.phase2_epochs = j.value("phase2_epochs", d.phase2_epochs);
  if (j.contains("report_epoch"))
    c.report_epoch = j.at("report_epoch").is_null() ? std::nullopt
                                                    : std::optional<std::size_t>(j.at("report_epoch").get<std::size_t>());
  c.optimizer = optimizer_kind_from_string(j.value("optimizer", to_string(d.optimizer)));
  c.momentum = j.value("momentum", d.momentum);
  c.full_train_bce = j.value("full_train_bce", d.full_train_bce);
  c.records_every_epoch = j.value("records_every_epoch", d.records_every_epoch);
  c.run_id = j.value("run_id", d.run_id);
  c.variant_label = j.value("variant_label", d.variant_label);
}

struct EpochRecords {
  std::string phase;
  std::size_t epoch = 0;
  std::vector<PredictionRecord> records;
};

struct FinetuneResult {
  Checkpoint checkpoint;  // parameters at the reporting epoch
  std::string report_phase;
  std::size_t report_epoch = 0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  std::vector<EpochLog> log;
  /// Train and eval split records at the reporting epoch.
  std::vector<PredictionRecord> records;
  std::vector<double> spearman_values;
  std::size_t spearman_degenerate = 0;
  std::vector<EpochRecords> epoch_records;
};

namespace detail {

struct Snapshot {
  Parameters params;
  std::string phase;
  std::size_t epoch = 0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
};

inline std::vector<PredictionRecord> domain_records(const DatasetBundle& b, const Parameters& p, Domain d,
                                                    const EvalOptions& opt, SplitEval* eval_out) {
  auto tr = evaluate_split(p, b.split(train_split(d)), opt);
  auto ev = evaluate_split(p, b.split(eval_split(d)), opt);
  std::vector<PredictionRecord> out = std::move(tr.records);
  out.insert(out.end(), ev.records.begin(), ev.records.end());
  if (eval_out != nullptr) *eval_out = std::move(ev);
  return out;
}

}  // namespace detail

/// Fine-tunes a checkpoint. Method baseline is a bce-only continuation on
/// the cue instances; the public `finetune` rejects it.
inline FinetuneResult finetune_any(const DatasetBundle& bundle, const Checkpoint& start, const RunConfig& cfg) {
  cfg.validate(bundle.config.regions);
  const Method method = cfg.loss.method;
  const Split tr_split = train_split(cfg.domain);
  const auto& train = bundle.split(tr_split);
  const auto& eval = bundle.split(eval_split(cfg.domain));
  const std::string run_id = cfg.run_id.empty() ? "s" + std::to_string(cfg.seed) : cfg.run_id;
  const std::string label = cfg.variant_label.empty() ? to_string(method) : cfg.variant_label;
  const EvalOptions record_opts{true, run_id, label, true};

  FinetuneResult out;
  if (cfg.epochs == 0) {
    out.checkpoint = start;
    SplitEval ev;
    out.records = detail::domain_records(bundle, start.params, cfg.domain, record_opts, &ev);
    out.train_accuracy = evaluate_split(start.params, train, {}).accuracy;
    out.eval_accuracy = ev.accuracy;
    out.spearman_values = std::move(ev.spearman_values);
    out.spearman_degenerate = ev.spearman_degenerate;
    out.report_phase = "none";
    return out;
  }

  std::vector<const Instance*> cue_pool;
  for (const Instance& i : train)
    if (i.has_cues) cue_pool.push_back(&i);
  if (method != Method::zero_out)
    require(!cue_pool.empty(), ErrorKind::config,
            "fine-tuning needs cue-annotated instances in " + to_string(tr_split));
  const auto full_pool = detail::pointers(train);

  Parameters p = start.params;
  auto evaluate_epoch = [&](const std::string& phase, std::size_t epoch, double objective) {
    const SplitEval tr = evaluate_split(p, train, {});
    const SplitEval ev = evaluate_split(p, eval, {});
    out.log.push_back({phase, epoch, objective, tr.accuracy, ev.accuracy, tr.mean_loss});
    if (cfg.records_every_epoch)
      out.epoch_records.push_back({phase, epoch, detail::domain_records(bundle, p, cfg.domain, record_opts, nullptr)});
    return std::pair{tr.accuracy, ev.accuracy};
  };

  auto run_phase = [&](const std::string& phase, double lr, std::size_t epochs, bool phase2,
                       std::optional<std::size_t> fixed_report) {
    Optimizer opt({cfg.optimizer, lr, cfg.momentum}, p);
    std::optional<detail::Snapshot> best;
    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
      // Cue and subset draws use 0-based epochs.
      const std::size_t draw_epoch = epoch - 1;
      std::vector<const Instance*> pool;
      if (method == Method::zero_out) {
        const std::size_t key_epoch = cfg.subset_mode == SubsetMode::fixed ? 0 : draw_epoch;
        for (InstanceId id : select_loss_subset(train, cfg.subset_fraction, cfg.subset_mode, cfg.seed, key_epoch))
          pool.push_back(&bundle.instance(id));
      } else {
        pool = cue_pool;
      }
      auto spec_for = [&](const Instance& inst, bool from_pool) {
        ObjectiveSpec s;
        s.loss = cfg.loss;
        s.scr_phase2 = phase2;
        if (!from_pool)
          s.loss.method = Method::baseline;
        else if (method == Method::hint || method == Method::scr)
          s.cues = cue_scores(inst, cfg.variant, cfg.seed, draw_epoch).scores;
        return s;
      };
      Rng rng({cfg.seed, 0xf17eULL, phase2 ? 2ULL : 1ULL, epoch});
      const double obj = detail::run_epoch(p, opt, pool, cfg.batch_size, rng, spec_for,
                                           cfg.full_train_bce ? &full_pool : nullptr,
                                           phase + " epoch " + std::to_string(epoch));
      const auto [tr_acc, ev_acc] = evaluate_epoch(phase, epoch, obj);
      const bool take = fixed_report ? epoch == *fixed_report : (!best || ev_acc > best->eval_accuracy);
      if (take) best = detail::Snapshot{p, phase, epoch, tr_acc, ev_acc};
    }
    return *best;
  };

  detail::Snapshot chosen;
  if (method == Method::scr) {
    const auto phase1 = run_phase("phase1", cfg.learning_rate, cfg.epochs, false, cfg.report_epoch);
    p = phase1.params;
    chosen = cfg.phase2_epochs == 0 ? phase1
                                    : run_phase("phase2", cfg.phase2_learning_rate, cfg.phase2_epochs, true, std::nullopt);
  } else {
    chosen = run_phase("finetune", cfg.learning_rate, cfg.epochs, false, cfg.report_epoch);
  }

  out.checkpoint = {chosen.params, chosen.epoch, run_id};
  out.report_phase = chosen.phase;
  out.report_epoch = chosen.epoch;
  out.train_accuracy = chosen.train_accuracy;
  out.eval_accuracy = chosen.eval_accuracy;
  SplitEval ev;
  out.records = detail::domain_records(bundle, chosen.params, cfg.domain, record_opts, &ev);
  out.spearman_values = std::move(ev.spearman_values);
  out.spearman_degenerate = ev.spearman_degenerate;
  return out;
}

inline FinetuneResult finetune(const DatasetBundle& bundle, const Checkpoint& start, const RunConfig& cfg) {
  require(cfg.loss.method != Method::baseline, ErrorKind::config, "finetune: method must not be baseline");
  return finetune_any(bundle, start, cfg);
}

}  // namespace vqalab
