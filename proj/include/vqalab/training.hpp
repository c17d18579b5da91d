#pragma once

// Minibatch SGD over per-instance graphs, and the per-method objective that
// each fine-tuning run minimises.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vqalab/autodiff/graph.hpp"
#include "vqalab/error.hpp"
#include "vqalab/losses.hpp"
#include "vqalab/model.hpp"
#include "vqalab/rng.hpp"
#include "vqalab/synthcp.hpp"

namespace vqalab {

using ParamGrads = std::array<ad::Tensor, Parameters::count>;

inline ParamGrads zero_grads(const Parameters& p) {
  ParamGrads g;
  for (std::size_t k = 0; k < Parameters::count; ++k) g[k] = ad::Tensor(p.tensors[k].shape());
  return g;
}

inline std::vector<double> one_hot(std::size_t n, AnswerId a) {
  std::vector<double> y(n, 0.0);
  y.at(a) = 1.0;
  return y;
}

/// What one instance contributes to a fine-tuning objective.
struct ObjectiveSpec {
  LossConfig loss;
  /// Cue scores for this instance (hint / scr); empty otherwise.
  std::vector<double> cues;
  /// SCR: also add the second-phase term.
  bool scr_phase2 = false;
};

/// Builds the instance's total loss node on its forward graph.
inline ad::NodeId build_objective(ForwardPass& f, const Instance& inst, const ObjectiveSpec& spec) {
  ad::Graph& g = f.graph;
  const LossConfig& lc = spec.loss;
  const std::size_t n_answers = g.shape_of(f.scores)[0];
  const auto target = one_hot(n_answers, inst.gt_answer);
  ad::NodeId total = g.scale(bce_loss(g, f.scores, target), lc.vqa_loss_weight);

  auto prepared = [&](ad::NodeId s) { return lc.normalize_sensitivities ? normalize_sensitivity(g, s) : s; };

  switch (lc.method) {
    case Method::baseline:
      break;
    case Method::zero_out:
      if (lc.loss_weight > 0.0)
        total = g.add(total, g.scale(zero_out_loss(g, f.scores, target, lc.lambda), lc.loss_weight));
      break;
    case Method::hint: {
      require(spec.cues.size() == f.region_count, ErrorKind::config, "hint objective needs cue scores");
      const ad::NodeId s = prepared(sensitivity_node(f, inst.gt_answer, true));
      total = g.add(total, g.scale(hint_loss(g, s, spec.cues), lc.loss_weight));
      break;
    }
    case Method::scr: {
      require(spec.cues.size() == f.region_count, ErrorKind::config, "scr objective needs cue scores");
      lc.validate(f.region_count);
      std::map<AnswerId, ad::NodeId> sens;
      sens[inst.gt_answer] = prepared(sensitivity_node(f, inst.gt_answer, true));
      total = g.add(total, g.scale(scr_phase1_loss(g, sens[inst.gt_answer], spec.cues, lc.n_influential),
                                   lc.loss_weight));
      if (spec.scr_phase2) {
        const auto competitors =
            scr_competitors(g.value(f.scores).data(), inst.gt_answer, lc.n_competitors);
        for (AnswerId a : competitors) sens[a] = prepared(sensitivity_node(f, a, true));
        const ad::NodeId p2 =
            scr_phase2_loss(g, sens, inst.gt_answer, spec.cues, lc.n_influential, competitors);
        total = g.add(total, g.scale(p2, lc.phase2_weight));
      }
      break;
    }
  }
  return total;
}

/// Adds d(loss)/d(params) * scale into `acc` and returns the loss value.
inline double accumulate_gradients(const Parameters& p, const Instance& inst, const ObjectiveSpec& spec,
                                   double scale, ParamGrads& acc) {
  ForwardPass f = build_forward(p, inst);
  const ad::NodeId loss = build_objective(f, inst, spec);
  const double value = f.graph.value(loss).item();
  const auto grads = f.graph.gradient(loss, f.params, false);
  for (std::size_t k = 0; k < Parameters::count; ++k) {
    auto& dst = acc[k].data();
    const auto& src = grads[k].tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  }
  return value;
}

enum class OptimizerKind { sgd, momentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.1;
  double momentum = 0.9;
};

/// Plain SGD with optional heavy-ball momentum.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const Parameters& p) : cfg_(cfg), velocity_(zero_grads(p)) {
    require(cfg.learning_rate > 0.0, ErrorKind::config, "learning_rate must be > 0");
  }

  void step(Parameters& p, const ParamGrads& grads) {
    for (std::size_t k = 0; k < Parameters::count; ++k) {
      auto& w = p.tensors[k].data();
      const auto& gk = grads[k].data();
      if (cfg_.kind == OptimizerKind::momentum) {
        auto& v = velocity_[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = cfg_.momentum * v[i] + gk[i];
          w[i] -= cfg_.learning_rate * v[i];
        }
      } else {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg_.learning_rate * gk[i];
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  ParamGrads velocity_;
};

/// Mean loss and one optimizer step over a minibatch.
inline double train_batch(Parameters& p, Optimizer& opt, std::span<const Instance* const> batch,
                          const std::function<ObjectiveSpec(const Instance&)>& spec_for) {
  require(!batch.empty(), ErrorKind::empty_input, "empty minibatch");
  ParamGrads acc = zero_grads(p);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const Instance* inst : batch) total += accumulate_gradients(p, *inst, spec_for(*inst), scale, acc);
  for (const auto& t : acc)
    for (double x : t.data())
      if (!std::isfinite(x)) throw Error(ErrorKind::numeric, "non-finite gradient in minibatch");
  opt.step(p, acc);
  return total * scale;
}

/// Evaluation of one instance under fixed parameters.
struct InstanceEval {
  AnswerId predicted = 0;
  bool correct = false;
  std::size_t top_sensitive_region = 0;
};

inline InstanceEval evaluate_instance(const Parameters& p, const Instance& inst, bool with_sensitivity) {
  ForwardPass f = build_forward(p, inst);
  const auto& scores = f.graph.value(f.scores).data();
  InstanceEval e;
  e.predicted = argmax(scores);
  e.correct = e.predicted == inst.gt_answer;
  if (with_sensitivity) {
    const auto s = sensitivity_values(f, e.predicted);
    e.top_sensitive_region = argmax(s);
  }
  return e;
}

/// Fraction of correct argmax predictions.
inline double split_accuracy(const Parameters& p, std::span<const Instance> split) {
  if (split.empty()) return 0.0;
  std::size_t hits = 0;
  for (const Instance& inst : split) hits += evaluate_instance(p, inst, false).correct;
  return static_cast<double>(hits) / static_cast<double>(split.size());
}

}  // namespace vqalab
