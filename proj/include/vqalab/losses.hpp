#pragma once

// Training objectives: BCE, the zero-out regularizer, and the two
// sensitivity-alignment losses (pairwise ranking hinge and the two-phase
// influential-region hinge). Every builder returns a rank-0 graph node.

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vqalab/autodiff/graph.hpp"
#include "vqalab/error.hpp"
#include "vqalab/synthcp.hpp"

namespace vqalab {

enum class Method { baseline, hint, scr, zero_out };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::baseline: return "baseline";
    case Method::hint: return "hint";
    case Method::scr: return "scr";
    case Method::zero_out: return "zero_out";
  }
  return "baseline";
}

inline Method method_from_string(const std::string& s) {
  if (s == "baseline") return Method::baseline;
  if (s == "hint") return Method::hint;
  if (s == "scr") return Method::scr;
  if (s == "zero_out") return Method::zero_out;
  throw Error(ErrorKind::config, "unknown method '" + s + "'");
}

struct LossConfig {
  Method method = Method::baseline;
  double loss_weight = 0.0;
  double lambda = 1.0;
  std::size_t n_influential = 3;
  std::size_t n_competitors = 5;
  double vqa_loss_weight = 1.0;
  /// SCR second-phase weight; applied alongside the first-phase term.
  double phase2_weight = 1000.0;
  /// Ablation: L2-normalise each sensitivity vector before the hinge.
  bool normalize_sensitivities = false;

  static LossConfig defaults(Method m) {
    LossConfig c;
    c.method = m;
    switch (m) {
      case Method::baseline: c.loss_weight = 0.0; break;
      case Method::hint: c.loss_weight = 2.0; break;
      case Method::scr: c.loss_weight = 3.0; break;
      case Method::zero_out: c.loss_weight = 2.0; break;
    }
    return c;
  }

  void validate(std::size_t regions) const {
    require(loss_weight >= 0.0 && lambda >= 0.0 && vqa_loss_weight >= 0.0 && phase2_weight >= 0.0,
            ErrorKind::config, "loss weights must be non-negative");
    require(n_influential < regions, ErrorKind::config, "n_influential must be < K");
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

inline constexpr double kBceEpsilon = 1e-12;

/// Mean over answers of -[y log p + (1 - y) log(1 - p)], p clamped to
/// [eps, 1 - eps].
inline ad::NodeId bce_loss(ad::Graph& g, ad::NodeId scores, std::span<const double> targets) {
  const ad::Shape s = g.shape_of(scores);
  require(s.rank() == 1 && s[0] == targets.size(), ErrorKind::shape,
          "bce_loss: scores " + s.str() + " vs " + std::to_string(targets.size()) + " targets");
  for (double y : targets)
    require(y >= 0.0 && y <= 1.0, ErrorKind::config, "bce_loss: targets must lie in [0, 1]");
  const std::size_t n = targets.size();
  const ad::NodeId p = g.clamp(scores, kBceEpsilon, 1.0 - kBceEpsilon);
  const ad::NodeId log_q = g.log(g.affine(p, -1.0, 1.0));
  std::vector<double> neg(n);
  for (std::size_t i = 0; i < n; ++i) neg[i] = 1.0 - targets[i];
  ad::NodeId total = g.sum(g.mul(g.constant(ad::Tensor::vector(std::move(neg))), log_q));
  if (std::any_of(targets.begin(), targets.end(), [](double y) { return y > 0.0; })) {
    const ad::NodeId log_p = g.log(p);
    const ad::NodeId pos = g.sum(
        g.mul(g.constant(ad::Tensor::vector(std::vector<double>(targets.begin(), targets.end()))),
              log_p));
    total = g.add(pos, total);
  }
  return g.scale(total, -1.0 / static_cast<double>(n));
}

/// bce(scores, targets) + lambda * bce(scores, 0).
inline ad::NodeId zero_out_loss(ad::Graph& g, ad::NodeId scores, std::span<const double> targets,
                                double lambda) {
  require(lambda >= 0.0, ErrorKind::config, "zero_out_loss: lambda must be >= 0");
  const ad::NodeId main = bce_loss(g, scores, targets);
  if (lambda == 0.0) return main;
  const std::vector<double> zeros(targets.size(), 0.0);
  return g.add(main, g.scale(bce_loss(g, scores, zeros), lambda));
}

namespace detail {

inline ad::NodeId zero_scalar(ad::Graph& g) { return g.constant(ad::Tensor::scalar(0.0)); }

/// Sum over (i, j) rows of max(0, s_j - s_i), divided by `norm`. Each pair
/// becomes one row of a +1/-1 difference matrix.
inline ad::NodeId pairwise_hinge(ad::Graph& g, ad::NodeId sens,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                 double norm) {
  const std::size_t k = g.shape_of(sens)[0];
  if (pairs.empty()) return zero_scalar(g);
  ad::Tensor diff{ad::Shape(pairs.size(), k)};
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    diff.at(r, pairs[r].second) += 1.0;
    diff.at(r, pairs[r].first) -= 1.0;
  }
  const ad::NodeId d = g.matmul(g.constant(std::move(diff)), g.reshape(sens, ad::Shape(k, 1)));
  return g.scale(g.sum(g.hinge(d)), 1.0 / norm);
}

inline void check_lengths(const ad::Graph& g, ad::NodeId sens, std::size_t cues, const char* op) {
  const ad::Shape s = g.shape_of(sens);
  require(s.rank() == 1 && s[0] == cues, ErrorKind::shape,
          std::string(op) + ": sensitivities " + s.str() + " vs " + std::to_string(cues) + " cues");
}

}  // namespace detail

/// L2-normalised copy of a sensitivity vector (ablation).
inline ad::NodeId normalize_sensitivity(ad::Graph& g, ad::NodeId sens) {
  const ad::NodeId norm = g.sqrt(g.affine(g.sum(g.mul(sens, sens)), 1.0, 1e-12));
  return g.mul(sens, g.broadcast(g.reciprocal(norm), g.shape_of(sens)));
}

/// Pairwise ranking hinge: every ordered pair with cues_i > cues_j
/// contributes max(0, s_j - s_i); averaged over such pairs.
inline ad::NodeId hint_loss(ad::Graph& g, ad::NodeId sens, std::span<const double> cues) {
  detail::check_lengths(g, sens, cues.size(), "hint_loss");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < cues.size(); ++i)
    for (std::size_t j = 0; j < cues.size(); ++j)
      if (cues[i] > cues[j]) pairs.emplace_back(i, j);
  return detail::pairwise_hinge(g, sens, pairs, static_cast<double>(pairs.size()));
}

/// Indices of the n regions with the highest cue score; ties go to the lower
/// index. Returned in rank order.
inline std::vector<std::size_t> influential_regions(std::span<const double> cues, std::size_t n) {
  std::vector<std::size_t> idx(cues.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return cues[a] > cues[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

/// Influential regions should be more sensitive for a_gt than every
/// non-influential region.
inline ad::NodeId scr_phase1_loss(ad::Graph& g, ad::NodeId sens_gt, std::span<const double> cues,
                                  std::size_t n_influential) {
  detail::check_lengths(g, sens_gt, cues.size(), "scr_phase1_loss");
  const std::size_t k = cues.size();
  require(n_influential < k, ErrorKind::config, "scr_phase1_loss: n_influential must be < K");
  if (n_influential == 0) return detail::zero_scalar(g);
  const auto infl = influential_regions(cues, n_influential);
  std::vector<char> is_infl(k, 0);
  for (std::size_t i : infl) is_infl[i] = 1;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i : infl)
    for (std::size_t j = 0; j < k; ++j)
      if (!is_infl[j]) pairs.emplace_back(i, j);
  return detail::pairwise_hinge(g, sens_gt, pairs,
                                static_cast<double>(n_influential * (k - n_influential)));
}

/// The n highest-scoring answers other than a_gt, best first.
inline std::vector<AnswerId> scr_competitors(std::span<const double> scores, AnswerId a_gt,
                                             std::size_t n) {
  std::vector<AnswerId> idx;
  for (AnswerId a = 0; a < scores.size(); ++a)
    if (a != a_gt) idx.push_back(a);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](AnswerId a, AnswerId b) { return scores[a] > scores[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

/// Region v* among the influential ones with the largest S(a_gt, v); ties go
/// to the lower index.
inline std::size_t scr_anchor_region(std::span<const double> sens_gt, std::span<const double> cues,
                                     std::size_t n_influential) {
  auto infl = influential_regions(cues, n_influential);
  std::sort(infl.begin(), infl.end());
  std::size_t best = infl.front();
  for (std::size_t i : infl)
    if (sens_gt[i] > sens_gt[best]) best = i;
  return best;
}

/// Competitor answers should not be more sensitive than a_gt at v*:
/// sum over competitors of max(0, S(a, v*) - S(a_gt, v*)) / n_competitors.
/// `sens` must hold a [K] node for a_gt and for every competitor.
inline ad::NodeId scr_phase2_loss(ad::Graph& g, const std::map<AnswerId, ad::NodeId>& sens,
                                  AnswerId a_gt, std::span<const double> cues,
                                  std::size_t n_influential, std::span<const AnswerId> competitors) {
  require(sens.count(a_gt) == 1, ErrorKind::vocabulary, "scr_phase2_loss: missing a_gt sensitivities");
  const ad::NodeId gt = sens.at(a_gt);
  detail::check_lengths(g, gt, cues.size(), "scr_phase2_loss");
  require(n_influential >= 1 && n_influential < cues.size(), ErrorKind::config,
          "scr_phase2_loss: n_influential must lie in [1, K)");
  if (competitors.empty()) return detail::zero_scalar(g);
  const std::size_t anchor = scr_anchor_region(g.value(gt).data(), cues, n_influential);
  const ad::NodeId gt_at = g.index(gt, anchor);
  ad::NodeId total = 0;
  bool first = true;
  for (AnswerId a : competitors) {
    auto it = sens.find(a);
    require(it != sens.end(), ErrorKind::vocabulary,
            "scr_phase2_loss: missing sensitivities for competitor " + std::to_string(a));
    detail::check_lengths(g, it->second, cues.size(), "scr_phase2_loss");
    const ad::NodeId term = g.hinge(g.sub(g.index(it->second, anchor), gt_at));
    total = first ? term : g.add(total, term);
    first = false;
  }
  return g.scale(total, 1.0 / static_cast<double>(competitors.size()));
}

}  // namespace vqalab
