#pragma once

// Toy attention-over-regions VQA predictor and gradient-based sensitivities
// S(a, v_i) = sum_d dP(a)/dv_{i,d}.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqalab/autodiff/graph.hpp"
#include "vqalab/error.hpp"
#include "vqalab/rng.hpp"
#include "vqalab/synthcp.hpp"

namespace vqalab {

enum class Activation { softplus, relu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::softplus;
  if (s == "relu") return Activation::relu;
  throw Error(ErrorKind::config, "unknown activation '" + s + "'");
}

struct ModelConfig {
  std::size_t dim = 16;
  std::size_t vocab = 18;
  std::size_t answers = 30;
  std::size_t hidden = 32;
  Activation activation = Activation::softplus;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"vocab", c.vocab},
                     {"answers", c.answers},
                     {"hidden", c.hidden},
                     {"activation", to_string(c.activation)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.dim = j.at("dim").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.answers = j.at("answers").get<std::size_t>();
  c.hidden = j.value("hidden", std::size_t{32});
  c.activation = activation_from_string(j.value("activation", std::string("softplus")));
}

inline ModelConfig model_config_for(const DatasetBundle& b, std::size_t hidden = 32,
                                    Activation act = Activation::softplus) {
  return ModelConfig{b.config.dim, b.token_vocabulary(), b.answer_vocabulary.size(), hidden, act};
}

/// Model weights. Orientation is chosen so the forward pass needs no
/// transposes: region projection is applied as X * W, and the answer head as
/// u * W1 + b1 -> act -> * W2 + b2.
struct Parameters {
  static constexpr std::size_t count = 7;
  static constexpr std::array<std::string_view, count> names = {
      "token_embeddings", "region_projection", "attention_vector", "hidden_weights",
      "hidden_bias",      "output_weights",    "output_bias"};

  ModelConfig config;
  std::uint64_t seed = 0;
  std::array<ad::Tensor, count> tensors;

  ad::Tensor& token_embeddings() { return tensors[0]; }
  ad::Tensor& region_projection() { return tensors[1]; }
  ad::Tensor& attention_vector() { return tensors[2]; }
  ad::Tensor& hidden_weights() { return tensors[3]; }
  ad::Tensor& hidden_bias() { return tensors[4]; }
  ad::Tensor& output_weights() { return tensors[5]; }
  ad::Tensor& output_bias() { return tensors[6]; }

  static std::array<ad::Shape, count> shapes(const ModelConfig& c) {
    return {ad::Shape(c.vocab, c.dim),   ad::Shape(c.dim, c.dim),     ad::Shape(c.dim, 1),
            ad::Shape(c.dim, c.hidden),  ad::Shape(1, c.hidden),      ad::Shape(c.hidden, c.answers),
            ad::Shape(1, c.answers)};
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (double x : t.data())
        if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// Every entry uniform in (-1/sqrt(d), 1/sqrt(d)); deterministic in seed.
inline Parameters init(const ModelConfig& config, std::uint64_t seed) {
  require(config.dim > 0 && config.vocab > 0 && config.answers > 0 && config.hidden > 0,
          ErrorKind::config, "model sizes must be positive");
  Parameters p;
  p.config = config;
  p.seed = seed;
  const double s = 1.0 / std::sqrt(static_cast<double>(config.dim));
  const auto shapes = Parameters::shapes(config);
  Rng rng({seed, 0x1417});
  for (std::size_t k = 0; k < Parameters::count; ++k) {
    p.tensors[k] = ad::Tensor(shapes[k]);
    for (double& x : p.tensors[k].data()) {
      do {
        x = rng.uniform(-s, s);
      } while (x == -s);
    }
  }
  return p;
}

struct ForwardOptions {
  /// Replace the learned attention with fixed 1/K weights.
  bool uniform_attention = false;
};

/// One instance's forward graph. Regions are a requires_grad input so that
/// sensitivities can be taken with respect to them.
struct ForwardPass {
  ad::Graph graph;
  std::array<ad::NodeId, Parameters::count> params{};
  ad::NodeId regions = 0;
  ad::NodeId attention = 0;  // [K]
  ad::NodeId scores = 0;     // [|answers|]
  std::size_t region_count = 0;
  std::size_t dim = 0;
};

inline ForwardPass build_forward(const Parameters& p, const Instance& inst,
                                 ForwardOptions opts = {}) {
  const ModelConfig& c = p.config;
  const std::size_t k = inst.regions.shape()[0];
  require(inst.regions.shape().rank() == 2 && inst.regions.shape()[1] == c.dim, ErrorKind::shape,
          "instance regions " + inst.regions.shape().str() + " do not match model dim " +
              std::to_string(c.dim));
  require(!inst.question_tokens.empty(), ErrorKind::shape, "instance has no question tokens");

  ForwardPass f;
  f.region_count = k;
  f.dim = c.dim;
  ad::Graph& g = f.graph;
  for (std::size_t i = 0; i < Parameters::count; ++i) f.params[i] = g.parameter(p.tensors[i]);
  const auto [emb, proj, att, w1, b1, w2, b2] = f.params;

  // q: mean token embedding, as a [1, d] row.
  ad::Tensor mean_tokens{ad::Shape(1, c.vocab)};
  const double inv_len = 1.0 / static_cast<double>(inst.question_tokens.size());
  for (std::size_t t : inst.question_tokens) {
    require(t < c.vocab, ErrorKind::vocabulary, "question token " + std::to_string(t) + " out of vocabulary");
    mean_tokens[t] += inv_len;
  }
  const ad::NodeId q = g.matmul(g.constant(std::move(mean_tokens)), emb);

  f.regions = g.input(inst.regions, true);
  const ad::NodeId projected = g.matmul(f.regions, proj);  // [K, d]
  if (opts.uniform_attention) {
    f.attention = g.constant(ad::Tensor(ad::Shape(k), 1.0 / static_cast<double>(k)));
  } else {
    const ad::NodeId q_rows = g.matmul(g.constant(ad::Tensor(ad::Shape(k, 1), 1.0)), q);
    const ad::NodeId logits = g.matmul(g.mul(projected, q_rows), att);  // [K, 1]
    f.attention = g.softmax(g.reshape(logits, ad::Shape(k)));
  }
  const ad::NodeId context = g.matmul(g.reshape(f.attention, ad::Shape(1, k)), projected);
  const ad::NodeId fused = g.mul(context, q);  // [1, d]
  const ad::NodeId pre = g.add(g.matmul(fused, w1), b1);
  const ad::NodeId hidden = c.activation == Activation::relu ? g.relu(pre) : g.softplus(pre);
  const ad::NodeId out = g.add(g.matmul(hidden, w2), b2);
  f.scores = g.reshape(g.sigmoid(out), ad::Shape(c.answers));
  return f;
}

/// Per-answer sigmoid scores P(A), each in (0, 1).
inline std::vector<double> predict(const Parameters& p, const Instance& inst) {
  ForwardPass f = build_forward(p, inst);
  return f.graph.value(f.scores).data();
}

inline AnswerId argmax(std::span<const double> v) {
  AnswerId best = 0;
  for (AnswerId a = 1; a < v.size(); ++a)
    if (v[a] > v[best]) best = a;
  return best;
}

/// [K] node holding S(a, v_i) for every region i. With create_graph the node
/// is differentiable with respect to the parameters.
inline ad::NodeId sensitivity_node(ForwardPass& f, AnswerId answer, bool create_graph) {
  require(answer < f.graph.shape_of(f.scores)[0], ErrorKind::vocabulary,
          "answer id " + std::to_string(answer) + " is not in the vocabulary");
  ad::Graph& g = f.graph;
  const ad::NodeId pa = g.index(f.scores, answer);
  const ad::NodeId wrt[] = {f.regions};
  const auto grads = g.gradient(pa, wrt, create_graph);
  const ad::NodeId grad = create_graph ? grads[0].node : g.constant(grads[0].tensor);
  const ad::NodeId ones = g.constant(ad::Tensor(ad::Shape(f.dim, 1), 1.0));
  return g.reshape(g.matmul(grad, ones), ad::Shape(f.region_count));
}

/// Detached sensitivities of one answer, without growing the graph.
inline std::vector<double> sensitivity_values(ForwardPass& f, AnswerId answer) {
  require(answer < f.graph.shape_of(f.scores)[0], ErrorKind::vocabulary,
          "answer id " + std::to_string(answer) + " is not in the vocabulary");
  ad::Graph& g = f.graph;
  const ad::NodeId pa = g.index(f.scores, answer);
  const ad::NodeId wrt[] = {f.regions};
  const auto grads = g.gradient(pa, wrt, false);
  std::vector<double> s(f.region_count, 0.0);
  for (std::size_t i = 0; i < f.region_count; ++i)
    for (std::size_t j = 0; j < f.dim; ++j) s[i] += grads[0].tensor.at(i, j);
  return s;
}

struct SensitivityMap {
  InstanceId instance_id = 0;
  std::vector<AnswerId> answers;
  /// matrix[k][i] = S(answers[k], v_i)
  std::vector<std::vector<double>> matrix;
};

inline SensitivityMap sensitivities(const Parameters& p, const Instance& inst,
                                    std::span<const AnswerId> answers, bool create_graph = false,
                                    ForwardOptions opts = {}) {
  for (AnswerId a : answers)
    require(a < p.config.answers, ErrorKind::vocabulary,
            "answer id " + std::to_string(a) + " is not in the vocabulary");
  ForwardPass f = build_forward(p, inst, opts);
  SensitivityMap m;
  m.instance_id = inst.id;
  m.answers.assign(answers.begin(), answers.end());
  for (AnswerId a : answers) {
    if (create_graph) {
      const ad::NodeId s = sensitivity_node(f, a, true);
      m.matrix.push_back(f.graph.value(s).data());
    } else {
      m.matrix.push_back(sensitivity_values(f, a));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// checkpoint.json

struct Checkpoint {
  Parameters params;
  std::size_t epoch = 0;
  std::string run_id;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline nlohmann::json tensor_to_json(const ad::Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < t.shape().rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < t.shape().cols(); ++c) row.push_back(t.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json tensors = nlohmann::json::object();
  for (std::size_t k = 0; k < Parameters::count; ++k)
    tensors[std::string(Parameters::names[k])] = tensor_to_json(ck.params.tensors[k]);
  return nlohmann::json{{"model_config", ck.params.config},
                        {"seed", ck.params.seed},
                        {"tensors", std::move(tensors)},
                        {"epoch", ck.epoch},
                        {"run_id", ck.run_id}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  try {
    ck.params.config = j.at("model_config").get<ModelConfig>();
    ck.params.seed = j.at("seed").get<std::uint64_t>();
    ck.epoch = j.at("epoch").get<std::size_t>();
    ck.run_id = j.at("run_id").get<std::string>();
    const auto shapes = Parameters::shapes(ck.params.config);
    for (std::size_t k = 0; k < Parameters::count; ++k) {
      const auto rows = j.at("tensors").at(std::string(Parameters::names[k]))
                            .get<std::vector<std::vector<double>>>();
      std::vector<double> flat;
      for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
      require(rows.size() == shapes[k].rows() && flat.size() == shapes[k].size(), ErrorKind::shape,
              "checkpoint tensor '" + std::string(Parameters::names[k]) + "' has wrong shape");
      ck.params.tensors[k] = ad::Tensor(shapes[k], std::move(flat));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, std::string("malformed checkpoint: ") + e.what());
  }
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path + "' for writing");
  out << checkpoint_to_json(ck).dump() << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "write to '" + path + "' failed");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open checkpoint '" + path + "'");
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::io, "malformed checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace vqalab
