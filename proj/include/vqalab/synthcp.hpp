#pragma once

// Synthetic VQA-CP-style dataset: question-type answer priors that shift
// between train and test, a matched-prior control split, and ground-truth
// region relevance for every instance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqalab/autodiff/tensor.hpp"
#include "vqalab/error.hpp"
#include "vqalab/json_util.hpp"
#include "vqalab/rng.hpp"

namespace vqalab {

using InstanceId = std::int64_t;
using AnswerId = std::size_t;

enum class AnswerType { yesno, number, other };

inline std::string to_string(AnswerType t) {
  switch (t) {
    case AnswerType::yesno: return "yesno";
    case AnswerType::number: return "number";
    case AnswerType::other: return "other";
  }
  return "other";
}

inline AnswerType answer_type_from_string(const std::string& s) {
  if (s == "yesno") return AnswerType::yesno;
  if (s == "number") return AnswerType::number;
  if (s == "other") return AnswerType::other;
  throw Error(ErrorKind::config, "unknown answer type '" + s + "'");
}

enum class Split { train, test, control_train, control_val };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::control_train: return "control_train";
    case Split::control_val: return "control_val";
  }
  return "train";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "control_train") return Split::control_train;
  if (s == "control_val") return Split::control_val;
  throw Error(ErrorKind::config, "unknown split '" + s + "'");
}

struct GeneratorConfig {
  std::size_t n_train = 5000;
  std::size_t n_test = 2000;
  /// Size of control_train; control_val has n_test instances.
  std::size_t n_control = 5000;
  std::size_t regions = 8;  // K
  std::size_t dim = 16;     // d
  std::size_t n_question_types = 6;
  std::size_t answers_per_type = 7;
  double shift = 1.0;  // beta
  double noise = 0.3;  // sigma
  double cue_fraction = 0.09;
  /// Tail mass gamma of the per-type prior; the head answer gets
  /// (1 - gamma) + gamma / |A_t|.
  double prior_tail = 0.3;
  std::size_t question_length = 4;
  std::size_t filler_tokens = 12;
  /// Norm of the answer-specific part of each template.
  double template_scale = 1.0;
  /// Norm of the marker shared by every relevant region.
  double marker_scale = 1.0;

  void validate() const {
    require(regions >= 4, ErrorKind::config, "regions (K) must be >= 4");
    require(dim >= 3, ErrorKind::config, "dim (d) must be >= 3");
    require(answers_per_type >= 2, ErrorKind::config, "answers_per_type must be >= 2");
    require(n_train >= 1 && n_test >= 1 && n_control >= 1, ErrorKind::config,
            "split sizes must be >= 1");
    require(n_question_types >= 1, ErrorKind::config, "n_question_types must be >= 1");
    require(shift >= 0.0 && shift <= 1.0, ErrorKind::config, "shift must lie in [0, 1]");
    require(noise >= 0.0, ErrorKind::config, "noise must be >= 0");
    require(cue_fraction >= 0.0 && cue_fraction <= 1.0, ErrorKind::config,
            "cue_fraction must lie in [0, 1]");
    require(prior_tail >= 0.0 && prior_tail <= 1.0, ErrorKind::config,
            "prior_tail must lie in [0, 1]");
    require(question_length >= 1, ErrorKind::config, "question_length must be >= 1");
    require(question_length == 1 || filler_tokens >= 1, ErrorKind::config,
            "filler_tokens must be >= 1 when question_length > 1");
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"n_train", c.n_train},
                     {"n_test", c.n_test},
                     {"n_control", c.n_control},
                     {"regions", c.regions},
                     {"dim", c.dim},
                     {"n_question_types", c.n_question_types},
                     {"answers_per_type", c.answers_per_type},
                     {"shift", c.shift},
                     {"noise", c.noise},
                     {"cue_fraction", c.cue_fraction},
                     {"prior_tail", c.prior_tail},
                     {"question_length", c.question_length},
                     {"filler_tokens", c.filler_tokens},
                     {"template_scale", c.template_scale},
                     {"marker_scale", c.marker_scale}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  const GeneratorConfig d;
  c.n_train = j.value("n_train", d.n_train);
  c.n_test = j.value("n_test", d.n_test);
  c.n_control = j.value("n_control", d.n_control);
  c.regions = j.value("regions", d.regions);
  c.dim = j.value("dim", d.dim);
  c.n_question_types = j.value("n_question_types", d.n_question_types);
  c.answers_per_type = j.value("answers_per_type", d.answers_per_type);
  c.shift = j.value("shift", d.shift);
  c.noise = j.value("noise", d.noise);
  c.cue_fraction = j.value("cue_fraction", d.cue_fraction);
  c.prior_tail = j.value("prior_tail", d.prior_tail);
  c.question_length = j.value("question_length", d.question_length);
  c.filler_tokens = j.value("filler_tokens", d.filler_tokens);
  c.template_scale = j.value("template_scale", d.template_scale);
  c.marker_scale = j.value("marker_scale", d.marker_scale);
}

struct QuestionType {
  std::size_t id = 0;
  AnswerType answer_type = AnswerType::other;
  std::vector<AnswerId> answers;
  std::vector<double> train_prior;  // aligned with answers
  std::vector<double> test_prior;

  friend bool operator==(const QuestionType&, const QuestionType&) = default;
};

struct Instance {
  InstanceId id = 0;
  Split split = Split::train;
  std::vector<std::size_t> question_tokens;  // first token is the question type
  std::size_t question_type = 0;
  ad::Tensor regions;  // [K, d]
  AnswerId gt_answer = 0;
  AnswerType answer_type = AnswerType::other;
  std::vector<double> gt_relevance;  // K scores in [0, 1]
  bool has_cues = false;

  std::size_t region_count() const { return regions.shape()[0]; }

  /// Indices of the three strictly most relevant regions, ascending.
  std::vector<std::size_t> top3_relevant() const {
    std::vector<std::size_t> idx(gt_relevance.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return gt_relevance[a] > gt_relevance[b];
    });
    idx.resize(3);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct DatasetBundle {
  GeneratorConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> answer_vocabulary;
  std::vector<QuestionType> question_types;
  /// One row per answer: bias + marker + answer-specific direction.
  std::vector<std::vector<double>> answer_templates;
  std::vector<Instance> train, test, control_train, control_val;

  std::size_t token_vocabulary() const {
    return config.n_question_types + config.filler_tokens;
  }

  const std::vector<Instance>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::test: return test;
      case Split::control_train: return control_train;
      case Split::control_val: return control_val;
    }
    return train;
  }

  /// Instance lookup by id across all splits.
  const Instance& instance(InstanceId id) const {
    for (const auto* s : {&train, &test, &control_train, &control_val}) {
      if (!s->empty() && id >= s->front().id && id <= s->back().id)
        return (*s)[static_cast<std::size_t>(id - s->front().id)];
    }
    throw Error(ErrorKind::alignment, "unknown instance id " + std::to_string(id));
  }

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

namespace detail {

inline std::vector<double> random_direction(Rng& rng, std::size_t dim, std::size_t skip,
                                            double norm) {
  std::vector<double> v(dim, 0.0);
  double sq = 0.0;
  for (std::size_t i = skip; i < dim; ++i) {
    v[i] = rng.normal();
    sq += v[i] * v[i];
  }
  const double s = norm / std::sqrt(sq);
  for (double& x : v) x *= s;
  return v;
}

inline Instance sample_instance(const DatasetBundle& b, Split split, InstanceId id,
                                bool use_test_prior, Rng& rng) {
  const GeneratorConfig& c = b.config;
  Instance inst;
  inst.id = id;
  inst.split = split;
  inst.question_type = rng.below(c.n_question_types);
  const QuestionType& qt = b.question_types[inst.question_type];
  inst.answer_type = qt.answer_type;
  inst.gt_answer = qt.answers[rng.categorical(use_test_prior ? qt.test_prior : qt.train_prior)];

  inst.question_tokens.push_back(inst.question_type);
  for (std::size_t t = 1; t < c.question_length; ++t)
    inst.question_tokens.push_back(c.n_question_types + rng.below(c.filler_tokens));

  std::vector<std::size_t> order(c.regions);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<char> relevant(c.regions, 0);
  for (std::size_t k = 0; k < 3; ++k) relevant[order[k]] = 1;

  inst.gt_relevance.assign(c.regions, 0.0);
  inst.regions = ad::Tensor(ad::Shape(c.regions, c.dim));
  const auto& tmpl = b.answer_templates[inst.gt_answer];
  for (std::size_t r = 0; r < c.regions; ++r) {
    inst.gt_relevance[r] = relevant[r] ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3);
    for (std::size_t j = 0; j < c.dim; ++j) {
      const double base = relevant[r] ? tmpl[j] : (j == 0 ? 1.0 : 0.0);
      inst.regions.at(r, j) = base + c.noise * rng.normal();
    }
  }
  return inst;
}

inline void mark_cues(std::vector<Instance>& split, double fraction, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(split.size())));
  std::vector<std::size_t> idx(split.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  for (std::size_t k = 0; k < n && k < idx.size(); ++k) split[idx[k]].has_cues = true;
}

}  // namespace detail

/// Pure function of (config, seed).
inline DatasetBundle generate(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  DatasetBundle b;
  b.config = config;
  b.seed = seed;

  // Answer vocabulary: yes/no shared by every yesno type, fresh answers for
  // the others.
  Rng structure({seed, 1});
  b.answer_vocabulary = {"yes", "no"};
  for (std::size_t t = 0; t < config.n_question_types; ++t) {
    QuestionType qt;
    qt.id = t;
    qt.answer_type = static_cast<AnswerType>(t % 3);
    if (qt.answer_type == AnswerType::yesno) {
      qt.answers = {0, 1};
    } else {
      const std::string prefix = qt.answer_type == AnswerType::number ? "number" : "other";
      for (std::size_t k = 0; k < config.answers_per_type; ++k) {
        qt.answers.push_back(b.answer_vocabulary.size());
        b.answer_vocabulary.push_back(prefix + "_q" + std::to_string(t) + "_" + std::to_string(k));
      }
    }
    const std::size_t n = qt.answers.size();
    const std::size_t head = structure.below(n);
    const std::size_t test_head = (head + 1) % n;
    const double tail = config.prior_tail / static_cast<double>(n);
    qt.train_prior.assign(n, tail);
    qt.train_prior[head] += 1.0 - config.prior_tail;
    std::vector<double> permuted = qt.train_prior;
    std::swap(permuted[head], permuted[test_head]);
    qt.test_prior.resize(n);
    for (std::size_t k = 0; k < n; ++k)
      qt.test_prior[k] = (1.0 - config.shift) * qt.train_prior[k] + config.shift * permuted[k];
    b.question_types.push_back(std::move(qt));
  }

  // Templates: bias coordinate 0 fixed at 1, a shared relevance marker, and
  // an answer-specific direction.
  const std::vector<double> marker =
      detail::random_direction(structure, config.dim, 1, config.marker_scale);
  for (std::size_t a = 0; a < b.answer_vocabulary.size(); ++a) {
    std::vector<double> t = detail::random_direction(structure, config.dim, 1, config.template_scale);
    t[0] = 1.0;
    for (std::size_t j = 1; j < config.dim; ++j) t[j] += marker[j];
    b.answer_templates.push_back(std::move(t));
  }

  InstanceId next_id = 0;
  auto fill = [&](std::vector<Instance>& out, Split split, std::size_t n, bool test_prior,
                  std::uint64_t stream) {
    Rng rng({seed, stream});
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(detail::sample_instance(b, split, next_id++, test_prior, rng));
  };
  fill(b.train, Split::train, config.n_train, false, 2);
  fill(b.test, Split::test, config.n_test, true, 3);
  fill(b.control_train, Split::control_train, config.n_control, false, 4);
  fill(b.control_val, Split::control_val, config.n_test, false, 5);

  Rng cues({seed, 6});
  detail::mark_cues(b.train, config.cue_fraction, cues);
  detail::mark_cues(b.test, config.cue_fraction, cues);
  detail::mark_cues(b.control_train, config.cue_fraction, cues);
  return b;
}

// ---------------------------------------------------------------------------
// Cue variants

enum class CueVariant { relevant, irrelevant, fixed_random, variable_random };

inline std::string to_string(CueVariant v) {
  switch (v) {
    case CueVariant::relevant: return "relevant";
    case CueVariant::irrelevant: return "irrelevant";
    case CueVariant::fixed_random: return "fixed_random";
    case CueVariant::variable_random: return "variable_random";
  }
  return "relevant";
}

inline CueVariant cue_variant_from_string(const std::string& s) {
  if (s == "relevant") return CueVariant::relevant;
  if (s == "irrelevant") return CueVariant::irrelevant;
  if (s == "fixed_random") return CueVariant::fixed_random;
  if (s == "variable_random") return CueVariant::variable_random;
  throw Error(ErrorKind::config, "unknown cue variant '" + s + "'");
}

struct CueScores {
  InstanceId instance_id = 0;
  std::vector<double> scores;
  CueVariant variant = CueVariant::relevant;
  std::size_t epoch = 0;
};

/// Cue scores for one instance. Random variants are keyed so that
/// fixed_random depends on (seed, instance) only and variable_random on
/// (seed, instance, epoch).
inline CueScores cue_scores(const Instance& inst, CueVariant variant, std::uint64_t seed,
                            std::size_t epoch) {
  CueScores c;
  c.instance_id = inst.id;
  c.variant = variant;
  c.epoch = epoch;
  const std::size_t k = inst.gt_relevance.size();
  switch (variant) {
    case CueVariant::relevant:
      c.scores = inst.gt_relevance;
      break;
    case CueVariant::irrelevant:
      c.scores.resize(k);
      for (std::size_t i = 0; i < k; ++i) c.scores[i] = 1.0 - inst.gt_relevance[i];
      break;
    case CueVariant::fixed_random: {
      Rng rng({seed, 0xC0E5, static_cast<std::uint64_t>(inst.id)});
      for (std::size_t i = 0; i < k; ++i) c.scores.push_back(rng.uniform());
      break;
    }
    case CueVariant::variable_random: {
      Rng rng({seed, 0xC0E6, static_cast<std::uint64_t>(inst.id), epoch});
      for (std::size_t i = 0; i < k; ++i) c.scores.push_back(rng.uniform());
      break;
    }
  }
  return c;
}

/// Cue scores for every cue-annotated instance of the given split.
inline std::vector<CueScores> assign_cues(const DatasetBundle& bundle, Split split,
                                          CueVariant variant, std::uint64_t seed,
                                          std::size_t epoch) {
  std::vector<CueScores> out;
  for (const Instance& inst : bundle.split(split))
    if (inst.has_cues) out.push_back(cue_scores(inst, variant, seed, epoch));
  return out;
}

/// Cue scores for every cue-annotated instance in train, test and
/// control_train, in that order.
inline std::vector<CueScores> assign_cues(const DatasetBundle& bundle, CueVariant variant,
                                          std::uint64_t seed, std::size_t epoch) {
  std::vector<CueScores> out;
  for (Split s : {Split::train, Split::test, Split::control_train}) {
    auto part = assign_cues(bundle, s, variant, seed, epoch);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss subsets

enum class SubsetMode { fixed, variable };

inline std::string to_string(SubsetMode m) { return m == SubsetMode::fixed ? "fixed" : "variable"; }

inline SubsetMode subset_mode_from_string(const std::string& s) {
  if (s == "fixed") return SubsetMode::fixed;
  if (s == "variable") return SubsetMode::variable;
  throw Error(ErrorKind::config, "unknown subset mode '" + s + "'");
}

inline std::size_t subset_size(double fraction, std::size_t n) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::config,
          "subset fraction must lie in (0, 1]");
  const double exact = fraction * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

/// ceil(r * |split|) ids of the split, ascending. Fixed mode ignores epoch;
/// variable mode resamples per epoch.
inline std::vector<InstanceId> select_loss_subset(std::span<const Instance> split, double fraction,
                                                  SubsetMode mode, std::uint64_t seed,
                                                  std::size_t epoch) {
  const std::size_t k = subset_size(fraction, split.size());
  std::vector<InstanceId> ids;
  ids.reserve(split.size());
  for (const Instance& inst : split) ids.push_back(inst.id);
  if (k < ids.size()) {
    Rng rng = mode == SubsetMode::fixed ? Rng({seed, 0x5B5E7}) : Rng({seed, 0x5B5E8, epoch});
    rng.shuffle(ids);
    ids.resize(k);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::vector<InstanceId> select_loss_subset(const DatasetBundle& bundle, double fraction,
                                                  SubsetMode mode, std::uint64_t seed,
                                                  std::size_t epoch) {
  return select_loss_subset(bundle.train, fraction, mode, seed, epoch);
}

// ---------------------------------------------------------------------------
// dataset.jsonl: one header object, then one instance per line.

inline std::string instance_to_jsonl(const Instance& inst) {
  std::string s;
  s.reserve(64 + inst.regions.size() * 24);
  s += "{\"id\":" + std::to_string(inst.id);
  s += ",\"split\":\"" + to_string(inst.split) + "\"";
  s += ",\"question_tokens\":";
  jsonfmt::append_ints(s, inst.question_tokens);
  s += ",\"question_type\":" + std::to_string(inst.question_type);
  s += ",\"regions\":[";
  const std::size_t k = inst.regions.shape()[0], d = inst.regions.shape()[1];
  for (std::size_t r = 0; r < k; ++r) {
    if (r) s.push_back(',');
    jsonfmt::append_doubles(s, inst.regions.data().data() + r * d, d);
  }
  s += "],\"gt_answer\":" + std::to_string(inst.gt_answer);
  s += ",\"answer_type\":\"" + to_string(inst.answer_type) + "\"";
  s += ",\"gt_relevance\":";
  jsonfmt::append_doubles(s, inst.gt_relevance.data(), inst.gt_relevance.size());
  s += std::string(",\"has_cues\":") + (inst.has_cues ? "true" : "false");
  s += "}";
  return s;
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  inst.id = j.at("id").get<InstanceId>();
  inst.split = split_from_string(j.at("split").get<std::string>());
  inst.question_tokens = j.at("question_tokens").get<std::vector<std::size_t>>();
  inst.question_type = j.at("question_type").get<std::size_t>();
  const auto rows = j.at("regions").get<std::vector<std::vector<double>>>();
  require(!rows.empty(), ErrorKind::shape, "instance has no regions");
  std::vector<double> flat;
  for (const auto& r : rows) {
    require(r.size() == rows.front().size(), ErrorKind::shape, "ragged region matrix");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  inst.regions = ad::Tensor(ad::Shape(rows.size(), rows.front().size()), std::move(flat));
  inst.gt_answer = j.at("gt_answer").get<AnswerId>();
  inst.answer_type = answer_type_from_string(j.at("answer_type").get<std::string>());
  inst.gt_relevance = j.at("gt_relevance").get<std::vector<double>>();
  inst.has_cues = j.at("has_cues").get<bool>();
  return inst;
}

inline std::string header_to_jsonl(const DatasetBundle& b) {
  // The header holds only short lists; the templates are written with the
  // same 17-digit formatting as the instances.
  std::string s = "{\"format\":\"vqalab-dataset/1\",\"seed\":" + std::to_string(b.seed);
  s += ",\"config\":" + nlohmann::json(b.config).dump();
  s += ",\"answer_vocabulary\":" + nlohmann::json(b.answer_vocabulary).dump();
  s += ",\"question_types\":[";
  for (std::size_t t = 0; t < b.question_types.size(); ++t) {
    const auto& qt = b.question_types[t];
    if (t) s.push_back(',');
    s += "{\"id\":" + std::to_string(qt.id) + ",\"answer_type\":\"" + to_string(qt.answer_type) +
         "\",\"answers\":";
    jsonfmt::append_ints(s, qt.answers);
    s += ",\"train_prior\":";
    jsonfmt::append_doubles(s, qt.train_prior.data(), qt.train_prior.size());
    s += ",\"test_prior\":";
    jsonfmt::append_doubles(s, qt.test_prior.data(), qt.test_prior.size());
    s += "}";
  }
  s += "],\"answer_templates\":[";
  for (std::size_t a = 0; a < b.answer_templates.size(); ++a) {
    if (a) s.push_back(',');
    jsonfmt::append_doubles(s, b.answer_templates[a].data(), b.answer_templates[a].size());
  }
  s += "]}";
  return s;
}

inline void write_dataset(const DatasetBundle& b, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path + "' for writing");
  out << header_to_jsonl(b) << '\n';
  for (const auto* split : {&b.train, &b.test, &b.control_train, &b.control_val})
    for (const Instance& inst : *split) out << instance_to_jsonl(inst) << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "write to '" + path + "' failed");
}

inline DatasetBundle read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open dataset '" + path + "'");
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::io, "dataset '" + path + "' is empty");
  DatasetBundle b;
  try {
    const auto h = nlohmann::json::parse(line);
    require(h.value("format", std::string()) == "vqalab-dataset/1", ErrorKind::io,
            "dataset header has unknown format");
    b.seed = h.at("seed").get<std::uint64_t>();
    b.config = h.at("config").get<GeneratorConfig>();
    b.answer_vocabulary = h.at("answer_vocabulary").get<std::vector<std::string>>();
    for (const auto& q : h.at("question_types")) {
      QuestionType qt;
      qt.id = q.at("id").get<std::size_t>();
      qt.answer_type = answer_type_from_string(q.at("answer_type").get<std::string>());
      qt.answers = q.at("answers").get<std::vector<AnswerId>>();
      qt.train_prior = q.at("train_prior").get<std::vector<double>>();
      qt.test_prior = q.at("test_prior").get<std::vector<double>>();
      b.question_types.push_back(std::move(qt));
    }
    b.answer_templates = h.at("answer_templates").get<std::vector<std::vector<double>>>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Instance inst = instance_from_json(nlohmann::json::parse(line));
      switch (inst.split) {
        case Split::train: b.train.push_back(std::move(inst)); break;
        case Split::test: b.test.push_back(std::move(inst)); break;
        case Split::control_train: b.control_train.push_back(std::move(inst)); break;
        case Split::control_val: b.control_val.push_back(std::move(inst)); break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, "malformed dataset '" + path + "': " + e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Closed-form oracles over a bundle.

/// Accuracy (fraction) of predicting each question type's train-modal answer.
inline double modal_answer_accuracy(const DatasetBundle& b, std::span<const Instance> split) {
  if (split.empty()) return 0.0;
  std::size_t hits = 0;
  for (const Instance& inst : split) {
    const auto& qt = b.question_types[inst.question_type];
    const auto head = static_cast<std::size_t>(
        std::max_element(qt.train_prior.begin(), qt.train_prior.end()) - qt.train_prior.begin());
    hits += qt.answers[head] == inst.gt_answer;
  }
  return static_cast<double>(hits) / static_cast<double>(split.size());
}

}  // namespace vqalab
