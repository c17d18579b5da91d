#include "vqalab/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "vqalab/training.hpp"

namespace {

using namespace vqalab;

ModelConfig micro_config() { return ModelConfig{4, 5, 6, 3, Activation::softplus}; }

Instance random_instance(std::mt19937_64& rng, std::size_t k, std::size_t d, std::size_t vocab) {
  std::uniform_real_distribution<double> u(-1, 1);
  Instance inst;
  inst.id = 17;
  inst.regions = ad::Tensor(ad::Shape(k, d));
  for (double& x : inst.regions.data()) x = u(rng);
  inst.question_tokens = {0, vocab - 1, 2};
  inst.gt_relevance.assign(k, 0.1);
  inst.gt_answer = 1;
  return inst;
}

TEST(Init, DeterministicInSeed) {
  EXPECT_EQ(init(micro_config(), 4), init(micro_config(), 4));
  EXPECT_FALSE(init(micro_config(), 4) == init(micro_config(), 5));
}

TEST(Init, EntriesInsideBound) {
  const ModelConfig c{16, 18, 30, 32, Activation::softplus};
  const auto p = init(c, 1);
  const double s = 1.0 / std::sqrt(16.0);
  for (const auto& t : p.tensors)
    for (double x : t.data()) {
      EXPECT_GT(x, -s);
      EXPECT_LT(x, s);
    }
}

TEST(Init, ZeroSizeIsConfigError) {
  ModelConfig c = micro_config();
  c.answers = 0;
  EXPECT_THROW(init(c, 1), Error);
}

TEST(Predict, IdenticalRegionsGetUniformAttention) {
  std::mt19937_64 rng(1);
  const auto p = init(micro_config(), 2);
  Instance inst = random_instance(rng, 5, 4, 5);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t j = 0; j < 4; ++j) inst.regions.at(r, j) = inst.regions.at(0, j);
  auto f = build_forward(p, inst);
  for (double w : f.graph.value(f.attention).data()) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(Predict, ScoresStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(3);
  const auto p = init(micro_config(), 2);
  for (int trial = 0; trial < 20; ++trial) {
    for (double s : predict(p, random_instance(rng, 4, 4, 5))) {
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
  }
}

TEST(Predict, ZeroHeadGivesOneHalf) {
  std::mt19937_64 rng(3);
  auto p = init(micro_config(), 2);
  for (double& x : p.output_weights().data()) x = 0.0;
  for (double& x : p.output_bias().data()) x = 0.0;
  for (double s : predict(p, random_instance(rng, 4, 4, 5))) EXPECT_EQ(s, 0.5);
}

TEST(Predict, DimensionMismatchIsShapeError) {
  std::mt19937_64 rng(3);
  const auto p = init(micro_config(), 2);
  try {
    predict(p, random_instance(rng, 4, 5, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Predict, Deterministic) {
  std::mt19937_64 rng(3);
  const auto p = init(micro_config(), 2);
  const auto inst = random_instance(rng, 4, 4, 5);
  EXPECT_EQ(predict(p, inst), predict(p, inst));
}

TEST(Sensitivity, UnknownAnswerIsVocabularyError) {
  std::mt19937_64 rng(3);
  const auto p = init(micro_config(), 2);
  const AnswerId bad[] = {6};
  try {
    sensitivities(p, random_instance(rng, 4, 4, 5), bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::vocabulary);
  }
}

TEST(Sensitivity, DeadPathGivesZero) {
  // With no projection the regions never reach the scores.
  std::mt19937_64 rng(3);
  auto p = init(micro_config(), 2);
  for (double& x : p.region_projection().data()) x = 0.0;
  const AnswerId all[] = {0, 1, 2, 3, 4, 5};
  const auto m = sensitivities(p, random_instance(rng, 4, 4, 5), all);
  for (const auto& row : m.matrix)
    for (double s : row) EXPECT_EQ(s, 0.0);
}

TEST(Sensitivity, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const auto p = init(micro_config(), 6);
  const AnswerId all[] = {0, 1, 2, 3, 4, 5};
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = random_instance(rng, 4, 4, 5);
    const auto m = sensitivities(p, inst, all);
    for (std::size_t a = 0; a < 6; ++a) {
      for (std::size_t r = 0; r < 4; ++r) {
        // Sum over coordinates of the per-coordinate central difference.
        double fd = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          auto f = [&](double v) {
            Instance moved = inst;
            moved.regions.at(r, j) = v;
            return predict(p, moved)[a];
          };
          fd += oracle::central_difference(f, inst.regions.at(r, j), 1e-4);
        }
        EXPECT_TRUE(oracle::close(m.matrix[a][r], fd, 1e-4, 1e-9))
            << "answer " << a << " region " << r << ": " << m.matrix[a][r] << " vs " << fd;
      }
    }
  }
}

TEST(Sensitivity, AttachedMatchesDetached) {
  std::mt19937_64 rng(8);
  const auto p = init(micro_config(), 6);
  const AnswerId all[] = {0, 3, 5};
  const auto inst = random_instance(rng, 4, 4, 5);
  const auto a = sensitivities(p, inst, all, true);
  const auto b = sensitivities(p, inst, all, false);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(a.matrix[k][r], b.matrix[k][r], 1e-15);
}

TEST(Sensitivity, DuplicatedRegionUnderUniformAttention) {
  std::mt19937_64 rng(8);
  const auto p = init(micro_config(), 6);
  Instance inst = random_instance(rng, 4, 4, 5);
  for (std::size_t j = 0; j < 4; ++j) inst.regions.at(3, j) = inst.regions.at(1, j);
  const AnswerId all[] = {0, 1, 2, 3, 4, 5};
  const auto m = sensitivities(p, inst, all, false, ForwardOptions{true});
  for (const auto& row : m.matrix) EXPECT_EQ(row[1], row[3]);
}

TEST(Sensitivity, PermutingRegionsPermutesEverything) {
  std::mt19937_64 rng(10);
  const auto p = init(micro_config(), 6);
  const auto inst = random_instance(rng, 5, 4, 5);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Instance moved = inst;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t j = 0; j < 4; ++j) moved.regions.at(r, j) = inst.regions.at(perm[r], j);

  auto fa = build_forward(p, inst);
  auto fb = build_forward(p, moved);
  const auto& sa = fa.graph.value(fa.scores).data();
  const auto& sb = fb.graph.value(fb.scores).data();
  for (std::size_t a = 0; a < sa.size(); ++a) EXPECT_NEAR(sa[a], sb[a], 1e-14);
  const auto& wa = fa.graph.value(fa.attention).data();
  const auto& wb = fb.graph.value(fb.attention).data();
  for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(wb[r], wa[perm[r]], 1e-14);

  const AnswerId all[] = {0, 1, 2, 3, 4, 5};
  const auto ma = sensitivities(p, inst, all);
  const auto mb = sensitivities(p, moved, all);
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(mb.matrix[a][r], ma.matrix[a][perm[r]], 1e-13);
}

// Parameter gradient of an objective built on create_graph sensitivities,
// against central differences over every parameter entry.
void check_objective_gradient(const ObjectiveSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ModelConfig c{3, 4, 2, 3, Activation::softplus};
  auto p = init(c, seed);
  // Larger weights than the init so the hinges are active.
  for (auto& t : p.tensors)
    for (double& x : t.data()) x *= 3.0;
  Instance inst = random_instance(rng, 2, 3, 4);
  inst.gt_answer = 0;

  ForwardPass f = build_forward(p, inst);
  const ad::NodeId loss = build_objective(f, inst, spec);
  const auto grads = f.graph.gradient(loss, f.params, false);
  auto loss_at = [&](const Parameters& q) {
    ForwardPass g = build_forward(q, inst);
    return g.graph.value(build_objective(g, inst, spec)).item();
  };
  std::size_t checked = 0;
  for (std::size_t k = 0; k < Parameters::count; ++k) {
    for (std::size_t i = 0; i < p.tensors[k].size(); ++i) {
      auto fn = [&](double v) {
        Parameters q = p;
        q.tensors[k][i] = v;
        return loss_at(q);
      };
      const double fd = oracle::central_difference(fn, p.tensors[k][i], 1e-5);
      EXPECT_TRUE(oracle::close(grads[k].tensor[i], fd, 1e-3, 1e-7))
          << Parameters::names[k] << "[" << i << "]: " << grads[k].tensor[i] << " vs " << fd;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20u);
}

TEST(SecondOrder, HintObjectiveGradientMatchesFiniteDifferences) {
  ObjectiveSpec spec;
  spec.loss = LossConfig::defaults(Method::hint);
  spec.cues = {0.9, 0.1};
  check_objective_gradient(spec, 31);
  spec.cues = {0.1, 0.9};
  check_objective_gradient(spec, 32);
}

TEST(SecondOrder, ScrObjectiveGradientMatchesFiniteDifferences) {
  ObjectiveSpec spec;
  spec.loss = LossConfig::defaults(Method::scr);
  spec.loss.n_influential = 1;
  spec.loss.n_competitors = 1;
  spec.loss.phase2_weight = 1.0;
  spec.scr_phase2 = true;
  spec.cues = {0.8, 0.2};
  check_objective_gradient(spec, 33);
}

TEST(Checkpoint, RoundTripReproducesPredictionsBitwise) {
  std::mt19937_64 rng(3);
  const auto p = init(ModelConfig{4, 5, 6, 7, Activation::relu}, 12);
  Checkpoint ck{p, 3, "run-x"};
  const auto path = std::filesystem::temp_directory_path() / "vqalab_model_ck.json";
  write_checkpoint(ck, path.string());
  const auto back = read_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(ck, back);
  const auto inst = random_instance(rng, 4, 4, 5);
  EXPECT_EQ(predict(p, inst), predict(back.params, inst));
}

TEST(Checkpoint, WrongShapeIsRejected) {
  auto j = checkpoint_to_json(Checkpoint{init(micro_config(), 1), 0, "r"});
  j["tensors"]["attention_vector"] = nlohmann::json::array({nlohmann::json::array({1.0})});
  EXPECT_THROW(checkpoint_from_json(j), Error);
}

}  // namespace
