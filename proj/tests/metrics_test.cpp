#include "vqalab/metrics.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"

namespace {

using namespace vqalab;

std::vector<PredictionRecord> records_from(const std::vector<int>& correct,
                                           AnswerType type = AnswerType::other) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    PredictionRecord r;
    r.instance_id = i;
    r.correct = correct[i] != 0;
    r.answer_type = type;
    out.push_back(r);
  }
  return out;
}

// A bundle whose test instances have known top-3 regions {0, 1, 2}.
DatasetBundle grounded_bundle(std::size_t n) {
  DatasetBundle b;
  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    inst.id = i;
    inst.split = Split::test;
    inst.gt_relevance = {0.9, 0.8, 0.75, 0.1, 0.2, 0.0};
    b.test.push_back(inst);
  }
  return b;
}

TEST(Accuracy, AllCorrect) {
  const auto r = records_from({1, 1, 1});
  const auto a = accuracy(r);
  EXPECT_EQ(a.overall, 100.0);
  for (const auto& [t, v] : a.by_answer_type) EXPECT_EQ(v, 100.0);
}

TEST(Accuracy, HalfCorrect) { EXPECT_EQ(accuracy(records_from({1, 0, 1, 0})).overall, 50.0); }

TEST(Accuracy, ByAnswerType) {
  auto r = records_from({1, 1}, AnswerType::yesno);
  auto other = records_from({0}, AnswerType::other);
  other[0].instance_id = 2;
  r.push_back(other[0]);
  const auto a = accuracy(r);
  EXPECT_EQ(a.by_answer_type.at(AnswerType::yesno), 100.0);
  EXPECT_EQ(a.by_answer_type.at(AnswerType::other), 0.0);
  EXPECT_NEAR(a.overall, 66.67, 0.005);
}

TEST(Accuracy, EmptyIsAnError) {
  try {
    accuracy({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_input);
  }
}

TEST(Overlap, Identical) {
  const auto a = records_from({1, 0, 1, 1, 0});
  EXPECT_EQ(overlap(a, a), 100.0);
}

TEST(Overlap, HandCounted) {
  EXPECT_EQ(overlap(records_from({1, 1, 0, 0}), records_from({1, 0, 0, 1})), 50.0);
}

TEST(Overlap, Complement) {
  EXPECT_EQ(overlap(records_from({1, 0, 1, 0}), records_from({0, 1, 0, 1})), 0.0);
}

TEST(Overlap, MismatchedIdsIsAlignmentError) {
  auto a = records_from({1, 0});
  auto b = records_from({1, 0});
  b[1].instance_id = 7;
  try {
    overlap(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::alignment);
  }
  EXPECT_THROW(overlap(a, records_from({1, 0, 1})), Error);
}

TEST(Overlap, SymmetricAndOrderFree) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ca(40), cb(40);
    for (auto& c : ca) c = static_cast<int>(rng() % 2);
    for (auto& c : cb) c = static_cast<int>(rng() % 2);
    auto a = records_from(ca);
    auto b = records_from(cb);
    const double ab = overlap(a, b);
    EXPECT_EQ(ab, overlap(b, a));
    std::shuffle(a.begin(), a.end(), rng);
    EXPECT_EQ(ab, overlap(a, b));
  }
}

TEST(Cpig, AllGrounded) {
  const auto b = grounded_bundle(4);
  auto r = records_from({1, 1, 0, 1});
  for (auto& x : r) x.top_sensitive_region = x.instance_id % 3;
  EXPECT_EQ(cpig(r, b).value(), 0.0);
}

TEST(Cpig, NoneGrounded) {
  const auto b = grounded_bundle(4);
  auto r = records_from({1, 1, 0, 1});
  for (auto& x : r) x.top_sensitive_region = 3 + x.instance_id % 3;
  EXPECT_EQ(cpig(r, b).value(), 100.0);
}

TEST(Cpig, SevenOfTen) {
  const auto b = grounded_bundle(12);
  auto r = records_from({1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0});
  for (std::size_t i = 0; i < r.size(); ++i) r[i].top_sensitive_region = i < 7 ? 5 : 0;
  r[10].top_sensitive_region = 4;  // incorrect records do not count
  EXPECT_DOUBLE_EQ(cpig(r, b).value(), 70.0);
}

TEST(Cpig, NoCorrectRecordsIsUndefined) {
  const auto b = grounded_bundle(3);
  EXPECT_FALSE(cpig(records_from({0, 0, 0}), b).has_value());
}

TEST(Cpig, OrderInvariant) {
  const auto b = grounded_bundle(50);
  std::mt19937_64 rng(1);
  std::vector<int> c(50);
  for (auto& x : c) x = static_cast<int>(rng() % 2);
  auto r = records_from(c);
  for (auto& x : r) x.top_sensitive_region = rng() % 6;
  const double before = cpig(r, b).value();
  std::shuffle(r.begin(), r.end(), rng);
  EXPECT_EQ(before, cpig(r, b).value());
}

TEST(Spearman, Identical) {
  const std::vector<double> x = {3, 1, 4, 1.5, 9, 2.6};
  EXPECT_DOUBLE_EQ(spearman(x, x).value(), 1.0);
}

TEST(Spearman, Reversed) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(x, y).value(), -1.0);
}

TEST(Spearman, TiesAgainstBruteForce) {
  const std::vector<double> x = {1, 2, 2, 4};
  const std::vector<double> y = {1, 3, 2, 4};
  EXPECT_NEAR(spearman(x, y).value(), oracle::brute_spearman(x, y), 1e-15);
  EXPECT_EQ(average_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Spearman, ConstantIsDegenerate) {
  const std::vector<double> x = {2, 2, 2};
  const std::vector<double> y = {1, 2, 3};
  EXPECT_FALSE(spearman(x, y).has_value());
  EXPECT_FALSE(spearman(y, x).has_value());
}

TEST(Spearman, MonotoneTransformInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> v(0, 6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(9), y(9), fx(9);
    for (auto& e : x) e = v(rng);
    for (auto& e : y) e = v(rng);
    for (std::size_t i = 0; i < 9; ++i) fx[i] = std::exp(x[i]) - 3.0;
    const auto a = spearman(x, y), b = spearman(fx, y);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      EXPECT_NEAR(*a, *b, 1e-12);
    }
  }
}

TEST(Spearman, RandomAgainstBruteForce) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> v(0, 5);
  std::uniform_int_distribution<std::size_t> len(2, 30);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> x(n), y(n);
    for (auto& e : x) e = v(rng);
    for (auto& e : y) e = v(rng);
    const auto s = spearman(x, y);
    if (!s) continue;
    EXPECT_NEAR(*s, oracle::brute_spearman(x, y), 1e-12);
  }
}

TEST(Welch, IdenticalSamples) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const auto r = welch_t_test(x, x);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(Welch, ShiftedByOne) {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {2, 3, 4, 5, 6};
  const auto r = welch_t_test(x, y);
  EXPECT_NEAR(r.t, -1.0, 1e-14);
  EXPECT_NEAR(r.dof, 8.0, 1e-12);
  EXPECT_NEAR(r.p, oracle::t_two_tailed_quadrature(-1.0, 8.0), 1e-10);
  EXPECT_NEAR(r.p, 0.3466, 5e-5);
}

TEST(Welch, AgainstQuadratureOracle) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z(0, 1);
  std::uniform_int_distribution<std::size_t> len(2, 40);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(len(rng)), y(len(rng));
    const double shift = 0.3 * z(rng), sx = std::exp(z(rng)), sy = std::exp(z(rng));
    for (auto& e : x) e = sx * z(rng);
    for (auto& e : y) e = shift + sy * z(rng);
    double t = 0, dof = 0;
    const double p = oracle::welch_p(x, y, &t, &dof);
    const auto r = welch_t_test(x, y);
    EXPECT_NEAR(r.t, t, 1e-12 * std::max(1.0, std::abs(t)));
    EXPECT_NEAR(r.dof, dof, 1e-9 * dof);
    EXPECT_NEAR(r.p, p, 1e-6) << "trial " << trial;
  }
}

TEST(Welch, AntisymmetricInArguments) {
  const std::vector<double> x = {0.1, 0.5, 0.3, 0.9};
  const std::vector<double> y = {0.2, 0.25, 0.7};
  const auto a = welch_t_test(x, y), b = welch_t_test(y, x);
  EXPECT_EQ(a.t, -b.t);
  EXPECT_EQ(a.p, b.p);
}

TEST(Welch, PDecreasesWithGap) {
  const std::vector<double> base = {0.0, 1.0, 2.0, 0.5, 1.5};
  double prev = 1.1;
  for (double gap : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> y = base;
    for (auto& e : y) e += gap;
    const double p = welch_t_test(base, y).p;
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Welch, ZeroVarianceConventions) {
  const std::vector<double> a = {1, 1, 1}, b = {2, 2, 2};
  const auto same = welch_t_test(a, a);
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_FALSE(same.degenerate);
  const auto diff = welch_t_test(a, b);
  EXPECT_EQ(diff.p, 0.0);
  EXPECT_TRUE(diff.degenerate);
}

TEST(Welch, TooFewSamples) {
  const std::vector<double> a = {1}, b = {2, 3};
  EXPECT_THROW(welch_t_test(a, b), Error);
}

TEST(Paired, MatchesOneSampleOracle) {
  const std::vector<double> x = {1.0, 2.5, 3.1, 4.0, 5.2};
  const std::vector<double> y = {0.8, 2.0, 3.3, 3.1, 4.9};
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) d.push_back(x[i] - y[i]);
  double m = 0;
  for (double e : d) m += e / 5.0;
  double s = 0;
  for (double e : d) s += (e - m) * (e - m) / 4.0;
  const double t = m / std::sqrt(s / 5.0);
  const auto r = paired_t_test(x, y);
  EXPECT_NEAR(r.t, t, 1e-12);
  EXPECT_NEAR(r.p, oracle::t_two_tailed_quadrature(t, 4.0), 1e-9);
}

TEST(IncompleteBeta, KnownValues) {
  EXPECT_NEAR(incomplete_beta(1.0, 1.0, 0.3), 0.3, 1e-14);
  EXPECT_NEAR(incomplete_beta(2.0, 3.0, 0.4), 0.5248, 1e-12);
  EXPECT_EQ(incomplete_beta(2.0, 3.0, 0.0), 0.0);
  EXPECT_EQ(incomplete_beta(2.0, 3.0, 1.0), 1.0);
}

std::vector<PredictionRecord> random_run(std::mt19937_64& rng, std::size_t n, double p) {
  std::bernoulli_distribution b(p);
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    PredictionRecord r;
    r.instance_id = 100 + i;
    r.correct = b(rng);
    out.push_back(r);
  }
  return out;
}

TEST(Subsets, SingleSubsetIsOverallMean) {
  std::mt19937_64 rng(2);
  const std::vector<std::vector<PredictionRecord>> runs = {random_run(rng, 50, 0.7), random_run(rng, 50, 0.4)};
  const auto s = subset_accuracy_samples(runs, 1, 3);
  ASSERT_EQ(s.size(), 1u);
  const double expected = (accuracy(runs[0]).overall + accuracy(runs[1]).overall) / 200.0;
  EXPECT_NEAR(s[0], expected, 1e-12);
}

TEST(Subsets, PartitionContract) {
  std::vector<InstanceId> ids(103);
  std::iota(ids.begin(), ids.end(), InstanceId{5});
  const auto parts = partition_ids(ids, 10, 4);
  std::set<InstanceId> seen;
  std::size_t lo = 1000, hi = 0;
  for (const auto& p : parts) {
    lo = std::min(lo, p.size());
    hi = std::max(hi, p.size());
    for (InstanceId id : p) EXPECT_TRUE(seen.insert(id).second);
  }
  EXPECT_EQ(seen.size(), ids.size());
  EXPECT_LE(hi - lo, 1u);
}

TEST(Subsets, AllCorrectGivesOnes) {
  std::mt19937_64 rng(2);
  const std::vector<std::vector<PredictionRecord>> runs = {random_run(rng, 40, 1.0)};
  for (double v : subset_accuracy_samples(runs, 8, 1)) EXPECT_EQ(v, 1.0);
}

TEST(Subsets, WeightedMeanIsOverall) {
  std::mt19937_64 rng(9);
  const std::vector<std::vector<PredictionRecord>> runs = {random_run(rng, 997, 0.6), random_run(rng, 997, 0.3),
                                                           random_run(rng, 997, 0.8)};
  const std::size_t cells = 50;
  const auto s = subset_accuracy_samples(runs, cells, 12);
  std::vector<InstanceId> ids;
  for (const auto& r : runs[0]) ids.push_back(r.instance_id);
  const auto parts = partition_ids(ids, cells, 12);
  double weighted = 0.0;
  for (std::size_t k = 0; k < cells; ++k) weighted += s[k] * static_cast<double>(parts[k].size());
  weighted /= static_cast<double>(ids.size());
  double overall = 0.0;
  for (const auto& r : runs) overall += accuracy(r).overall / 100.0 / 3.0;
  EXPECT_NEAR(weighted, overall, 1e-12);
}

TEST(Subsets, TooManyCellsIsConfigError) {
  std::mt19937_64 rng(2);
  const std::vector<std::vector<PredictionRecord>> runs = {random_run(rng, 5, 0.5)};
  try {
    subset_accuracy_samples(runs, 6, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Subsets, DefaultCount) {
  EXPECT_EQ(default_subset_count(2000), 200u);
  EXPECT_EQ(default_subset_count(100000), 500u);
  EXPECT_EQ(default_subset_count(5), 1u);
}

TEST(PredictionDump, CsvRoundTrip) {
  std::mt19937_64 rng(2);
  auto recs = random_run(rng, 20, 0.5);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].run_id = "run-" + std::to_string(i % 3);
    recs[i].variant = "hint/relevant";
    recs[i].predicted_answer = i * 3;
    recs[i].top_sensitive_region = i % 8;
    recs[i].answer_type = static_cast<AnswerType>(i % 3);
    recs[i].split = static_cast<Split>(i % 4);
  }
  std::stringstream ss;
  write_predictions(ss, recs);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  EXPECT_EQ(header, "instance_id,run_id,variant,split,predicted_answer,correct,top_sensitive_region,answer_type");
  EXPECT_EQ(read_predictions(ss), recs);
}

}  // namespace
