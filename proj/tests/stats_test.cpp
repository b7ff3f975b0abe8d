#include <gsl/gsl_fit.h>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "deltal/enumeration.hpp"
#include "deltal/errors.hpp"
#include "deltal/stats.hpp"
#include "test_support.hpp"

namespace deltal {
namespace {

GradSampler two_point_sampler(std::size_t dim) {
  return [dim](Rng& rng) {
    GradVector g(dim);
    for (std::size_t k = 0; k < dim; ++k) g[k] = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    return g;
  };
}

GradSampler uniform_sampler(std::size_t dim, double shift) {
  return [dim, shift](Rng& rng) {
    GradVector g(dim);
    for (std::size_t k = 0; k < dim; ++k) g[k] = shift + 2.0 * uniform01(rng) - 1.0;
    return g;
  };
}

TEST(MonteCarloStats, ConstantSamplerHasZeroVariance) {
  const GradVector g0(std::vector<double>{1.5, -2.0, 0.25});
  const GradStats s = monte_carlo_stats([&](Rng&) { return g0; }, 1000, 7);
  EXPECT_EQ(s.mean, g0);
  EXPECT_EQ(s.total_variance, 0.0);
  EXPECT_EQ(s.cv, 0.0);
  EXPECT_EQ(s.n_samples, 1000u);
  EXPECT_DOUBLE_EQ(s.mean_norm, g0.norm());
}

TEST(MonteCarloStats, TwoPointVarianceEqualsDimension) {
  const std::size_t d = 6;
  const GradStats s = monte_carlo_stats(two_point_sampler(d), 100'000, 11);
  EXPECT_NEAR(s.total_variance, static_cast<double>(d), 0.05 * d);
  EXPECT_LT(s.mean_norm, 0.05);
}

TEST(MonteCarloStats, CvMatchesDefinition) {
  const GradStats s = monte_carlo_stats(uniform_sampler(4, 0.3), 5000, 3);
  ASSERT_GT(s.mean_norm, 0.0);
  EXPECT_NEAR(s.cv, std::sqrt(s.total_variance) / s.mean_norm, 1e-12 * s.cv);
  // Uniform[-1,1] has variance 1/3 per component.
  EXPECT_NEAR(s.total_variance, 4.0 / 3.0, 0.05);
}

TEST(MonteCarloStats, RejectsFewerThanTwoDraws) {
  EXPECT_THROW(monte_carlo_stats(two_point_sampler(2), 1, 0), std::invalid_argument);
}

TEST(MonteCarloStats, ResultIndependentOfThreadCount) {
  const auto sampler = uniform_sampler(5, 0.1);
  const SampleMatrix a = monte_carlo_samples(sampler, 4321, 99, 1);
  const SampleMatrix b = monte_carlo_samples(sampler, 4321, 99, 4);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    ASSERT_TRUE(std::equal(a.row(i).begin(), a.row(i).end(), b.row(i).begin()));
  }
  const GradStats sa = compute_grad_stats(a);
  const GradStats sb = compute_grad_stats(b);
  EXPECT_EQ(sa.mean, sb.mean);
  EXPECT_EQ(sa.total_variance, sb.total_variance);
}

TEST(MonteCarloStats, VarianceInvariantToSampleOrder) {
  const SampleMatrix a = monte_carlo_samples(uniform_sampler(7, -0.4), 3000, 5);
  std::vector<std::size_t> order(a.rows());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 gen(17);
  std::shuffle(order.begin(), order.end(), gen);
  SampleMatrix b(a.dim());
  for (std::size_t i : order) b.append(GradVector(std::vector<double>(a.row(i).begin(), a.row(i).end())));
  EXPECT_NEAR(compute_grad_stats(a).total_variance, compute_grad_stats(b).total_variance, 1e-10);
}

TEST(MonteCarloStats, VarianceStandardErrorMatchesReplicationSpread) {
  const auto sampler = uniform_sampler(3, 0.0);
  std::vector<double> estimates;
  double reported = 0.0;
  for (std::uint64_t rep = 0; rep < 300; ++rep) {
    const GradStats s = monte_carlo_stats(sampler, 1000, 1000 + rep);
    estimates.push_back(s.total_variance);
    reported += s.standard_error_variance;
  }
  reported /= 300.0;
  const double mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / 300.0;
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);
  const double spread = std::sqrt(ss / 299.0);
  EXPECT_NEAR(reported / spread, 1.0, 0.15);
}

TEST(MonteCarloStats, ComponentStandardErrors) {
  SampleMatrix m(2);
  m.append(GradVector(std::vector<double>{1.0, 0.0}));
  m.append(GradVector(std::vector<double>{3.0, 0.0}));
  m.append(GradVector(std::vector<double>{5.0, 0.0}));
  m.append(GradVector(std::vector<double>{7.0, 0.0}));
  const GradStats s = compute_grad_stats(m);
  const GradVector se = component_standard_errors(m, s.mean);
  // population variance of {1,3,5,7} is 5
  EXPECT_NEAR(se[0], std::sqrt(5.0 / 4.0), 1e-15);
  EXPECT_EQ(se[1], 0.0);
}

TEST(SampleMatrix, RejectsWrongDimension) {
  SampleMatrix m(3);
  EXPECT_THROW(m.append(GradVector(2)), DimensionMismatch);
}

// ---------------------------------------------------------------------------

TEST(Regression, ExactLine) {
  const std::vector<LengthPoint> pts{{1, 2}, {2, 4}, {3, 6}};
  const auto fit = variance_length_regression(pts);
  EXPECT_NEAR(fit.slope, 2.0, 1e-14);
  EXPECT_NEAR(fit.intercept, 0.0, 1e-14);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-14);
  EXPECT_EQ(fit.points.size(), 3u);
}

TEST(Regression, FlatLine) {
  const std::vector<LengthPoint> pts{{1, 0.5}, {4, 0.5}, {9, 0.5}, {9, 0.5}};
  const auto fit = variance_length_regression(pts);
  EXPECT_EQ(fit.slope, 0.0);
  EXPECT_NEAR(fit.intercept, 0.5, 1e-15);
  EXPECT_EQ(fit.r_squared, 1.0);
}

TEST(Regression, NeedsThreeDistinctLengths) {
  const std::vector<LengthPoint> same{{2, 1}, {2, 3}, {2, 5}};
  const std::vector<LengthPoint> two{{1, 1}, {2, 3}, {2, 5}, {1, 0}};
  EXPECT_THROW(variance_length_regression(same), DegenerateDesign);
  EXPECT_THROW(variance_length_regression(two), DegenerateDesign);
}

TEST(Regression, AgreesWithGslOnNoisyData) {
  std::mt19937_64 gen(4);
  std::uniform_int_distribution<int> len(1, 30);
  std::normal_distribution<double> noise(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<LengthPoint> pts;
    std::vector<double> x;
    std::vector<double> y;
    for (int i = 0; i < 200; ++i) {
      const double l = len(gen);
      pts.push_back({l, 0.7 * l + 1.0 + noise(gen)});
      x.push_back(pts.back().length);
      y.push_back(pts.back().value);
    }
    const auto fit = variance_length_regression(pts);
    double c0, c1, cov00, cov01, cov11, sumsq;
    gsl_fit_linear(x.data(), 1, y.data(), 1, x.size(), &c0, &c1, &cov00, &cov01, &cov11, &sumsq);
    EXPECT_NEAR(fit.slope, c1, 1e-10);
    EXPECT_NEAR(fit.intercept, c0, 1e-9);
    double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double syy = 0.0;
    for (double v : y) syy += (v - my) * (v - my);
    EXPECT_NEAR(fit.r_squared, 1.0 - sumsq / syy, 1e-10);
    EXPECT_GE(fit.r_squared, 0.0);
    EXPECT_LE(fit.r_squared, 1.0);
  }
}

TEST(Regression, MeanByLength) {
  const std::vector<LengthPoint> pts{{3, 1}, {1, 2}, {3, 5}, {2, 7}, {1, 4}};
  const auto all = mean_by_length(pts, 1);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].length, 1.0);
  EXPECT_EQ(all[0].value, 3.0);
  EXPECT_EQ(all[1].value, 7.0);
  EXPECT_EQ(all[2].value, 3.0);
  EXPECT_EQ(mean_by_length(pts, 2).size(), 2u);
}

TEST(DeviationExperiment, DeviationsAverageToTotalVariance) {
  const TaskSpec task = default_task();
  std::mt19937_64 gen(8);
  const PolicyParams params = testing::random_params(task.vocab_size, task.vocab_size, gen, 0.5);
  const auto exp = deviation_experiment(params, task, 2000, 21);
  ASSERT_EQ(exp.points.size(), 2000u);
  double total = 0.0;
  for (const auto& p : exp.points) {
    total += p.value;
    EXPECT_GE(p.length, 1.0);
    EXPECT_LE(p.length, task.max_len);
  }
  EXPECT_NEAR(total / 2000.0, exp.stats.total_variance, 1e-12 * exp.stats.total_variance);
  EXPECT_GT(exp.mean_reward, 0.0);
  EXPECT_LT(exp.mean_reward, 1.0);
}

TEST(DeviationExperiment, ConstantRewardGivesZeroDeviation) {
  TaskSpec task = default_task();
  task.reward_rule = SumEqualsTarget{0};
  task.target = 100000;
  const auto exp = deviation_experiment(PolicyParams(task.vocab_size, task.vocab_size), task, 500, 2);
  for (const auto& p : exp.points) EXPECT_EQ(p.value, 0.0);
  EXPECT_EQ(exp.stats.total_variance, 0.0);
}

// ---------------------------------------------------------------------------

// Weights written out from the definitions, kept separate from the library.
std::vector<double> oracle_weights(const AggregationScheme& s, const std::vector<int>& lengths) {
  const double g = static_cast<double>(lengths.size());
  std::vector<double> x;
  double sum_l = 0.0;
  for (int l : lengths) sum_l += l;
  for (int l : lengths) {
    if (std::holds_alternative<Grpo>(s)) x.push_back(1.0 / (g * l));
    if (std::holds_alternative<Dapo>(s)) x.push_back(1.0 / sum_l);
    if (const auto* d = std::get_if<DrGrpo>(&s)) x.push_back(1.0 / (g * d->M));
    if (const auto* d = std::get_if<DeltaL>(&s)) {
      double z = 0.0;
      for (int j : lengths) z += std::pow(j, -d->alpha);
      x.push_back(std::pow(l, -d->alpha) / (z * d->M));
    }
  }
  return x;
}

// CV of sum x_i g_i with Var(g_i) = L_i and E g_i = grad J, |grad J| = 1.
double oracle_cv(const AggregationScheme& s, const std::vector<int>& lengths) {
  const auto x = oracle_weights(s, lengths);
  double var = 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    var += x[i] * x[i] * lengths[i];
    mean += x[i];
  }
  return std::sqrt(var) / mean;
}

TEST(ClosedFormCv, WorkedExample) {
  const std::vector<int> l{1, 4};
  EXPECT_NEAR(closed_form_cv(Grpo{}, l), 1.0 / std::sqrt(1.25), 1e-15);
  EXPECT_NEAR(closed_form_cv(Dapo{}, l), std::sqrt(5.0) / 2.0, 1e-15);
  EXPECT_NEAR(closed_form_cv(DrGrpo{4.0}, l), std::sqrt(5.0) / 2.0, 1e-15);
  EXPECT_NEAR(closed_form_cv(DeltaL{0.5, 4.0}, l), std::sqrt(2.0) / 1.5, 1e-15);
  EXPECT_NEAR(closed_form_cv(Grpo{}, l), 0.89443, 1e-5);
  EXPECT_NEAR(closed_form_cv(Dapo{}, l), 1.11803, 1e-5);
  EXPECT_NEAR(closed_form_cv(DeltaL{0.5, 1.0}, l), 0.94281, 1e-5);
}

TEST(ClosedFormCv, MatchesWeightedVarianceOracle) {
  std::mt19937_64 gen(31);
  std::uniform_int_distribution<int> gsize(1, 32);
  std::uniform_int_distribution<int> len(1, 500);
  std::uniform_real_distribution<double> alpha(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> l(static_cast<std::size_t>(gsize(gen)));
    for (int& v : l) v = len(gen);
    const std::vector<AggregationScheme> schemes{Grpo{}, Dapo{}, DrGrpo{7.0}, DeltaL{alpha(gen), 3.0}};
    for (const auto& s : schemes) {
      const double want = oracle_cv(s, l);
      EXPECT_NEAR(closed_form_cv(s, l), want, 1e-12 * want) << scheme_label(s);
    }
  }
}

TEST(ClosedFormCv, ScalesWithVarianceAndNorm) {
  const std::vector<int> l{3, 9, 27};
  const double base = closed_form_cv(DeltaL{0.3, 1.0}, l);
  EXPECT_NEAR(closed_form_cv(DeltaL{0.3, 1.0}, l, 4.0, 2.0), base, 1e-15);
  EXPECT_NEAR(closed_form_cv(DeltaL{0.3, 1.0}, l, 9.0, 1.0), 3.0 * base, 1e-14);
}

TEST(ClosedFormCv, EqualLengthsGiveOneValue) {
  for (int l = 1; l <= 40; l += 3) {
    const std::vector<int> lengths(6, l);
    const double ref = closed_form_cv(Dapo{}, lengths);
    EXPECT_NEAR(closed_form_cv(Grpo{}, lengths), ref, 1e-14);
    EXPECT_NEAR(closed_form_cv(DeltaL{0.37, 2.0}, lengths), ref, 1e-14);
    EXPECT_NEAR(closed_form_cv(DeltaL{1.0, 2.0}, lengths), ref, 1e-14);
  }
}

TEST(ClosedFormCv, AlphaZeroCoincidesWithDapoAndDrGrpo) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> len(1, 8192);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> l(static_cast<std::size_t>(2 + trial % 63));
    for (int& v : l) v = len(gen);
    const double dapo = closed_form_cv(Dapo{}, l);
    EXPECT_EQ(closed_form_cv(DeltaL{0.0, 1.0}, l), dapo);
    EXPECT_EQ(closed_form_cv(DrGrpo{1.0}, l), dapo);
  }
}

TEST(ClosedFormCv, InvalidInputs) {
  const std::vector<int> bad{2, 0};
  const std::vector<int> empty;
  const std::vector<int> ok{2, 3};
  EXPECT_THROW(closed_form_cv(Grpo{}, bad), InvalidLength);
  EXPECT_THROW(closed_form_cv(Grpo{}, empty), InvalidLength);
  EXPECT_THROW(closed_form_cv(Grpo{}, ok, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(closed_form_cv(Grpo{}, ok, 1.0, -1.0), std::invalid_argument);
  EXPECT_THROW(closed_form_cv(DeltaL{1.5, 1.0}, ok), std::invalid_argument);
}

TEST(CvOrdering, WorkedExample) {
  const std::vector<int> l{1, 4};
  const auto r = cv_ordering_check(l);
  EXPECT_TRUE(r.ok()) << r.violations.front();
  EXPECT_FALSE(r.lengths_equal);
  ASSERT_EQ(r.alphas.size(), 5u);
  EXPECT_EQ(r.alphas.front(), 1.0);
  EXPECT_NEAR(r.delta_l[2], 0.94281, 1e-5);
  EXPECT_LT(r.grpo, r.delta_l[2]);
  EXPECT_LT(r.delta_l[2], r.dapo);
}

TEST(CvOrdering, EqualLengthsAreAllEqualities) {
  const std::vector<int> l(5, 12);
  const auto r = cv_ordering_check(l);
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.lengths_equal);
  for (double cv : r.delta_l) EXPECT_NEAR(cv, r.dapo, 1e-12 * r.dapo);
}

TEST(CvOrdering, ExhaustivePairsUpToSixteen) {
  for (int a = 1; a <= 16; ++a) {
    for (int b = 1; b <= 16; ++b) {
      const std::vector<int> l{a, b};
      const auto r = cv_ordering_check(l);
      ASSERT_TRUE(r.ok()) << r.violations.front();
    }
  }
}

TEST(CvOrdering, RandomSweepWithFineAlphaGrid) {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<int> gsize(2, 64);
  std::uniform_int_distribution<int> len(1, 8192);
  std::vector<double> grid;
  for (int k = 0; k <= 20; ++k) grid.push_back(k / 20.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<int> l(static_cast<std::size_t>(gsize(gen)));
    for (int& v : l) v = len(gen);
    const auto r = cv_ordering_check(l, grid);
    ASSERT_TRUE(r.ok()) << r.violations.front();
  }
}

TEST(CvOrdering, NearlyEqualLengthsStillStrict) {
  std::vector<int> l(64, 8192);
  l.back() = 8191;
  const auto r = cv_ordering_check(l);
  EXPECT_TRUE(r.ok()) << (r.ok() ? "" : r.violations.front());
  EXPECT_LT(r.grpo, r.dapo);
}

TEST(CvOrdering, RejectsSingleLength) {
  const std::vector<int> l{3};
  EXPECT_THROW(cv_ordering_check(l), GroupTooSmall);
}

// ---------------------------------------------------------------------------

struct Leaf {
  double probability;
  int reward;
  int length;
  GradVector score;
};

std::vector<Leaf> leaves_of(const EnumerableInstance& inst) {
  std::vector<Leaf> out;
  for_each_trajectory(inst.params, inst.task, [&](const EnumeratedTrajectory& t) {
    out.push_back({t.probability, t.reward, static_cast<int>(t.tokens.size()), *t.score});
  });
  return out;
}

// E[sum x_i g_i] by summing over every ordered G-tuple of responses.
GradVector brute_force_aggregate(const AggregationScheme& scheme, const EnumerableInstance& inst) {
  const auto leaves = leaves_of(inst);
  double er = 0.0;
  for (const auto& l : leaves) er += l.probability * l.reward;
  const auto G = static_cast<std::size_t>(inst.group_size);
  std::vector<std::size_t> idx(G, 0);
  GradVector total(inst.params.size());
  while (true) {
    double p = 1.0;
    std::vector<int> lengths;
    for (std::size_t i : idx) {
      p *= leaves[i].probability;
      lengths.push_back(leaves[i].length);
    }
    const auto x = oracle_weights(scheme, lengths);
    for (std::size_t j = 0; j < G; ++j) {
      total.add_scaled(p * x[j] * (leaves[idx[j]].reward - er), leaves[idx[j]].score);
    }
    std::size_t k = 0;
    while (k < G && ++idx[k] == leaves.size()) idx[k++] = 0;
    if (k == G) break;
  }
  return total;
}

TEST(ExactAggregate, MatchesBruteForceOverTuples) {
  const auto inst = make_enumerable_instance(3, 3, 3, 12, 1.0);
  const std::vector<AggregationScheme> schemes{Grpo{}, Dapo{}, DrGrpo{3.0}, DeltaL{0.0, 3.0}, DeltaL{0.5, 3.0},
                                               DeltaL{1.0, 3.0}};
  for (const auto& s : schemes) {
    const GradVector fast = exact_expected_aggregate(s, inst);
    const GradVector slow = brute_force_aggregate(s, inst);
    for (std::size_t k = 0; k < fast.dim(); ++k) EXPECT_NEAR(fast[k], slow[k], 1e-12) << scheme_label(s);
  }
}

TEST(ExactAggregate, ConstantWeightsAreUnbiased) {
  const auto inst = make_enumerable_instance(3, 5, 8, 4, 1.0);
  const GradVector grad = enumerate_exact_gradient(inst.params, inst.task, AdvantageMode::MeanOnly);
  const GradVector dr = exact_expected_aggregate(DrGrpo{5.0}, inst);
  for (std::size_t k = 0; k < grad.dim(); ++k) EXPECT_NEAR(5.0 * dr[k], grad[k], 1e-12);
}

TEST(ExactAggregate, SingletonGroupIsUnbiasedForDeltaL) {
  auto inst = make_enumerable_instance(3, 4, 1, 9, 1.0);
  const GradVector grad = enumerate_exact_gradient(inst.params, inst.task, AdvantageMode::MeanOnly);
  const GradVector dl = exact_expected_aggregate(DeltaL{0.7, 2.0}, inst);
  for (std::size_t k = 0; k < grad.dim(); ++k) EXPECT_NEAR(2.0 * dl[k], grad[k], 1e-12);
}

TEST(Table1, MonteCarloMatchesExactExpectation) {
  const auto inst = make_enumerable_instance(3, 4, 4, 21, 1.0);
  const std::vector<AggregationScheme> schemes{Grpo{}, Dapo{}, DrGrpo{4.0}, DeltaL{0.5, 4.0}, DeltaL{1.0, 4.0}};
  const auto report = table1_cross_check(schemes, inst, 40'000, 5);
  ASSERT_EQ(report.rows.size(), schemes.size());
  for (const auto& row : report.rows) {
    EXPECT_LT(row.max_z_exact, 4.5) << row.label;
    EXPECT_EQ(row.n, 40'000u);
    EXPECT_EQ(row.group_size, 4);
  }
  const auto& dr = report.rows[2];
  EXPECT_TRUE(dr.unbiased);
  EXPECT_TRUE(dr.pass) << dr.max_z;
  EXPECT_NEAR(dr.exact_scale, 1.0 / 4.0, 1e-12);
  EXPECT_NEAR(dr.mean_weight_sum, 1.0 / 4.0, 1e-15);
  EXPECT_EQ(dr.prediction, 1.0 / 4.0);
  // Biased schemes report their average weight mass as the prediction.
  EXPECT_EQ(report.rows[0].prediction, report.rows[0].mean_weight_sum);
  EXPECT_TRUE(report.rows[0].pass);
}

TEST(Table1, IndependentOfThreadCount) {
  const auto inst = make_enumerable_instance(3, 3, 4, 2, 1.0);
  const std::vector<AggregationScheme> schemes{Grpo{}, DeltaL{1.0, 3.0}};
  const auto a = table1_cross_check(schemes, inst, 3000, 8, 1);
  const auto b = table1_cross_check(schemes, inst, 3000, 8, 3);
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    EXPECT_EQ(a.rows[s].stats.mean, b.rows[s].stats.mean);
    EXPECT_EQ(a.rows[s].stats.total_variance, b.rows[s].stats.total_variance);
  }
}

TEST(Table1, TooLargeInstanceThrows) {
  auto inst = make_enumerable_instance(10, 16, 4, 1, 1.0);
  const std::vector<AggregationScheme> schemes{Grpo{}};
  EXPECT_THROW(table1_cross_check(schemes, inst, 10, 1), EnumerationTooLarge);
}

// ---------------------------------------------------------------------------

TEST(FixedLength, ProducesRequestedLengthsInOrder) {
  const TaskSpec task = default_task();
  const PolicyTables tables(PolicyParams(task.vocab_size, task.vocab_size));
  Rng rng = make_rng(3);
  const std::vector<int> want{5, 1, 16, 5, 2};
  for (int rep = 0; rep < 50; ++rep) {
    const auto trajs = sample_with_lengths(tables, task, want, rng);
    ASSERT_EQ(trajs.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(trajs[i].length(), want[i]);
  }
}

TEST(FixedLength, InvalidAndUnreachableLengths) {
  TaskSpec task = default_task();
  const std::vector<int> too_long{task.max_len + 1};
  PolicyTables uniform(PolicyParams(task.vocab_size, task.vocab_size));
  Rng rng = make_rng(1);
  EXPECT_THROW(sample_with_lengths(uniform, task, too_long, rng), InvalidLength);

  PolicyParams stop_always(task.vocab_size, task.vocab_size);
  for (int s = 0; s < task.vocab_size; ++s) stop_always.logit(s, kStopToken) = 1e6;
  const std::vector<int> three{3};
  EXPECT_THROW(sample_with_lengths(PolicyTables(stop_always), task, three, rng, 1000), Error);
}

TEST(FixedLength, FirstTokenFollowsConditionalDistribution) {
  TaskSpec task;
  task.vocab_size = 3;
  task.max_len = 4;
  std::mt19937_64 gen(6);
  const PolicyParams params = testing::random_params(3, 3, gen, 1.0);
  const PolicyTables tables(params);
  // P(first = t | L = 2) proportional to p0(t) * p_t(STOP).
  std::vector<double> want(3, 0.0);
  double z = 0.0;
  for (int t = 1; t < 3; ++t) {
    want[static_cast<std::size_t>(t)] = tables.probs(0)[static_cast<std::size_t>(t)] * tables.probs(t % 3)[0];
    z += want[static_cast<std::size_t>(t)];
  }
  Rng rng = make_rng(44);
  const std::vector<int> lengths{2};
  const int n = 40'000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += sample_with_lengths(tables, task, lengths, rng)[0].tokens[0] == 1;
  const double p = want[1] / z;
  EXPECT_NEAR(ones / static_cast<double>(n), p, 4.0 * std::sqrt(p * (1 - p) / n));
}

// Var(g | L = l) for g = (r - E r) score, by enumeration.
std::map<int, double> conditional_variance(const PolicyParams& params, const TaskSpec& task) {
  EnumerableInstance inst{params, task, 1};
  const auto leaves = leaves_of(inst);
  double er = 0.0;
  for (const auto& l : leaves) er += l.probability * l.reward;
  std::map<int, double> mass;
  std::map<int, double> second;
  std::map<int, GradVector> first;
  for (const auto& l : leaves) {
    const double a = l.reward - er;
    mass[l.length] += l.probability;
    second[l.length] += l.probability * a * a * l.score.squared_norm();
    auto [it, _] = first.try_emplace(l.length, GradVector(params.size()));
    it->second.add_scaled(l.probability * a, l.score);
  }
  std::map<int, double> out;
  for (const auto& [len, p] : mass) {
    GradVector m = first[len];
    m *= 1.0 / p;
    out[len] = second[len] / p - m.squared_norm();
  }
  return out;
}

TEST(Optimality, VarianceMatchesConditionalOracleAndReferenceWins) {
  const auto inst = make_enumerable_instance(3, 5, 4, 13, 0.7);
  const std::vector<int> lengths{1, 2, 4, 5};
  const double m = 5.0;
  const std::vector<AggregationScheme> schemes{Grpo{}, Dapo{}, DrGrpo{m}, DeltaL{0.5, m}, DeltaL{1.0, m}};
  const auto report = optimality_check(inst.params, inst.task, lengths, schemes, m, 20'000, 3);
  ASSERT_EQ(report.schemes.size(), schemes.size() + 1);
  EXPECT_TRUE(report.pass());

  const auto cond = conditional_variance(inst.params, inst.task);
  for (std::size_t s = 0; s < report.schemes.size(); ++s) {
    const auto& v = report.schemes[s];
    std::vector<double> x = s == 0 ? min_variance_weights(lengths, m).weights
                                   : scheme_weights(schemes[s - 1], lengths).weights;
    const double sum = std::accumulate(x.begin(), x.end(), 0.0);
    double want = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = x[i] / (m * sum);
      want += xi * xi * cond.at(lengths[i]);
    }
    EXPECT_NEAR(v.variance, want, 4.0 * v.variance_se) << v.label;
  }
  EXPECT_EQ(report.schemes[0].diff_vs_reference, 0.0);
  // GRPO rescaled to sum 1/M is the minimizer itself.
  EXPECT_NEAR(report.schemes[1].variance, report.schemes[0].variance, 1e-12 * report.schemes[0].variance);
  EXPECT_NEAR(report.schemes[1].raw_weight_sum, (1.0 + 0.5 + 0.25 + 0.2) / 4.0, 1e-15);
}

TEST(Optimality, IndependentOfThreadCount) {
  const auto inst = make_enumerable_instance(3, 5, 4, 13, 0.7);
  const std::vector<int> lengths{1, 3, 5};
  const std::vector<AggregationScheme> schemes{Dapo{}};
  const auto a = optimality_check(inst.params, inst.task, lengths, schemes, 5.0, 2000, 9, 1);
  const auto b = optimality_check(inst.params, inst.task, lengths, schemes, 5.0, 2000, 9, 4);
  for (std::size_t s = 0; s < a.schemes.size(); ++s) {
    EXPECT_EQ(a.schemes[s].variance, b.schemes[s].variance);
    EXPECT_EQ(a.schemes[s].diff_vs_reference, b.schemes[s].diff_vs_reference);
  }
}

TEST(Optimality, RandomFeasibleWeightsNeverBeatMinimizer) {
  Rng rng = make_rng(5);
  const std::vector<int> lengths{1, 2, 3, 4, 6, 8, 12, 16};
  const auto trial = random_weight_trial(lengths, 16.0, 10'000, rng);
  EXPECT_EQ(trial.exceptions, 0u);
  EXPECT_EQ(trial.trials, 10'000u);
  EXPECT_GT(trial.min_random_objective, trial.best_objective);
  // sum L x*^2 = 1 / (M^2 sum 1/L)
  double inv = 0.0;
  for (int l : lengths) inv += 1.0 / l;
  EXPECT_NEAR(trial.best_objective, 1.0 / (256.0 * inv), 1e-15);
}

}  // namespace
}  // namespace deltal
