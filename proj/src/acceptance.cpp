#include "deltal/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "deltal/aggregation.hpp"
#include "deltal/config.hpp"
#include "deltal/experiment.hpp"
#include "deltal/gradient.hpp"
#include "deltal/policy.hpp"
#include "deltal/random.hpp"
#include "deltal/stats.hpp"

namespace deltal {

namespace {

CriterionResult a1_unbiasedness(const AcceptanceOptions& opt) {
  CriterionResult r{"A1", "unbiasedness of DeltaL and DrGRPO aggregates (vocab 3, max_len 5, 1e5 groups)", true, {}, 0};
  constexpr double kM = 5.0;
  const std::vector<AggregationScheme> schemes{DeltaL{0.0, kM}, DeltaL{0.5, kM}, DeltaL{1.0, kM}, DrGrpo{kM}};
  const EnumerableInstance inst = make_enumerable_instance(3, 5, 8, opt.seed);
  const Table1Report report = table1_cross_check(schemes, inst, 100'000, opt.seed, opt.jobs);
  r.details.push_back(fmt::format("G = {}, |grad J| = {:.6g}; criterion: max_k |M mean_k - grad J_k| / (M se_k) <= 4",
                                  inst.group_size, report.exact_gradient.norm()));
  for (const auto& row : report.rows) {
    r.pass = r.pass && row.pass;
    r.details.push_back(fmt::format(
        "{:<18} max z {:8.3f}  {}   (vs exact E[aggregate]: max z {:.3f}; exact scale x M = {:.4f})", row.label,
        row.max_z, row.pass ? "ok" : "exceeds 4", row.max_z_exact, row.exact_scale * row.m));
  }
  return r;
}

CriterionResult a2_variance_length(const AcceptanceOptions& opt) {
  CriterionResult r{"A2", "variance of the sample gradient grows linearly with length (1e4 samples)", false, {}, 0};
  const TaskSpec task = default_task();
  const PolicyParams params(task.vocab_size, task.vocab_size);
  const DeviationExperiment exp = deviation_experiment(params, task, 10'000, opt.seed);
  const auto bins = mean_by_length(exp.points, 30);
  const LengthVarianceFit fit = variance_length_regression(bins);
  const double l_min = bins.front().length;
  const bool r2_ok = fit.r_squared > 0.9;
  const bool intercept_ok = std::abs(fit.intercept) <= 0.2 * fit.slope * l_min;
  r.pass = r2_ok && intercept_ok;
  r.details.push_back(fmt::format("uniform policy, {} length bins with >= 30 samples", bins.size()));
  r.details.push_back(fmt::format("slope {:.6g}, intercept {:.6g}, r^2 {:.4f} (> 0.9: {}), |intercept| <= {:.6g}: {}",
                                  fit.slope, fit.intercept, fit.r_squared, r2_ok ? "yes" : "no",
                                  0.2 * fit.slope * l_min, intercept_ok ? "yes" : "no"));
  return r;
}

std::vector<double> fine_alpha_grid() {
  std::vector<double> alphas;
  for (int i = 20; i >= 0; --i) alphas.push_back(i / 20.0);
  return alphas;
}

CriterionResult a3_cv_ordering(const AcceptanceOptions& opt) {
  CriterionResult r{"A3", "CV ordering GRPO = DeltaL(1) <= DeltaL(alpha) <= DAPO = DrGRPO", false, {}, 0};
  const auto alphas = fine_alpha_grid();
  std::size_t violations = 0;
  std::size_t equal_vectors = 0;
  std::vector<std::string> first;
  const auto check = [&](const std::vector<int>& lengths) {
    const CvOrderingReport rep = cv_ordering_check(lengths, alphas);
    violations += rep.violations.size();
    equal_vectors += rep.lengths_equal ? 1 : 0;
    for (const auto& v : rep.violations) {
      if (first.size() < 5) first.push_back(v);
    }
  };
  for (int l1 = 1; l1 <= 16; ++l1) {
    for (int l2 = 1; l2 <= 16; ++l2) check({l1, l2});
  }
  Rng rng = make_rng(opt.seed, {0xa3});
  std::uniform_int_distribution<int> group(2, 64);
  std::uniform_int_distribution<int> length(1, 8192);
  for (int k = 0; k < 10'000; ++k) {
    std::vector<int> lengths(static_cast<std::size_t>(group(rng)));
    if (k % 10 == 0) {
      std::fill(lengths.begin(), lengths.end(), length(rng));
    } else {
      for (int& l : lengths) l = length(rng);
    }
    check(lengths);
  }
  r.pass = violations == 0;
  r.details.push_back(fmt::format("256 grid vectors (G = 2) + 10000 random vectors (G <= 64, L <= 8192), "
                                  "{} with all lengths equal; 21 alphas",
                                  equal_vectors));
  r.details.push_back(fmt::format("violations: {}", violations));
  for (const auto& v : first) r.details.push_back("  " + v);
  return r;
}

CriterionResult a4_min_variance(const AcceptanceOptions& opt) {
  CriterionResult r{"A4", "DeltaL(1) has the smallest rescaled aggregate variance (fixed lengths, 1e5 draws)", false,
                    {}, 0};
  const TaskSpec task = default_task();
  const PolicyParams params(task.vocab_size, task.vocab_size);
  const std::vector<int> lengths{1, 2, 3, 4, 6, 8, 12, 16};
  const double m = task.max_len;
  const auto schemes = default_schemes(m, {0.0, 0.25, 0.5, 0.75, 1.0});
  const OptimalityReport rep = optimality_check(params, task, lengths, schemes, m, 100'000, opt.seed, opt.jobs);
  r.details.push_back(fmt::format("lengths [{}], uniform policy; reference variance {:.8g}", fmt::join(lengths, ","),
                                  rep.schemes.front().variance));
  for (const auto& s : rep.schemes) {
    r.details.push_back(fmt::format("{:<20} variance {:.8g}  diff {:+.3e} (se {:.2e})  {}", s.label, s.variance,
                                    s.diff_vs_reference, s.diff_se, s.pass ? "ok" : "below reference by > 3 se"));
  }
  Rng rng = make_rng(opt.seed, {0xa4});
  const RandomWeightTrial trial = random_weight_trial(lengths, m, 10'000, rng);
  r.details.push_back(fmt::format("weight trial: {} random feasible vectors, {} beat the closed form "
                                  "(optimum {:.10g}, best random {:.10g})",
                                  trial.trials, trial.exceptions, trial.best_objective, trial.min_random_objective));
  r.pass = rep.pass() && trial.exceptions == 0;
  return r;
}

CriterionResult a5_training(const AcceptanceOptions& opt) {
  CriterionResult r{"A5", "training comparison over 5 matched seeds on the default task", false, {}, 0};
  ExperimentConfig config;
  config.kind = ExperimentKind::TrainCompare;
  config.task = default_task();
  const double m = config.task.max_len;
  config.schemes = {DeltaL{1.0, m}, Grpo{}, Dapo{}, DrGrpo{m}};
  config.train = TrainConfig{};
  config.seeds.clear();
  for (std::uint64_t k = 0; k < 5; ++k) config.seeds.push_back(opt.seed + k);
  const TrainComparison cmp = compare_training(config, opt.jobs);
  for (const auto& s : cmp.schemes) {
    std::string per;
    for (std::size_t k = 0; k < s.finals.size(); ++k) {
      per += fmt::format(" {:.3f}/{}", s.finals[k], s.monotonicity[k] ? fmt::format("{:.2f}", *s.monotonicity[k]) : "undef");
    }
    r.details.push_back(fmt::format("{:<18} mean final {:.4f}  mean monotonicity {:.4f}  per seed:{}", s.label,
                                    s.mean_final, s.mean_monotonicity, per));
  }
  const TrainVerdict v = train_verdict(cmp);
  r.details.insert(r.details.end(), v.lines.begin(), v.lines.end());
  r.pass = v.pass();
  return r;
}

CriterionResult a6_identities(const AcceptanceOptions& opt) {
  CriterionResult r{"A6", "DeltaL(0) weights equal DrGRPO bitwise; CV of DeltaL(1) equals CV of GRPO", false, {}, 0};
  Rng rng = make_rng(opt.seed, {0xa6});
  std::uniform_int_distribution<int> group(1, 64);
  std::uniform_int_distribution<int> length(1, 8192);
  int mismatches = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<int> lengths(static_cast<std::size_t>(group(rng)));
    for (int& l : lengths) l = length(rng);
    const double m = 1.0 + 8191.0 * uniform01(rng);
    if (scheme_weights(DeltaL{0.0, m}, lengths) != scheme_weights(DrGrpo{m}, lengths)) ++mismatches;
  }
  double worst = 0.0;
  int bit_equal = 0;
  for (int l1 = 1; l1 <= 16; ++l1) {
    for (int l2 = 1; l2 <= 16; ++l2) {
      const std::vector<int> lengths{l1, l2};
      const double a = closed_form_cv(DeltaL{1.0, 1.0}, lengths);
      const double g = closed_form_cv(Grpo{}, lengths);
      worst = std::max(worst, std::abs(a - g) / std::max(a, g));
      bit_equal += a == g ? 1 : 0;
    }
  }
  const bool cv_ok = worst <= kCvEqualityTolerance;
  r.pass = mismatches == 0 && cv_ok;
  r.details.push_back(fmt::format("1000 random length vectors: {} weight vectors differ from DrGRPO", mismatches));
  r.details.push_back(fmt::format("256 grid vectors: max relative CV difference {:.3g} (<= 1e-12: {}), {} bit-equal",
                                  worst, cv_ok ? "yes" : "no", bit_equal));
  return r;
}

CriterionResult a7_gradients(const AcceptanceOptions& opt) {
  CriterionResult r{"A7", "analytic sample gradients match central differences (100 triples)", false, {}, 0};
  constexpr double kStep = 1e-5;
  constexpr double kTol = 1e-6;
  Rng rng = make_rng(opt.seed, {0xa7});
  double worst = 0.0;
  int failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TaskSpec task;
    task.vocab_size = 2 + static_cast<int>(rng() % 5);
    task.max_len = 1 + static_cast<int>(rng() % 8);
    const int states = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(task.vocab_size));
    PolicyParams params(states, task.vocab_size);
    for (double& v : params.values()) v = 4.0 * uniform01(rng) - 2.0;
    const Trajectory traj = sample_trajectory(params, task, rng);
    const double advantage = 4.0 * uniform01(rng) - 2.0;
    const GradVector analytic = sample_gradient(params, traj, advantage, ClipConfig{});
    double trial_worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      PolicyParams up = params;
      PolicyParams down = params;
      up.values()[k] += kStep;
      down.values()[k] -= kStep;
      const double fd = advantage *
                        (sequence_logprob(PolicyTables(up), traj.tokens) - sequence_logprob(PolicyTables(down), traj.tokens)) /
                        (2.0 * kStep);
      trial_worst = std::max(trial_worst, std::abs(fd - analytic[k]));
    }
    worst = std::max(worst, trial_worst);
    failures += trial_worst > kTol ? 1 : 0;
  }
  r.pass = failures == 0;
  r.details.push_back(fmt::format("max componentwise |analytic - central difference| = {:.3g} (tolerance 1e-6), "
                                  "{} triples over tolerance",
                                  worst, failures));
  return r;
}

using Runner = CriterionResult (*)(const AcceptanceOptions&);

struct Entry {
  const char* id;
  Runner run;
};

constexpr Entry kCriteria[] = {
    {"A1", a1_unbiasedness}, {"A2", a2_variance_length}, {"A3", a3_cv_ordering}, {"A4", a4_min_variance},
    {"A5", a5_training},     {"A6", a6_identities},      {"A7", a7_gradients},
};

}  // namespace

std::vector<std::string> acceptance_ids() {
  std::vector<std::string> ids;
  for (const auto& c : kCriteria) ids.emplace_back(c.id);
  return ids;
}

CriterionResult run_criterion(const std::string& id, const AcceptanceOptions& options) {
  const auto it = std::find_if(std::begin(kCriteria), std::end(kCriteria), [&](const Entry& e) { return id == e.id; });
  if (it == std::end(kCriteria)) throw std::invalid_argument("unknown acceptance criterion '" + id + "'");
  const auto start = std::chrono::steady_clock::now();
  CriterionResult r = it->run(options);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options,
                                            const std::function<void(const CriterionResult&)>& on_result) {
  std::vector<CriterionResult> out;
  for (const auto& c : kCriteria) {
    out.push_back(run_criterion(c.id, options));
    if (on_result) on_result(out.back());
  }
  return out;
}

std::string format_result(const CriterionResult& result) {
  std::string out = fmt::format("{} {}  {}  ({:.1f} s)\n", result.id, result.pass ? "PASS" : "FAIL", result.title,
                                result.seconds);
  for (const auto& d : result.details) out += "    " + d + "\n";
  return out;
}

}  // namespace deltal
