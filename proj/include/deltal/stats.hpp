#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deltal/aggregation.hpp"
#include "deltal/gradient.hpp"
#include "deltal/grad_vector.hpp"
#include "deltal/policy.hpp"
#include "deltal/random.hpp"

namespace deltal {

// Row-major n x dim store of gradient samples.
class SampleMatrix {
 public:
  explicit SampleMatrix(std::size_t dim, std::size_t rows = 0);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }

  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;
  void set_row(std::size_t i, const GradVector& g);
  void append(const GradVector& g);

 private:
  std::size_t dim_;
  std::size_t rows_;
  std::vector<double> data_;
};

struct GradStats {
  GradVector mean;
  double total_variance = 0.0;  // (1/n) sum ||g_k - mean||^2
  double mean_norm = 0.0;
  double cv = 0.0;
  std::size_t n_samples = 0;
  // Fourth-moment based standard error of total_variance.
  double standard_error_variance = 0.0;
};

// Requires at least two rows.
GradStats compute_grad_stats(const SampleMatrix& samples);

// Per-component standard error of the mean, sqrt(var_k / n).
GradVector component_standard_errors(const SampleMatrix& samples, const GradVector& mean);

using GradSampler = std::function<GradVector(Rng&)>;

// Draw k uses the stream of the chunk containing k, so results are identical for
// every `jobs` value. The sampler must be safe to call concurrently when jobs > 1.
SampleMatrix monte_carlo_samples(const GradSampler& sampler, std::size_t n, std::uint64_t seed, int jobs = 1);
GradStats monte_carlo_stats(const GradSampler& sampler, std::size_t n, std::uint64_t seed, int jobs = 1);

struct LengthPoint {
  double length = 0.0;
  double value = 0.0;
};

struct DeviationExperiment {
  std::vector<LengthPoint> points;  // (L_i, ||g_i - mean||^2)
  GradStats stats;
  double mean_reward = 0.0;
};

// Samples n trajectories as one group, computes per-sample gradients with the
// group-normalized advantage, and records each deviation from the sample mean.
DeviationExperiment deviation_experiment(const PolicyParams& params, const TaskSpec& task, std::size_t n,
                                         std::uint64_t seed, AdvantageMode mode = AdvantageMode::MeanOnly);

// Mean value per distinct length, ascending; lengths with fewer than min_count
// points are dropped.
std::vector<LengthPoint> mean_by_length(std::span<const LengthPoint> points, std::size_t min_count);

struct LengthVarianceFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<LengthPoint> points;
};

// Ordinary least squares of value on length. Throws DegenerateDesign with fewer
// than three distinct lengths.
LengthVarianceFit variance_length_regression(std::span<const LengthPoint> points);

double closed_form_cv(const AggregationScheme& scheme, std::span<const int> lengths, double token_variance = 1.0,
                      double grad_norm = 1.0);

inline constexpr double kCvEqualityTolerance = 1e-12;

struct CvOrderingReport {
  std::vector<int> lengths;
  double grpo = 0.0;
  double dapo = 0.0;
  double drgrpo = 0.0;
  std::vector<double> alphas;     // descending
  std::vector<double> delta_l;    // CV per alpha
  bool lengths_equal = false;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

std::vector<double> default_alpha_grid();

CvOrderingReport cv_ordering_check(std::span<const int> lengths);
CvOrderingReport cv_ordering_check(std::span<const int> lengths, std::span<const double> alphas);

struct EnumerableInstance {
  PolicyParams params;
  TaskSpec task;
  int group_size = 8;
};

// Logits drawn uniformly from [-logit_scale, logit_scale]. The task must pass
// the enumeration guard for the exact quantities below.
EnumerableInstance make_enumerable_instance(const TaskSpec& task, int group_size, std::uint64_t seed,
                                            double logit_scale = 1.0);
// Same, on the odd-digit-sum rule with the given vocab and max_len.
EnumerableInstance make_enumerable_instance(int vocab, int max_len, int group_size, std::uint64_t seed,
                                            double logit_scale = 1.0);

// Exact E[sum_i x_i g_i] over groups of iid trajectories with g_i = (r_i - E r) grad log pi,
// obtained by enumerating trajectories and the multisets of the other G-1 lengths.
GradVector exact_expected_aggregate(const AggregationScheme& scheme, const EnumerableInstance& instance);

struct Table1Row {
  std::string label;
  double alpha = 0.0;
  int group_size = 0;
  double m = 0.0;
  std::size_t n = 0;
  bool unbiased = false;

  GradStats stats;
  GradVector standard_errors;
  GradVector exact_mean;     // exact E[aggregate]

  double mean_weight_sum = 0.0;  // average over draws of sum_i x_i
  double empirical_scale = 0.0;  // <mean, grad J> / ||grad J||^2
  double exact_scale = 0.0;      // same projection for exact_mean
  double prediction = 0.0;       // 1/M for unbiased schemes, mean_weight_sum otherwise
  double max_z = 0.0;            // max_k |M mean_k - grad J_k| / (M se_k)
  double max_z_exact = 0.0;      // max_k |mean_k - exact_mean_k| / se_k
  bool pass = false;             // unbiased: max_z <= 4; biased: report only
};

struct Table1Report {
  GradVector exact_gradient;
  double expected_reward = 0.0;
  std::vector<double> length_distribution;
  std::vector<Table1Row> rows;

  bool pass() const;
};

// All schemes are evaluated on the same draws; advantages use the exact baseline.
Table1Report table1_cross_check(std::span<const AggregationScheme> schemes, const EnumerableInstance& instance,
                                std::size_t n, std::uint64_t seed, int jobs = 1);

// Rejection-samples one trajectory per entry of `lengths`, in order.
// Throws InvalidLength when a length is outside [1, max_len] and Error when the
// attempt budget runs out.
std::vector<Trajectory> sample_with_lengths(const PolicyTables& tables, const TaskSpec& task,
                                            std::span<const int> lengths, Rng& rng,
                                            std::size_t max_attempts = 10'000'000);

inline constexpr double kVarianceRoundingTolerance = 1e-12;

struct SchemeVariance {
  std::string label;
  double alpha = 0.0;
  double raw_weight_sum = 0.0;
  double variance = 0.0;  // after rescaling to sum x = 1/M
  double variance_se = 0.0;
  double mean_norm = 0.0;
  double cv = 0.0;
  double diff_vs_reference = 0.0;  // variance - reference variance, paired
  double diff_se = 0.0;
  bool pass = false;  // diff_vs_reference >= -3 diff_se - 1e-12 * reference variance
};

struct OptimalityReport {
  std::vector<int> lengths;
  double m = 0.0;
  std::size_t n = 0;
  double baseline = 0.0;
  std::string reference;
  std::vector<SchemeVariance> schemes;

  bool pass() const;
};

// Fixed-length Monte Carlo comparison of aggregate variances. Every scheme is
// rescaled to sum x = 1/M; the reference is min_variance_weights.
OptimalityReport optimality_check(const PolicyParams& params, const TaskSpec& task, std::span<const int> lengths,
                                  std::span<const AggregationScheme> schemes, double m, std::size_t n,
                                  std::uint64_t seed, int jobs = 1);

struct RandomWeightTrial {
  std::size_t trials = 0;
  std::size_t exceptions = 0;  // random feasible x with objective below x*
  double best_objective = 0.0;
  double min_random_objective = 0.0;
};

// Compares sum L_i x_i^2 at x* against random vectors projected onto sum x = 1/M.
RandomWeightTrial random_weight_trial(std::span<const int> lengths, double m, std::size_t trials, Rng& rng);

}  // namespace deltal
