#include "deltal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "deltal/enumeration.hpp"
#include "deltal/errors.hpp"
#include "deltal/parallel.hpp"

namespace deltal {

// ---------------------------------------------------------------------------
// SampleMatrix

SampleMatrix::SampleMatrix(std::size_t dim, std::size_t rows) : dim_(dim), rows_(rows), data_(dim * rows, 0.0) {}

std::span<double> SampleMatrix::row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

std::span<const double> SampleMatrix::row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

void SampleMatrix::set_row(std::size_t i, const GradVector& g) {
  if (g.dim() != dim_) throw DimensionMismatch(fmt::format("sample has dim {}, expected {}", g.dim(), dim_));
  std::copy(g.values().begin(), g.values().end(), row(i).begin());
}

void SampleMatrix::append(const GradVector& g) {
  if (g.dim() != dim_) throw DimensionMismatch(fmt::format("sample has dim {}, expected {}", g.dim(), dim_));
  data_.insert(data_.end(), g.values().begin(), g.values().end());
  ++rows_;
}

// ---------------------------------------------------------------------------
// Moments

namespace {

GradVector row_mean(const SampleMatrix& samples) {
  GradVector mean(samples.dim());
  auto m = mean.values();
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto r = samples.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) m[k] += r[k];
  }
  mean *= 1.0 / static_cast<double>(samples.rows());
  return mean;
}

double ratio_or_zero(double num, double den) {
  if (den > 0.0) return num / den;
  return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace

GradStats compute_grad_stats(const SampleMatrix& samples) {
  const std::size_t n = samples.rows();
  if (n < 2) throw std::invalid_argument(fmt::format("need at least 2 samples, got {}", n));
  GradStats out;
  out.n_samples = n;
  out.mean = row_mean(samples);
  const auto mean = out.mean.values();
  double s1 = 0.0;
  double s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = squared_distance(samples.row(i), mean);
    s1 += d;
    s2 += d * d;
  }
  const double nd = static_cast<double>(n);
  out.total_variance = s1 / nd;
  out.standard_error_variance = std::sqrt(std::max(0.0, s2 / nd - out.total_variance * out.total_variance) / nd);
  out.mean_norm = out.mean.norm();
  out.cv = ratio_or_zero(std::sqrt(out.total_variance), out.mean_norm);
  return out;
}

GradVector component_standard_errors(const SampleMatrix& samples, const GradVector& mean) {
  if (mean.dim() != samples.dim()) throw DimensionMismatch("mean and samples differ in dimension");
  GradVector se(samples.dim());
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const auto r = samples.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double d = r[k] - mean[k];
      se[k] += d * d;
    }
  }
  const double n = static_cast<double>(samples.rows());
  for (std::size_t k = 0; k < se.dim(); ++k) se[k] = std::sqrt(se[k] / n / n);
  return se;
}

SampleMatrix monte_carlo_samples(const GradSampler& sampler, std::size_t n, std::uint64_t seed, int jobs) {
  if (n < 2) throw std::invalid_argument(fmt::format("need at least 2 draws, got {}", n));
  Rng probe = make_rng(seed, {0});
  const std::size_t dim = sampler(probe).dim();
  SampleMatrix samples(dim, n);
  for_each_chunk(n, jobs, [&](const Chunk& chunk) {
    Rng rng = make_rng(seed, {chunk.index});
    for (std::size_t k = chunk.begin; k < chunk.end; ++k) samples.set_row(k, sampler(rng));
  });
  return samples;
}

GradStats monte_carlo_stats(const GradSampler& sampler, std::size_t n, std::uint64_t seed, int jobs) {
  return compute_grad_stats(monte_carlo_samples(sampler, n, seed, jobs));
}

// ---------------------------------------------------------------------------
// Deviation vs length

DeviationExperiment deviation_experiment(const PolicyParams& params, const TaskSpec& task, std::size_t n,
                                         std::uint64_t seed, AdvantageMode mode) {
  if (n < 2) throw std::invalid_argument(fmt::format("need at least 2 samples, got {}", n));
  const PolicyTables tables(params);
  Rng rng = make_rng(seed);
  std::vector<Trajectory> trajs;
  std::vector<double> rewards;
  trajs.reserve(n);
  rewards.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    trajs.push_back(sample_trajectory(tables, task, rng));
    rewards.push_back(trajs.back().reward);
  }
  const Advantages adv = compute_advantages(rewards, mode);

  SampleMatrix samples(params.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    GradVector g = score_function(tables, trajs[i]);
    g *= adv.values[i];
    samples.set_row(i, g);
  }

  DeviationExperiment out;
  out.stats = compute_grad_stats(samples);
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.points.push_back({static_cast<double>(trajs[i].length()),
                          squared_distance(samples.row(i), out.stats.mean.values())});
  }
  double total = 0.0;
  for (double r : rewards) total += r;
  out.mean_reward = total / static_cast<double>(n);
  return out;
}

std::vector<LengthPoint> mean_by_length(std::span<const LengthPoint> points, std::size_t min_count) {
  std::map<double, std::pair<double, std::size_t>> bins;
  for (const auto& p : points) {
    auto& [sum, count] = bins[p.length];
    sum += p.value;
    ++count;
  }
  std::vector<LengthPoint> out;
  for (const auto& [length, acc] : bins) {
    if (acc.second >= min_count && acc.second > 0) {
      out.push_back({length, acc.first / static_cast<double>(acc.second)});
    }
  }
  return out;
}

LengthVarianceFit variance_length_regression(std::span<const LengthPoint> points) {
  std::vector<double> distinct;
  for (const auto& p : points) distinct.push_back(p.length);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) {
    throw DegenerateDesign(
        fmt::format("regression needs at least 3 distinct lengths, got {}", distinct.size()));
  }

  const double n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& p : points) {
    mx += p.length;
    my += p.value;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& p : points) {
    const double dx = p.length - mx;
    const double dy = p.value - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }

  LengthVarianceFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (const auto& p : points) {
    const double e = p.value - (fit.intercept + fit.slope * p.length);
    ss_res += e * e;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  fit.points.assign(points.begin(), points.end());
  return fit;
}

// ---------------------------------------------------------------------------
// Closed-form CV and ordering

namespace {

void check_lengths(std::span<const int> lengths) {
  if (lengths.empty()) throw InvalidLength("length vector is empty");
  for (int l : lengths) {
    if (l < 1) throw InvalidLength(fmt::format("length {} is not positive", l));
  }
}

double power_sum(std::span<const int> lengths, double exponent) {
  double s = 0.0;
  for (int l : lengths) s += length_power(l, exponent);
  return s;
}

}  // namespace

double closed_form_cv(const AggregationScheme& scheme, std::span<const int> lengths, double token_variance,
                      double grad_norm) {
  validate(scheme);
  check_lengths(lengths);
  if (!(token_variance > 0.0) || !(grad_norm > 0.0)) {
    throw std::invalid_argument("token variance and gradient norm must be positive");
  }
  const double g = static_cast<double>(lengths.size());
  const double base = std::visit(
      [&](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Grpo>) {
          return 1.0 / std::sqrt(power_sum(lengths, -1.0));
        } else if constexpr (std::is_same_v<S, Dapo> || std::is_same_v<S, DrGrpo>) {
          return std::sqrt(power_sum(lengths, 1.0)) / g;
        } else {
          return std::sqrt(power_sum(lengths, 1.0 - 2.0 * s.alpha)) / power_sum(lengths, -s.alpha);
        }
      },
      scheme);
  return base * std::sqrt(token_variance) / grad_norm;
}

std::vector<double> default_alpha_grid() { return {1.0, 0.75, 0.5, 0.25, 0.0}; }

CvOrderingReport cv_ordering_check(std::span<const int> lengths) {
  const auto grid = default_alpha_grid();
  return cv_ordering_check(lengths, grid);
}

CvOrderingReport cv_ordering_check(std::span<const int> lengths, std::span<const double> alphas) {
  check_lengths(lengths);
  if (lengths.size() < 2) throw GroupTooSmall("ordering check needs at least 2 lengths");

  CvOrderingReport r;
  r.lengths.assign(lengths.begin(), lengths.end());
  r.alphas.assign(alphas.begin(), alphas.end());
  std::sort(r.alphas.begin(), r.alphas.end(), std::greater<>());
  r.lengths_equal = std::all_of(lengths.begin(), lengths.end(), [&](int l) { return l == lengths[0]; });

  r.grpo = closed_form_cv(Grpo{}, lengths);
  r.dapo = closed_form_cv(Dapo{}, lengths);
  r.drgrpo = closed_form_cv(DrGrpo{}, lengths);
  for (double a : r.alphas) r.delta_l.push_back(closed_form_cv(DeltaL{a, 1.0}, lengths));
  const double at_one = closed_form_cv(DeltaL{1.0, 1.0}, lengths);
  const double at_zero = closed_form_cv(DeltaL{0.0, 1.0}, lengths);

  const auto tol = [](double a, double b) { return kCvEqualityTolerance * std::max(std::abs(a), std::abs(b)); };
  const auto eq = [&](double a, double b) { return std::abs(a - b) <= tol(a, b); };
  const auto leq = [&](double a, double b) { return a <= b + tol(a, b); };
  const auto fail = [&](std::string what, double a, double b) {
    r.violations.push_back(fmt::format("{}: {:.17g} vs {:.17g} for lengths [{}]", what, a, b,
                                       fmt::join(r.lengths, ",")));
  };

  if (!eq(r.grpo, at_one)) fail("CV(GRPO) != CV(DeltaL,1)", r.grpo, at_one);
  if (r.dapo != r.drgrpo) fail("CV(DAPO) != CV(DrGRPO)", r.dapo, r.drgrpo);
  if (!eq(at_zero, r.dapo)) fail("CV(DeltaL,0) != CV(DAPO)", at_zero, r.dapo);
  if (r.lengths_equal != eq(r.grpo, r.dapo)) {
    fail(r.lengths_equal ? "CV(GRPO) != CV(DAPO) with equal lengths" : "CV(GRPO) == CV(DAPO) with unequal lengths",
         r.grpo, r.dapo);
  }

  for (std::size_t k = 0; k < r.alphas.size(); ++k) {
    const double a = r.alphas[k];
    const double cv = r.delta_l[k];
    if (!leq(r.grpo, cv)) fail(fmt::format("CV(GRPO) > CV(DeltaL,{})", a), r.grpo, cv);
    if (!leq(cv, r.dapo)) fail(fmt::format("CV(DeltaL,{}) > CV(DAPO)", a), cv, r.dapo);
    if (a > 0.0 && a < 1.0) {
      const bool low_eq = eq(r.grpo, cv);
      const bool high_eq = eq(cv, r.dapo);
      if (low_eq != r.lengths_equal) fail(fmt::format("equality CV(GRPO) vs CV(DeltaL,{})", a), r.grpo, cv);
      if (high_eq != r.lengths_equal) fail(fmt::format("equality CV(DeltaL,{}) vs CV(DAPO)", a), cv, r.dapo);
    }
    // Larger alpha never has the larger CV.
    if (k > 0 && !leq(r.delta_l[k - 1], cv)) {
      fail(fmt::format("CV(DeltaL,{}) > CV(DeltaL,{})", r.alphas[k - 1], a), r.delta_l[k - 1], cv);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Enumerable instances and the exact cross-check of E[aggregate]

EnumerableInstance make_enumerable_instance(const TaskSpec& task, int group_size, std::uint64_t seed,
                                            double logit_scale) {
  task.validate();
  EnumerableInstance inst{PolicyParams(task.vocab_size, task.vocab_size), task, group_size};
  Rng rng = make_rng(seed, {0x1a57});
  for (double& v : inst.params.values()) v = logit_scale * (2.0 * uniform01(rng) - 1.0);
  return inst;
}

EnumerableInstance make_enumerable_instance(int vocab, int max_len, int group_size, std::uint64_t seed,
                                            double logit_scale) {
  TaskSpec task;
  task.vocab_size = vocab;
  task.max_len = max_len;
  task.target = 1;
  task.reward_rule = SumEqualsTarget{2};
  return make_enumerable_instance(task, group_size, seed, logit_scale);
}

namespace {

double scheme_m(const AggregationScheme& scheme, double fallback) {
  if (const auto* d = std::get_if<DrGrpo>(&scheme)) return d->M;
  if (const auto* d = std::get_if<DeltaL>(&scheme)) return d->M;
  return fallback;
}

// Visits every multiset of `count` values from `support`, with its multinomial
// probability under `probs`.
void for_each_multiset(std::span<const int> support, std::span<const double> probs, int count,
                       const std::function<void(std::span<const int>, double)>& visit) {
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(count));
  const double log_fact_count = std::lgamma(count + 1.0);
  std::function<void(std::size_t, int, double)> rec = [&](std::size_t idx, int left, double logp) {
    if (left == 0) {
      visit(picked, std::exp(log_fact_count + logp));
      return;
    }
    if (idx == support.size()) return;
    const double lq = std::log(probs[idx]);
    for (int c = left; c >= 0; --c) {
      if (idx + 1 == support.size() && c != left) break;
      for (int j = 0; j < c; ++j) picked.push_back(support[idx]);
      rec(idx + 1, left - c, logp + c * lq - std::lgamma(c + 1.0));
      picked.resize(picked.size() - static_cast<std::size_t>(c));
    }
  };
  rec(0, count, 0.0);
}

std::uint64_t multiset_count(std::size_t kinds, int count) {
  // C(kinds + count - 1, count), saturating.
  double c = 1.0;
  for (int i = 1; i <= count; ++i) c = c * static_cast<double>(kinds - 1 + static_cast<std::size_t>(i)) / i;
  return c > 1e18 ? std::numeric_limits<std::uint64_t>::max() : static_cast<std::uint64_t>(std::llround(c));
}

}  // namespace

GradVector exact_expected_aggregate(const AggregationScheme& scheme, const EnumerableInstance& instance) {
  validate(scheme);
  if (instance.group_size < 1) throw GroupTooSmall("group size must be positive");
  const TaskSpec& task = instance.task;
  const double er = expected_reward(instance.params, task);
  const auto dist = length_distribution(instance.params, task);

  // Per-length contribution C_l = sum_{tau: L = l} P(tau) (r - E r) score(tau).
  std::vector<GradVector> by_length(dist.size(), GradVector(instance.params.size()));
  for_each_trajectory(instance.params, task, [&](const EnumeratedTrajectory& t) {
    by_length[t.tokens.size() - 1].add_scaled(t.probability * (t.reward - er), *t.score);
  });

  std::vector<int> support;
  std::vector<double> probs;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > 0.0) {
      support.push_back(static_cast<int>(i) + 1);
      probs.push_back(dist[i]);
    }
  }
  const int rest = instance.group_size - 1;
  if (multiset_count(support.size(), rest) > kMaxEnumeratedTrajectories) {
    throw EnumerationTooLarge("too many length multisets to enumerate");
  }

  // E[sum_i x_i g_i] = G * sum_l C_l * E[x_1 | L_1 = l].
  GradVector out(instance.params.size());
  std::vector<int> lengths(static_cast<std::size_t>(instance.group_size));
  for (int l : support) {
    double expected_weight = 0.0;
    for_each_multiset(support, probs, rest, [&](std::span<const int> others, double p) {
      lengths[0] = l;
      std::copy(others.begin(), others.end(), lengths.begin() + 1);
      expected_weight += p * scheme_weights(scheme, lengths).weights[0];
    });
    out.add_scaled(instance.group_size * expected_weight, by_length[static_cast<std::size_t>(l - 1)]);
  }
  return out;
}

bool Table1Report::pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const Table1Row& r) { return r.pass; });
}

namespace {

double projection_scale(const GradVector& v, const GradVector& onto) {
  const double nn = onto.squared_norm();
  return nn > 0.0 ? v.dot(onto) / nn : 0.0;
}

double max_abs_z(const GradVector& estimate, const GradVector& target, const GradVector& se, double scale) {
  double worst = 0.0;
  for (std::size_t k = 0; k < estimate.dim(); ++k) {
    const double diff = std::abs(scale * estimate[k] - target[k]);
    const double s = scale * se[k];
    const double z = s > 0.0 ? diff / s : (diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    worst = std::max(worst, z);
  }
  return worst;
}

}  // namespace

Table1Report table1_cross_check(std::span<const AggregationScheme> schemes, const EnumerableInstance& instance,
                                std::size_t n, std::uint64_t seed, int jobs) {
  if (n < 2) throw std::invalid_argument(fmt::format("need at least 2 groups, got {}", n));
  if (instance.group_size < 1) throw GroupTooSmall("group size must be positive");
  for (const auto& s : schemes) validate(s);

  Table1Report report;
  report.exact_gradient = enumerate_exact_gradient(instance.params, instance.task, AdvantageMode::MeanOnly);
  report.expected_reward = expected_reward(instance.params, instance.task);
  report.length_distribution = length_distribution(instance.params, instance.task);

  const PolicyTables tables(instance.params);
  const std::size_t dim = instance.params.size();
  const auto G = static_cast<std::size_t>(instance.group_size);
  std::vector<SampleMatrix> samples(schemes.size(), SampleMatrix(dim, n));
  std::vector<std::vector<double>> weight_sums(schemes.size(), std::vector<double>(n));

  for_each_chunk(n, jobs, [&](const Chunk& chunk) {
    Rng rng = make_rng(seed, {chunk.index});
    std::vector<GradVector> grads(G);
    std::vector<int> lengths(G);
    for (std::size_t k = chunk.begin; k < chunk.end; ++k) {
      for (std::size_t i = 0; i < G; ++i) {
        const Trajectory t = sample_trajectory(tables, instance.task, rng);
        grads[i] = score_function(tables, t);
        grads[i] *= t.reward - report.expected_reward;
        lengths[i] = t.length();
      }
      for (std::size_t s = 0; s < schemes.size(); ++s) {
        const WeightVector w = scheme_weights(schemes[s], lengths);
        samples[s].set_row(k, aggregate(grads, w));
        weight_sums[s][k] = w.sum();
      }
    }
  });

  const double fallback_m = instance.task.max_len;
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    Table1Row row;
    row.label = scheme_label(schemes[s]);
    row.alpha = scheme_alpha(schemes[s]);
    row.group_size = instance.group_size;
    row.m = scheme_m(schemes[s], fallback_m);
    row.n = n;
    row.unbiased = is_unbiased(schemes[s]);
    row.stats = compute_grad_stats(samples[s]);
    row.standard_errors = component_standard_errors(samples[s], row.stats.mean);
    row.exact_mean = exact_expected_aggregate(schemes[s], instance);
    double total = 0.0;
    for (double w : weight_sums[s]) total += w;
    row.mean_weight_sum = total / static_cast<double>(n);
    row.empirical_scale = projection_scale(row.stats.mean, report.exact_gradient);
    row.exact_scale = projection_scale(row.exact_mean, report.exact_gradient);
    row.prediction = row.unbiased ? 1.0 / row.m : row.mean_weight_sum;
    row.max_z = max_abs_z(row.stats.mean, report.exact_gradient, row.standard_errors, row.m);
    row.max_z_exact = max_abs_z(row.stats.mean, row.exact_mean, row.standard_errors, 1.0);
    row.pass = row.unbiased ? row.max_z <= 4.0 : true;
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Fixed-length sampling and the optimality check

std::vector<Trajectory> sample_with_lengths(const PolicyTables& tables, const TaskSpec& task,
                                            std::span<const int> lengths, Rng& rng, std::size_t max_attempts) {
  // Slots still open per length, in input order.
  std::vector<std::vector<std::size_t>> open(static_cast<std::size_t>(task.max_len) + 1);
  for (std::size_t i = lengths.size(); i-- > 0;) {
    const int l = lengths[i];
    if (l < 1 || l > task.max_len) {
      throw InvalidLength(fmt::format("length {} outside [1, {}]", l, task.max_len));
    }
    open[static_cast<std::size_t>(l)].push_back(i);
  }
  std::vector<Trajectory> out(lengths.size());
  std::size_t remaining = lengths.size();
  for (std::size_t attempt = 0; remaining > 0; ++attempt) {
    if (attempt == max_attempts) {
      throw Error(fmt::format("could not hit length profile [{}] in {} draws", fmt::join(lengths, ","),
                              max_attempts));
    }
    Trajectory t = sample_trajectory(tables, task, rng);
    auto& slots = open[static_cast<std::size_t>(t.length())];
    if (slots.empty()) continue;
    out[slots.back()] = std::move(t);
    slots.pop_back();
    --remaining;
  }
  return out;
}

bool OptimalityReport::pass() const {
  return std::all_of(schemes.begin(), schemes.end(), [](const SchemeVariance& s) { return s.pass; });
}

OptimalityReport optimality_check(const PolicyParams& params, const TaskSpec& task, std::span<const int> lengths,
                                  std::span<const AggregationScheme> schemes, double m, std::size_t n,
                                  std::uint64_t seed, int jobs) {
  if (n < 2) throw std::invalid_argument(fmt::format("need at least 2 draws, got {}", n));
  if (!(m > 0.0)) throw std::invalid_argument("M must be positive");
  check_lengths(lengths);

  OptimalityReport report;
  report.lengths.assign(lengths.begin(), lengths.end());
  report.m = m;
  report.n = n;
  report.baseline = expected_reward(params, task);
  report.reference = "min-variance";

  // Index 0 is the reference x*; the rest are the schemes rescaled to sum 1/M.
  std::vector<WeightVector> weights{min_variance_weights(lengths, m)};
  std::vector<std::string> labels{report.reference};
  std::vector<double> raw_sums{weights[0].sum()};
  std::vector<double> alphas{1.0};
  for (const auto& s : schemes) {
    WeightVector w = scheme_weights(s, lengths);
    raw_sums.push_back(w.sum());
    const double scale = 1.0 / (m * w.sum());
    for (double& x : w.weights) x *= scale;
    weights.push_back(std::move(w));
    labels.push_back(scheme_label(s));
    alphas.push_back(scheme_alpha(s));
  }
  const std::size_t S = weights.size();
  const std::size_t dim = params.size();
  const PolicyTables tables(params);

  const auto draw = [&](Rng& rng, std::vector<GradVector>& grads) {
    const auto trajs = sample_with_lengths(tables, task, lengths, rng);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      grads[i] = score_function(tables, trajs[i]);
      grads[i] *= trajs[i].reward - report.baseline;
    }
  };

  // Pass 1: means. Both passes replay identical per-chunk streams.
  const std::size_t chunks = chunk_count(n);
  std::vector<std::vector<GradVector>> chunk_sums(chunks, std::vector<GradVector>(S, GradVector(dim)));
  for_each_chunk(n, jobs, [&](const Chunk& chunk) {
    Rng rng = make_rng(seed, {chunk.index});
    std::vector<GradVector> grads(lengths.size());
    for (std::size_t k = chunk.begin; k < chunk.end; ++k) {
      draw(rng, grads);
      for (std::size_t s = 0; s < S; ++s) chunk_sums[chunk.index][s] += aggregate(grads, weights[s]);
    }
  });
  std::vector<GradVector> means(S, GradVector(dim));
  for (const auto& c : chunk_sums) {
    for (std::size_t s = 0; s < S; ++s) means[s] += c[s];
  }
  for (auto& mu : means) mu *= 1.0 / static_cast<double>(n);

  // Pass 2: squared deviations and paired differences against the reference.
  struct Acc {
    double d1 = 0.0, d2 = 0.0, p1 = 0.0, p2 = 0.0;
  };
  std::vector<std::vector<Acc>> chunk_acc(chunks, std::vector<Acc>(S));
  for_each_chunk(n, jobs, [&](const Chunk& chunk) {
    Rng rng = make_rng(seed, {chunk.index});
    std::vector<GradVector> grads(lengths.size());
    std::vector<double> dev(S);
    for (std::size_t k = chunk.begin; k < chunk.end; ++k) {
      draw(rng, grads);
      for (std::size_t s = 0; s < S; ++s) {
        dev[s] = squared_distance(aggregate(grads, weights[s]).values(), means[s].values());
      }
      for (std::size_t s = 0; s < S; ++s) {
        auto& a = chunk_acc[chunk.index][s];
        const double p = dev[s] - dev[0];
        a.d1 += dev[s];
        a.d2 += dev[s] * dev[s];
        a.p1 += p;
        a.p2 += p * p;
      }
    }
  });
  std::vector<Acc> acc(S);
  for (const auto& c : chunk_acc) {
    for (std::size_t s = 0; s < S; ++s) {
      acc[s].d1 += c[s].d1;
      acc[s].d2 += c[s].d2;
      acc[s].p1 += c[s].p1;
      acc[s].p2 += c[s].p2;
    }
  }

  const double nd = static_cast<double>(n);
  const auto se_of = [nd](double s1, double s2) {
    const double mean = s1 / nd;
    return std::sqrt(std::max(0.0, s2 / nd - mean * mean) / nd);
  };
  for (std::size_t s = 0; s < S; ++s) {
    SchemeVariance v;
    v.label = labels[s];
    v.alpha = alphas[s];
    v.raw_weight_sum = raw_sums[s];
    v.variance = acc[s].d1 / nd;
    v.variance_se = se_of(acc[s].d1, acc[s].d2);
    v.mean_norm = means[s].norm();
    v.cv = ratio_or_zero(std::sqrt(v.variance), v.mean_norm);
    v.diff_vs_reference = acc[s].p1 / nd;
    v.diff_se = se_of(acc[s].p1, acc[s].p2);
    // Weights equal to x* up to rounding give a paired difference of pure
    // rounding noise, whose standard error is just as tiny.
    const double rounding = kVarianceRoundingTolerance * acc[0].d1 / nd;
    v.pass = v.diff_vs_reference >= -3.0 * v.diff_se - rounding;
    report.schemes.push_back(std::move(v));
  }
  return report;
}

RandomWeightTrial random_weight_trial(std::span<const int> lengths, double m, std::size_t trials, Rng& rng) {
  check_lengths(lengths);
  const auto objective = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += lengths[i] * x[i] * x[i];
    return s;
  };
  const WeightVector best = min_variance_weights(lengths, m);
  RandomWeightTrial out;
  out.trials = trials;
  out.best_objective = objective(best.weights);
  out.min_random_objective = std::numeric_limits<double>::infinity();

  const double g = static_cast<double>(lengths.size());
  std::vector<double> x(lengths.size());
  for (std::size_t t = 0; t < trials; ++t) {
    double sum = 0.0;
    for (double& v : x) {
      v = 2.0 / (g * m) * uniform01(rng);
      sum += v;
    }
    const double shift = (1.0 / m - sum) / g;
    for (double& v : x) v += shift;
    const double obj = objective(x);
    out.min_random_objective = std::min(out.min_random_objective, obj);
    if (obj < out.best_objective * (1.0 - 1e-12)) ++out.exceptions;
  }
  return out;
}

}  // namespace deltal
