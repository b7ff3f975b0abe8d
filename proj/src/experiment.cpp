#include "deltal/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "deltal/errors.hpp"
#include "deltal/parallel.hpp"
#include "deltal/random.hpp"
#include "deltal/stats.hpp"

namespace deltal {

using nlohmann::json;

namespace {

std::string num(double v) { return format_number(v); }

std::string slug(std::string_view label) {
  std::string out;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

// Labels that stay unique when two schemes differ only in M.
std::vector<std::string> unique_labels(const std::vector<AggregationScheme>& schemes) {
  std::vector<std::string> labels;
  for (const auto& s : schemes) labels.push_back(scheme_label(s));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool clash = std::count(labels.begin(), labels.end(), labels[i]) > 1;
    if (!clash) continue;
    const std::string base = labels[i];
    for (std::size_t j = i; j < labels.size(); ++j) {
      if (labels[j] != base) continue;
      std::visit(
          [&](const auto& x) {
            using S = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<S, DrGrpo> || std::is_same_v<S, DeltaL>) {
              labels[j] = fmt::format("{}[M={}]", base, x.M);
            }
          },
          schemes[j]);
    }
  }
  return labels;
}

std::string header(const ExperimentConfig& config) {
  return fmt::format("experiment: {}\nconfig hash: {}\ntask: vocab {}, max_len {}, target {}, {}\nseeds: [{}]\n\n",
                     to_string(config.kind), config_hash(config), config.task.vocab_size, config.task.max_len,
                     config.task.target, describe(config.task.reward_rule), fmt::join(config.seeds, ", "));
}

void add_plot(ReportBundle& bundle, const std::string& stem, const std::vector<PlotSeries>& series,
              const PlotOptions& options) {
  PlotFiles files = render_plot(series, options);
  bundle.files[stem + ".svg"] = std::move(files.svg);
  bundle.files[stem + ".csv"] = std::move(files.csv);
}

// ---------------------------------------------------------------------------

ReportBundle variance_length(const ExperimentConfig& config) {
  ReportBundle b;
  b.summary = header(config);
  b.pass = true;
  const PolicyParams params(config.task.vocab_size, config.task.vocab_size);
  b.summary += "policy: uniform logits, one group of all samples, MeanOnly advantages\n";
  for (std::uint64_t seed : config.seeds) {
    const DeviationExperiment exp = deviation_experiment(params, config.task, config.samples, seed);
    const auto bins = mean_by_length(exp.points, config.min_bin_count);
    std::string csv = "length,squared_deviation\n";
    for (const auto& p : exp.points) csv += fmt::format("{},{}\n", num(p.length), num(p.value));
    b.files[fmt::format("deviations_seed{}.csv", seed)] = std::move(csv);

    std::string bin_csv = "length,mean_squared_deviation\n";
    for (const auto& p : bins) bin_csv += fmt::format("{},{}\n", num(p.length), num(p.value));
    b.files[fmt::format("length_bins_seed{}.csv", seed)] = std::move(bin_csv);

    b.summary += fmt::format("\nseed {}: {} samples, mean reward {:.4f}, total variance {:.6g}, {} length bins\n", seed,
                             config.samples, exp.mean_reward, exp.stats.total_variance, bins.size());
    LengthVarianceFit fit;
    try {
      fit = variance_length_regression(bins);
    } catch (const DegenerateDesign& e) {
      b.summary += fmt::format("  fit: not possible ({})\n  result: FAIL\n", e.what());
      b.pass = false;
      continue;
    }
    const double l_min = bins.front().length;
    const bool r2_ok = fit.r_squared > 0.9;
    const bool intercept_ok = std::abs(fit.intercept) <= 0.2 * fit.slope * l_min;
    b.summary += fmt::format("  slope {:.6g}, intercept {:.6g}, r^2 {:.4f}\n", fit.slope, fit.intercept,
                             fit.r_squared);
    b.summary += fmt::format("  r^2 > 0.9: {}; |intercept| <= 0.2 * slope * {}: {}\n", r2_ok ? "yes" : "no",
                             l_min, intercept_ok ? "yes" : "no");
    b.summary += fmt::format("  result: {}\n", r2_ok && intercept_ok ? "PASS" : "FAIL");
    b.pass = b.pass && r2_ok && intercept_ok;

    PlotSeries means{"mean per length", {}, {}, true};
    for (const auto& p : bins) {
      means.x.push_back(p.length);
      means.y.push_back(p.value);
    }
    const double lo = bins.front().length;
    const double hi = bins.back().length;
    PlotSeries line{"least-squares fit", {lo, hi}, {fit.intercept + fit.slope * lo, fit.intercept + fit.slope * hi}};
    add_plot(b, fmt::format("variance_vs_length_seed{}", seed), {means, line},
             {"Squared deviation of the sample gradient by length", "response length", "mean squared deviation"});
  }
  return b;
}

// ---------------------------------------------------------------------------

std::vector<double> sweep_alphas(const ExperimentConfig& config) {
  std::set<double> alphas;
  for (const auto& s : config.schemes) {
    if (const auto* d = std::get_if<DeltaL>(&s)) alphas.insert(d->alpha);
  }
  if (alphas.empty()) return default_alpha_grid();
  return {alphas.rbegin(), alphas.rend()};
}

// Random length vector for the CV sweep: G in [2, 64], lengths in [1, 8192].
// A tenth of the vectors repeat one length so the equality branches are hit.
std::vector<int> random_length_vector(Rng& rng) {
  std::uniform_int_distribution<int> group(2, 64);
  std::uniform_int_distribution<int> length(1, 8192);
  std::vector<int> lengths(static_cast<std::size_t>(group(rng)));
  if (uniform01(rng) < 0.1) {
    std::fill(lengths.begin(), lengths.end(), length(rng));
  } else {
    for (int& l : lengths) l = length(rng);
  }
  return lengths;
}

ReportBundle cv_ordering(const ExperimentConfig& config) {
  ReportBundle b;
  b.summary = header(config);
  const auto alphas = sweep_alphas(config);
  std::vector<std::string> violations;
  std::size_t checked = 0;

  std::string grid_csv = "l1,l2,grpo,dapo,drgrpo";
  for (double a : alphas) grid_csv += fmt::format(",deltal_{}", num(a));
  grid_csv += '\n';
  const int top = config.task.max_len;
  for (int l1 = 1; l1 <= top; ++l1) {
    for (int l2 = 1; l2 <= top; ++l2) {
      const std::vector<int> lengths{l1, l2};
      const CvOrderingReport r = cv_ordering_check(lengths, alphas);
      ++checked;
      violations.insert(violations.end(), r.violations.begin(), r.violations.end());
      grid_csv += fmt::format("{},{},{},{},{}", l1, l2, num(r.grpo), num(r.dapo), num(r.drgrpo));
      for (double cv : r.delta_l) grid_csv += "," + num(cv);
      grid_csv += '\n';
    }
  }
  b.files["cv_grid.csv"] = std::move(grid_csv);

  std::string random_csv = "seed,index,group_size,all_equal,grpo,dapo,violations\n";
  for (std::uint64_t seed : config.seeds) {
    Rng rng = make_rng(seed, {0xc5});
    for (std::size_t k = 0; k < config.random_vectors; ++k) {
      const auto lengths = random_length_vector(rng);
      const CvOrderingReport r = cv_ordering_check(lengths, alphas);
      ++checked;
      violations.insert(violations.end(), r.violations.begin(), r.violations.end());
      random_csv += fmt::format("{},{},{},{},{},{},{}\n", seed, k, lengths.size(), r.lengths_equal ? 1 : 0,
                                num(r.grpo), num(r.dapo), r.violations.size());
    }
  }
  b.files["cv_random.csv"] = std::move(random_csv);

  std::string vcsv = "violation\n";
  for (const auto& v : violations) vcsv += csv_field(v) + "\n";
  b.files["violations.csv"] = std::move(vcsv);

  std::vector<PlotSeries> curves;
  for (const std::vector<int>& lengths : {std::vector<int>{1, 4}, std::vector<int>{2, 8, 16},
                                          std::vector<int>{1, 1, 2, 3, 5, 8, 13}}) {
    PlotSeries s{fmt::format("lengths [{}]", fmt::join(lengths, ",")), {}, {}};
    const double dapo = closed_form_cv(Dapo{}, lengths);
    for (int i = 0; i <= 20; ++i) {
      const double a = i / 20.0;
      s.x.push_back(a);
      s.y.push_back(closed_form_cv(DeltaL{a, 1.0}, lengths) / dapo);
    }
    curves.push_back(std::move(s));
  }
  add_plot(b, "cv_vs_alpha", curves, {"Closed-form CV of DeltaL relative to DAPO", "alpha", "CV / CV(DAPO)"});

  b.summary += fmt::format("alphas: [{}]\n", fmt::join(alphas, ", "));
  b.summary += fmt::format("length vectors checked: {} ({} grid, {} random per seed)\n", checked, top * top,
                           config.random_vectors);
  b.summary += fmt::format("violations: {}\n", violations.size());
  for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 10); ++i) {
    b.summary += "  " + violations[i] + "\n";
  }
  b.pass = violations.empty();
  return b;
}

// ---------------------------------------------------------------------------

ReportBundle table1(const ExperimentConfig& config, int jobs) {
  ReportBundle b;
  b.summary = header(config);
  b.pass = true;
  const auto labels = unique_labels(config.schemes);
  for (std::uint64_t seed : config.seeds) {
    const EnumerableInstance inst = make_enumerable_instance(config.task, config.group_size, seed, config.logit_scale);
    const Table1Report report = table1_cross_check(config.schemes, inst, config.samples, seed, jobs);
    b.pass = b.pass && report.pass();

    b.summary += fmt::format(
        "seed {}: G = {}, {} groups, E[r] = {:.6f}, |grad J| = {:.6g}\n"
        "  {:<24} {:>9} {:>13} {:>13} {:>13} {:>12} {:>9} {:>9} {:>7}\n",
        seed, inst.group_size, config.samples, report.expected_reward, report.exact_gradient.norm(), "scheme",
        "unbiased", "E[sum x]", "MC scale", "exact scale", "variance", "max z", "z exact", "result");
    std::string csv =
        "scheme,alpha,m,unbiased,mean_weight_sum,prediction,empirical_scale,exact_scale,total_variance,cv,"
        "max_z,max_z_exact,pass\n";
    std::string comp = "scheme,component,exact_gradient,mc_mean,standard_error,exact_mean\n";
    std::vector<PlotSeries> scatter;
    for (std::size_t s = 0; s < report.rows.size(); ++s) {
      const Table1Row& row = report.rows[s];
      b.summary += fmt::format("  {:<24} {:>9} {:>13.6g} {:>13.6g} {:>13.6g} {:>12.6g} {:>9.3f} {:>9.3f} {:>7}\n",
                               labels[s], row.unbiased ? "yes" : "no", row.mean_weight_sum, row.empirical_scale,
                               row.exact_scale, row.stats.total_variance, row.max_z, row.max_z_exact,
                               row.unbiased ? (row.pass ? "PASS" : "FAIL") : "report");
      csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(labels[s]), num(row.alpha), num(row.m),
                         row.unbiased ? 1 : 0, num(row.mean_weight_sum), num(row.prediction),
                         num(row.empirical_scale), num(row.exact_scale), num(row.stats.total_variance),
                         num(row.stats.cv), num(row.max_z), num(row.max_z_exact), row.pass ? 1 : 0);
      PlotSeries pts{labels[s], {}, {}, true};
      for (std::size_t k = 0; k < row.stats.mean.dim(); ++k) {
        comp += fmt::format("{},{},{},{},{},{}\n", labels[s], k, num(report.exact_gradient[k]),
                            num(row.stats.mean[k]), num(row.standard_errors[k]), num(row.exact_mean[k]));
        pts.x.push_back(report.exact_gradient[k]);
        pts.y.push_back(row.m * row.stats.mean[k]);
      }
      scatter.push_back(std::move(pts));
    }
    b.summary += "  unbiased schemes pass when M * mean is within 4 standard errors of grad J in every component\n\n";
    b.files[fmt::format("table1_seed{}.csv", seed)] = std::move(csv);
    b.files[fmt::format("components_seed{}.csv", seed)] = std::move(comp);
    add_plot(b, fmt::format("mean_vs_exact_seed{}", seed), scatter,
             {"Monte Carlo mean aggregate against the exact gradient", "exact grad J component",
              "M * mean aggregate component"});
  }
  b.summary += fmt::format("result: {}\n", b.pass ? "PASS" : "FAIL");
  return b;
}

// ---------------------------------------------------------------------------

ReportBundle optimality(const ExperimentConfig& config, int jobs) {
  ReportBundle b;
  b.summary = header(config);
  b.pass = true;
  const PolicyParams params(config.task.vocab_size, config.task.vocab_size);
  const double m = config.task.max_len;
  for (std::uint64_t seed : config.seeds) {
    const OptimalityReport report =
        optimality_check(params, config.task, config.lengths, config.schemes, m, config.samples, seed, jobs);
    Rng rng = make_rng(seed, {0x0b7});
    const RandomWeightTrial trial = random_weight_trial(config.lengths, m, config.random_vectors, rng);
    const bool ok = report.pass() && trial.exceptions == 0;
    b.pass = b.pass && ok;

    b.summary += fmt::format(
        "seed {}: lengths [{}], M = {}, {} draws, uniform policy\n"
        "  every scheme rescaled to sum x = 1/M; reference is the min-variance weights\n"
        "  {:<22} {:>12} {:>14} {:>12} {:>14} {:>12} {:>7}\n",
        seed, fmt::join(report.lengths, ","), m, report.n, "scheme", "raw sum x", "variance", "se", "diff vs ref",
        "diff se", "result");
    std::string csv = "scheme,alpha,raw_weight_sum,variance,variance_se,mean_norm,cv,diff_vs_reference,diff_se,pass\n";
    PlotSeries pts{"rescaled variance", {}, {}, true};
    for (const auto& s : report.schemes) {
      b.summary += fmt::format("  {:<22} {:>12.6g} {:>14.8g} {:>12.4g} {:>14.4g} {:>12.4g} {:>7}\n", s.label,
                               s.raw_weight_sum, s.variance, s.variance_se, s.diff_vs_reference, s.diff_se,
                               s.pass ? "PASS" : "FAIL");
      csv += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", s.label, num(s.alpha), num(s.raw_weight_sum),
                         num(s.variance), num(s.variance_se), num(s.mean_norm), num(s.cv), num(s.diff_vs_reference),
                         num(s.diff_se), s.pass ? 1 : 0);
      pts.x.push_back(s.alpha);
      pts.y.push_back(s.variance);
    }
    b.summary += fmt::format(
        "  weight trial: {} random vectors on sum x = 1/M, {} below the closed-form optimum "
        "(optimum {:.10g}, best random {:.10g})\n  result: {}\n\n",
        trial.trials, trial.exceptions, trial.best_objective, trial.min_random_objective, ok ? "PASS" : "FAIL");
    b.files[fmt::format("optimality_seed{}.csv", seed)] = std::move(csv);
    add_plot(b, fmt::format("variance_by_alpha_seed{}", seed), {pts},
             {"Aggregate variance after rescaling", "alpha (GRPO 1, DAPO and DrGRPO 0)", "total variance"});
  }
  b.summary += fmt::format("result: {}\n", b.pass ? "PASS" : "FAIL");
  return b;
}

// ---------------------------------------------------------------------------

json trace_json(const TrainRun& run) {
  json steps = json::array();
  for (const auto& s : run.trace.steps) {
    steps.push_back({{"step", s.step},
                     {"mean_reward", s.mean_reward},
                     {"mean_length", s.mean_length},
                     {"entropy", s.entropy},
                     {"grad_norm", s.grad_norm},
                     {"scheme_scale", s.scheme_scale},
                     {"degenerate_groups", s.degenerate_groups},
                     {"resamples", s.resamples},
                     {"exhausted_groups", s.exhausted_groups},
                     {"filtered", s.filtered}});
  }
  json evals = json::array();
  for (const auto& e : run.trace.evals) evals.push_back({{"step", e.step}, {"avg_at_k", e.avg_at_k}});
  json out = {{"scheme", run.label}, {"seed", run.seed}, {"final_score", run.final_score},
              {"steps", steps},      {"evals", evals}};
  out["monotonicity"] = run.monotonicity ? json(*run.monotonicity) : json(nullptr);
  return out;
}

std::string trace_csv(const TrainTrace& trace) {
  std::string csv = "step,mean_reward,mean_length,entropy,grad_norm,scheme_scale\n";
  for (const auto& s : trace.steps) {
    csv += fmt::format("{},{},{},{},{},{}\n", s.step, num(s.mean_reward), num(s.mean_length), num(s.entropy),
                       num(s.grad_norm), num(s.scheme_scale));
  }
  return csv;
}

std::string format_optional(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "undef"; }

ReportBundle train_compare(const ExperimentConfig& config, int jobs) {
  ReportBundle b;
  b.summary = header(config);
  const TrainComparison cmp = compare_training(config, jobs);
  const TrainConfig& t = *config.train;
  b.summary += fmt::format(
      "training: {} steps, {} prompts x {} rollouts, {} minibatch(es), lr {}, {} advantages, clip {}, "
      "init STOP logit {}\n\n",
      t.steps, t.prompts_per_batch, t.rollouts_per_prompt, t.minibatches_per_batch, t.learning_rate,
      to_string(t.advantage_mode), t.clip.enabled ? fmt::format("{}/{}", t.clip.eps_low, t.clip.eps_high) : "off",
      config.init_stop_logit);

  std::string evals = "scheme,seed,step,avg_at_k\n";
  std::string summary_csv = "scheme,seed,final_avg_at_k,monotonicity\n";
  std::set<std::string> used;
  for (const auto& run : cmp.runs) {
    std::string stem = fmt::format("trace_{}_seed{}", slug(run.label), run.seed);
    while (!used.insert(stem).second) stem += "_";
    b.files[stem + ".csv"] = trace_csv(run.trace);
    b.files[stem + ".json"] = trace_json(run).dump(1) + "\n";
    for (const auto& e : run.trace.evals) {
      evals += fmt::format("{},{},{},{}\n", run.label, run.seed, e.step, num(e.avg_at_k));
    }
    summary_csv += fmt::format("{},{},{},{}\n", run.label, run.seed, num(run.final_score),
                               run.monotonicity ? num(*run.monotonicity) : "");
  }
  b.files["evals.csv"] = std::move(evals);
  b.files["train_summary.csv"] = std::move(summary_csv);

  b.summary += fmt::format("{:<24} {:>11} {:>13}   per seed (final / monotonicity)\n", "scheme", "mean final",
                           "mean monoton.");
  for (const auto& s : cmp.schemes) {
    std::string per;
    for (std::size_t i = 0; i < s.finals.size(); ++i) {
      per += fmt::format("  {:.3f}/{}", s.finals[i], format_optional(s.monotonicity[i]));
    }
    b.summary += fmt::format("{:<24} {:>11.4f} {:>13.4f} {}\n", s.label, s.mean_final, s.mean_monotonicity, per);
  }

  // Mean evaluation curve per scheme across seeds.
  std::vector<PlotSeries> curves;
  std::size_t r = 0;
  for (const auto& s : cmp.schemes) {
    PlotSeries c{s.label, {}, {}};
    const std::size_t n_seeds = cmp.seeds.size();
    const auto& first = cmp.runs[r].trace.evals;
    for (std::size_t e = 0; e < first.size(); ++e) {
      double total = 0.0;
      for (std::size_t k = 0; k < n_seeds; ++k) total += cmp.runs[r + k].trace.evals[e].avg_at_k;
      c.x.push_back(first[e].step);
      c.y.push_back(total / static_cast<double>(n_seeds));
    }
    r += n_seeds;
    curves.push_back(std::move(c));
  }
  add_plot(b, "eval_curves", curves,
           {fmt::format("Avg@{} during training, mean over {} seeds", t.eval_k, cmp.seeds.size()), "step",
            fmt::format("Avg@{}", t.eval_k)});

  const TrainVerdict verdict = train_verdict(cmp);
  b.summary += "\n";
  for (const auto& line : verdict.lines) b.summary += line + "\n";
  b.pass = verdict.applicable ? verdict.pass() : true;
  b.summary += fmt::format("result: {}\n", !verdict.applicable ? "no verdict" : (b.pass ? "PASS" : "FAIL"));
  return b;
}

}  // namespace

TrainComparison compare_training(const ExperimentConfig& config, int jobs) {
  const TrainConfig base = config.train.value_or(TrainConfig{});
  const PolicyParams init = initial_policy(config.task, config.init_stop_logit);
  const auto labels = unique_labels(config.schemes);
  TrainComparison out;
  out.seeds = config.seeds;
  const std::size_t n_seeds = config.seeds.size();
  out.runs.resize(config.schemes.size() * n_seeds);
  for_each_chunk(out.runs.size(), jobs, [&](const Chunk& chunk) {
    for (std::size_t k = chunk.begin; k < chunk.end; ++k) {
      TrainRun& run = out.runs[k];
      run.scheme = config.schemes[k / n_seeds];
      run.label = labels[k / n_seeds];
      run.seed = config.seeds[k % n_seeds];
      TrainConfig c = base;
      c.scheme = run.scheme;
      c.seed = run.seed;
      run.trace = train(c, config.task, init).trace;
      run.final_score = run.trace.final_score();
      run.monotonicity = monotonicity_score(run.trace.eval_scores());
    }
  });
  for (std::size_t s = 0; s < config.schemes.size(); ++s) {
    SchemeSummary sum{config.schemes[s], labels[s], {}, {}, 0.0, 0.0};
    for (std::size_t k = 0; k < n_seeds; ++k) {
      const TrainRun& run = out.runs[s * n_seeds + k];
      sum.finals.push_back(run.final_score);
      sum.monotonicity.push_back(run.monotonicity);
      sum.mean_final += run.final_score;
      sum.mean_monotonicity += run.monotonicity.value_or(0.0);
    }
    sum.mean_final /= static_cast<double>(n_seeds);
    sum.mean_monotonicity /= static_cast<double>(n_seeds);
    out.schemes.push_back(std::move(sum));
  }
  return out;
}

TrainVerdict train_verdict(const TrainComparison& cmp) {
  TrainVerdict v;
  const SchemeSummary* delta = nullptr;
  std::vector<const SchemeSummary*> baselines;
  bool has_dr = false;
  bool has_dapo = false;
  for (const auto& s : cmp.schemes) {
    if (const auto* d = std::get_if<DeltaL>(&s.scheme); d && d->alpha == 1.0 && !delta) delta = &s;
    if (std::holds_alternative<DrGrpo>(s.scheme)) has_dr = true;
    if (std::holds_alternative<Dapo>(s.scheme)) has_dapo = true;
    if (!std::holds_alternative<DeltaL>(s.scheme)) baselines.push_back(&s);
  }
  v.applicable = delta && has_dr && has_dapo;
  if (!v.applicable) {
    v.lines.push_back("training criterion needs DeltaL(alpha=1), DrGRPO and DAPO among the schemes");
    return v;
  }

  v.final_ok = true;
  v.monotonicity_ok = delta->mean_monotonicity >= kMinMonotonicity;
  v.lines.push_back(fmt::format("{} mean monotonicity {:.4f} >= {}: {}", delta->label, delta->mean_monotonicity,
                                kMinMonotonicity, v.monotonicity_ok ? "yes" : "no"));
  for (const SchemeSummary* b : baselines) {
    if (!std::holds_alternative<Grpo>(b->scheme)) {
      const bool ok = delta->mean_final >= b->mean_final;
      v.final_ok = v.final_ok && ok;
      v.lines.push_back(fmt::format("mean final {:.4f} >= {} {:.4f}: {}", delta->mean_final, b->label, b->mean_final,
                                    ok ? "yes" : "no"));
    }
    const bool ok = delta->mean_monotonicity >= b->mean_monotonicity - kMonotonicitySlack;
    v.monotonicity_ok = v.monotonicity_ok && ok;
    v.lines.push_back(fmt::format("mean monotonicity {:.4f} >= {} {:.4f} - {}: {}", delta->mean_monotonicity,
                                  b->label, b->mean_monotonicity, kMonotonicitySlack, ok ? "yes" : "no"));
  }
  std::string per = "per seed, final of DeltaL(alpha=1) vs";
  for (const SchemeSummary* b : baselines) {
    int wins = 0;
    for (std::size_t k = 0; k < delta->finals.size(); ++k) wins += delta->finals[k] >= b->finals[k] ? 1 : 0;
    per += fmt::format(" {} {}/{}", b->label, wins, delta->finals.size());
  }
  v.lines.push_back(per);
  return v;
}

ReportBundle run_experiment(const ExperimentConfig& config, int jobs) {
  ReportBundle b;
  switch (config.kind) {
    case ExperimentKind::VarianceLength: b = variance_length(config); break;
    case ExperimentKind::CvOrdering: b = cv_ordering(config); break;
    case ExperimentKind::Table1Check: b = table1(config, jobs); break;
    case ExperimentKind::OptimalityCheck: b = optimality(config, jobs); break;
    case ExperimentKind::TrainCompare: b = train_compare(config, jobs); break;
  }
  b.kind = to_string(config.kind);
  b.config_hash = config_hash(config);
  b.files["config.txt"] = serialize_config(config);
  return b;
}

}  // namespace deltal
