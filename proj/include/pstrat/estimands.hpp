#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"
#include "pstrat/em.hpp"
#include "pstrat/model.hpp"
#include "pstrat/propensity.hpp"

namespace pstrat {

// theta_c. With eta_c fixed at v the identified quantity is theta_c +
// eta_c, so the value reported is conditional on the fixed eta_c.
inline double cate(const FitResult& fit) { return fit.params.theta_c; }

// Mean over treated compliers of y minus the fitted z=0 counterfactual.
inline double catt(const FitResult& fit, const Dataset& ds,
                   const Eigen::VectorXd& scores) {
  KahanSum num;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.z(i) == 1 && ds.d(i) == 1) {
      num.add(ds.y(i) -
              (fit.params.beta_c0 + scores[i] * fit.params.beta_c1));
      ++count;
    }
  }
  if (count == 0)
    throw EstimandError("CATT undefined: no treated compliers in sample");
  return num.value() / static_cast<double>(count);
}

// Average observed outcome among treated compliers.
inline double aotc(const Dataset& ds) {
  KahanSum sum;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    if (ds.z(i) == 1 && ds.d(i) == 1) {
      sum.add(ds.y(i));
      ++count;
    }
  if (count == 0)
    throw EstimandError("AOTC undefined: no treated compliers in sample");
  return sum.value() / static_cast<double>(count);
}

inline double pct_reduction(double catt_value, double aotc_value) {
  const double denom = aotc_value - catt_value;
  if (denom == 0.0)
    throw EstimandError("percentage reduction undefined: AOTC equals CATT");
  return catt_value / denom;
}

struct NeverUserShare {
  double model = 0.0;   // stratum model averaged over treated scores
  double moment = 0.0;  // observed d=0 share among treated
};

inline NeverUserShare prob_never_treated(const FitResult& fit,
                                         const Dataset& ds,
                                         const Eigen::VectorXd& scores) {
  KahanSum model;
  Eigen::Index n1 = 0, never = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.z(i) != 1) continue;
    ++n1;
    if (ds.d(i) == 0) ++never;
    model.add(stratum_prob_never(fit.params, scores[i], 1));
  }
  if (n1 == 0) throw EstimandError("no treated units");
  return NeverUserShare{model.value() / static_cast<double>(n1),
                        static_cast<double>(never) / static_cast<double>(n1)};
}

struct BootstrapOptions {
  int B = 500;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  double max_failure_rate = 0.2;
  EmOptions em{1e-8, 2000, 1, 0, false};  // warm-started, no SEs per replicate
  LogisticOptions propensity{};
};

struct BootstrapResult {
  double se = 0.0;
  double percentile_lo = 0.0;
  double percentile_hi = 0.0;
  double normal_lo = 0.0;
  double normal_hi = 0.0;
  int effective_B = 0;
  int failed = 0;
  std::map<std::string, int> failure_taxonomy;
  std::vector<double> draws;  // successful replicates, replicate order
};

namespace detail {

inline double percentile(std::vector<double> sorted, double q) {
  const auto n = static_cast<double>(sorted.size());
  const double pos = q * (n - 1.0);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min<std::size_t>(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// Nonparametric unit resampling; each replicate refits the propensity
// score and the EM model under the same config. Replicates run
// concurrently with per-replicate derived seeds and are reduced in
// replicate-index order.
inline BootstrapResult bootstrap_catt(const Dataset& ds,
                                      const SensitivityConfig& config,
                                      const BootstrapOptions& opts,
                                      const std::optional<ModelParams>&
                                          warm_start = {}) {
  if (opts.B < 2) throw Error("bootstrap requires B >= 2");
  const Eigen::Index n = ds.size();

  std::vector<double> values(opts.B);
  std::vector<int> ok(opts.B, 0);
  std::vector<std::string> why(opts.B);
  parallel_for(static_cast<std::size_t>(opts.B), opts.threads,
               [&](std::size_t b) {
    auto rng = make_rng(opts.seed, static_cast<std::uint64_t>(b) + 1);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::vector<Eigen::Index> rows(n);
    for (auto& r : rows) r = pick(rng);
    try {
      const Dataset sample = ds.resample(rows);
      const PropensityFit ps = fit_propensity(sample, opts.propensity);
      EmOptions em = opts.em;
      em.seed = opts.seed ^ (static_cast<std::uint64_t>(b) + 1);
      const FitResult fit = fit_em(sample, ps.scores, config, em, warm_start);
      values[b] = catt(fit, sample, ps.scores);
      ok[b] = 1;
    } catch (const SeparationError& e) {
      why[b] = "separation";
    } catch (const ConvergenceError& e) {
      why[b] = "non-convergence";
    } catch (const SingularError& e) {
      why[b] = "singular";
    } catch (const Error& e) {
      why[b] = "other";
    }
  });

  BootstrapResult res;
  for (int b = 0; b < opts.B; ++b) {
    if (ok[b]) {
      res.draws.push_back(values[b]);
    } else {
      ++res.failed;
      ++res.failure_taxonomy[why[b]];
    }
  }
  res.effective_B = static_cast<int>(res.draws.size());
  if (res.failed > opts.max_failure_rate * opts.B) {
    std::string msg = "bootstrap failure rate exceeded: " +
                      std::to_string(res.failed) + "/" +
                      std::to_string(opts.B);
    for (const auto& [kind, count] : res.failure_taxonomy)
      msg += "; " + kind + "=" + std::to_string(count);
    throw ConvergenceError(msg);
  }

  const auto m = static_cast<double>(res.effective_B);
  double mean = 0.0;
  for (double v : res.draws) mean += v;
  mean /= m;
  double ss = 0.0;
  for (double v : res.draws) ss += (v - mean) * (v - mean);
  res.se = std::sqrt(ss / (m - 1.0));

  std::vector<double> sorted = res.draws;
  std::sort(sorted.begin(), sorted.end());
  res.percentile_lo = detail::percentile(sorted, 0.025);
  res.percentile_hi = detail::percentile(sorted, 0.975);
  res.normal_lo = mean - 1.959963984540054 * res.se;
  res.normal_hi = mean + 1.959963984540054 * res.se;
  return res;
}

struct EstimandReport {
  double cate = 0.0;
  double catt = 0.0;
  double catt_se_bootstrap = std::numeric_limits<double>::quiet_NaN();
  double aotc = 0.0;
  double pct_reduction = 0.0;
  double prob_never_treated_model = 0.0;
  double prob_never_treated_moment = 0.0;
};

inline EstimandReport compute_estimands(const FitResult& fit,
                                        const Dataset& ds,
                                        const Eigen::VectorXd& scores) {
  EstimandReport rep;
  rep.cate = cate(fit);
  rep.catt = catt(fit, ds, scores);
  rep.aotc = aotc(ds);
  rep.pct_reduction = pct_reduction(rep.catt, rep.aotc);
  const NeverUserShare share = prob_never_treated(fit, ds, scores);
  rep.prob_never_treated_model = share.model;
  rep.prob_never_treated_moment = share.moment;
  return rep;
}

inline void write_estimand_header(std::ostream& out, char delim = ',') {
  out << "cate" << delim << "catt" << delim << "catt_se_bootstrap" << delim
      << "aotc" << delim << "pct_reduction" << delim
      << "prob_never_treated_model" << delim << "prob_never_treated_moment"
      << "\n";
}

inline void write_estimand_row(const EstimandReport& rep, std::ostream& out,
                               char delim = ',') {
  out << format_double(rep.cate) << delim << format_double(rep.catt) << delim
      << format_double(rep.catt_se_bootstrap) << delim
      << format_double(rep.aotc) << delim << format_double(rep.pct_reduction)
      << delim << format_double(rep.prob_never_treated_model) << delim
      << format_double(rep.prob_never_treated_moment) << "\n";
}

}  // namespace pstrat
