#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"
#include "pstrat/model.hpp"
#include "pstrat/propensity.hpp"

namespace pstrat {

struct ParamSe {
  std::vector<std::string> names;
  Eigen::VectorXd values;

  double get(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return values[k];
    throw Error("no standard error recorded for " + name);
  }
};

struct EmOptions {
  double tol = 1e-8;       // relative log-likelihood change
  int max_iter = 2000;
  int n_restarts = 5;
  std::uint64_t seed = 0;
  bool compute_se = true;
};

struct FitResult {
  ModelParams params;
  std::vector<double> loglik_trace;  // observed-data log-likelihood, trace[0] at init
  Eigen::VectorXd posterior_c;       // Pr(S=complier | data) per unit
  ParamSe se;
  bool converged = false;
  int restarts_used = 0;
  std::vector<std::string> restart_errors;
  SensitivityConfig config;

  double log_likelihood() const { return loglik_trace.back(); }
};

// Posterior complier probabilities. Observed strata (z=1) map to d; the
// latent z=0 posteriors come from Bayes' rule in log space.
inline Eigen::VectorXd e_step(const ModelParams& p, const Dataset& ds,
                              const Eigen::VectorXd& scores) {
  p.check();
  const Eigen::Index n = ds.size();
  Eigen::VectorXd pc(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ds.z(i) == 1) {
      pc[i] = static_cast<double>(ds.d(i));
      continue;
    }
    const double e = scores[i];
    const double lc =
        log_stratum_prob_complier(p, e, 0) +
        normal_logpdf(ds.y(i), outcome_mean(p, StratumLabel::complier, 0, 0, e),
                      p.sigma2);
    const double ln =
        log_stratum_prob_never(p, e, 0) +
        normal_logpdf(ds.y(i),
                      outcome_mean(p, StratumLabel::never_user, 0, 0, e),
                      p.sigma2);
    if (!std::isfinite(lc) && !std::isfinite(ln))
      throw NumericError("degenerate posterior at unit " + std::to_string(i));
    pc[i] = expit(lc - ln);
  }
  return pc;
}

namespace detail {

// Columns of the outcome design, shared by the M-step and its tests.
inline const char* outcome_column_name(int j) {
  static const char* names[5] = {"beta_c0", "theta_c", "beta_c1", "beta_n0",
                                 "beta_n1"};
  return names[j];
}

}  // namespace detail

// Maximizes the expected complete-data log-likelihood: a weighted
// logistic regression for the stratum submodel and a weighted least
// squares fit for the outcome submodel, with the fixed eta terms moved
// into the response as offsets.
inline ModelParams m_step(const Eigen::VectorXd& posterior_c,
                          const Dataset& ds, const Eigen::VectorXd& scores,
                          const SensitivityConfig& config) {
  const Eigen::Index n = ds.size();
  if (posterior_c.size() != n || scores.size() != n)
    throw SchemaError("m_step: vector lengths mismatch");

  ModelParams out;
  out.eta_c = config.eta_c_fixed;
  out.eta_n = config.eta_n_fixed;

  // Stratum submodel: fractional response Pr(S=never) with unit weight.
  const bool xi_free = config.xi_mode == SensitivityConfig::XiMode::free;
  const Eigen::Index ps = xi_free ? 3 : 2;
  Eigen::MatrixXd sdesign(n, ps);
  Eigen::VectorXd sresp(n), soffset(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sdesign(i, 0) = 1.0;
    sdesign(i, 1) = scores[i];
    if (xi_free) sdesign(i, 2) = static_cast<double>(ds.z(i));
    sresp[i] = 1.0 - posterior_c[i];
    soffset[i] = xi_free ? 0.0 : config.xi_fixed * static_cast<double>(ds.z(i));
  }
  LogisticOptions lopts;
  lopts.grad_tol = 1e-10;
  lopts.max_iter = 200;
  LogisticFit sfit =
      fit_logistic_weighted(sdesign, sresp, Eigen::VectorXd::Ones(n), soffset,
                            lopts);
  out.alpha0 = sfit.coefficients[0];
  out.alpha = sfit.coefficients[1];
  out.xi = xi_free ? sfit.coefficients[2] : config.xi_fixed;

  // Outcome submodel: each unit contributes a complier and a never-user
  // pseudo-observation weighted by its posterior.
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(5, 5);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(5);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = static_cast<double>(ds.z(i));
    const double e = scores[i];
    const double wc = posterior_c[i];
    const double wn = 1.0 - posterior_c[i];
    Eigen::Matrix<double, 5, 1> xc, xn;
    xc << 1.0, z, e, 0.0, 0.0;
    xn << 0.0, 0.0, 0.0, 1.0, e;
    const double yc = ds.y(i) - z * config.eta_c_fixed;
    const double yn = ds.y(i) - z * config.eta_n_fixed;
    ata.noalias() += wc * xc * xc.transpose() + wn * xn * xn.transpose();
    atb.noalias() += wc * yc * xc + wn * yn * xn;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ata);
  const double max_eig = eig.eigenvalues().maxCoeff();
  if (!(max_eig > 0.0) || eig.eigenvalues().minCoeff() <= 1e-10 * max_eig) {
    Eigen::VectorXd null_dir = eig.eigenvectors().col(0);
    std::ostringstream os;
    os << "singular outcome design; collinear columns:";
    for (int j = 0; j < 5; ++j)
      if (std::abs(null_dir[j]) > 0.3)
        os << " " << detail::outcome_column_name(j);
    throw SingularError(os.str());
  }
  Eigen::VectorXd beta = eig.eigenvectors() *
                         (eig.eigenvalues().cwiseInverse().asDiagonal() *
                          (eig.eigenvectors().transpose() * atb));
  out.beta_c0 = beta[0];
  out.theta_c = beta[1];
  out.beta_c1 = beta[2];
  out.beta_n0 = beta[3];
  out.beta_n1 = beta[4];

  KahanSum rss;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = static_cast<double>(ds.z(i));
    const double e = scores[i];
    const double rc = ds.y(i) - z * config.eta_c_fixed -
                      (out.beta_c0 + z * out.theta_c + e * out.beta_c1);
    const double rn = ds.y(i) - z * config.eta_n_fixed -
                      (out.beta_n0 + e * out.beta_n1);
    rss.add(posterior_c[i] * rc * rc + (1.0 - posterior_c[i]) * rn * rn);
  }
  out.sigma2 = rss.value() / static_cast<double>(n);
  if (!(out.sigma2 > 0.0))
    throw NumericError("m_step produced non-positive residual variance");
  return out;
}

// Moment-based starting point: stratum intercept at the treated
// never-user share, outcome intercepts at the control mean, theta_c at
// the adjusted treated-complier vs control gap, sigma2 at the pooled
// outcome variance. The fixed eta offsets enter here so that fits under
// shifted eta_c follow identical optimization paths.
inline ModelParams initial_params(const Dataset& ds,
                                  const SensitivityConfig& config) {
  const Eigen::Index n = ds.size();
  Eigen::Index n1 = 0, never1 = 0, n0 = 0, tc = 0;
  double sum0 = 0.0, sum_tc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ds.z(i) == 1) {
      ++n1;
      if (ds.d(i) == 0) ++never1;
      if (ds.d(i) == 1) {
        ++tc;
        sum_tc += ds.y(i) - config.eta_c_fixed;
      }
    } else {
      ++n0;
      sum0 += ds.y(i);
    }
  }
  if (n1 == 0 || n0 == 0)
    throw ValidationError("fit requires both treatment arms nonempty");

  ModelParams p;
  const double share = (static_cast<double>(never1) + 0.5) /
                       (static_cast<double>(n1) + 1.0);
  p.alpha0 = logit(share);
  p.alpha = 0.0;
  p.xi = config.xi_mode == SensitivityConfig::XiMode::free ? 0.0
                                                           : config.xi_fixed;
  const double m0 = sum0 / static_cast<double>(n0);
  p.beta_c0 = m0;
  p.beta_n0 = m0;
  p.beta_c1 = 0.0;
  p.beta_n1 = 0.0;
  p.theta_c = tc > 0 ? sum_tc / static_cast<double>(tc) - m0 : 0.0;
  p.eta_c = config.eta_c_fixed;
  p.eta_n = config.eta_n_fixed;

  double mean_y = ds.outcome().mean();
  p.sigma2 = (ds.outcome().array() - mean_y).square().sum() /
             static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  if (!(p.sigma2 > 0.0)) p.sigma2 = 1.0;
  return p;
}

inline ModelParams jitter_params(const ModelParams& base,
                                 const SensitivityConfig& config,
                                 std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.5);
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  ModelParams p = base;
  p.alpha0 += noise(rng);
  p.alpha += noise(rng);
  const double xi_noise = noise(rng);  // drawn unconditionally: stable stream
  if (config.xi_mode == SensitivityConfig::XiMode::free) p.xi += xi_noise;
  p.beta_c0 += noise(rng);
  p.beta_c1 += noise(rng);
  p.theta_c += noise(rng);
  p.beta_n0 += noise(rng);
  p.beta_n1 += noise(rng);
  p.sigma2 *= scale(rng);
  return p;
}

struct OpgOptions {
  double rel_step = 1e-5;
  double abs_floor = 1e-7;
  double min_eig_ratio = 1e-10;
  bool treat_eta_c_free = false;  // demonstrates the non-identified direction
};

inline std::vector<std::string> free_param_names(const SensitivityConfig& config,
                                                 bool include_eta_c = false) {
  std::vector<std::string> names{"alpha0", "alpha"};
  if (config.xi_mode == SensitivityConfig::XiMode::free)
    names.emplace_back("xi");
  names.insert(names.end(), {"beta_c0", "theta_c", "beta_c1", "beta_n0",
                             "beta_n1"});
  if (include_eta_c) names.emplace_back("eta_c");
  names.emplace_back("sigma2");
  return names;
}

namespace detail {

inline double* param_slot(ModelParams& p, const std::string& name) {
  if (name == "alpha0") return &p.alpha0;
  if (name == "alpha") return &p.alpha;
  if (name == "xi") return &p.xi;
  if (name == "beta_c0") return &p.beta_c0;
  if (name == "theta_c") return &p.theta_c;
  if (name == "beta_c1") return &p.beta_c1;
  if (name == "beta_n0") return &p.beta_n0;
  if (name == "beta_n1") return &p.beta_n1;
  if (name == "eta_c") return &p.eta_c;
  if (name == "eta_n") return &p.eta_n;
  if (name == "sigma2") return &p.sigma2;
  throw Error("unknown parameter: " + name);
}

}  // namespace detail

// Outer-product-of-gradients standard errors at the MLE. Per-unit score
// vectors come from central finite differences over the estimated
// parameters only; fixed eta's and pinned xi are excluded.
inline ParamSe opg_se(const ModelParams& params, const Dataset& ds,
                      const Eigen::VectorXd& scores,
                      const SensitivityConfig& config,
                      const OpgOptions& opts = {}) {
  const auto names = free_param_names(config, opts.treat_eta_c_free);
  const auto k = static_cast<Eigen::Index>(names.size());
  const Eigen::Index n = ds.size();

  Eigen::MatrixXd opg = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd g(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      ModelParams lo = params, hi = params;
      double* slo = detail::param_slot(lo, names[j]);
      double* shi = detail::param_slot(hi, names[j]);
      const double h = opts.rel_step * std::abs(*shi) + opts.abs_floor;
      *shi += h;
      *slo -= h;
      g[j] = (unit_loglik(hi, ds.z(i), ds.d(i), ds.y(i), scores[i]) -
              unit_loglik(lo, ds.z(i), ds.d(i), ds.y(i), scores[i])) /
             (2.0 * h);
    }
    opg.noalias() += g * g.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(opg);
  const double max_eig = eig.eigenvalues().maxCoeff();
  const double min_eig = eig.eigenvalues().minCoeff();
  if (!(max_eig > 0.0) || min_eig <= opts.min_eig_ratio * max_eig) {
    Eigen::VectorXd null_dir = eig.eigenvectors().col(0);
    std::ostringstream os;
    os << "singular OPG matrix (condition number "
       << (min_eig > 0.0 ? max_eig / min_eig
                         : std::numeric_limits<double>::infinity())
       << "); null direction loads on:";
    for (Eigen::Index j = 0; j < k; ++j)
      if (std::abs(null_dir[j]) > 0.3) os << " " << names[j];
    throw SingularError(os.str());
  }
  Eigen::MatrixXd inv = eig.eigenvectors() *
                        eig.eigenvalues().cwiseInverse().asDiagonal() *
                        eig.eigenvectors().transpose();
  ParamSe se;
  se.names = names;
  se.values = inv.diagonal().cwiseSqrt();
  return se;
}

// EM over the latent strata of untreated units. Runs n_restarts
// initializations (moment start first, jittered thereafter) and keeps
// the best converged fit.
inline FitResult fit_em(const Dataset& ds, const Eigen::VectorXd& scores,
                        const SensitivityConfig& config,
                        const EmOptions& opts = {},
                        const std::optional<ModelParams>& warm_start = {}) {
  if (scores.size() != ds.size())
    throw SchemaError("fit_em: scores length mismatch");

  const ModelParams start = warm_start ? *warm_start
                                       : initial_params(ds, config);
  auto rng = make_rng(opts.seed, 0x9e3779b97f4a7c15ULL);

  std::optional<FitResult> best;
  std::vector<std::string> errors;
  int attempts = 0;
  for (int r = 0; r < std::max(1, opts.n_restarts); ++r) {
    ModelParams params = (r == 0) ? start : jitter_params(start, config, rng);
    ++attempts;
    try {
      FitResult res;
      res.config = config;
      double ll_prev = total_loglik(params, ds, scores);
      res.loglik_trace.push_back(ll_prev);
      for (int it = 0; it < opts.max_iter; ++it) {
        const Eigen::VectorXd pc = e_step(params, ds, scores);
        params = m_step(pc, ds, scores, config);
        const double ll = total_loglik(params, ds, scores);
        if (ll < ll_prev - 1e-8 * std::max(1.0, std::abs(ll_prev)))
          throw std::logic_error(
              "EM log-likelihood decreased (M-step inconsistency): " +
              std::to_string(ll_prev) + " -> " + std::to_string(ll));
        res.loglik_trace.push_back(ll);
        if (std::abs(ll - ll_prev) <
            opts.tol * std::max(1.0, std::abs(ll_prev))) {
          res.converged = true;
          break;
        }
        ll_prev = ll;
      }
      if (!res.converged) {
        errors.push_back("restart " + std::to_string(r) + ": hit max_iter=" +
                         std::to_string(opts.max_iter));
        continue;
      }
      res.params = params;
      if (!best || res.log_likelihood() > best->log_likelihood()) best = res;
    } catch (const Error& e) {
      errors.push_back("restart " + std::to_string(r) + ": " + e.what());
    }
  }
  if (!best) {
    std::string msg = "all EM restarts failed:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConvergenceError(msg);
  }
  best->restarts_used = attempts;
  best->restart_errors = errors;
  best->posterior_c = e_step(best->params, ds, scores);
  if (opts.compute_se)
    best->se = opg_se(best->params, ds, scores, config);
  return *best;
}

inline void write_fit_report(const FitResult& fit, std::ostream& out) {
  out << "converged " << (fit.converged ? 1 : 0) << "\n"
      << "log_likelihood " << format_double(fit.log_likelihood()) << "\n"
      << "iterations " << fit.loglik_trace.size() - 1 << "\n"
      << "restarts_used " << fit.restarts_used << "\n"
      << "failed_restarts " << fit.restart_errors.size() << "\n"
      << "parameter estimate se\n";
  ModelParams p = fit.params;
  for (const auto& name :
       {"alpha0", "alpha", "xi", "beta_c0", "theta_c", "beta_c1", "beta_n0",
        "beta_n1", "eta_c", "eta_n", "sigma2"}) {
    out << name << " " << format_double(*detail::param_slot(p, name)) << " ";
    bool have = false;
    for (std::size_t k = 0; k < fit.se.names.size(); ++k)
      if (fit.se.names[k] == name) {
        out << format_double(fit.se.values[k]);
        have = true;
        break;
      }
    if (!have) out << (std::string(name) == "eta_c" ||
                       std::string(name) == "eta_n" ||
                       (std::string(name) == "xi" &&
                        fit.config.xi_mode == SensitivityConfig::XiMode::fixed)
                           ? "fixed"
                           : "na");
    out << "\n";
  }
}

}  // namespace pstrat
