#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <sstream>
#include <string>
#include <vector>

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"

namespace pstrat {

struct LogisticOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double ridge = 0.0;  // applied to non-intercept coefficients only
};

struct LogisticFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd fitted;
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> loglik_trace;
};

namespace detail {

inline double logistic_loglik(const Eigen::VectorXd& eta,
                              const Eigen::VectorXd& t,
                              const Eigen::VectorXd& w) {
  KahanSum s;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    s.add(w[i] * (t[i] * eta[i] - softplus(eta[i])));
  return s.value();
}

}  // namespace detail

// Newton/IRLS for a weighted Bernoulli log-likelihood with an offset.
// Responses may be fractional in [0,1] (fractional responses with unit
// weight are equivalent to pairs of weighted 0/1 pseudo-observations).
// Step-halving keeps the (penalized) log-likelihood nondecreasing.
inline LogisticFit fit_logistic_weighted(const Eigen::MatrixXd& design,
                                         const Eigen::VectorXd& response,
                                         const Eigen::VectorXd& weights,
                                         const Eigen::VectorXd& offset,
                                         const LogisticOptions& opts = {}) {
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  if (response.size() != n || weights.size() != n || offset.size() != n)
    throw SchemaError("logistic: design/response/weights/offset lengths differ");

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, opts.ridge);
  if (p > 0) penalty[0] = 0.0;  // intercept unpenalized

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = offset;
  Eigen::VectorXd prob(n);
  auto update_prob = [&]() {
    for (Eigen::Index i = 0; i < n; ++i) prob[i] = expit(eta[i]);
  };
  update_prob();
  auto penalized = [&](const Eigen::VectorXd& b, const Eigen::VectorXd& e) {
    return detail::logistic_loglik(e, response, weights) -
           0.5 * (penalty.array() * b.array().square()).sum();
  };
  double ll = penalized(beta, eta);

  LogisticFit fit;
  fit.loglik_trace.push_back(ll);
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::VectorXd grad =
        design.transpose() * (weights.array() * (response - prob).array()).matrix() -
        (penalty.array() * beta.array()).matrix();
    if (grad.cwiseAbs().maxCoeff() < opts.grad_tol) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd wdiag =
        (weights.array() * prob.array() * (1.0 - prob.array())).matrix();
    Eigen::MatrixXd hess = design.transpose() * wdiag.asDiagonal() * design;
    hess.diagonal() += penalty;
    // Floor the curvature so the step stays defined under saturation.
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess +
                                      1e-12 * Eigen::MatrixXd::Identity(p, p));
    Eigen::VectorXd step = ldlt.solve(grad);
    double scale = 1.0;
    Eigen::VectorXd beta_new, eta_new;
    double ll_new = 0.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      beta_new = beta + scale * step;
      eta_new = offset + design * beta_new;
      ll_new = penalized(beta_new, eta_new);
      if (std::isfinite(ll_new) && ll_new >= ll) {
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;  // no ascent direction left at machine precision
    beta = beta_new;
    eta = eta_new;
    update_prob();
    ll = ll_new;
    fit.loglik_trace.push_back(ll);
    fit.iterations = it + 1;
  }

  fit.coefficients = beta;
  fit.fitted = prob;
  fit.log_likelihood = detail::logistic_loglik(eta, response, weights);
  // Separation shows up as a perfect fit reached only at extreme
  // coefficients: every fitted probability sits on top of its response
  // while |beta| runs away. Newton can still satisfy the gradient
  // tolerance there, so check before trusting "converged".
  const bool perfect_fit =
      ((response - prob).cwiseAbs().array() < 1e-6).all();
  if (perfect_fit && beta.cwiseAbs().maxCoeff() > 10.0) {
    std::ostringstream os;
    os << "quasi-complete separation: |beta|_inf="
       << beta.cwiseAbs().maxCoeff()
       << "; responses are perfectly classified";
    throw SeparationError(os.str());
  }
  if (!fit.converged) {
    const double gnorm =
        (design.transpose() *
             (weights.array() * (response - prob).array()).matrix() -
         (penalty.array() * beta.array()).matrix())
            .cwiseAbs()
            .maxCoeff();
    // The line search can stall at machine precision before a very tight
    // gradient tolerance is met; a tiny gradient is still a solution.
    if (gnorm < 1e-5) {
      fit.converged = true;
      return fit;
    }
    std::ostringstream os;
    os << "logistic fit did not converge in " << opts.max_iter
       << " iterations; max |gradient| = " << gnorm;
    throw ConvergenceError(os.str());
  }
  return fit;
}

struct PropensityFit {
  Eigen::VectorXd coefficients;  // intercept first, then one per covariate
  Eigen::VectorXd scores;
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  double ridge = 0.0;
};

// Main-effects logistic regression of labels on features (intercept added).
inline PropensityFit fit_logistic(const Eigen::MatrixXd& features,
                                  const Eigen::VectorXi& labels,
                                  const LogisticOptions& opts = {}) {
  const Eigen::Index n = features.rows();
  if (labels.size() != n)
    throw SchemaError("fit_logistic: features rows != labels length");
  const Eigen::Index ones = labels.sum();
  if (ones == 0 || ones == n)
    throw ValidationError("fit_logistic: both label classes must be present");

  Eigen::MatrixXd design(n, features.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(features.cols()) = features;
  LogisticFit base = fit_logistic_weighted(
      design, labels.cast<double>(), Eigen::VectorXd::Ones(n),
      Eigen::VectorXd::Zero(n), opts);

  PropensityFit fit;
  fit.coefficients = base.coefficients;
  fit.scores = base.fitted;
  fit.log_likelihood = base.log_likelihood;
  fit.converged = base.converged;
  fit.iterations = base.iterations;
  fit.ridge = opts.ridge;
  if ((fit.scores.array() <= 0.0).any() || (fit.scores.array() >= 1.0).any())
    throw NumericError("fitted propensity score outside (0,1)");
  return fit;
}

inline PropensityFit fit_propensity(const Dataset& ds,
                                    const LogisticOptions& opts = {}) {
  return fit_logistic(ds.covariates(), ds.treatment(), opts);
}

inline double predict_score(const PropensityFit& fit,
                            const Eigen::VectorXd& x) {
  if (x.size() + 1 != fit.coefficients.size())
    throw SchemaError("predict_score: covariate length does not match fit");
  return expit(fit.coefficients[0] + fit.coefficients.tail(x.size()).dot(x));
}

struct ScoreHistogram {
  Eigen::VectorXd edges;   // bins+1 edges on [0,1]
  Eigen::VectorXi counts;  // per-bin counts
  double min = 0.0;
  double max = 0.0;
};

struct BalanceReport {
  std::vector<std::string> covariates;
  Eigen::VectorXd asd;
  std::vector<Eigen::Index> degenerate;  // zero variance in both arms
  ScoreHistogram treated;
  ScoreHistogram control;
};

namespace detail {

inline ScoreHistogram score_histogram(const Eigen::VectorXd& scores,
                                      const Eigen::VectorXi& keep, int bins) {
  ScoreHistogram h;
  h.edges = Eigen::VectorXd::LinSpaced(bins + 1, 0.0, 1.0);
  h.counts = Eigen::VectorXi::Zero(bins);
  h.min = std::numeric_limits<double>::infinity();
  h.max = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!keep[i]) continue;
    const double s = scores[i];
    int b = static_cast<int>(s * bins);
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    ++h.counts[b];
    h.min = std::min(h.min, s);
    h.max = std::max(h.max, s);
  }
  return h;
}

}  // namespace detail

// ASD = |mean1 - mean0| / sqrt(s1^2/N1 + s0^2/N0), per covariate, with
// overlap histograms of the fitted scores by arm.
inline BalanceReport balance(const Dataset& ds, const Eigen::VectorXd& scores,
                             int bins = 20) {
  const Eigen::Index n = ds.size();
  if (scores.size() != n) throw SchemaError("balance: scores length mismatch");
  Eigen::Index n1 = ds.treated_count();
  Eigen::Index n0 = n - n1;
  if (n1 < 2 || n0 < 2)
    throw ValidationError("balance: need >=2 units in each arm");

  BalanceReport rep;
  rep.covariates = ds.schema();
  rep.asd.resize(ds.n_covariates());
  for (Eigen::Index j = 0; j < ds.n_covariates(); ++j) {
    double m1 = 0.0, m0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      (ds.z(i) == 1 ? m1 : m0) += ds.covariates()(i, j);
    m1 /= static_cast<double>(n1);
    m0 /= static_cast<double>(n0);
    double v1 = 0.0, v0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dev = ds.covariates()(i, j) - (ds.z(i) == 1 ? m1 : m0);
      (ds.z(i) == 1 ? v1 : v0) += dev * dev;
    }
    v1 /= static_cast<double>(n1 - 1);
    v0 /= static_cast<double>(n0 - 1);
    const double denom = std::sqrt(v1 / static_cast<double>(n1) +
                                   v0 / static_cast<double>(n0));
    if (denom == 0.0) {
      rep.degenerate.push_back(j);
      rep.asd[j] = (m1 == m0) ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
      rep.asd[j] = std::abs(m1 - m0) / denom;
    }
  }
  Eigen::VectorXi treated = ds.treatment();
  Eigen::VectorXi control = (1 - treated.array()).matrix();
  rep.treated = detail::score_histogram(scores, treated, bins);
  rep.control = detail::score_histogram(scores, control, bins);
  return rep;
}

inline void write_balance_table(const BalanceReport& rep, std::ostream& out) {
  out << "covariate,asd\n";
  for (std::size_t j = 0; j < rep.covariates.size(); ++j)
    out << rep.covariates[j] << "," << format_double(rep.asd[j]) << "\n";
}

inline void write_overlap_histogram(const BalanceReport& rep,
                                    std::ostream& out) {
  out << "arm,bin_low,bin_high,count\n";
  auto emit = [&](const char* arm, const ScoreHistogram& h) {
    for (Eigen::Index b = 0; b < h.counts.size(); ++b)
      out << arm << "," << format_double(h.edges[b]) << ","
          << format_double(h.edges[b + 1]) << "," << h.counts[b] << "\n";
  };
  emit("treated", rep.treated);
  emit("control", rep.control);
}

}  // namespace pstrat
