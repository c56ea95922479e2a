#pragma once

// Shared helpers for the test suites: an implementation-independent
// Nelder-Mead optimizer used as the brute-force oracle, and canned
// generator specs for simulation-backed tests.

#include <Eigen/Core>
#include <functional>
#include <random>
#include <vector>

#include "pstrat/pstrat.hpp"

namespace testutil {

// Plain Nelder-Mead minimization with periodic restarts around the
// incumbent; deliberately avoids gradients and Hessians so it shares no
// machinery with the fitting code it checks.
inline Eigen::VectorXd nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& start, double scale = 1.0, int rounds = 6,
    int iters_per_round = 4000) {
  const int n = static_cast<int>(start.size());
  Eigen::VectorXd best = start;
  double best_f = f(best);

  for (int round = 0; round < rounds; ++round) {
    std::vector<Eigen::VectorXd> simplex(n + 1, best);
    for (int i = 0; i < n; ++i) simplex[i + 1][i] += scale;
    std::vector<double> fv(n + 1);
    for (int i = 0; i <= n; ++i) fv[i] = f(simplex[i]);

    for (int it = 0; it < iters_per_round; ++it) {
      int lo = 0, hi = 0, nh = 0;
      for (int i = 1; i <= n; ++i) {
        if (fv[i] < fv[lo]) lo = i;
        if (fv[i] > fv[hi]) hi = i;
      }
      for (int i = 0; i <= n; ++i)
        if (i != hi && fv[i] > fv[nh]) nh = i;

      if (std::abs(fv[hi] - fv[lo]) <
          1e-15 * (std::abs(fv[lo]) + std::abs(fv[hi])) + 1e-300)
        break;

      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (int i = 0; i <= n; ++i)
        if (i != hi) centroid += simplex[i];
      centroid /= static_cast<double>(n);

      Eigen::VectorXd refl = centroid + (centroid - simplex[hi]);
      double f_refl = f(refl);
      if (f_refl < fv[lo]) {
        Eigen::VectorXd expd = centroid + 2.0 * (centroid - simplex[hi]);
        double f_expd = f(expd);
        if (f_expd < f_refl) {
          simplex[hi] = expd;
          fv[hi] = f_expd;
        } else {
          simplex[hi] = refl;
          fv[hi] = f_refl;
        }
      } else if (f_refl < fv[nh]) {
        simplex[hi] = refl;
        fv[hi] = f_refl;
      } else {
        Eigen::VectorXd contr = centroid + 0.5 * (simplex[hi] - centroid);
        double f_contr = f(contr);
        if (f_contr < fv[hi]) {
          simplex[hi] = contr;
          fv[hi] = f_contr;
        } else {
          for (int i = 0; i <= n; ++i) {
            if (i == lo) continue;
            simplex[i] = simplex[lo] + 0.5 * (simplex[i] - simplex[lo]);
            fv[i] = f(simplex[i]);
          }
        }
      }
    }
    int lo = 0;
    for (int i = 1; i <= n; ++i)
      if (fv[i] < fv[lo]) lo = i;
    if (fv[lo] < best_f) {
      best = simplex[lo];
      best_f = fv[lo];
    }
    scale *= 0.1;
  }
  return best;
}

// Well-behaved generator: one continuous and one binary covariate,
// clear stratum separation, moderate confounding.
inline pstrat::GeneratorSpec default_spec(Eigen::Index n,
                                          std::uint64_t seed) {
  pstrat::GeneratorSpec spec;
  spec.n = n;
  spec.seed = seed;
  spec.span_label = "sim";
  spec.covariates = {
      {"x1", pstrat::CovariateSpec::Kind::standard_normal, 0.5, 0.0, 1.0},
      {"x2", pstrat::CovariateSpec::Kind::bernoulli, 0.4, 0.0, 1.0}};
  spec.ps_coefficients = Eigen::Vector3d(-1.0, 0.8, 0.5);
  spec.true_params.alpha0 = 0.3;
  spec.true_params.alpha = -0.8;
  spec.true_params.xi = -1.0;
  spec.true_params.beta_c0 = 1000.0;
  spec.true_params.beta_c1 = -400.0;
  spec.true_params.theta_c = -1500.0;
  spec.true_params.eta_c = 0.0;
  spec.true_params.beta_n0 = 800.0;
  spec.true_params.beta_n1 = 300.0;
  spec.true_params.eta_n = 200.0;
  spec.true_params.sigma2 = 300.0 * 300.0;
  return spec;
}

// No confounding anywhere; used for the unconfounded-regime checks.
inline pstrat::GeneratorSpec unconfounded_spec(Eigen::Index n,
                                               std::uint64_t seed) {
  pstrat::GeneratorSpec spec = default_spec(n, seed);
  spec.true_params.xi = 0.0;
  spec.true_params.eta_c = 0.0;
  spec.true_params.eta_n = 0.0;
  return spec;
}

inline pstrat::SensitivityConfig config_for(const pstrat::GeneratorSpec& spec,
                                            bool xi_free = true) {
  pstrat::SensitivityConfig config;
  config.xi_mode = xi_free ? pstrat::SensitivityConfig::XiMode::free
                           : pstrat::SensitivityConfig::XiMode::fixed;
  config.xi_fixed = xi_free ? 0.0 : spec.true_params.xi;
  config.eta_c_fixed = spec.true_params.eta_c;
  config.eta_n_fixed = spec.true_params.eta_n;
  return config;
}

// Small random dataset without any model structure; for formula-level
// oracle checks.
inline pstrat::Dataset random_dataset(Eigen::Index n, Eigen::Index p,
                                      std::uint64_t seed) {
  auto rng = pstrat::make_rng(seed, 77);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXi z(n), d(n);
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    z[i] = unif(rng) < 0.4 ? 1 : 0;
    d[i] = (z[i] == 1 && unif(rng) < 0.5) ? 1 : 0;
    y[i] = 100.0 * normal(rng);
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = normal(rng);
  }
  std::vector<std::string> schema;
  for (Eigen::Index j = 0; j < p; ++j)
    schema.push_back("x" + std::to_string(j + 1));
  return pstrat::Dataset(std::move(z), std::move(d), std::move(y),
                         std::move(x), std::move(schema));
}

}  // namespace testutil
