#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"

namespace pstrat {

// Full parameter set of the stratum and outcome models, including the
// confounding terms (xi for stratum membership, eta_c/eta_n for the
// potential-outcome means). With xi = eta_c = eta_n = 0 this is the
// unconfounded base model.
struct ModelParams {
  double alpha0 = 0.0;   // stratum-model intercept
  double alpha = 0.0;    // stratum-model slope on the propensity score
  double xi = 0.0;       // stratum log-odds shift for treated units
  double beta_c0 = 0.0;  // complier outcome intercept
  double beta_c1 = 0.0;  // complier outcome slope on the propensity score
  double theta_c = 0.0;  // complier treatment effect (CATE)
  double eta_c = 0.0;    // complier outcome shift from observed treatment
  double beta_n0 = 0.0;  // never-user outcome intercept
  double beta_n1 = 0.0;  // never-user outcome slope on the propensity score
  double eta_n = 0.0;    // never-user outcome shift from observed treatment
  double sigma2 = 1.0;   // shared residual variance

  void check() const {
    if (!(sigma2 > 0.0)) throw ValidationError("sigma2 must be positive");
  }
};

inline void write_params(const ModelParams& p, std::ostream& out) {
  out << "alpha0 " << format_double(p.alpha0) << "\n"
      << "alpha " << format_double(p.alpha) << "\n"
      << "xi " << format_double(p.xi) << "\n"
      << "beta_c0 " << format_double(p.beta_c0) << "\n"
      << "beta_c1 " << format_double(p.beta_c1) << "\n"
      << "theta_c " << format_double(p.theta_c) << "\n"
      << "eta_c " << format_double(p.eta_c) << "\n"
      << "beta_n0 " << format_double(p.beta_n0) << "\n"
      << "beta_n1 " << format_double(p.beta_n1) << "\n"
      << "eta_n " << format_double(p.eta_n) << "\n"
      << "sigma2 " << format_double(p.sigma2) << "\n";
}

inline ModelParams read_params(std::istream& in) {
  std::map<std::string, double> kv;
  std::string key;
  double value;
  while (in >> key >> value) kv[key] = value;
  ModelParams p;
  auto get = [&](const char* name) {
    auto it = kv.find(name);
    if (it == kv.end())
      throw ParseError(std::string("missing parameter: ") + name);
    return it->second;
  };
  p.alpha0 = get("alpha0");
  p.alpha = get("alpha");
  p.xi = get("xi");
  p.beta_c0 = get("beta_c0");
  p.beta_c1 = get("beta_c1");
  p.theta_c = get("theta_c");
  p.eta_c = get("eta_c");
  p.beta_n0 = get("beta_n0");
  p.beta_n1 = get("beta_n1");
  p.eta_n = get("eta_n");
  p.sigma2 = get("sigma2");
  p.check();
  return p;
}

// xi is either estimated or pinned; the eta's are always fixed inputs.
struct SensitivityConfig {
  enum class XiMode { free, fixed };
  XiMode xi_mode = XiMode::free;
  double xi_fixed = 0.0;
  double eta_c_fixed = 0.0;
  double eta_n_fixed = 0.0;

  static SensitivityConfig base() {
    return SensitivityConfig{XiMode::fixed, 0.0, 0.0, 0.0};
  }
};

// Pr(S = never_user | e, z) = expit(alpha0 + e*alpha + xi*z).
inline double stratum_prob_never(const ModelParams& p, double e, int z) {
  return expit(p.alpha0 + e * p.alpha + p.xi * static_cast<double>(z));
}

inline double log_stratum_prob_never(const ModelParams& p, double e, int z) {
  return log_expit(p.alpha0 + e * p.alpha + p.xi * static_cast<double>(z));
}

inline double log_stratum_prob_complier(const ModelParams& p, double e, int z) {
  return log_expit(-(p.alpha0 + e * p.alpha + p.xi * static_cast<double>(z)));
}

// Mean of Y(z1) given stratum, observed treatment z2 and the propensity
// score. The never-user mean carries no z1 term (exclusion restriction).
inline double outcome_mean(const ModelParams& p, StratumLabel s, int z1,
                           int z2, double e) {
  if (s == StratumLabel::complier)
    return p.beta_c0 + z1 * p.theta_c + z2 * p.eta_c + e * p.beta_c1;
  return p.beta_n0 + z2 * p.eta_n + e * p.beta_n1;
}

inline double normal_logpdf(double y, double mean, double sigma2) {
  constexpr double log_2pi = 1.8378770664093454836;
  const double r = y - mean;
  return -0.5 * (log_2pi + std::log(sigma2) + r * r / sigma2);
}

// Observed-data log-likelihood contribution of one unit. For z=1 the
// stratum is observed through d; for z=0 it is a two-component mixture,
// evaluated with log-sum-exp.
inline double unit_loglik(const ModelParams& p, int z, int d, double y,
                          double e) {
  double ll;
  if (z == 1) {
    if (d == 0) {
      ll = log_stratum_prob_never(p, e, 1) +
           normal_logpdf(y, outcome_mean(p, StratumLabel::never_user, 1, 1, e),
                         p.sigma2);
    } else {
      ll = log_stratum_prob_complier(p, e, 1) +
           normal_logpdf(y, outcome_mean(p, StratumLabel::complier, 1, 1, e),
                         p.sigma2);
    }
  } else {
    const double lc =
        log_stratum_prob_complier(p, e, 0) +
        normal_logpdf(y, outcome_mean(p, StratumLabel::complier, 0, 0, e),
                      p.sigma2);
    const double ln =
        log_stratum_prob_never(p, e, 0) +
        normal_logpdf(y, outcome_mean(p, StratumLabel::never_user, 0, 0, e),
                      p.sigma2);
    ll = log_sum_exp(lc, ln);
  }
  if (!std::isfinite(ll)) throw NumericError("non-finite unit log-likelihood");
  return ll;
}

inline double total_loglik(const ModelParams& p, const Dataset& ds,
                           const Eigen::VectorXd& scores) {
  if (scores.size() != ds.size())
    throw SchemaError("total_loglik: scores length mismatch");
  p.check();
  KahanSum sum;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    try {
      sum.add(unit_loglik(p, ds.z(i), ds.d(i), ds.y(i), scores[i]));
    } catch (const NumericError&) {
      throw NumericError("non-finite log-likelihood at unit " +
                         std::to_string(i));
    }
  }
  return sum.value();
}

}  // namespace pstrat
