#pragma once

#include <Eigen/Core>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"
#include "pstrat/model.hpp"

namespace pstrat {

struct CovariateSpec {
  enum class Kind { standard_normal, bernoulli, uniform };
  std::string name;
  Kind kind = Kind::standard_normal;
  double p = 0.5;  // bernoulli
  double a = 0.0;  // uniform lower
  double b = 1.0;  // uniform upper

  void check() const {
    if (name.empty()) throw ValidationError("covariate needs a name");
    if (kind == Kind::bernoulli && (p < 0.0 || p > 1.0))
      throw ValidationError("bernoulli p out of [0,1] for " + name);
    if (kind == Kind::uniform && !(a < b))
      throw ValidationError("uniform bounds need a < b for " + name);
  }
};

struct GeneratorSpec {
  Eigen::Index n = 0;
  std::vector<CovariateSpec> covariates;
  Eigen::VectorXd ps_coefficients;  // intercept + one per covariate
  ModelParams true_params;          // xi/eta entries are the confounding truth
  std::uint64_t seed = 0;
  std::string span_label;

  void check() const {
    if (n < 1) throw ValidationError("generator needs n >= 1");
    if (covariates.empty()) throw ValidationError("generator needs covariates");
    for (const auto& c : covariates) c.check();
    if (ps_coefficients.size() !=
        static_cast<Eigen::Index>(covariates.size()) + 1)
      throw ValidationError(
          "ps_coefficients must have intercept + one entry per covariate");
    true_params.check();
  }
};

struct TruthRecord {
  std::vector<StratumLabel> stratum;
  Eigen::VectorXd mu1;  // mean of Y(1) in the factual world (z2 = 1)
  Eigen::VectorXd mu0;  // mean of Y(0) in the factual world (z2 = 0)
  Eigen::VectorXd true_score;
};

// Generative cascade with known parameters: X, true e(x),
// Z ~ Bernoulli(e), S from the xi-augmented stratum model, Y Normal
// around the stratum mean with the eta terms applied at the observed
// treatment. D = 1 iff Z = 1 and S = complier, so monotonicity holds by
// construction.
inline std::pair<Dataset, TruthRecord> generate(const GeneratorSpec& spec) {
  spec.check();
  auto rng = make_rng(spec.seed, 0xda7a5e7ULL);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const Eigen::Index n = spec.n;
  const auto p = static_cast<Eigen::Index>(spec.covariates.size());
  Eigen::VectorXi z(n), d(n);
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, p);
  TruthRecord truth;
  truth.stratum.resize(n);
  truth.mu1.resize(n);
  truth.mu0.resize(n);
  truth.true_score.resize(n);

  const double sigma = std::sqrt(spec.true_params.sigma2);
  std::vector<std::string> schema;
  for (const auto& c : spec.covariates) schema.push_back(c.name);

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& c = spec.covariates[j];
      switch (c.kind) {
        case CovariateSpec::Kind::standard_normal:
          x(i, j) = std_normal(rng);
          break;
        case CovariateSpec::Kind::bernoulli:
          x(i, j) = unif(rng) < c.p ? 1.0 : 0.0;
          break;
        case CovariateSpec::Kind::uniform:
          x(i, j) = c.a + (c.b - c.a) * unif(rng);
          break;
      }
    }
    const double e = expit(spec.ps_coefficients[0] +
                           spec.ps_coefficients.tail(p).dot(x.row(i)));
    truth.true_score[i] = e;
    z[i] = unif(rng) < e ? 1 : 0;
    const double p_never = stratum_prob_never(spec.true_params, e, z[i]);
    const StratumLabel s = unif(rng) < p_never ? StratumLabel::never_user
                                               : StratumLabel::complier;
    truth.stratum[i] = s;
    truth.mu1[i] = outcome_mean(spec.true_params, s, 1, 1, e);
    truth.mu0[i] = outcome_mean(spec.true_params, s, 0, 0, e);
    const double mean = outcome_mean(spec.true_params, s, z[i], z[i], e);
    y[i] = mean + sigma * std_normal(rng);
    d[i] = (z[i] == 1 && s == StratumLabel::complier) ? 1 : 0;
  }

  Dataset ds(std::move(z), std::move(d), std::move(y), std::move(x),
             std::move(schema), spec.span_label);
  return {std::move(ds), std::move(truth)};
}

// Average factual-world mean difference over treated compliers; equals
// theta_c + eta_c for any draw.
inline double true_catt(const Dataset& ds, const TruthRecord& truth) {
  KahanSum sum;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.z(i) == 1 && truth.stratum[i] == StratumLabel::complier) {
      sum.add(truth.mu1[i] - truth.mu0[i]);
      ++count;
    }
  }
  if (count == 0)
    throw EstimandError("true CATT undefined: no treated compliers drawn");
  return sum.value() / static_cast<double>(count);
}

inline void write_truth_csv(const TruthRecord& truth, std::ostream& out,
                            char delim = ',') {
  out << "unit" << delim << "stratum" << delim << "mu1" << delim << "mu0"
      << delim << "true_score" << "\n";
  for (Eigen::Index i = 0; i < truth.mu1.size(); ++i) {
    out << i << delim
        << (truth.stratum[i] == StratumLabel::complier ? "complier"
                                                       : "never_user")
        << delim << format_double(truth.mu1[i]) << delim
        << format_double(truth.mu0[i]) << delim
        << format_double(truth.true_score[i]) << "\n";
  }
}

}  // namespace pstrat
