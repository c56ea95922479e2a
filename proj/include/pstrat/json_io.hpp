#pragma once

#include <json.hpp>
#include <string>

#include "pstrat/em.hpp"
#include "pstrat/estimands.hpp"
#include "pstrat/model.hpp"
#include "pstrat/sensitivity.hpp"
#include "pstrat/simulate.hpp"

namespace pstrat {

using json = nlohmann::ordered_json;

inline json params_to_json(const ModelParams& p) {
  return json{{"alpha0", p.alpha0},   {"alpha", p.alpha},
              {"xi", p.xi},           {"beta_c0", p.beta_c0},
              {"beta_c1", p.beta_c1}, {"theta_c", p.theta_c},
              {"eta_c", p.eta_c},     {"beta_n0", p.beta_n0},
              {"beta_n1", p.beta_n1}, {"eta_n", p.eta_n},
              {"sigma2", p.sigma2}};
}

inline ModelParams params_from_json(const json& j) {
  ModelParams p;
  p.alpha0 = j.value("alpha0", 0.0);
  p.alpha = j.value("alpha", 0.0);
  p.xi = j.value("xi", 0.0);
  p.beta_c0 = j.value("beta_c0", 0.0);
  p.beta_c1 = j.value("beta_c1", 0.0);
  p.theta_c = j.value("theta_c", 0.0);
  p.eta_c = j.value("eta_c", 0.0);
  p.beta_n0 = j.value("beta_n0", 0.0);
  p.beta_n1 = j.value("beta_n1", 0.0);
  p.eta_n = j.value("eta_n", 0.0);
  p.sigma2 = j.value("sigma2", 1.0);
  p.check();
  return p;
}

inline GeneratorSpec generator_spec_from_json(const json& j) {
  GeneratorSpec spec;
  if (!j.contains("n")) throw ParseError("generator spec: missing field 'n'");
  spec.n = j.at("n").get<Eigen::Index>();
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.span_label = j.value("span_label", std::string{});
  if (!j.contains("covariates"))
    throw ParseError("generator spec: missing field 'covariates'");
  for (const auto& jc : j.at("covariates")) {
    CovariateSpec c;
    c.name = jc.value("name", std::string{});
    const std::string dist = jc.value("distribution", "standard_normal");
    if (dist == "standard_normal") {
      c.kind = CovariateSpec::Kind::standard_normal;
    } else if (dist == "bernoulli") {
      c.kind = CovariateSpec::Kind::bernoulli;
      c.p = jc.value("p", 0.5);
    } else if (dist == "uniform") {
      c.kind = CovariateSpec::Kind::uniform;
      c.a = jc.value("a", 0.0);
      c.b = jc.value("b", 1.0);
    } else {
      throw ParseError("generator spec: covariates." + c.name +
                       ": unknown distribution '" + dist + "'");
    }
    spec.covariates.push_back(c);
  }
  if (!j.contains("ps_coefficients"))
    throw ParseError("generator spec: missing field 'ps_coefficients'");
  const auto& coefs = j.at("ps_coefficients");
  spec.ps_coefficients.resize(static_cast<Eigen::Index>(coefs.size()));
  for (std::size_t k = 0; k < coefs.size(); ++k)
    spec.ps_coefficients[static_cast<Eigen::Index>(k)] = coefs[k].get<double>();
  if (!j.contains("true_params"))
    throw ParseError("generator spec: missing field 'true_params'");
  spec.true_params = params_from_json(j.at("true_params"));
  spec.check();
  return spec;
}

inline json se_to_json(const ParamSe& se) {
  json out = json::object();
  for (std::size_t k = 0; k < se.names.size(); ++k)
    out[se.names[k]] = se.values[k];
  return out;
}

inline json estimands_to_json(const EstimandReport& rep) {
  return json{{"cate", rep.cate},
              {"catt", rep.catt},
              {"catt_se_bootstrap", rep.catt_se_bootstrap},
              {"aotc", rep.aotc},
              {"pct_reduction", rep.pct_reduction},
              {"prob_never_treated_model", rep.prob_never_treated_model},
              {"prob_never_treated_moment", rep.prob_never_treated_moment}};
}

inline json fit_to_json(const FitResult& fit) {
  return json{{"converged", fit.converged},
              {"log_likelihood", fit.log_likelihood()},
              {"iterations", fit.loglik_trace.size() - 1},
              {"restarts_used", fit.restarts_used},
              {"failed_restarts", fit.restart_errors.size()},
              {"params", params_to_json(fit.params)},
              {"se", se_to_json(fit.se)}};
}

inline json sensitivity_to_json(const SensitivityTable& table) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    json jr{{"eta_n", row.eta_n}, {"ok", row.ok}};
    if (row.ok) {
      jr["params"] = params_to_json(row.params);
      jr["se"] = se_to_json(row.se);
      jr["estimands"] = estimands_to_json(row.estimands);
    } else {
      jr["error"] = row.error;
    }
    rows.push_back(jr);
  }
  return json{{"aotc", table.aotc}, {"rows", rows}};
}

}  // namespace pstrat
