#pragma once

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

#include "pstrat/common.hpp"
#include "pstrat/dataset.hpp"
#include "pstrat/em.hpp"
#include "pstrat/estimands.hpp"
#include "pstrat/model.hpp"
#include "pstrat/propensity.hpp"

namespace pstrat {

struct SensitivityRow {
  double eta_n = 0.0;
  bool ok = false;
  std::string error;
  ModelParams params;
  ParamSe se;
  EstimandReport estimands;
};

struct SensitivityTable {
  std::vector<SensitivityRow> rows;  // sorted by eta_n ascending
  SensitivityConfig base_config;     // eta_n field varies per row
  std::vector<double> grid;
  double aotc = 0.0;
};

struct GridOptions {
  EmOptions em{};
  LogisticOptions propensity{};
  int bootstrap_B = 500;  // 0 disables the per-row bootstrap
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

// One full fit per eta_n grid value. The propensity score does not
// depend on eta_n and is fitted once; the bootstrap inside each row
// refits it per resample. Failed rows are recorded, not dropped.
inline SensitivityTable run_grid(const Dataset& ds,
                                 const std::vector<double>& grid,
                                 const SensitivityConfig& base_config,
                                 const GridOptions& opts = {}) {
  if (grid.empty()) throw Error("sensitivity grid must be nonempty");
  std::vector<double> sorted_grid = grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());
  if (std::adjacent_find(sorted_grid.begin(), sorted_grid.end()) !=
      sorted_grid.end())
    throw Error("sensitivity grid values must be distinct");

  const PropensityFit ps = fit_propensity(ds, opts.propensity);

  SensitivityTable table;
  table.base_config = base_config;
  table.grid = sorted_grid;
  table.aotc = aotc(ds);

  int failures = 0;
  for (double eta_n : sorted_grid) {
    SensitivityRow row;
    row.eta_n = eta_n;
    SensitivityConfig config = base_config;
    config.eta_n_fixed = eta_n;
    try {
      EmOptions em = opts.em;
      em.seed = opts.seed;
      const FitResult fit = fit_em(ds, ps.scores, config, em);
      row.params = fit.params;
      row.se = fit.se;
      row.estimands = compute_estimands(fit, ds, ps.scores);
      if (opts.bootstrap_B > 0) {
        BootstrapOptions bopts;
        bopts.B = opts.bootstrap_B;
        bopts.seed = opts.seed;
        bopts.threads = opts.threads;
        bopts.propensity = opts.propensity;
        bopts.em.tol = opts.em.tol;
        bopts.em.max_iter = opts.em.max_iter;
        row.estimands.catt_se_bootstrap =
            bootstrap_catt(ds, config, bopts, fit.params).se;
      }
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
      ++failures;
    }
    table.rows.push_back(row);
  }
  if (failures == static_cast<int>(sorted_grid.size())) {
    std::string msg = "all sensitivity grid points failed:";
    for (const auto& r : table.rows)
      msg += "\n  eta_n=" + format_double(r.eta_n) + ": " + r.error;
    throw ConvergenceError(msg);
  }
  return table;
}

inline std::vector<std::pair<double, double>> reduction_table(
    const SensitivityTable& table) {
  std::vector<std::pair<double, double>> out;
  for (const auto& row : table.rows)
    if (row.ok)
      out.emplace_back(row.eta_n,
                       pct_reduction(row.estimands.catt, table.aotc));
  return out;
}

// Layout mirrors the published sensitivity tables: one column per
// eta_n value, parameter estimates with standard errors beneath.
inline void write_sensitivity_table(const SensitivityTable& table,
                                    std::ostream& out, char delim = ',') {
  out << "quantity";
  for (const auto& row : table.rows)
    out << delim << "eta_n=" << format_double(row.eta_n);
  out << "\n";

  auto emit = [&](const std::string& label, auto value, auto se) {
    out << label;
    for (const auto& row : table.rows) {
      out << delim;
      if (row.ok)
        out << format_double(value(row));
      else
        out << "failed";
    }
    out << "\n";
    out << label << "_se";
    for (const auto& row : table.rows) {
      out << delim;
      if (row.ok)
        out << format_double(se(row));
      else
        out << "failed";
    }
    out << "\n";
  };
  auto se_of = [](const SensitivityRow& row, const char* name) {
    for (std::size_t k = 0; k < row.se.names.size(); ++k)
      if (row.se.names[k] == name) return row.se.values[k];
    return std::numeric_limits<double>::quiet_NaN();
  };
  emit("alpha0", [](const SensitivityRow& r) { return r.params.alpha0; },
       [&](const SensitivityRow& r) { return se_of(r, "alpha0"); });
  emit("alpha", [](const SensitivityRow& r) { return r.params.alpha; },
       [&](const SensitivityRow& r) { return se_of(r, "alpha"); });
  emit("xi", [](const SensitivityRow& r) { return r.params.xi; },
       [&](const SensitivityRow& r) { return se_of(r, "xi"); });
  emit("cate", [](const SensitivityRow& r) { return r.estimands.cate; },
       [&](const SensitivityRow& r) { return se_of(r, "theta_c"); });
  emit("catt", [](const SensitivityRow& r) { return r.estimands.catt; },
       [](const SensitivityRow& r) { return r.estimands.catt_se_bootstrap; });

  for (const auto& row : table.rows)
    if (!row.ok)
      out << "# eta_n=" << format_double(row.eta_n) << " failed: " << row.error
          << "\n";
}

inline void write_reduction_table(const SensitivityTable& table,
                                  std::ostream& out, char delim = ',') {
  out << "quantity";
  for (const auto& row : table.rows)
    out << delim << "eta_n=" << format_double(row.eta_n);
  out << "\npct_reduction";
  for (const auto& row : table.rows) {
    out << delim;
    if (row.ok)
      out << format_double(pct_reduction(row.estimands.catt, table.aotc));
    else
      out << "failed";
  }
  out << "\naotc" << delim << format_double(table.aotc) << "\n";
}

}  // namespace pstrat
