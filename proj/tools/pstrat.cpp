// Batch front end: balance / fit / sensitivity / simulate subcommands.
// Every run writes its fully-resolved configuration next to the outputs
// so analyses can be replayed.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pstrat/json_io.hpp"
#include "pstrat/pstrat.hpp"

namespace fs = std::filesystem;
using pstrat::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitIo = 4;

struct IoError : pstrat::Error {
  using Error::Error;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open output file: " + path.string());
  return out;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open input file: " + path.string());
  return in;
}

struct CommonOpts {
  std::string input;
  std::string out_dir = ".";
  std::string config_file;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct FitOpts {
  std::string xi = "free";
  double eta_c = 0.0;
  std::string eta_n = "0";
  int bootstrap = 500;
  double tol = 1e-8;
  int max_iter = 2000;
  int restarts = 5;
  double ridge = 0.0;
  double trim = 0.0;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_input = true) {
  auto* in = cmd->add_option("--input", o.input, "input dataset CSV");
  if (needs_input) in->required();
  cmd->add_option("--out", o.out_dir, "output directory")
      ->capture_default_str();
  cmd->add_option("--config", o.config_file,
                  "JSON config file; flags override its values");
  cmd->add_option("--seed", o.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)")
      ->capture_default_str();
}

void add_fit_flags(CLI::App* cmd, FitOpts& o, bool grid_eta_n) {
  cmd->add_option("--xi", o.xi, "'free' or a fixed numeric value")
      ->capture_default_str();
  cmd->add_option("--eta-c", o.eta_c, "fixed complier Y-confounding")
      ->capture_default_str();
  if (grid_eta_n) {
    o.eta_n = "-400,-200,0,200,400";
    cmd->add_option("--eta-n", o.eta_n, "comma-separated eta_n grid")
        ->capture_default_str();
  } else {
    cmd->add_option("--eta-n", o.eta_n, "fixed never-user Y-confounding")
        ->capture_default_str();
  }
  cmd->add_option("--bootstrap", o.bootstrap,
                  "bootstrap replicates for the CATT SE (0 disables)")
      ->capture_default_str();
  cmd->add_option("--tol", o.tol, "EM relative log-likelihood tolerance")
      ->capture_default_str();
  cmd->add_option("--max-iter", o.max_iter, "EM iteration cap")
      ->capture_default_str();
  cmd->add_option("--restarts", o.restarts, "EM random restarts")
      ->capture_default_str();
  cmd->add_option("--ridge", o.ridge, "ridge penalty for the propensity fit")
      ->capture_default_str();
  cmd->add_option("--trim", o.trim,
                  "drop units with fitted score outside [t, 1-t]")
      ->capture_default_str();
}

// Precedence: built-in defaults < config file < explicit flags.
void apply_config_file(const CLI::App* cmd, const std::string& path,
                       CommonOpts& c, FitOpts& f) {
  if (path.empty()) return;
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw pstrat::ParseError(std::string("config file: ") + e.what());
  }
  auto flag_given = [&](const std::string& name) {
    const auto* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  auto pull = [&](const char* key, const std::string& flag, auto& target) {
    if (j.contains(key) && !flag_given(flag))
      target = j.at(key).get<std::decay_t<decltype(target)>>();
  };
  pull("seed", "--seed", c.seed);
  pull("threads", "--threads", c.threads);
  pull("xi", "--xi", f.xi);
  pull("eta_c", "--eta-c", f.eta_c);
  pull("eta_n", "--eta-n", f.eta_n);
  pull("bootstrap", "--bootstrap", f.bootstrap);
  pull("tol", "--tol", f.tol);
  pull("max_iter", "--max-iter", f.max_iter);
  pull("restarts", "--restarts", f.restarts);
  pull("ridge", "--ridge", f.ridge);
  pull("trim", "--trim", f.trim);
}

pstrat::SensitivityConfig make_config(const FitOpts& f, double eta_n) {
  pstrat::SensitivityConfig config;
  if (f.xi == "free") {
    config.xi_mode = pstrat::SensitivityConfig::XiMode::free;
  } else {
    config.xi_mode = pstrat::SensitivityConfig::XiMode::fixed;
    try {
      config.xi_fixed = std::stod(f.xi);
    } catch (const std::exception&) {
      throw pstrat::ParseError("--xi must be 'free' or a number, got '" +
                               f.xi + "'");
    }
  }
  config.eta_c_fixed = f.eta_c;
  config.eta_n_fixed = eta_n;
  return config;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> grid;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      grid.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw pstrat::ParseError("cannot parse grid value '" + tok + "'");
    }
  }
  if (grid.empty()) throw pstrat::ParseError("empty eta_n grid");
  return grid;
}

pstrat::Dataset load_validated(const CommonOpts& c) {
  auto in = open_input(c.input);
  pstrat::Dataset ds = pstrat::load_dataset(in);
  const auto report = pstrat::validate(ds);
  if (!report.ok())
    throw pstrat::ValidationError("input failed validation:\n" +
                                  report.describe());
  return ds;
}

json common_to_json(const std::string& subcommand, const CommonOpts& c) {
  return json{{"subcommand", subcommand}, {"input", c.input},
              {"out", c.out_dir},         {"seed", c.seed},
              {"threads", c.threads},     {"config_file", c.config_file}};
}

void append_fit_json(json& j, const FitOpts& f) {
  j["xi"] = f.xi;
  j["eta_c"] = f.eta_c;
  j["eta_n"] = f.eta_n;
  j["bootstrap"] = f.bootstrap;
  j["tol"] = f.tol;
  j["max_iter"] = f.max_iter;
  j["restarts"] = f.restarts;
  j["ridge"] = f.ridge;
  j["trim"] = f.trim;
}

void write_resolved_config(const json& j, const fs::path& out_dir) {
  auto out = open_output(out_dir / "resolved_config.json");
  out << j.dump(2) << "\n";
}

// Trim by fitted score, then refit the propensity on the kept sample.
std::pair<pstrat::Dataset, pstrat::PropensityFit> propensity_stage(
    const pstrat::Dataset& ds, const FitOpts& f, json& resolved) {
  pstrat::LogisticOptions lopts;
  lopts.ridge = f.ridge;
  pstrat::PropensityFit ps = pstrat::fit_propensity(ds, lopts);
  if (f.trim <= 0.0) {
    resolved["trimmed_units"] = 0;
    return {ds, std::move(ps)};
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    if (ps.scores[i] >= f.trim && ps.scores[i] <= 1.0 - f.trim)
      keep.push_back(i);
  resolved["trimmed_units"] = static_cast<int>(ds.size()) -
                              static_cast<int>(keep.size());
  pstrat::Dataset trimmed = ds.resample(keep);
  return {trimmed, pstrat::fit_propensity(trimmed, lopts)};
}

int run_balance(const CommonOpts& c, const FitOpts& f, const CLI::App*) {
  fs::create_directories(c.out_dir);
  pstrat::Dataset ds = load_validated(c);
  pstrat::LogisticOptions lopts;
  lopts.ridge = f.ridge;
  const auto ps = pstrat::fit_propensity(ds, lopts);
  const auto report = pstrat::balance(ds, ps.scores);

  auto asd_out = open_output(fs::path(c.out_dir) / "balance_asd.csv");
  pstrat::write_balance_table(report, asd_out);
  auto hist_out = open_output(fs::path(c.out_dir) / "overlap_hist.csv");
  pstrat::write_overlap_histogram(report, hist_out);

  json resolved = common_to_json("balance", c);
  resolved["ridge"] = f.ridge;
  write_resolved_config(resolved, c.out_dir);
  return 0;
}

int run_fit(const CommonOpts& c, const FitOpts& f, const CLI::App*) {
  fs::create_directories(c.out_dir);
  pstrat::Dataset raw = load_validated(c);
  json resolved = common_to_json("fit", c);
  append_fit_json(resolved, f);

  auto [ds, ps] = propensity_stage(raw, f, resolved);
  double eta_n = 0.0;
  try {
    eta_n = std::stod(f.eta_n);
  } catch (const std::exception&) {
    throw pstrat::ParseError("--eta-n must be numeric for fit, got '" +
                             f.eta_n + "'");
  }
  const auto config = make_config(f, eta_n);
  pstrat::EmOptions em;
  em.tol = f.tol;
  em.max_iter = f.max_iter;
  em.n_restarts = f.restarts;
  em.seed = c.seed;
  const auto fit = pstrat::fit_em(ds, ps.scores, config, em);
  auto estimands = pstrat::compute_estimands(fit, ds, ps.scores);
  if (f.bootstrap > 0) {
    pstrat::BootstrapOptions bopts;
    bopts.B = f.bootstrap;
    bopts.seed = c.seed;
    bopts.threads = c.threads;
    bopts.propensity.ridge = f.ridge;
    bopts.em.tol = f.tol;
    bopts.em.max_iter = f.max_iter;
    estimands.catt_se_bootstrap =
        pstrat::bootstrap_catt(ds, config, bopts, fit.params).se;
  }

  auto report_out = open_output(fs::path(c.out_dir) / "fit_report.txt");
  pstrat::write_fit_report(fit, report_out);
  auto params_out = open_output(fs::path(c.out_dir) / "params.txt");
  pstrat::write_params(fit.params, params_out);
  auto est_out = open_output(fs::path(c.out_dir) / "estimands.csv");
  pstrat::write_estimand_header(est_out);
  pstrat::write_estimand_row(estimands, est_out);
  auto json_out = open_output(fs::path(c.out_dir) / "fit.json");
  json jfit = pstrat::fit_to_json(fit);
  jfit["estimands"] = pstrat::estimands_to_json(estimands);
  json_out << jfit.dump(2) << "\n";

  write_resolved_config(resolved, c.out_dir);
  return 0;
}

int run_sensitivity(const CommonOpts& c, const FitOpts& f, const CLI::App*) {
  fs::create_directories(c.out_dir);
  pstrat::Dataset raw = load_validated(c);
  json resolved = common_to_json("sensitivity", c);
  append_fit_json(resolved, f);

  auto [ds, ps] = propensity_stage(raw, f, resolved);
  (void)ps;  // run_grid refits on the (possibly trimmed) sample
  const auto grid = parse_grid(f.eta_n);
  const auto base_config = make_config(f, 0.0);
  pstrat::GridOptions gopts;
  gopts.em.tol = f.tol;
  gopts.em.max_iter = f.max_iter;
  gopts.em.n_restarts = f.restarts;
  gopts.propensity.ridge = f.ridge;
  gopts.bootstrap_B = f.bootstrap;
  gopts.seed = c.seed;
  gopts.threads = c.threads;
  const auto table = pstrat::run_grid(ds, grid, base_config, gopts);

  auto table_out = open_output(fs::path(c.out_dir) / "sensitivity_table.csv");
  pstrat::write_sensitivity_table(table, table_out);
  auto red_out = open_output(fs::path(c.out_dir) / "reduction_table.csv");
  pstrat::write_reduction_table(table, red_out);
  auto json_out = open_output(fs::path(c.out_dir) / "sensitivity.json");
  json_out << pstrat::sensitivity_to_json(table).dump(2) << "\n";

  write_resolved_config(resolved, c.out_dir);
  return 0;
}

int run_simulate(const CommonOpts& c, const std::string& spec_path,
                 const CLI::App* cmd) {
  fs::create_directories(c.out_dir);
  auto spec_in = open_input(spec_path);
  json jspec;
  try {
    jspec = json::parse(spec_in);
  } catch (const std::exception& e) {
    throw pstrat::ParseError(std::string("generator spec: ") + e.what());
  }
  auto spec = pstrat::generator_spec_from_json(jspec);
  const auto* seed_opt = cmd->get_option_no_throw("--seed");
  if (seed_opt != nullptr && seed_opt->count() > 0) spec.seed = c.seed;

  const auto [ds, truth] = pstrat::generate(spec);
  auto data_out = open_output(fs::path(c.out_dir) / "dataset.csv");
  pstrat::write_csv(ds, data_out);
  auto truth_out = open_output(fs::path(c.out_dir) / "truth.csv");
  pstrat::write_truth_csv(truth, truth_out);

  json resolved = common_to_json("simulate", c);
  resolved["spec"] = spec_path;
  resolved["resolved_seed"] = spec.seed;
  write_resolved_config(resolved, c.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Principal-stratification treatment effect estimation"};
  app.require_subcommand(1);

  CommonOpts cb, cf, cs, cm;
  FitOpts fb, ff, fs_;
  std::string spec_path;

  auto* balance_cmd = app.add_subcommand("balance",
      "covariate balance and propensity overlap diagnostics");
  add_common(balance_cmd, cb);
  balance_cmd->add_option("--ridge", fb.ridge, "propensity ridge penalty")
      ->capture_default_str();

  auto* fit_cmd = app.add_subcommand("fit",
      "fit the model and report the estimands");
  add_common(fit_cmd, cf);
  add_fit_flags(fit_cmd, ff, false);

  auto* sens_cmd = app.add_subcommand("sensitivity",
      "sweep eta_n and assemble the sensitivity tables");
  add_common(sens_cmd, cs);
  add_fit_flags(sens_cmd, fs_, true);

  auto* sim_cmd = app.add_subcommand("simulate",
      "generate a synthetic dataset from a generator spec");
  add_common(sim_cmd, cm, false);
  sim_cmd->add_option("--spec", spec_path, "generator spec JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (balance_cmd->parsed()) {
      apply_config_file(balance_cmd, cb.config_file, cb, fb);
      return run_balance(cb, fb, balance_cmd);
    }
    if (fit_cmd->parsed()) {
      apply_config_file(fit_cmd, cf.config_file, cf, ff);
      return run_fit(cf, ff, fit_cmd);
    }
    if (sens_cmd->parsed()) {
      apply_config_file(sens_cmd, cs.config_file, cs, fs_);
      return run_sensitivity(cs, fs_, sens_cmd);
    }
    if (sim_cmd->parsed()) {
      apply_config_file(sim_cmd, cm.config_file, cm, fb);
      return run_simulate(cm, spec_path, sim_cmd);
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const pstrat::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const pstrat::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const pstrat::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const pstrat::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const pstrat::SeparationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const pstrat::SingularError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const pstrat::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
