#include <doctest.h>

#include <cmath>

#include "pstrat/propensity.hpp"
#include "test_util.hpp"

using namespace pstrat;

TEST_CASE("intercept-only fit with balanced labels gives 0.5 scores") {
  const Eigen::Index n = 40;
  Eigen::MatrixXd features(n, 0);
  Eigen::VectorXi labels(n);
  for (Eigen::Index i = 0; i < n; ++i) labels[i] = i % 2;
  auto fit = fit_logistic(features, labels);
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(fit.scores[0] == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("slope vanishes when labels are independent of x") {
  const Eigen::Index n = 20000;
  auto rng = make_rng(7, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd features(n, 1);
  Eigen::VectorXi labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    features(i, 0) = (i % 2 == 0) ? -1.0 : 1.0;
    labels[i] = unif(rng) < 0.5 ? 1 : 0;
  }
  auto fit = fit_logistic(features, labels);
  // slope MLE is ~N(0, 4/n) here; 4 sd margin
  CHECK(std::abs(fit.coefficients[1]) < 4.0 * 2.0 / std::sqrt(double(n)));
}

TEST_CASE("recovers true coefficients within 3 standard errors") {
  const Eigen::Index n = 10000;
  auto rng = make_rng(11, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd features(n, 1);
  Eigen::VectorXi labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    features(i, 0) = normal(rng);
    labels[i] = unif(rng) < expit(-1.5 + 2.0 * features(i, 0)) ? 1 : 0;
  }
  auto fit = fit_logistic(features, labels);
  // SEs from the inverse observed information, built independently here
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = features.col(0);
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(2, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = fit.scores[i];
    info += p * (1.0 - p) * design.row(i).transpose() * design.row(i);
  }
  Eigen::VectorXd se = info.inverse().diagonal().cwiseSqrt();
  CHECK(std::abs(fit.coefficients[0] - (-1.5)) < 3.0 * se[0]);
  CHECK(std::abs(fit.coefficients[1] - 2.0) < 3.0 * se[1]);
}

TEST_CASE("predict_score closed forms") {
  PropensityFit fit;
  fit.coefficients = Eigen::Vector2d(0.0, 0.0);
  Eigen::VectorXd x(1);
  x << 3.7;
  CHECK(predict_score(fit, x) == doctest::Approx(0.5));

  fit.coefficients = Eigen::Vector2d(0.0, 1.0);
  x << 0.0;
  CHECK(predict_score(fit, x) == doctest::Approx(0.5));
  x << std::log(3.0);
  CHECK(predict_score(fit, x) == doctest::Approx(0.75).epsilon(1e-12));

  Eigen::VectorXd wrong(2);
  CHECK_THROWS_AS(predict_score(fit, wrong), SchemaError);
}

TEST_CASE("log-likelihood trace is nondecreasing over IRLS iterations") {
  auto ds = testutil::random_dataset(300, 3, 5);
  Eigen::MatrixXd design(ds.size(), 4);
  design.col(0).setOnes();
  design.rightCols(3) = ds.covariates();
  auto fit = fit_logistic_weighted(design, ds.treatment().cast<double>(),
                                   Eigen::VectorXd::Ones(ds.size()),
                                   Eigen::VectorXd::Zero(ds.size()));
  for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
    CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1] - 1e-12);
}

TEST_CASE("analytic gradient matches finite differences at the optimum") {
  auto ds = testutil::random_dataset(400, 2, 21);
  auto fit = fit_propensity(ds);
  Eigen::MatrixXd design(ds.size(), 3);
  design.col(0).setOnes();
  design.rightCols(2) = ds.covariates();
  const Eigen::VectorXd t = ds.treatment().cast<double>();
  auto loglik = [&](const Eigen::VectorXd& beta) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      const double eta = design.row(i).dot(beta);
      ll += t[i] * eta - softplus(eta);
    }
    return ll;
  };
  Eigen::VectorXd analytic =
      design.transpose() * (t - fit.scores);
  const double scale = std::abs(loglik(fit.coefficients)) + 1.0;
  for (Eigen::Index j = 0; j < 3; ++j) {
    Eigen::VectorXd hi = fit.coefficients, lo = fit.coefficients;
    const double h = 1e-6;
    hi[j] += h;
    lo[j] -= h;
    const double fd = (loglik(hi) - loglik(lo)) / (2.0 * h);
    CHECK(std::abs(fd - analytic[j]) <= 1e-5 * scale);
  }
}

TEST_CASE("mean fitted score equals the label share") {
  auto ds = testutil::random_dataset(500, 2, 31);
  auto fit = fit_propensity(ds);
  const double share =
      ds.treatment().cast<double>().mean();
  CHECK(fit.scores.mean() == doctest::Approx(share).epsilon(1e-8));
}

TEST_CASE("perfect separation raises SeparationError") {
  const Eigen::Index n = 40;
  Eigen::MatrixXd features(n, 1);
  Eigen::VectorXi labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    features(i, 0) = i < n / 2 ? -1.0 : 1.0;
    labels[i] = i < n / 2 ? 0 : 1;
  }
  CHECK_THROWS_AS(fit_logistic(features, labels, LogisticOptions{500, 1e-8, 0.0}),
                  SeparationError);
  // a small ridge stabilizes the same data
  auto fit = fit_logistic(features, labels, LogisticOptions{500, 1e-8, 0.1});
  CHECK(fit.converged);
  CHECK(fit.ridge == 0.1);
}

TEST_CASE("balance reproduces the standardized-difference formula") {
  Eigen::VectorXi z(8), d(8);
  z << 1, 1, 1, 1, 0, 0, 0, 0;
  d.setZero();
  d[0] = 1;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(8);
  Eigen::MatrixXd x(8, 2);
  // identical distribution in both arms for column 0
  x.col(0) << 1, 2, 3, 4, 1, 2, 3, 4;
  x.col(1) << 1, 2, 3, 4, 5, 6, 7, 8;
  Dataset ds(z, d, y, x, {"same", "shifted"});
  Eigen::VectorXd scores = Eigen::VectorXd::Constant(8, 0.5);
  auto rep = balance(ds, scores);
  CHECK(rep.asd[0] == doctest::Approx(0.0));
  // arm means 2.5 and 6.5, var 5/3 each arm of 4
  const double denom = std::sqrt(5.0 / 3.0 / 4.0 + 5.0 / 3.0 / 4.0);
  CHECK(rep.asd[1] == doctest::Approx(4.0 / denom).epsilon(1e-12));
  CHECK(rep.treated.counts.sum() == 4);
  CHECK(rep.control.counts.sum() == 4);
}

TEST_CASE("balance equals a brute-force two-pass oracle") {
  auto ds = testutil::random_dataset(250, 4, 77);
  Eigen::VectorXd scores = Eigen::VectorXd::Constant(250, 0.4);
  auto rep = balance(ds, scores);
  for (Eigen::Index j = 0; j < 4; ++j) {
    double m1 = 0, m0 = 0;
    Eigen::Index n1 = 0, n0 = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      if (ds.z(i) == 1) {
        m1 += ds.covariates()(i, j);
        ++n1;
      } else {
        m0 += ds.covariates()(i, j);
        ++n0;
      }
    }
    m1 /= n1;
    m0 /= n0;
    double v1 = 0, v0 = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
      const double dev = ds.covariates()(i, j) - (ds.z(i) == 1 ? m1 : m0);
      if (ds.z(i) == 1)
        v1 += dev * dev;
      else
        v0 += dev * dev;
    }
    v1 /= (n1 - 1);
    v0 /= (n0 - 1);
    const double expected =
        std::abs(m1 - m0) / std::sqrt(v1 / n1 + v0 / n0);
    CHECK(rep.asd[j] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("degenerate covariates flagged with 0 or infinity") {
  Eigen::VectorXi z(6), d(6);
  z << 1, 1, 1, 0, 0, 0;
  d.setZero();
  d[0] = 1;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(6);
  Eigen::MatrixXd x(6, 2);
  x.col(0).setConstant(2.0);             // equal means, zero variance
  x.col(1) << 1, 1, 1, 2, 2, 2;          // differing means, zero variance
  Dataset ds(z, d, y, x, {"flat", "split"});
  auto rep = balance(ds, Eigen::VectorXd::Constant(6, 0.5));
  CHECK(rep.asd[0] == 0.0);
  CHECK(std::isinf(rep.asd[1]));
  CHECK(rep.degenerate == std::vector<Eigen::Index>{0, 1});
}
