#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pstrat {

class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input stream (bad row, unparseable number).
class ParseError : public Error {
  using Error::Error;
};

// Header/column structure does not match the expected schema.
class SchemaError : public Error {
  using Error::Error;
};

// Structural assumption of the design is violated (e.g. z=0 with d=1).
class ValidationError : public Error {
  using Error::Error;
};

// Iterative solver hit its iteration cap without meeting tolerance.
class ConvergenceError : public Error {
  using Error::Error;
};

// Quasi-complete separation in a logistic fit.
class SeparationError : public Error {
  using Error::Error;
};

// Singular design / information matrix.
class SingularError : public Error {
  using Error::Error;
};

// Non-finite value produced where a finite one is required.
class NumericError : public Error {
  using Error::Error;
};

// An estimand is undefined on the given data (e.g. no treated compliers).
class EstimandError : public Error {
  using Error::Error;
};

inline double expit(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

// log(expit(t))
inline double log_expit(double t) { return -softplus(-t); }

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Compensated summation; keeps rounding error near eps*|sum| even for
// long unit-level log-likelihood sums.
class KahanSum {
 public:
  void add(double x) {
    const double y = x - carry_;
    const double t = sum_ + y;
    carry_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

// Deterministic stream splitting: one generator per (seed, stream) pair.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

// Static strided parallel loop; per-index outputs must go to disjoint
// slots so the reduction order stays deterministic.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& body) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Shortest decimal form that round-trips a double.
inline std::string format_double(double v) {
  char buf[40];
  if (std::isfinite(v) && v == std::nearbyint(v) && std::abs(v) < 1e15) {
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  for (int prec = 1; prec <= 16; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}

}  // namespace pstrat
