#pragma once

#include <Eigen/Core>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pstrat/common.hpp"

namespace pstrat {

enum class StratumLabel { complier, never_user };

struct Unit {
  int z = 0;
  int d = 0;
  double y = 0.0;
  Eigen::VectorXd x;
};

// One row per household: treatment z, usage d, outcome y, covariates x.
// Immutable after construction; shareable across threads.
class Dataset {
 public:
  Dataset(Eigen::VectorXi z, Eigen::VectorXi d, Eigen::VectorXd y,
          Eigen::MatrixXd x, std::vector<std::string> schema,
          std::string span_label = "")
      : z_(std::move(z)),
        d_(std::move(d)),
        y_(std::move(y)),
        x_(std::move(x)),
        schema_(std::move(schema)),
        span_label_(std::move(span_label)) {
    const Eigen::Index n = z_.size();
    if (d_.size() != n || y_.size() != n || x_.rows() != n)
      throw SchemaError("dataset columns have mismatched lengths");
    if (static_cast<std::size_t>(x_.cols()) != schema_.size())
      throw SchemaError("covariate matrix width does not match schema");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (z_[i] != 0 && z_[i] != 1)
        throw ValidationError("row " + std::to_string(i) + ": z not in {0,1}");
      if (d_[i] != 0 && d_[i] != 1)
        throw ValidationError("row " + std::to_string(i) + ": d not in {0,1}");
      if (!std::isfinite(y_[i]))
        throw ValidationError("row " + std::to_string(i) + ": y not finite");
    }
    if (!x_.allFinite())
      throw ValidationError("covariate matrix contains non-finite values");
  }

  Eigen::Index size() const { return z_.size(); }
  Eigen::Index n_covariates() const { return x_.cols(); }

  int z(Eigen::Index i) const { return z_[i]; }
  int d(Eigen::Index i) const { return d_[i]; }
  double y(Eigen::Index i) const { return y_[i]; }
  Eigen::MatrixXd::ConstRowXpr x(Eigen::Index i) const { return x_.row(i); }

  const Eigen::VectorXi& treatment() const { return z_; }
  const Eigen::VectorXi& usage() const { return d_; }
  const Eigen::VectorXd& outcome() const { return y_; }
  const Eigen::MatrixXd& covariates() const { return x_; }
  const std::vector<std::string>& schema() const { return schema_; }
  const std::string& span_label() const { return span_label_; }

  Unit unit(Eigen::Index i) const {
    return Unit{z_[i], d_[i], y_[i], x_.row(i).transpose()};
  }

  Eigen::Index treated_count() const { return z_.sum(); }
  double treated_share() const {
    return static_cast<double>(treated_count()) / static_cast<double>(size());
  }

  // For z=1 units the stratum is observed through d.
  StratumLabel observed_stratum(Eigen::Index i) const {
    return d_[i] == 1 ? StratumLabel::complier : StratumLabel::never_user;
  }

  Dataset resample(const std::vector<Eigen::Index>& rows) const {
    const auto m = static_cast<Eigen::Index>(rows.size());
    Eigen::VectorXi z(m), d(m);
    Eigen::VectorXd y(m);
    Eigen::MatrixXd x(m, x_.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      z[i] = z_[rows[i]];
      d[i] = d_[rows[i]];
      y[i] = y_[rows[i]];
      x.row(i) = x_.row(rows[i]);
    }
    return Dataset(std::move(z), std::move(d), std::move(y), std::move(x),
                   schema_, span_label_);
  }

 private:
  Eigen::VectorXi z_;
  Eigen::VectorXi d_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::vector<std::string> schema_;
  std::string span_label_;
};

struct ValidationReport {
  std::vector<Eigen::Index> monotonicity_rows;  // z=0 with d=1
  bool treated_empty = false;
  bool control_empty = false;
  bool no_never_users_among_treated = false;
  bool no_compliers_among_treated = false;
  std::vector<Eigen::Index> constant_covariates;  // flagged, not fatal

  bool ok() const {
    return monotonicity_rows.empty() && !treated_empty && !control_empty &&
           !no_never_users_among_treated && !no_compliers_among_treated;
  }

  std::string describe() const {
    std::ostringstream os;
    for (auto r : monotonicity_rows)
      os << "row " << r << ": d=1 with z=0 (monotonicity violation)\n";
    if (treated_empty) os << "no treated units (z=1 arm empty)\n";
    if (control_empty) os << "no control units (z=0 arm empty)\n";
    if (no_never_users_among_treated)
      os << "no never-users among treated (all z=1 units have d=1)\n";
    if (no_compliers_among_treated)
      os << "no compliers among treated (all z=1 units have d=0)\n";
    for (auto c : constant_covariates)
      os << "covariate column " << c << " is constant\n";
    return os.str();
  }
};

inline ValidationReport validate(const Dataset& ds) {
  ValidationReport rep;
  Eigen::Index n1 = 0, n0 = 0, treated_users = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.z(i) == 0 && ds.d(i) == 1) rep.monotonicity_rows.push_back(i);
    if (ds.z(i) == 1) {
      ++n1;
      treated_users += ds.d(i);
    } else {
      ++n0;
    }
  }
  rep.treated_empty = (n1 == 0);
  rep.control_empty = (n0 == 0);
  rep.no_never_users_among_treated = (n1 > 0 && treated_users == n1);
  rep.no_compliers_among_treated = (n1 > 0 && treated_users == 0);
  for (Eigen::Index j = 0; j < ds.n_covariates(); ++j) {
    const auto col = ds.covariates().col(j);
    if ((col.array() == col[0]).all()) rep.constant_covariates.push_back(j);
  }
  return rep;
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, Eigen::Index row,
                           const std::string& col) {
  if (s.empty())
    throw ParseError("row " + std::to_string(row) + ": missing value in column " + col);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(row) + ": cannot parse '" + s +
                     "' in column " + col);
  }
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos != s.size())
    throw ParseError("row " + std::to_string(row) + ": trailing junk in '" + s +
                     "' in column " + col);
  return v;
}

inline int parse_binary(const std::string& s, Eigen::Index row,
                        const std::string& col) {
  const double v = parse_number(s, row, col);
  if (v != 0.0 && v != 1.0)
    throw ParseError("row " + std::to_string(row) + ": column " + col +
                     " must be 0 or 1, got '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace detail

// Header row must contain z, d, y followed by at least one covariate
// column. Rows violating monotonicity (z=0, d=1) are rejected here; use
// validate() for report-style checking of programmatic datasets.
inline Dataset load_dataset(std::istream& in, char delim = ',',
                            std::string span_label = "") {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty input: no header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_line(line, delim);
  if (header.size() < 4 || header[0] != "z" || header[1] != "d" || header[2] != "y")
    throw SchemaError("header must start with z,d,y and list >=1 covariate");
  std::vector<std::string> schema(header.begin() + 3, header.end());

  std::vector<int> z, d;
  std::vector<double> y;
  std::vector<double> xflat;
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_line(line, delim);
    if (fields.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    const int zi = detail::parse_binary(fields[0], row, "z");
    const int di = detail::parse_binary(fields[1], row, "d");
    if (zi == 0 && di == 1)
      throw ValidationError("row " + std::to_string(row) +
                            ": d=1 with z=0 violates monotonicity");
    z.push_back(zi);
    d.push_back(di);
    y.push_back(detail::parse_number(fields[2], row, "y"));
    for (std::size_t j = 3; j < fields.size(); ++j)
      xflat.push_back(detail::parse_number(fields[j], row, header[j]));
    ++row;
  }
  const auto n = static_cast<Eigen::Index>(z.size());
  const auto p = static_cast<Eigen::Index>(schema.size());
  Eigen::VectorXi zv(n), dv(n);
  Eigen::VectorXd yv(n);
  Eigen::MatrixXd xv(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    zv[i] = z[i];
    dv[i] = d[i];
    yv[i] = y[i];
    for (Eigen::Index j = 0; j < p; ++j) xv(i, j) = xflat[i * p + j];
  }
  return Dataset(std::move(zv), std::move(dv), std::move(yv), std::move(xv),
                 std::move(schema), std::move(span_label));
}

inline void write_csv(const Dataset& ds, std::ostream& out, char delim = ',') {
  out << "z" << delim << "d" << delim << "y";
  for (const auto& name : ds.schema()) out << delim << name;
  out << "\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    out << ds.z(i) << delim << ds.d(i) << delim << format_double(ds.y(i));
    for (Eigen::Index j = 0; j < ds.n_covariates(); ++j)
      out << delim << format_double(ds.covariates()(i, j));
    out << "\n";
  }
}

}  // namespace pstrat
