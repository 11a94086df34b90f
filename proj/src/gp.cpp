#include "gpr/gp.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gpr {

double KernelSpec::eval(const Vec& a, const Vec& b) const {
  GPR_REQUIRE(a.size() == lengthscales.size() && b.size() == lengthscales.size(),
              "kernel input dimension mismatch");
  double s = 0.0;
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    const double r = (a[d] - b[d]) / lengthscales[d];
    s += r * r;
  }
  return sigma_f2 * std::exp(-0.5 * s);
}

void KernelSpec::validate(int dim) const {
  GPR_REQUIRE(sigma_f2 > 0.0, "kernel signal variance must be positive");
  GPR_REQUIRE(lengthscales.size() == dim, "kernel lengthscale count mismatch");
  GPR_REQUIRE((lengthscales.array() > 0.0).all(),
              "kernel lengthscales must be positive");
}

void DataSet::append(const Vec& x, double yval) {
  if (size() == 0) {
    X.resize(1, x.size());
    X.row(0) = x.transpose();
    y.resize(1);
    y[0] = yval;
    return;
  }
  GPR_REQUIRE(x.size() == X.cols(), "datum dimension mismatch");
  X.conservativeResize(X.rows() + 1, Eigen::NoChange);
  X.row(X.rows() - 1) = x.transpose();
  y.conservativeResize(y.size() + 1);
  y[y.size() - 1] = yval;
}

bool DataSet::is_prefix_of(const DataSet& other) const {
  if (size() > other.size()) return false;
  if (size() == 0) return true;
  if (dim() != other.dim()) return false;
  return X == other.X.topRows(X.rows()) && y == other.y.head(y.size());
}

void DataSet::save_csv(const std::string& path) const {
  std::ofstream out(path);
  GPR_REQUIRE(out.good(), "cannot open data set file for writing: " + path);
  for (int i = 0; i < size(); ++i) {
    for (int d = 0; d < dim(); ++d) out << format_double(X(i, d)) << ",";
    out << format_double(y[i]) << "\n";
  }
}

DataSet DataSet::load_csv(const std::string& path, int dim) {
  std::ifstream in(path);
  GPR_REQUIRE(in.good(), "cannot open data set file: " + path);
  DataSet ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Vec row(dim + 1);
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      GPR_REQUIRE(col < dim + 1, "data set row has too many columns: " + path);
      row[col++] = std::stod(cell);
    }
    GPR_REQUIRE(col == dim + 1, "data set row has too few columns: " + path);
    ds.append(row.head(dim), row[dim]);
  }
  return ds;
}

GpModel GpModel::fit(DataSet data, KernelSpec kernel, double sigma,
                     BoundInputs bound) {
  GPR_REQUIRE(sigma > 0.0, "regularization sigma must be positive");
  GPR_REQUIRE(bound.p > 0.0 && bound.p < 1.0, "probability p must be in (0,1)");
  GPR_REQUIRE(bound.B_g >= 0.0 && bound.R >= 0.0,
              "bound inputs must be nonnegative");
  const int n = data.size();
  if (n > 0) kernel.validate(data.dim());

  GpModel m;
  m.kernel_ = std::move(kernel);
  m.data_ = std::move(data);
  m.sigma_ = sigma;
  m.bound_ = bound;

  if (n > 0) {
    Mat K(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        const double v =
            m.kernel_.eval(m.data_.X.row(i).transpose(), m.data_.X.row(j).transpose());
        K(i, j) = v;
        K(j, i) = v;
      }
    K.diagonal().array() += sigma * sigma;
    Eigen::LLT<Mat> llt(K);
    if (llt.info() != Eigen::Success)
      throw numerical_error("GP Gram matrix factorization failed");
    m.L_ = llt.matrixL();
    m.alpha_ = llt.solve(m.data_.y);
  }
  m.compute_beta();
  return m;
}

GpModel GpModel::append(const Vec& x, double yval) const {
  const int n = size();
  if (n == 0 || appends_since_refit_ + 1 >= 50) {
    DataSet d = data_;
    d.append(x, yval);
    return fit(std::move(d), kernel_, sigma_, bound_);
  }
  GPR_REQUIRE(x.size() == data_.dim(), "datum dimension mismatch");

  // Border the factor: solve L l = k(X, x), then the new diagonal entry is
  // sqrt(k(x,x) + sigma^2 - |l|^2).
  Vec kvec(n);
  for (int i = 0; i < n; ++i)
    kvec[i] = kernel_.eval(data_.X.row(i).transpose(), x);
  const Vec l = L_.triangularView<Eigen::Lower>().solve(kvec);
  const double d2 = kernel_.eval(x, x) + sigma_ * sigma_ - l.squaredNorm();
  if (d2 <= 0.0) {
    // Factor extension lost positive definiteness numerically; rebuild.
    DataSet d = data_;
    d.append(x, yval);
    return fit(std::move(d), kernel_, sigma_, bound_);
  }

  GpModel m = *this;
  m.data_.append(x, yval);
  m.L_.conservativeResize(n + 1, n + 1);
  m.L_.row(n).head(n) = l.transpose();
  m.L_.col(n).head(n).setZero();
  m.L_(n, n) = std::sqrt(d2);
  m.alpha_ = m.L_.triangularView<Eigen::Lower>().solve(m.data_.y);
  m.L_.transpose().triangularView<Eigen::Upper>().solveInPlace(m.alpha_);
  m.appends_since_refit_ = appends_since_refit_ + 1;
  m.compute_beta();
  return m;
}

std::pair<double, double> GpModel::posterior(const Vec& x) const {
  const double kxx = kernel_.lengthscales.size() > 0
                         ? kernel_.eval(x, x)
                         : kernel_.sigma_f2;
  if (size() == 0) return {0.0, std::sqrt(kxx)};

  const int n = size();
  Vec kvec(n);
  for (int i = 0; i < n; ++i)
    kvec[i] = kernel_.eval(data_.X.row(i).transpose(), x);
  const double mu = kvec.dot(alpha_);
  const Vec l = L_.triangularView<Eigen::Lower>().solve(kvec);
  double var = kxx - l.squaredNorm();
  if (var < 0.0) {
    if (var < -1e-12)
      throw numerical_error("GP posterior variance below clamp threshold");
    var = 0.0;
  }
  return {mu, std::sqrt(var)};
}

double GpModel::logdet() const {
  if (size() == 0) return 0.0;
  return 2.0 * L_.diagonal().array().log().sum();
}

void GpModel::compute_beta() {
  if (bound_.fixed_beta >= 0.0) {
    beta_ = bound_.fixed_beta;
    return;
  }
  // ln det((sb2/s2) K_N + sb2 I) = N ln(sb2/s2) + ln det(K_N + s2 I)
  const double s2 = sigma_ * sigma_;
  const double sb2 = std::max(1.0, s2);
  const double ld = size() * std::log(sb2 / s2) + logdet();
  const double arg = ld - 2.0 * std::log(bound_.p);
  if (arg < 0.0)
    throw numerical_error("error-bound argument negative; p too large");
  beta_ = bound_.B_g + bound_.R / sigma_ * std::sqrt(arg);
}

}  // namespace gpr
