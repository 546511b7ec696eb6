#include "ntk/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ntk/errors.hpp"

namespace ntk {

Kernel Kernel::zero(int inputs, int positions) {
  Kernel k;
  k.inputs = inputs;
  k.positions = positions;
  k.values = Matrix::Zero(inputs * positions, inputs * positions);
  return k;
}

double& Kernel::at(int i, int s, int j, int t) {
  return values(flat(i, s), flat(j, t));
}
double Kernel::at(int i, int s, int j, int t) const {
  return values(flat(i, s), flat(j, t));
}

FourTensor FourTensor::zero(int m, int t) {
  FourTensor k;
  k.m = m;
  k.t = t;
  k.v = Matrix::Zero(m * t, m * t);
  return k;
}

FourTensor FourTensor::constant(int m, int t, double value) {
  FourTensor k = zero(m, t);
  k.v.setConstant(value);
  return k;
}

FourTensor FourTensor::identity(int m, int t) {
  FourTensor k = zero(m, t);
  k.v.setIdentity();
  return k;
}

FourTensor FourTensor::block_diag() const {
  FourTensor out = zero(m, t);
  for (int a = 0; a < m; ++a)
    out.v.block(a * t, a * t, t, t) = v.block(a * t, a * t, t, t);
  return out;
}

FourTensor FourTensor::diag() const {
  FourTensor out = zero(m, t);
  out.v.diagonal() = v.diagonal();
  return out;
}

FourTensor FourTensor::softmax_last() const {
  FourTensor out = *this;
  for (int r = 0; r < m * t; ++r)
    for (int b = 0; b < m; ++b) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < t; ++j) mx = std::max(mx, v(r, b * t + j));
      double z = 0.0;
      for (int j = 0; j < t; ++j) {
        out.v(r, b * t + j) = std::exp(v(r, b * t + j) - mx);
        z += out.v(r, b * t + j);
      }
      for (int j = 0; j < t; ++j) out.v(r, b * t + j) /= z;
    }
  return out;
}

FourTensor FourTensor::mul(const FourTensor& o) const {
  FourTensor out = zero(m, t);
  out.v = v * o.v;
  return out;
}

FourTensor FourTensor::hadamard(const FourTensor& o) const {
  FourTensor out = *this;
  out.v = v.cwiseProduct(o.v);
  return out;
}

FourTensor FourTensor::transpose() const {
  FourTensor out = *this;
  out.v = v.transpose();
  return out;
}

FourTensor FourTensor::plus_identity() const {
  FourTensor out = *this;
  out.v += Matrix::Identity(m * t, m * t);
  return out;
}

Vector FourTensor::inv_sqrt_diag() const {
  Vector d(m * t);
  for (int r = 0; r < m * t; ++r) {
    const double var = v(r, r);
    if (var < 1e-12)
      fail(ErrorCode::DegenerateVariance,
           "normalization variance " + std::to_string(var));
    d(r) = 1.0 / std::sqrt(var);
  }
  return d;
}

FourTensor FourTensor::scale_rows_cols(const Vector& d) const {
  FourTensor out = *this;
  out.v = d.asDiagonal() * v * d.asDiagonal();
  return out;
}

FourTensor FourTensor::corr() const { return scale_rows_cols(inv_sqrt_diag()); }

Matrix FourTensor::contract(const FourTensor& o) const {
  Matrix out = Matrix::Zero(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      out(a, b) = v.block(a * t, b * t, t, t)
                      .cwiseProduct(o.v.block(a * t, b * t, t, t))
                      .sum();
  return out;
}

Matrix FourTensor::contract_scalar(double factor) const {
  Matrix out = Matrix::Zero(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      out(a, b) = factor * v.block(a * t, b * t, t, t).sum();
  return out;
}

Matrix psd_repair(const Matrix& k, double tol) {
  Matrix sym = (k + k.transpose()) / 2.0;
  const double lo = min_eigenvalue(sym);
  const double scale = std::max(1.0, sym.diagonal().cwiseAbs().maxCoeff());
  if (lo < -tol * scale)
    fail(ErrorCode::NonPsdBlock,
         "kernel eigenvalue " + std::to_string(lo));
  if (lo < 0.0) sym = clip_psd(sym, 0.0);
  return sym;
}

Matrix kernel_map(const NonlinEntry& e, const Matrix& k,
                  const ExpectConfig& cfg) {
  const Eigen::Index n = k.rows();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      Matrix sub(2, 2);
      sub << k(i, i), k(i, j), k(j, i), k(j, j);
      out(i, j) = out(j, i) = vt_pair_value(e, sub, cfg);
    }
  return psd_repair(out);
}

FourTensor kernel_map(const NonlinEntry& e, const FourTensor& k,
                      const ExpectConfig& cfg) {
  FourTensor out = k;
  const Eigen::Index n = k.v.rows();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      Matrix sub(2, 2);
      sub << k.v(i, i), k.v(i, j), k.v(j, i), k.v(j, j);
      out.v(i, j) = out.v(j, i) = vt_pair_value(e, sub, cfg);
    }
  return out;
}

namespace {
void append_value(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}
}  // namespace

std::string kernel_csv(const Matrix& m) {
  std::string out = "i,j,value\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      out += std::to_string(i) + "," + std::to_string(j) + ",";
      append_value(out, m(i, j));
      out += "\n";
    }
  return out;
}

std::string kernel_csv(const FourTensor& k) {
  std::string out = "i,s,j,t,value\n";
  for (int a = 0; a < k.m; ++a)
    for (int i = 0; i < k.t; ++i)
      for (int b = 0; b < k.m; ++b)
        for (int j = 0; j < k.t; ++j) {
          out += std::to_string(a) + "," + std::to_string(i) + "," +
                 std::to_string(b) + "," + std::to_string(j) + ",";
          append_value(out, k.at(a, i, b, j));
          out += "\n";
        }
  return out;
}

Matrix kernel_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("i,j,value", 0) != 0)
    fail(ErrorCode::BadConfig, "kernel CSV must start with 'i,j,value'");
  std::vector<std::tuple<int, int, double>> entries;
  int maxi = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int i, j;
    double v;
    if (std::sscanf(line.c_str(), "%d,%d,%lf", &i, &j, &v) != 3)
      fail(ErrorCode::BadConfig, "bad kernel CSV row: " + line);
    entries.emplace_back(i, j, v);
    maxi = std::max({maxi, i, j});
  }
  Matrix m = Matrix::Zero(maxi + 1, maxi + 1);
  for (const auto& [i, j, v] : entries) m(i, j) = v;
  return m;
}

}  // namespace ntk
