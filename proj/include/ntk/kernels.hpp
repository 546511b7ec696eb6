#pragma once

#include <string>

#include "ntk/nonlin.hpp"
#include "ntk/numeric.hpp"

namespace ntk {

// Kernel over (input, position) index pairs, stored dense row-major with
// linearization input * positions + position.
struct Kernel {
  int inputs = 0;
  int positions = 1;
  Matrix values;

  static Kernel zero(int inputs, int positions = 1);
  double& at(int i, int s, int j, int t);
  double at(int i, int s, int j, int t) const;
  int flat(int i, int s) const { return i * positions + s; }
};

// 4-tensor over (inputs m) x (tokens t), stored as an (m t) x (m t) matrix
// with index linearization a * t + i. Juxtaposition in the update rules is
// plain matrix multiplication in this layout.
struct FourTensor {
  int m = 0;
  int t = 1;
  Matrix v;

  static FourTensor zero(int m, int t);
  static FourTensor constant(int m, int t, double value);
  static FourTensor identity(int m, int t);

  double& at(int a, int i, int b, int j) { return v(a * t + i, b * t + j); }
  double at(int a, int i, int b, int j) const { return v(a * t + i, b * t + j); }

  FourTensor block_diag() const;       // zero unless a == b
  FourTensor diag() const;             // zero unless a == b and i == j
  FourTensor softmax_last() const;     // softmax over j for fixed (a, i, b)
  FourTensor mul(const FourTensor& o) const;      // einsum aibj,bjck->aick
  FourTensor hadamard(const FourTensor& o) const;
  FourTensor transpose() const;
  FourTensor plus_identity() const;
  // Corr(C) = Diag(C)^{-1/2} C Diag(C)^{-1/2}; throws DegenerateVariance on
  // a diagonal entry below 1e-12.
  FourTensor corr() const;
  Vector inv_sqrt_diag() const;        // Diag(C)^{-1/2} as a vector
  FourTensor scale_rows_cols(const Vector& d) const;  // diag(d) C diag(d)

  // (X o Y)_ab = sum_ij X_aibj Y_aibj
  Matrix contract(const FourTensor& o) const;
  Matrix contract_scalar(double factor) const;  // (factor o C)_ab = factor*sum_ij C
};

// Entrywise kernel map: out_ij = E f(z_i) f(z_j) over the 2x2 marginals of k,
// for a scalar registry nonlinearity. Small negative eigenvalues of the
// result are clipped to zero; real violations throw NonPsdBlock.
Matrix kernel_map(const NonlinEntry& e, const Matrix& k,
                  const ExpectConfig& cfg = {});
// Same, over the (m t) x (m t) storage of a 4-tensor (no PSD repair).
FourTensor kernel_map(const NonlinEntry& e, const FourTensor& k,
                      const ExpectConfig& cfg = {});

Matrix psd_repair(const Matrix& k, double tol = 1e-8);

// CSV in the interchange format: header "i,j,value" for matrices,
// "i,s,j,t,value" for 4-tensors; 17 significant digits.
std::string kernel_csv(const Matrix& m);
std::string kernel_csv(const FourTensor& k);
Matrix kernel_from_csv(const std::string& text);

}  // namespace ntk
