#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "ntk/nonlin.hpp"
#include "ntk/numeric.hpp"

#include "json.hpp"

namespace ntk {

// G: Gaussian vector (input or matmul output); H: general vector (nonlinearity
// output); A: matrix; C: scalar.
enum class VarKind : uint8_t { G, H, A, C };

const char* var_kind_name(VarKind k);

struct VarId {
  uint32_t index = 0;
  VarKind kind = VarKind::G;

  friend bool operator==(const VarId& a, const VarId& b) {
    return a.index == b.index;
  }
  friend auto operator<=>(const VarId& a, const VarId& b) {
    return a.index <=> b.index;
  }
  bool is_vector() const { return kind == VarKind::G || kind == VarKind::H; }
};

struct Line {
  enum class Op : uint8_t { MatMul, Nonlin, Moment };
  Op op = Op::Nonlin;
  // MatMul
  VarId matrix;
  bool transposed = false;
  VarId arg;
  // Nonlin / Moment
  std::string fn;
  std::vector<VarId> args;
  std::vector<VarId> scalar_args;

  VarId out;
};

struct InputMatrix {
  VarId id;
  double sigma2 = 1.0;
};

// How an input scalar is realized at finite width; its limit is always
// `limit`. GivenSequence draws value(n) = limit + amplitude / n.
enum class ScalarRule : uint8_t { Constant, GivenSequence };

struct InputScalar {
  VarId id;
  double limit = 0.0;
  ScalarRule rule = ScalarRule::Constant;
  double amplitude = 0.0;
};

class Program {
 public:
  std::vector<InputMatrix> matrices;
  std::vector<VarId> input_vectors;
  Vector mu_in;      // per input vector
  Matrix sigma_in;   // joint covariance over input vectors
  std::vector<InputScalar> scalars;
  std::vector<VarId> special_set;
  std::vector<Line> body;

  // Optional per-var labels (debugging aid, not serialized).
  std::vector<std::string> labels;

  size_t var_count() const { return kinds_.size(); }
  VarKind kind(VarId v) const { return kinds_[v.index]; }
  VarKind kind(uint32_t index) const { return kinds_[index]; }
  const std::string& label(VarId v) const;

  // Position of an input vector in mu_in/sigma_in, or -1.
  int input_vector_pos(VarId v) const;
  // Index into `matrices`, or -1.
  int matrix_pos(VarId v) const;
  // Index into `scalars`, or -1.
  int scalar_pos(VarId v) const;
  // Body line defining v, or -1 for inputs.
  int defining_line(VarId v) const;

  double matrix_sigma2(VarId m) const;

  // Validates the whole program; throws on violations. Called by the builder
  // and by from_json.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static Program from_json(const nlohmann::ordered_json& j);
  std::string to_json_string() const;
  static Program from_json_string(const std::string& text);

  void rebuild_index();

 private:
  friend class ProgramBuilder;
  std::vector<VarKind> kinds_;
  std::vector<int> input_vec_pos_, matrix_pos_, scalar_pos_, def_line_;
};

// Incremental construction; finish() validates and returns the program.
// Var indices are dense in creation order.
class ProgramBuilder {
 public:
  VarId add_matrix(double sigma2, std::string label = "");
  VarId add_input_vector(std::string label = "");
  VarId add_input_scalar(double limit, ScalarRule rule = ScalarRule::Constant,
                         double amplitude = 0.0, std::string label = "");

  VarId matmul(VarId matrix, bool transposed, VarId arg, std::string label = "");
  VarId nonlin(const std::string& fn, std::vector<VarId> args,
               std::vector<VarId> scalar_args = {}, std::string label = "");
  VarId moment(const std::string& fn, std::vector<VarId> args,
               std::vector<VarId> scalar_args = {}, std::string label = "");

  void set_special(std::vector<VarId> vars);
  void set_input_gaussian(Vector mu, Matrix sigma);

  size_t input_vector_count() const { return prog_.input_vectors.size(); }

  Program finish();

 private:
  VarId fresh(VarKind kind, std::string label);
  Program prog_;
};

// Convenience for the common case of independent zero-mean inputs: builds the
// diagonal covariance from per-vector variances.
Matrix diagonal_covariance(const std::vector<double>& variances);

}  // namespace ntk
