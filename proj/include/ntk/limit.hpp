#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ntk/bplike.hpp"
#include "ntk/program.hpp"

namespace ntk {

// Gaussian description of all G-vars of a program plus deterministic limits
// of its scalars. G-vars split into mutually independent jointly-Gaussian
// blocks keyed by the oriented producing matrix (or "in" for inputs);
// covariance across blocks is exactly zero.
struct LimitState {
  struct Block {
    std::string key;
    std::vector<uint32_t> members;  // G-var indices, in creation order
    std::vector<uint32_t> args;     // defining matmul argument per member
    Matrix cov;
  };

  std::vector<Block> blocks;
  std::map<uint32_t, int> block_of;
  std::map<uint32_t, int> pos_in_block;
  std::map<uint32_t, double> mu;     // nonzero only for input G-vars
  std::map<uint32_t, double> theta;  // C-var limits

  double mean_of(VarId g) const;
  // covariance E Z^a Z^b - mu(a) mu(b); exactly 0 across blocks
  double sigma(VarId a, VarId b) const;
  double theta_of(VarId c) const;

  nlohmann::ordered_json to_json(const Program& p) const;
};

struct LimitConfig {
  ExpectConfig expect;
  // Proceed when the structural check returns Unknown (a warning situation);
  // Fail always throws BpLikeViolation.
  bool allow_unknown_bplike = false;
};

LimitState compute_limits(const Program& p, const LimitConfig& cfg = {});

// psi over a list of G-vars, evaluated against the computed limit Gaussian.
struct ZQuery {
  FunctionSpec psi;
  std::vector<VarId> gvars;
};

Expectation evaluate(const ZQuery& q, const Program& p, const LimitState& s,
                     const ExpectConfig& cfg = {});

// E[Z^a Z^b] for arbitrary vector vars (G or H): the limit of a^T b / n.
// This is the engine behind kernel entries and the verification oracles.
Expectation limit_inner(const Program& p, const LimitState& s, VarId a,
                        VarId b, const ExpectConfig& cfg = {});

// E[Z^a]: the limit of mean(a).
Expectation limit_mean(const Program& p, const LimitState& s, VarId a,
                       const ExpectConfig& cfg = {});

// Reusable evaluator: caches var expressions and kernel-integral results
// across queries against one (program, state) pair.
class PairEvaluator {
 public:
  PairEvaluator(const Program& p, const LimitState& s,
                const ExpectConfig& cfg = {});
  ~PairEvaluator();
  PairEvaluator(PairEvaluator&&) noexcept;

  Expectation inner(VarId a, VarId b);
  Expectation mean(VarId a);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ntk
