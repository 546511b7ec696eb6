#pragma once

#include <string>
#include <vector>

#include "ntk/program.hpp"

namespace ntk {

// Structural verdict on whether transposed matrices are only ever applied to
// vectors that are odd in the designated special inputs, non-transposed
// matrices only to vectors independent of them, and the special inputs are
// zero-mean and uncorrelated with everything else.
struct BpLikeReport {
  enum class Verdict { Pass, Fail, Unknown };

  struct Finding {
    int line = -1;       // -1: input-level finding
    int condition = 0;   // 1, 2, or 3
    bool definite = true;  // false: analysis could not decide
    std::string explanation;
  };

  Verdict verdict = Verdict::Pass;
  std::vector<Finding> findings;

  bool pass() const { return verdict == Verdict::Pass; }
  std::string verdict_name() const;
  nlohmann::ordered_json to_json() const;
};

BpLikeReport check_bp_like(const Program& p);

// Dataflow attribute with respect to the special set, under simultaneous
// negation of all special inputs.
enum class Parity : uint8_t { Indep, Odd, EvenDep, Unknown };

// Per-variable parities (exposed for tests).
std::vector<Parity> special_parities(const Program& p,
                                     BpLikeReport* report = nullptr);

}  // namespace ntk
