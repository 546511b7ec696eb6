#pragma once

#include "ntk/program.hpp"

namespace ntk {

// Two-hidden-layer square-activation networks on a zero input (so the first
// activations are the constant 1). The averaging readout correlates the
// transpose with the forward weights and shifts the backward coordinates to
// mean 2; the random-readout variant keeps them centered.
struct GiaDemo {
  Program counterexample;  // output = mean of x2; fails the structural check
  Program compliant;       // output = v . x2 / sqrt(n); passes
  VarId counter_dx1, compliant_dx1;
};

GiaDemo make_gia_demo();

}  // namespace ntk
