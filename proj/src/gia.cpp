#include "ntk/gia.hpp"

namespace ntk {

GiaDemo make_gia_demo() {
  GiaDemo out;
  {
    ProgramBuilder b;
    VarId x1 = b.add_input_vector("x1");
    VarId u = b.add_input_vector("u");  // unused zero-mean readout stand-in
    Vector mu(2);
    mu << 1.0, 0.0;
    Matrix sig = Matrix::Zero(2, 2);
    sig(1, 1) = 1.0;
    b.set_input_gaussian(mu, sig);
    VarId w2 = b.add_matrix(1.0, "W2");
    VarId two = b.add_input_scalar(2.0, ScalarRule::Constant, 0.0, "2");
    VarId h2 = b.matmul(w2, false, x1, "h2");
    b.nonlin("act_sq:1", {h2}, {}, "x2");
    VarId dh2 = b.nonlin("lincomb:1", {h2}, {two}, "dh2");
    out.counter_dx1 = b.matmul(w2, true, dh2, "dx1");
    b.set_special({u});
    out.counterexample = b.finish();
  }
  {
    ProgramBuilder b;
    VarId x1 = b.add_input_vector("x1");
    VarId v = b.add_input_vector("v");
    Vector mu(2);
    mu << 1.0, 0.0;
    Matrix sig = Matrix::Zero(2, 2);
    sig(1, 1) = 1.0;
    b.set_input_gaussian(mu, sig);
    VarId w2 = b.add_matrix(1.0, "W2");
    VarId h2 = b.matmul(w2, false, x1, "h2");
    b.nonlin("act_sq:1", {h2}, {}, "x2");
    VarId dh2 = b.nonlin("dact_sq:2", {h2, v}, {}, "dh2");
    out.compliant_dx1 = b.matmul(w2, true, dh2, "dx1");
    b.set_special({v});
    out.compliant = b.finish();
  }
  return out;
}

}  // namespace ntk
