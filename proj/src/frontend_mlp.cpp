#include "ntk/errors.hpp"
#include "ntk/frontends.hpp"

namespace ntk {

namespace {
const NonlinEntry& phi_with_derivative(const std::string& phi) {
  const NonlinEntry& e = nonlin(phi);
  if (e.derivative.empty())
    fail(ErrorCode::UnknownNonlin,
         "'" + phi + "' has no registered derivative");
  return e;
}
}  // namespace

MlpKernels mlp_kernels(const VectorBatch& batch, const MlpConfig& cfg,
                       const ExpectConfig& ecfg) {
  const NonlinEntry& phi = phi_with_derivative(cfg.phi);
  const NonlinEntry& phi_prime = nonlin(phi.derivative);
  const int m = batch.size();
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;

  MlpKernels k;
  k.c_x.push_back(psd_repair(batch.gram()));
  for (int l = 1; l <= cfg.depth; ++l) {
    Matrix pre = sw2 * (l == 1 ? k.c_x[0] : kernel_map(phi, k.c_h.back(), ecfg));
    pre.array() += sb2;
    k.c_h.push_back(psd_repair(pre));
    k.c_x.push_back(kernel_map(phi, k.c_h.back(), ecfg));
  }
  Matrix d = Matrix::Constant(m, m, sv2);  // shared readout weights
  for (int l = cfg.depth; l >= 1; --l) {
    d = d.cwiseProduct(kernel_map(phi_prime, k.c_h[l - 1], ecfg));
    k.d_h.insert(k.d_h.begin(), d);
    if (l > 1) d = sw2 * d;
  }
  return k;
}

Matrix mlp_ntk(const VectorBatch& batch, const MlpConfig& cfg,
               const ExpectConfig& ecfg) {
  const MlpKernels k = mlp_kernels(batch, cfg, ecfg);
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  Matrix theta = sv2 * k.c_x[cfg.depth];
  for (int l = 1; l <= cfg.depth; ++l) {
    theta += sw2 * k.d_h[l - 1].cwiseProduct(k.c_x[l - 1]);
    theta += sb2 * k.d_h[l - 1];
  }
  return theta;
}

EmittedProgram mlp_program(const VectorBatch& batch, const MlpConfig& cfg) {
  phi_with_derivative(cfg.phi);
  const int m = batch.size();
  const int depth = cfg.depth;
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  const std::string act = "act_" + cfg.phi + ":2";
  const std::string dact = "dact_" + cfg.phi + ":3";

  ProgramBuilder b;
  std::vector<VarId> embed(m);
  for (int a = 0; a < m; ++a)
    embed[a] = b.add_input_vector("W1x[" + std::to_string(a) + "]");
  std::vector<VarId> bias(depth);
  for (int l = 0; l < depth; ++l)
    bias[l] = b.add_input_vector("b" + std::to_string(l + 1));
  VarId v = b.add_input_vector("v");

  const int n_in = m + depth + 1;
  Matrix sigma_in = Matrix::Zero(n_in, n_in);
  sigma_in.topLeftCorner(m, m) = sw2 * batch.gram();
  for (int l = 0; l < depth; ++l) sigma_in(m + l, m + l) = sb2;
  sigma_in(m + depth, m + depth) = sv2;
  b.set_input_gaussian(Vector::Zero(n_in), sigma_in);

  std::vector<VarId> weights(depth);  // weights[l] for layer l+1, l >= 1
  for (int l = 1; l < depth; ++l)
    weights[l] = b.add_matrix(sw2, "W" + std::to_string(l + 1));

  std::vector<std::vector<VarId>> h(m), x(m), dh(m);
  for (int a = 0; a < m; ++a) {
    const std::string sa = "[" + std::to_string(a) + "]";
    h[a].resize(depth);
    x[a].resize(depth);
    dh[a].resize(depth);
    h[a][0] = embed[a];
    for (int l = 0; l < depth; ++l) {
      if (l > 0)
        h[a][l] = b.matmul(weights[l], false, x[a][l - 1],
                           "h" + std::to_string(l + 1) + sa);
      x[a][l] = b.nonlin(act, {h[a][l], bias[l]}, {},
                         "x" + std::to_string(l + 1) + sa);
    }
    dh[a][depth - 1] = b.nonlin(dact, {h[a][depth - 1], bias[depth - 1], v},
                                {}, "dh" + std::to_string(depth) + sa);
    for (int l = depth - 2; l >= 0; --l) {
      VarId dx = b.matmul(weights[l + 1], true, dh[a][l + 1],
                          "dx" + std::to_string(l + 1) + sa);
      dh[a][l] = b.nonlin(dact, {h[a][l], bias[l], dx}, {},
                          "dh" + std::to_string(l + 1) + sa);
    }
  }
  b.set_special({v});

  EmittedProgram out;
  out.program = b.finish();

  WeightGrouping& g = out.grouping;
  g.num_inputs = m;
  for (int l = 1; l < depth; ++l) {
    MatrixGroup mg;
    mg.matrix = weights[l];
    mg.scale = sw2;
    for (int a = 0; a < m; ++a)
      mg.uses.push_back({a, h[a][l], x[a][l - 1], dh[a][l]});
    g.matrices.push_back(std::move(mg));
  }
  {
    FirstLayerGroup fl;
    fl.scale = sw2;
    fl.gram = batch.gram();
    for (int a = 0; a < m; ++a) fl.uses.push_back({a, dh[a][0], a});
    g.first_layers.push_back(std::move(fl));
  }
  for (int l = 0; l < depth; ++l) {
    BiasGroup bg;
    bg.scale = sb2;
    for (int a = 0; a < m; ++a) bg.uses.push_back({a, dh[a][l]});
    g.biases.push_back(std::move(bg));
  }
  ReadoutGroup rg;
  rg.scale = sv2;
  for (int a = 0; a < m; ++a) rg.uses.push_back({a, x[a][depth - 1], 1.0});
  g.readouts.push_back(std::move(rg));

  out.grad_spec.readout.push_back({v, x[0][depth - 1], 1.0});
  for (int l = 0; l < depth; ++l)
    out.grad_spec.claims.push_back({h[0][l], dh[0][l]});

  const MlpKernels k = mlp_kernels(batch, cfg);
  for (int l = 1; l <= depth; ++l)
    for (int a = 0; a < m; ++a)
      for (int bb = 0; bb <= a; ++bb) {
        out.tracked.push_back({"C_x" + std::to_string(l) + "(" +
                                   std::to_string(a) + "," + std::to_string(bb) +
                                   ")",
                               x[a][l - 1], x[bb][l - 1], k.c_x[l](a, bb)});
        out.tracked.push_back({"D_h" + std::to_string(l) + "(" +
                                   std::to_string(a) + "," + std::to_string(bb) +
                                   ")",
                               dh[a][l - 1], dh[bb][l - 1],
                               k.d_h[l - 1](a, bb)});
      }
  return out;
}

}  // namespace ntk
