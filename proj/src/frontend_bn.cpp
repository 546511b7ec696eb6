#include "ntk/bn_kernels.hpp"
#include "ntk/errors.hpp"
#include "ntk/frontends.hpp"

namespace ntk {

namespace {
Matrix delta_init(int b, int i, int j) {
  Matrix d = Matrix::Zero(b, b);
  d(i, j) += 0.5;
  d(j, i) += 0.5;
  return d;
}
}  // namespace

BnMlpKernels bn_mlp_kernels(const VectorBatch& batch, const BnMlpConfig& cfg) {
  if (batch.size() < 2)
    fail(ErrorCode::BadConfig, "batchnorm needs batch size >= 2");
  BnMlpKernels k;
  k.sigma.push_back(psd_repair(batch.gram()));
  for (int l = 1; l <= cfg.layers; ++l)
    k.sigma.push_back(bn_forward_single(k.sigma.back(), cfg.eps));
  return k;
}

Matrix bn_mlp_ntk(const VectorBatch& batch, const BnMlpConfig& cfg) {
  const BnMlpKernels k = bn_mlp_kernels(batch, cfg);
  const int b = batch.size();
  Matrix theta = Matrix::Zero(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j <= i; ++j) {
      std::vector<Matrix> delta(cfg.layers + 2);
      delta[cfg.layers + 1] = delta_init(b, i, j);
      for (int l = cfg.layers; l >= 1; --l)
        delta[l] = bn_backward_single(k.sigma[l - 1], delta[l + 1], cfg.eps);
      double acc = 0.0;
      for (int l = 0; l <= cfg.layers; ++l)
        acc += k.sigma[l].cwiseProduct(delta[l + 1]).sum();
      theta(i, j) = theta(j, i) = acc;
    }
  return theta;
}

Matrix bn_mlp_ntk_cross(const VectorBatch& batch, const VectorBatch& batch_bar,
                        const BnMlpConfig& cfg) {
  if (batch.d != batch_bar.d)
    fail(ErrorCode::LengthMismatch, "batches have different input dims");
  const BnMlpKernels k = bn_mlp_kernels(batch, cfg);
  const BnMlpKernels kb = bn_mlp_kernels(batch_bar, cfg);
  const int b = batch.size(), bb = batch_bar.size();
  std::vector<Matrix> xi(cfg.layers + 1);
  xi[0] = Matrix(b, bb);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < bb; ++j)
      xi[0](i, j) =
          batch.items[i].dot(batch_bar.items[j]) / static_cast<double>(batch.d);
  for (int l = 1; l <= cfg.layers; ++l)
    xi[l] = bn_forward_cross(k.sigma[l - 1], kb.sigma[l - 1], xi[l - 1],
                             cfg.eps);

  Matrix theta = Matrix::Zero(b, bb);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < bb; ++j) {
      std::vector<Matrix> chi(cfg.layers + 2);
      chi[cfg.layers + 1] = Matrix::Zero(b, bb);
      chi[cfg.layers + 1](i, j) = 1.0;
      for (int l = cfg.layers; l >= 1; --l)
        chi[l] = bn_backward_cross(k.sigma[l - 1], kb.sigma[l - 1], xi[l - 1],
                                   chi[l + 1], cfg.eps);
      double acc = 0.0;
      for (int l = 0; l <= cfg.layers; ++l)
        acc += xi[l].cwiseProduct(chi[l + 1]).sum();
      theta(i, j) = acc;
    }
  return theta;
}

EmittedProgram bn_mlp_program(const VectorBatch& batch, const BnMlpConfig& cfg) {
  const int nb = batch.size();
  if (nb < 2) fail(ErrorCode::BadConfig, "batchnorm needs batch size >= 2");
  const int depth = cfg.layers;
  char epsbuf[32];
  std::snprintf(epsbuf, sizeof(epsbuf), "%g", cfg.eps);
  const std::string fwd =
      "bnrelu_fwd:" + std::to_string(nb) + ":%d:" + epsbuf;
  const std::string bwd =
      "bnrelu_bwd:" + std::to_string(nb) + ":%d:" + epsbuf;
  auto fam = [&](const std::string& pat, int i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pat.c_str(), i);
    return std::string(buf);
  };

  ProgramBuilder b;
  std::vector<VarId> h1(nb);
  for (int i = 0; i < nb; ++i)
    h1[i] = b.add_input_vector("h1[" + std::to_string(i) + "]");
  VarId v = b.add_input_vector("v");
  Matrix sigma_in = Matrix::Zero(nb + 1, nb + 1);
  sigma_in.topLeftCorner(nb, nb) = batch.gram();
  sigma_in(nb, nb) = 1.0;
  b.set_input_gaussian(Vector::Zero(nb + 1), sigma_in);
  VarId czero = b.add_input_scalar(0.0, ScalarRule::Constant, 0.0, "zero");
  VarId cone = b.add_input_scalar(1.0, ScalarRule::Constant, 0.0, "one");

  std::vector<VarId> weights(depth + 1);
  for (int l = 2; l <= depth; ++l)
    weights[l] = b.add_matrix(1.0, "W" + std::to_string(l));

  // forward: h[l][i], x[l][i]
  std::vector<std::vector<VarId>> h(depth + 1, std::vector<VarId>(nb)),
      x(depth + 1, std::vector<VarId>(nb));
  h[1] = h1;
  for (int l = 1; l <= depth; ++l) {
    if (l > 1)
      for (int i = 0; i < nb; ++i)
        h[l][i] = b.matmul(weights[l], false, x[l - 1][i],
                           "h" + std::to_string(l) + "[" + std::to_string(i) +
                               "]");
    for (int i = 0; i < nb; ++i)
      x[l][i] = b.nonlin(fam(fwd, i), h[l], {},
                         "x" + std::to_string(l) + "[" + std::to_string(i) +
                             "]");
  }

  // backward per network output o: dh[o][l][i], with the gradient at the
  // last activations being v for the o-th batch entry and zero elsewhere
  std::vector<std::vector<std::vector<VarId>>> dh(
      nb, std::vector<std::vector<VarId>>(depth + 1, std::vector<VarId>(nb)));
  for (int o = 0; o < nb; ++o) {
    const std::string so = "{" + std::to_string(o) + "}";
    std::vector<VarId> dx(nb);
    for (int i = 0; i < nb; ++i)
      dx[i] = b.nonlin("lincomb:1", {v}, {i == o ? cone : czero},
                       "dxL" + so + "[" + std::to_string(i) + "]");
    for (int l = depth; l >= 1; --l) {
      std::vector<VarId> args = dx;
      args.insert(args.end(), h[l].begin(), h[l].end());
      for (int i = 0; i < nb; ++i)
        dh[o][l][i] = b.nonlin(fam(bwd, i), args, {},
                               "dh" + std::to_string(l) + so + "[" +
                                   std::to_string(i) + "]");
      if (l > 1)
        for (int i = 0; i < nb; ++i)
          dx[i] = b.matmul(weights[l], true, dh[o][l][i],
                           "dx" + std::to_string(l - 1) + so + "[" +
                               std::to_string(i) + "]");
    }
  }
  b.set_special({v});

  EmittedProgram out;
  out.program = b.finish();

  WeightGrouping& g = out.grouping;
  g.num_inputs = nb;
  for (int l = 2; l <= depth; ++l) {
    MatrixGroup mg;
    mg.matrix = weights[l];
    mg.scale = 1.0;
    for (int o = 0; o < nb; ++o)
      for (int i = 0; i < nb; ++i)
        mg.uses.push_back({o, h[l][i], x[l - 1][i], dh[o][l][i]});
    g.matrices.push_back(std::move(mg));
  }
  {
    FirstLayerGroup fl;
    fl.scale = 1.0;
    fl.gram = batch.gram();
    for (int o = 0; o < nb; ++o)
      for (int i = 0; i < nb; ++i) fl.uses.push_back({o, dh[o][1][i], i});
    g.first_layers.push_back(std::move(fl));
  }
  {
    ReadoutGroup rg;
    rg.scale = 1.0;
    for (int o = 0; o < nb; ++o) rg.uses.push_back({o, x[depth][o], 1.0});
    g.readouts.push_back(std::move(rg));
  }

  out.grad_spec.readout.push_back({v, x[depth][0], 1.0});
  for (int l = 1; l <= depth; ++l)
    for (int i = 0; i < nb; ++i)
      out.grad_spec.claims.push_back({h[l][i], dh[0][l][i]});

  // forward second-moment entries and one backward chain per output pair
  const BnMlpKernels kern = bn_mlp_kernels(batch, cfg);
  for (int l = 1; l <= depth; ++l)
    for (int i = 0; i < nb; ++i)
      for (int j = 0; j <= i; ++j)
        out.tracked.push_back(
            {"Sigma" + std::to_string(l) + "(" + std::to_string(i) + "," +
                 std::to_string(j) + ")",
             x[l][i], x[l][j], kern.sigma[l](i, j)});
  for (int o = 0; o < nb; ++o)
    for (int o2 = 0; o2 <= o; ++o2) {
      // chi chain for the output pair (o, o2)
      Matrix chi = Matrix::Zero(nb, nb);
      chi(o, o2) = 1.0;
      for (int l = depth; l >= 1; --l) {
        chi = o == o2 ? bn_backward_single(kern.sigma[l - 1],
                                           Matrix((chi + chi.transpose()) / 2),
                                           cfg.eps)
                      : bn_backward_cross(kern.sigma[l - 1], kern.sigma[l - 1],
                                          kern.sigma[l - 1], chi, cfg.eps);
        for (int i = 0; i < nb; ++i)
          for (int j = 0; j < nb; ++j)
            out.tracked.push_back(
                {"Delta" + std::to_string(l) + "{" + std::to_string(o) + "," +
                     std::to_string(o2) + "}(" + std::to_string(i) + "," +
                     std::to_string(j) + ")",
                 dh[o][l][i], dh[o2][l][j], chi(i, j)});
      }
    }
  return out;
}

}  // namespace ntk
