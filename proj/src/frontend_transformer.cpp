#include "ntk/errors.hpp"
#include "ntk/frontends.hpp"

namespace ntk {

namespace {
int equal_length(const SequenceBatch& batch) {
  if (batch.size() == 0) fail(ErrorCode::EmptySequence, "empty batch");
  const int t = batch.length(0);
  if (t < 1) fail(ErrorCode::EmptySequence, "empty sequence");
  for (int a = 1; a < batch.size(); ++a)
    if (batch.length(a) != t)
      fail(ErrorCode::LengthMismatch, "sequences must have equal length");
  return t;
}
}  // namespace

TransformerKernels transformer_kernels(const SequenceBatch& batch,
                                       const TransformerConfig& cfg,
                                       const ExpectConfig& ecfg) {
  const NonlinEntry& phi = nonlin(cfg.phi);
  if (phi.derivative.empty())
    fail(ErrorCode::UnknownNonlin, "'" + cfg.phi + "' has no derivative");
  const NonlinEntry& phi_prime = nonlin(phi.derivative);
  const int m = batch.size();
  const int t = equal_length(batch);
  const double su2 = cfg.sigma_u * cfg.sigma_u;
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;

  TransformerKernels k;
  {
    FourTensor c0 = FourTensor::zero(m, t);
    for (int a = 0; a < m; ++a)
      for (int i = 0; i < t; ++i)
        for (int b = 0; b < m; ++b)
          for (int j = 0; j < t; ++j)
            c0.at(a, i, b, j) =
                batch.items[a][i].dot(batch.items[b][j]) / batch.d;
    k.c_x.push_back(std::move(c0));
  }
  for (int l = 1; l <= cfg.layers; ++l) {
    FourTensor ck = k.c_x[l - 1];
    ck.v *= su2;
    FourTensor a = ck.softmax_last().block_diag();
    FourTensor cy = a.plus_identity().mul(ck).mul(a.transpose().plus_identity());
    Vector dz = cy.inv_sqrt_diag();
    FourTensor cz = cy.scale_rows_cols(dz);
    FourTensor cg = cz;
    cg.v *= sw2;
    FourTensor vphi = kernel_map(phi, cg, ecfg);
    FourTensor ch = vphi;
    ch.v *= sw2;
    FourTensor hz = ch;
    hz.v += cz.v;
    Vector dx = hz.inv_sqrt_diag();
    FourTensor cx = hz.scale_rows_cols(dx);

    k.c_k.push_back(std::move(ck));
    k.a.push_back(std::move(a));
    k.c_y.push_back(std::move(cy));
    k.c_z.push_back(std::move(cz));
    k.c_g.push_back(std::move(cg));
    k.c_h.push_back(std::move(vphi));  // stores V_phi(C_g); C_h = sw2 * this
    k.c_x.push_back(std::move(cx));
    k.delta_z.push_back(std::move(dz));
    k.delta_x.push_back(std::move(dx));
  }
  k.d_x.assign(cfg.layers + 1, FourTensor());
  k.d_h.assign(cfg.layers, FourTensor());
  k.d_g.assign(cfg.layers, FourTensor());
  k.d_z.assign(cfg.layers, FourTensor());
  k.d_y.assign(cfg.layers, FourTensor());
  k.d_k.assign(cfg.layers, FourTensor());
  k.d_x[cfg.layers] =
      FourTensor::constant(m, t, sv2 / (static_cast<double>(t) * t));
  for (int l = cfg.layers; l >= 1; --l) {
    const int i = l - 1;
    k.d_h[i] = k.d_x[l].scale_rows_cols(k.delta_x[i]);
    FourTensor vp = kernel_map(phi_prime, k.c_g[i], ecfg);
    k.d_g[i] = k.d_h[i].hadamard(vp);
    k.d_g[i].v *= sw2;
    k.d_z[i] = k.d_g[i];
    k.d_z[i].v = sw2 * k.d_g[i].v + k.d_h[i].v;
    k.d_y[i] = k.d_z[i].scale_rows_cols(k.delta_z[i]);
    k.d_k[i] = k.a[i].transpose().plus_identity().mul(k.d_y[i]).mul(
        k.a[i].plus_identity());
    k.d_x[l - 1] = k.d_k[i];
    k.d_x[l - 1].v *= su2;
  }
  return k;
}

Matrix transformer_ntk(const SequenceBatch& batch, const TransformerConfig& cfg,
                       const ExpectConfig& ecfg) {
  const TransformerKernels k = transformer_kernels(batch, cfg, ecfg);
  const int t = equal_length(batch);
  const double su2 = cfg.sigma_u * cfg.sigma_u;
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  Matrix theta =
      k.c_x[cfg.layers].contract_scalar(sv2 / (static_cast<double>(t) * t));
  for (int l = 1; l <= cfg.layers; ++l) {
    const int i = l - 1;
    theta += su2 * k.d_k[i].contract(k.c_x[l - 1]);
    theta += sw2 * k.d_g[i].contract(k.c_z[i]);
    theta += sw2 * k.d_h[i].contract(k.c_h[i]);  // c_h holds V_phi(C_g)
  }
  return theta;
}

EmittedProgram transformer_program(const SequenceBatch& batch,
                                   const TransformerConfig& cfg) {
  const int m = batch.size();
  const int t = equal_length(batch);
  const double su2 = cfg.sigma_u * cfg.sigma_u;
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  const std::string act = "act_" + cfg.phi + ":1";
  const std::string dact = "dact_" + cfg.phi + ":2";
  const TransformerKernels kern = transformer_kernels(batch, cfg);

  ProgramBuilder b;
  // layer-1 token embeddings
  std::vector<std::vector<VarId>> emb(m, std::vector<VarId>(t));
  for (int a = 0; a < m; ++a)
    for (int i = 0; i < t; ++i)
      emb[a][i] = b.add_input_vector("k1[" + std::to_string(a) + "][" +
                                     std::to_string(i) + "]");
  VarId v = b.add_input_vector("v");
  const int n_in = m * t + 1;
  Matrix sigma_in = Matrix::Zero(n_in, n_in);
  sigma_in.topLeftCorner(m * t, m * t) = su2 * kern.c_x[0].v;
  sigma_in(m * t, m * t) = sv2;
  b.set_input_gaussian(Vector::Zero(n_in), sigma_in);

  std::vector<VarId> u_mat(cfg.layers + 1), w1(cfg.layers + 1),
      w2(cfg.layers + 1);
  for (int l = 1; l <= cfg.layers; ++l) {
    if (l >= 2) u_mat[l] = b.add_matrix(su2, "U" + std::to_string(l));
    w1[l] = b.add_matrix(sw2, "W" + std::to_string(l) + "a");
    w2[l] = b.add_matrix(sw2, "W" + std::to_string(l) + "b");
  }
  VarId zero = b.add_input_scalar(0.0, ScalarRule::Constant, 0.0, "zero");
  VarId one = b.add_input_scalar(1.0, ScalarRule::Constant, 0.0, "one");
  VarId minus_one = b.add_input_scalar(-1.0, ScalarRule::Constant, 0.0, "-1");
  VarId cinvT =
      b.add_input_scalar(1.0 / t, ScalarRule::Constant, 0.0, "1/T");

  // per (layer, input, token) vector vars
  struct LayerVars {
    std::vector<VarId> k, y, z, g, phig, h, sum, x;
    std::vector<VarId> q_y, q_x;        // layernorm variance scalars
    std::vector<std::vector<VarId>> c;  // attention logit scalars
    std::vector<VarId> dx_out;  // gradient at x^{l} feeding this layer
    std::vector<VarId> dsum, dg, dz, dy, dk;
    std::vector<std::vector<VarId>> a;  // softmax coefficient scalars
  };
  std::vector<std::vector<LayerVars>> lv(m);  // [input][layer]

  auto snm = [](const std::string& base, int l, int a, int i) {
    return base + std::to_string(l) + "[" + std::to_string(a) + "][" +
           std::to_string(i) + "]";
  };

  // forward
  std::vector<std::vector<VarId>> x_prev(m);
  for (int a = 0; a < m; ++a) {
    x_prev[a] = emb[a];
    lv[a].resize(cfg.layers + 1);
  }
  for (int l = 1; l <= cfg.layers; ++l) {
    for (int a = 0; a < m; ++a) {
      LayerVars& L = lv[a][l];
      L.k.resize(t);
      for (int i = 0; i < t; ++i)
        L.k[i] = l == 1 ? x_prev[a][i]
                        : b.matmul(u_mat[l], false, x_prev[a][i],
                                   snm("k", l, a, i));
      // attention logits and coefficients
      L.c.assign(t, std::vector<VarId>(t));
      for (int i = 0; i < t; ++i)
        for (int j = 0; j <= i; ++j) {
          L.c[i][j] = b.moment("prod:2", {L.k[i], L.k[j]}, {},
                               "c" + std::to_string(l));
          L.c[j][i] = L.c[i][j];
        }
      L.a.assign(t, std::vector<VarId>(t));
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j)
          L.a[i][j] = b.moment("softmax:" + std::to_string(t) + ":" +
                                   std::to_string(j),
                               {}, L.c[i], "a" + std::to_string(l));
      L.y.resize(t);
      L.z.resize(t);
      L.g.resize(t);
      L.phig.resize(t);
      L.h.resize(t);
      L.sum.resize(t);
      L.x.resize(t);
      L.q_y.resize(t);
      L.q_x.resize(t);
      for (int i = 0; i < t; ++i) {
        std::vector<VarId> args(L.k.begin(), L.k.end());
        args.push_back(L.k[i]);
        std::vector<VarId> coeffs(L.a[i].begin(), L.a[i].end());
        coeffs.push_back(one);
        L.y[i] = b.nonlin("lincomb:" + std::to_string(t + 1), args, coeffs,
                          snm("y", l, a, i));
        VarId mu = b.moment("id", {L.y[i]}, {}, "mu_y");
        L.q_y[i] = b.moment("sqdev", {L.y[i]}, {mu}, "q_y");
        L.z[i] = b.nonlin("lnfwd:1", {L.y[i]}, {mu, L.q_y[i], zero},
                          snm("z", l, a, i));
        L.g[i] = b.matmul(w1[l], false, L.z[i], snm("g", l, a, i));
        L.phig[i] = b.nonlin(act, {L.g[i]}, {}, snm("phig", l, a, i));
        L.h[i] = b.matmul(w2[l], false, L.phig[i], snm("h", l, a, i));
        L.sum[i] = b.nonlin("sum:2", {L.h[i], L.z[i]}, {}, snm("s", l, a, i));
        VarId mux = b.moment("id", {L.sum[i]}, {}, "mu_x");
        L.q_x[i] = b.moment("sqdev", {L.sum[i]}, {mux}, "q_x");
        L.x[i] = b.nonlin("lnfwd:1", {L.sum[i]}, {mux, L.q_x[i], zero},
                          snm("x", l, a, i));
      }
      x_prev[a] = L.x;
    }
  }

  // backward
  for (int a = 0; a < m; ++a) {
    std::vector<VarId> dx(t);
    for (int i = 0; i < t; ++i)
      dx[i] =
          b.nonlin("lincomb:1", {v}, {cinvT}, snm("dxL", cfg.layers, a, i));
    for (int l = cfg.layers; l >= 1; --l) {
      LayerVars& L = lv[a][l];
      L.dx_out = dx;
      L.dsum.resize(t);
      L.dg.resize(t);
      L.dz.resize(t);
      L.dy.resize(t);
      L.dk.resize(t);
      for (int i = 0; i < t; ++i) {
        // layernorm backward at x
        VarId cx = b.moment("prod:2", {L.x[i], dx[i]}, {}, "c_x");
        VarId mcx = b.moment("cprod", {}, {cx, minus_one}, "-c_x");
        VarId ax = b.moment("lincomb:2", {dx[i], L.x[i]}, {one, mcx}, "a_x");
        L.dsum[i] = b.nonlin("lnbwd", {dx[i], L.x[i]},
                             {cx, ax, L.q_x[i], zero}, snm("dsum", l, a, i));
        VarId wdh = b.matmul(w2[l], true, L.dsum[i], snm("wdh", l, a, i));
        L.dg[i] = b.nonlin(dact, {L.g[i], wdh}, {}, snm("dg", l, a, i));
        VarId bk = b.matmul(w1[l], true, L.dg[i], snm("bk", l, a, i));
        L.dz[i] = b.nonlin("sum:2", {bk, L.dsum[i]}, {}, snm("dz", l, a, i));
        VarId cz = b.moment("prod:2", {L.z[i], L.dz[i]}, {}, "c_z");
        VarId mcz = b.moment("cprod", {}, {cz, minus_one}, "-c_z");
        VarId az = b.moment("lincomb:2", {L.dz[i], L.z[i]}, {one, mcz}, "a_z");
        L.dy[i] = b.nonlin("lnbwd", {L.dz[i], L.z[i]},
                           {cz, az, L.q_y[i], zero}, snm("dy", l, a, i));
      }
      // attention backward
      std::vector<std::vector<VarId>> e(t, std::vector<VarId>(t));
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j)
          e[i][j] = b.moment("prod:2", {L.dy[i], L.k[j]}, {}, "e");
      // f[i][j][l2] = d softmax_j / d c_l2 at logits of row i
      std::vector<std::vector<std::vector<VarId>>> f(
          t, std::vector<std::vector<VarId>>(t, std::vector<VarId>(t)));
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j)
          for (int l2 = 0; l2 < t; ++l2)
            f[i][j][l2] = b.moment("softmax_grad:" + std::to_string(t) + ":" +
                                       std::to_string(j) + ":" +
                                       std::to_string(l2),
                                   {}, L.c[i], "f");
      for (int i = 0; i < t; ++i) {
        // value path: sum_j a_ji dy_j
        std::vector<VarId> acoef(t);
        for (int j = 0; j < t; ++j) acoef[j] = L.a[j][i];
        VarId dv_part = b.nonlin("lincomb:" + std::to_string(t), L.dy, acoef,
                                 snm("dkv", l, a, i));
        // query path: sum_l2 (sum_j e^i_j f^i_{j,l2}) k_l2
        std::vector<VarId> pq(t), pk(t);
        for (int l2 = 0; l2 < t; ++l2) {
          std::vector<VarId> dot_args;
          for (int j = 0; j < t; ++j) dot_args.push_back(e[i][j]);
          for (int j = 0; j < t; ++j) dot_args.push_back(f[i][j][l2]);
          pq[l2] =
              b.moment("cdot:" + std::to_string(t), {}, dot_args, "pq");
          // key path: sum_j e^{l2}_j f^{l2}_{j,i}
          std::vector<VarId> dot_args2;
          for (int j = 0; j < t; ++j) dot_args2.push_back(e[l2][j]);
          for (int j = 0; j < t; ++j) dot_args2.push_back(f[l2][j][i]);
          pk[l2] =
              b.moment("cdot:" + std::to_string(t), {}, dot_args2, "pk");
        }
        VarId dq_part = b.nonlin("lincomb:" + std::to_string(t), L.k, pq,
                                 snm("dkq", l, a, i));
        VarId dk_part = b.nonlin("lincomb:" + std::to_string(t), L.k, pk,
                                 snm("dkk", l, a, i));
        L.dk[i] = b.nonlin("sum:4", {L.dy[i], dv_part, dq_part, dk_part}, {},
                           snm("dk", l, a, i));
      }
      if (l >= 2) {
        std::vector<VarId> dx_prev(t);
        for (int i = 0; i < t; ++i)
          dx_prev[i] =
              b.matmul(u_mat[l], true, L.dk[i], snm("dx", l - 1, a, i));
        dx = dx_prev;
      }
    }
  }
  b.set_special({v});

  EmittedProgram out;
  out.program = b.finish();

  WeightGrouping& g = out.grouping;
  g.num_inputs = m;
  for (int l = 1; l <= cfg.layers; ++l) {
    if (l >= 2) {
      MatrixGroup mg;
      mg.matrix = u_mat[l];
      mg.scale = su2;
      for (int a = 0; a < m; ++a)
        for (int i = 0; i < t; ++i)
          mg.uses.push_back(
              {a, lv[a][l].k[i], lv[a][l - 1].x[i], lv[a][l].dk[i]});
      g.matrices.push_back(std::move(mg));
    }
    MatrixGroup mg1;
    mg1.matrix = w1[l];
    mg1.scale = sw2;
    for (int a = 0; a < m; ++a)
      for (int i = 0; i < t; ++i)
        mg1.uses.push_back({a, lv[a][l].g[i], lv[a][l].z[i], lv[a][l].dg[i]});
    g.matrices.push_back(std::move(mg1));
    MatrixGroup mg2;
    mg2.matrix = w2[l];
    mg2.scale = sw2;
    for (int a = 0; a < m; ++a)
      for (int i = 0; i < t; ++i)
        mg2.uses.push_back(
            {a, lv[a][l].h[i], lv[a][l].phig[i], lv[a][l].dsum[i]});
    g.matrices.push_back(std::move(mg2));
  }
  {
    FirstLayerGroup fl;
    fl.scale = su2;
    fl.gram = Matrix::Zero(m * t, m * t);
    for (int a = 0; a < m; ++a)
      for (int i = 0; i < t; ++i) {
        fl.uses.push_back({a, lv[a][1].dk[i], a * t + i});
        for (int bb = 0; bb < m; ++bb)
          for (int j = 0; j < t; ++j)
            fl.gram(a * t + i, bb * t + j) =
                batch.items[a][i].dot(batch.items[bb][j]) / batch.d;
      }
    g.first_layers.push_back(std::move(fl));
  }
  {
    ReadoutGroup rg;
    rg.scale = sv2;
    for (int a = 0; a < m; ++a)
      for (int i = 0; i < t; ++i)
        rg.uses.push_back({a, lv[a][cfg.layers].x[i], 1.0 / t});
    g.readouts.push_back(std::move(rg));
  }

  for (int i = 0; i < t; ++i)
    out.grad_spec.readout.push_back({v, lv[0][cfg.layers].x[i], 1.0 / t});
  for (int l = 1; l <= cfg.layers; ++l)
    for (int i = 0; i < t; ++i) {
      out.grad_spec.claims.push_back({lv[0][l].g[i], lv[0][l].dg[i]});
      if (l >= 2)
        out.grad_spec.claims.push_back({lv[0][l].k[i], lv[0][l].dk[i]});
    }
  out.grad_spec.claims.push_back({lv[0][1].k[0], lv[0][1].dk[0]});

  for (int a = 0; a < m; ++a)
    for (int bb = 0; bb <= a; ++bb)
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
          for (int l = 1; l <= cfg.layers; ++l) {
            const std::string suf = std::to_string(l) + "(" +
                                    std::to_string(a) + "," +
                                    std::to_string(bb) + ")[" +
                                    std::to_string(i) + "," +
                                    std::to_string(j) + "]";
            const int li = l - 1;
            out.tracked.push_back({"C_z" + suf, lv[a][l].z[i], lv[bb][l].z[j],
                                   kern.c_z[li].at(a, i, bb, j)});
            out.tracked.push_back({"C_x" + suf, lv[a][l].x[i], lv[bb][l].x[j],
                                   kern.c_x[l].at(a, i, bb, j)});
            out.tracked.push_back({"Vphi" + suf, lv[a][l].phig[i],
                                   lv[bb][l].phig[j],
                                   kern.c_h[li].at(a, i, bb, j)});
            out.tracked.push_back({"D_sum" + suf, lv[a][l].dsum[i],
                                   lv[bb][l].dsum[j],
                                   kern.d_h[li].at(a, i, bb, j)});
            out.tracked.push_back({"D_g" + suf, lv[a][l].dg[i],
                                   lv[bb][l].dg[j],
                                   kern.d_g[li].at(a, i, bb, j)});
            out.tracked.push_back({"D_k" + suf, lv[a][l].dk[i],
                                   lv[bb][l].dk[j],
                                   kern.d_k[li].at(a, i, bb, j)});
          }
        }
  return out;
}

}  // namespace ntk
