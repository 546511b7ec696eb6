#include "ntk/errors.hpp"
#include "ntk/frontends.hpp"

namespace ntk {

namespace {

// token gram: xi_a^t . xi_b^r / d
double tok_gram(const SequenceBatch& batch, int a, int t, int b, int r) {
  return batch.items[a][t].dot(batch.items[b][r]) /
         static_cast<double>(batch.d);
}

// covariance of the two recurrent pre-activations at steps (t, r), 1-based
struct PreCov {
  double aa, bb, ab;
};

}  // namespace

RnnKernels rnn_kernels(const SequenceBatch& batch, const RnnConfig& cfg,
                       const ExpectConfig& ecfg) {
  const NonlinEntry& phi = nonlin(cfg.phi);
  if (phi.derivative.empty())
    fail(ErrorCode::UnknownNonlin, "'" + cfg.phi + "' has no derivative");
  const NonlinEntry& phi_prime = nonlin(phi.derivative);
  const int m = batch.size();
  for (int a = 0; a < m; ++a)
    if (batch.length(a) < 1)
      fail(ErrorCode::EmptySequence, "sequence " + std::to_string(a));
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double su2 = cfg.sigma_u * cfg.sigma_u;
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;

  RnnKernels k;
  k.c.assign(m, std::vector<Matrix>(m));
  k.d_g.assign(m, std::vector<Matrix>(m));
  k.d_s.assign(m, std::vector<Matrix>(m));

  auto pre_cov = [&](int a, int b, int t, int r) -> PreCov {
    PreCov p;
    auto pre = [&](int i, int j, int ti, int tj) {
      double v = su2 * tok_gram(batch, i, ti - 1, j, tj - 1) + sb2;
      if (ti > 1 && tj > 1) v += sw2 * k.c[i][j](ti - 2, tj - 2);
      return v;
    };
    p.aa = pre(a, a, t, t);
    p.bb = pre(b, b, r, r);
    p.ab = pre(a, b, t, r);
    return p;
  };
  auto pair2 = [&](const NonlinEntry& e, const PreCov& p) {
    Matrix c2(2, 2);
    c2 << p.aa, p.ab, p.ab, p.bb;
    return vt_pair_value(e, c2, ecfg);
  };

  // forward state kernels; an entry at (t, r) needs (t-1, r-1) plus the
  // same-step diagonal entries, so diagonals are filled first
  for (int a = 0; a < m; ++a) {
    const int ta = batch.length(a);
    k.c[a][a] = Matrix::Zero(ta, ta);
    for (int t = 1; t <= ta; ++t)
      k.c[a][a](t - 1, t - 1) = pair2(phi, pre_cov(a, a, t, t));
    for (int t = 1; t <= ta; ++t)
      for (int r = 1; r <= ta; ++r)
        if (t != r) k.c[a][a](t - 1, r - 1) = pair2(phi, pre_cov(a, a, t, r));
  }
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < a; ++b) {
      const int ta = batch.length(a), tb = batch.length(b);
      k.c[a][b] = Matrix::Zero(ta, tb);
      for (int t = 1; t <= ta; ++t)
        for (int r = 1; r <= tb; ++r)
          k.c[a][b](t - 1, r - 1) = pair2(phi, pre_cov(a, b, t, r));
      k.c[b][a] = k.c[a][b].transpose();
    }

  // backward kernels
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      const int ta = batch.length(a), tb = batch.length(b);
      k.d_s[a][b] = Matrix::Zero(ta, tb);
      k.d_g[a][b] = Matrix::Zero(ta, tb);
      for (int t = ta; t >= 1; --t)
        for (int r = tb; r >= 1; --r) {
          double ds = 0.0;
          if (cfg.mode == RnnReadout::LastState) {
            if (t == ta && r == tb) ds = sv2;
          } else {
            ds = sv2 / (static_cast<double>(ta) * tb);
          }
          if (t < ta && r < tb) ds += sw2 * k.d_g[a][b](t, r);
          k.d_s[a][b](t - 1, r - 1) = ds;
          k.d_g[a][b](t - 1, r - 1) =
              ds == 0.0 ? 0.0 : ds * pair2(phi_prime, pre_cov(a, b, t, r));
        }
    }
  return k;
}

Matrix rnn_ntk(const SequenceBatch& batch, const RnnConfig& cfg,
               const ExpectConfig& ecfg) {
  const RnnKernels k = rnn_kernels(batch, cfg, ecfg);
  const int m = batch.size();
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double su2 = cfg.sigma_u * cfg.sigma_u;
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  Matrix theta = Matrix::Zero(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      const int ta = batch.length(a), tb = batch.length(b);
      double acc = 0.0;
      for (int t = 1; t <= ta; ++t)
        for (int r = 1; r <= tb; ++r) {
          const double dg = k.d_g[a][b](t - 1, r - 1);
          if (t > 1 && r > 1) acc += sw2 * dg * k.c[a][b](t - 2, r - 2);
          acc += su2 * dg * tok_gram(batch, a, t - 1, b, r - 1);
          acc += sb2 * dg;
        }
      if (cfg.mode == RnnReadout::LastState) {
        acc += sv2 * k.c[a][b](ta - 1, tb - 1);
      } else {
        acc += sv2 * k.c[a][b].sum() / (static_cast<double>(ta) * tb);
      }
      theta(a, b) = acc;
    }
  return theta;
}

EmittedProgram rnn_program(const SequenceBatch& batch, const RnnConfig& cfg) {
  const int m = batch.size();
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double su2 = cfg.sigma_u * cfg.sigma_u;
  const double sb2 = cfg.sigma_b * cfg.sigma_b;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  const std::string act2 = "act_" + cfg.phi + ":2";
  const std::string act3 = "act_" + cfg.phi + ":3";
  const std::string dact3 = "dact_" + cfg.phi + ":3";
  const std::string dact4 = "dact_" + cfg.phi + ":4";

  ProgramBuilder b;
  std::vector<std::vector<VarId>> u(m);
  int total_tokens = 0;
  for (int a = 0; a < m; ++a) {
    u[a].resize(batch.length(a));
    for (int t = 0; t < batch.length(a); ++t) {
      u[a][t] = b.add_input_vector("u" + std::to_string(t + 1) + "[" +
                                   std::to_string(a) + "]");
      ++total_tokens;
    }
  }
  VarId bias = b.add_input_vector("b");
  VarId v = b.add_input_vector("v");

  const int n_in = total_tokens + 2;
  Matrix sigma_in = Matrix::Zero(n_in, n_in);
  {
    int row = 0;
    for (int a = 0; a < m; ++a)
      for (int t = 0; t < batch.length(a); ++t, ++row) {
        int col = 0;
        for (int bb = 0; bb < m; ++bb)
          for (int r = 0; r < batch.length(bb); ++r, ++col)
            sigma_in(row, col) = su2 * tok_gram(batch, a, t, bb, r);
      }
    sigma_in(total_tokens, total_tokens) = sb2;
    sigma_in(total_tokens + 1, total_tokens + 1) = sv2;
  }
  b.set_input_gaussian(Vector::Zero(n_in), sigma_in);

  VarId w = b.add_matrix(sw2, "W");
  std::vector<VarId> inv_len(m);
  if (cfg.mode == RnnReadout::AvgPool)
    for (int a = 0; a < m; ++a)
      inv_len[a] = b.add_input_scalar(1.0 / batch.length(a),
                                      ScalarRule::Constant, 0.0, "1/T");
  VarId one;
  if (cfg.mode == RnnReadout::AvgPool)
    one = b.add_input_scalar(1.0, ScalarRule::Constant, 0.0, "one");

  std::vector<std::vector<VarId>> s(m), g(m), ds(m), dg(m);
  for (int a = 0; a < m; ++a) {
    const int ta = batch.length(a);
    const std::string sa = "[" + std::to_string(a) + "]";
    s[a].resize(ta);
    g[a].resize(ta);
    ds[a].resize(ta);
    dg[a].resize(ta);
    s[a][0] = b.nonlin(act2, {u[a][0], bias}, {}, "s1" + sa);
    for (int t = 1; t < ta; ++t) {
      g[a][t] = b.matmul(w, false, s[a][t - 1],
                         "g" + std::to_string(t + 1) + sa);
      s[a][t] = b.nonlin(act3, {g[a][t], u[a][t], bias}, {},
                         "s" + std::to_string(t + 1) + sa);
    }
    // backward
    if (cfg.mode == RnnReadout::LastState) {
      ds[a][ta - 1] = v;
    } else {
      ds[a][ta - 1] = b.nonlin("lincomb:1", {v}, {inv_len[a]},
                               "ds" + std::to_string(ta) + sa);
    }
    for (int t = ta - 1; t >= 0; --t) {
      if (t < ta - 1) {
        VarId back = b.matmul(w, true, dg[a][t + 1],
                              "Wdg" + std::to_string(t + 2) + sa);
        if (cfg.mode == RnnReadout::LastState)
          ds[a][t] = back;
        else
          ds[a][t] = b.nonlin("lincomb:2", {v, back}, {inv_len[a], one},
                              "ds" + std::to_string(t + 1) + sa);
      }
      if (t == 0)
        dg[a][0] = b.nonlin(dact3, {u[a][0], bias, ds[a][0]}, {}, "dg1" + sa);
      else
        dg[a][t] = b.nonlin(dact4, {g[a][t], u[a][t], bias, ds[a][t]}, {},
                            "dg" + std::to_string(t + 1) + sa);
    }
  }
  b.set_special({v});

  EmittedProgram out;
  out.program = b.finish();

  WeightGrouping& grouping = out.grouping;
  grouping.num_inputs = m;
  {
    MatrixGroup mg;
    mg.matrix = w;
    mg.scale = sw2;
    for (int a = 0; a < m; ++a)
      for (int t = 1; t < batch.length(a); ++t)
        mg.uses.push_back({a, g[a][t], s[a][t - 1], dg[a][t]});
    grouping.matrices.push_back(std::move(mg));
  }
  {
    FirstLayerGroup fl;
    fl.scale = su2;
    fl.gram = Matrix::Zero(total_tokens, total_tokens);
    int row = 0;
    for (int a = 0; a < m; ++a)
      for (int t = 0; t < batch.length(a); ++t, ++row) {
        fl.uses.push_back({a, dg[a][t], row});
        int col = 0;
        for (int bb = 0; bb < m; ++bb)
          for (int r = 0; r < batch.length(bb); ++r, ++col)
            fl.gram(row, col) = tok_gram(batch, a, t, bb, r);
      }
    grouping.first_layers.push_back(std::move(fl));
  }
  {
    BiasGroup bg;
    bg.scale = sb2;
    for (int a = 0; a < m; ++a)
      for (int t = 0; t < batch.length(a); ++t)
        bg.uses.push_back({a, dg[a][t]});
    grouping.biases.push_back(std::move(bg));
  }
  {
    ReadoutGroup rg;
    rg.scale = sv2;
    for (int a = 0; a < m; ++a) {
      const int ta = batch.length(a);
      if (cfg.mode == RnnReadout::LastState)
        rg.uses.push_back({a, s[a][ta - 1], 1.0});
      else
        for (int t = 0; t < ta; ++t) rg.uses.push_back({a, s[a][t], 1.0 / ta});
    }
    grouping.readouts.push_back(std::move(rg));
  }

  {
    const int ta = batch.length(0);
    if (cfg.mode == RnnReadout::LastState) {
      out.grad_spec.readout.push_back({v, s[0][ta - 1], 1.0});
    } else {
      for (int t = 0; t < ta; ++t)
        out.grad_spec.readout.push_back({v, s[0][t], 1.0 / ta});
    }
    out.grad_spec.claims.push_back({u[0][0], dg[0][0]});
    for (int t = 1; t < ta; ++t)
      out.grad_spec.claims.push_back({g[0][t], dg[0][t]});
  }

  const RnnKernels k = rnn_kernels(batch, cfg);
  for (int a = 0; a < m; ++a)
    for (int bb = 0; bb <= a; ++bb)
      for (int t = 1; t <= batch.length(a); ++t)
        for (int r = 1; r <= batch.length(bb); ++r) {
          const std::string suf = std::to_string(t) + "," + std::to_string(r) +
                                  ")(" + std::to_string(a) + "," +
                                  std::to_string(bb) + ")";
          out.tracked.push_back(
              {"C_s(" + suf, s[a][t - 1], s[bb][r - 1], k.c[a][bb](t - 1, r - 1)});
          out.tracked.push_back({"D_g(" + suf, dg[a][t - 1], dg[bb][r - 1],
                                 k.d_g[a][bb](t - 1, r - 1)});
          out.tracked.push_back({"D_s(" + suf, ds[a][t - 1], ds[bb][r - 1],
                                 k.d_s[a][bb](t - 1, r - 1)});
        }
  return out;
}

}  // namespace ntk
