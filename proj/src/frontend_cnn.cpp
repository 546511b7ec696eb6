#include <algorithm>
#include <set>

#include "ntk/errors.hpp"
#include "ntk/frontends.hpp"

namespace ntk {

namespace {

struct Geometry {
  int px, py, pixels;
  std::vector<std::pair<int, int>> offsets;

  int flat(int x, int y) const { return x * py + y; }
  // pixel reached from s by offset k, or -1 if outside the grid
  int shift(int s, int k) const {
    const int x = s / py + offsets[k].first;
    const int y = s % py + offsets[k].second;
    if (x < 0 || x >= px || y < 0 || y >= py) return -1;
    return flat(x, y);
  }
  int offset_count() const { return static_cast<int>(offsets.size()); }
};

Geometry make_geometry(const ImageBatch& batch, const CnnConfig& cfg) {
  Geometry g{batch.px, batch.py, batch.pixels(), cfg.offsets};
  std::set<std::pair<int, int>> set(cfg.offsets.begin(), cfg.offsets.end());
  for (const auto& [dx, dy] : cfg.offsets)
    if (!set.count({-dx, -dy}))
      fail(ErrorCode::AsymmetricKernelOffsets,
           "offset (" + std::to_string(dx) + "," + std::to_string(dy) +
               ") has no mirror; the adjoint path is not implemented");
  return g;
}

// T(C)_{isjt} = sum_k C_{i,s+k,j,t+k} over offsets staying inside the grid
FourTensor conv_sum(const FourTensor& c, const Geometry& geo) {
  FourTensor out = FourTensor::zero(c.m, c.t);
  for (int a = 0; a < c.m; ++a)
    for (int s = 0; s < geo.pixels; ++s)
      for (int b = 0; b < c.m; ++b)
        for (int t = 0; t < geo.pixels; ++t) {
          double acc = 0.0;
          for (int k = 0; k < geo.offset_count(); ++k) {
            const int sk = geo.shift(s, k);
            const int tk = geo.shift(t, k);
            if (sk >= 0 && tk >= 0) acc += c.at(a, sk, b, tk);
          }
          out.at(a, s, b, t) = acc;
        }
  return out;
}

}  // namespace

CnnKernels cnn_kernels(const ImageBatch& batch, const CnnConfig& cfg,
                       const ExpectConfig& ecfg) {
  const NonlinEntry& phi = nonlin(cfg.phi);
  if (phi.derivative.empty())
    fail(ErrorCode::UnknownNonlin, "'" + cfg.phi + "' has no derivative");
  const NonlinEntry& phi_prime = nonlin(phi.derivative);
  const Geometry geo = make_geometry(batch, cfg);
  const int m = batch.size();
  const int np = geo.pixels;
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;

  CnnKernels k;
  {
    FourTensor c0 = FourTensor::zero(m, np);
    for (int a = 0; a < m; ++a)
      for (int s = 0; s < np; ++s)
        for (int b = 0; b < m; ++b)
          for (int t = 0; t < np; ++t)
            c0.at(a, s, b, t) =
                batch.items[a][s].dot(batch.items[b][t]) / batch.d;
    k.c_x.push_back(std::move(c0));
  }
  for (int l = 1; l <= cfg.layers; ++l) {
    FourTensor ch = conv_sum(k.c_x[l - 1], geo);
    ch.v *= sw2;
    k.c_h.push_back(ch);
    k.c_x.push_back(kernel_map(phi, ch, ecfg));
  }
  k.d_x.resize(cfg.layers + 1);
  k.d_h.resize(cfg.layers);
  {
    FourTensor dl = FourTensor::zero(m, np);
    if (cfg.readout == CnnReadout::GAP)
      dl.v.setConstant(sv2 / (static_cast<double>(np) * np));
    else
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          for (int s = 0; s < np; ++s) dl.at(a, s, b, s) = sv2 / np;
    k.d_x[cfg.layers] = std::move(dl);
  }
  for (int l = cfg.layers; l >= 1; --l) {
    k.d_h[l - 1] = k.d_x[l].hadamard(kernel_map(phi_prime, k.c_h[l - 1], ecfg));
    FourTensor dp = conv_sum(k.d_h[l - 1], geo);
    dp.v *= sw2;
    k.d_x[l - 1] = std::move(dp);
  }
  return k;
}

Matrix cnn_ntk(const ImageBatch& batch, const CnnConfig& cfg,
               const ExpectConfig& ecfg) {
  const CnnKernels k = cnn_kernels(batch, cfg, ecfg);
  const Geometry geo = make_geometry(batch, cfg);
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  const int m = batch.size();
  const int np = geo.pixels;
  Matrix theta = Matrix::Zero(m, m);
  for (int l = 1; l <= cfg.layers; ++l)
    theta += sw2 * k.d_h[l - 1].contract(conv_sum(k.c_x[l - 1], geo));
  if (cfg.readout == CnnReadout::GAP) {
    theta += k.c_x[cfg.layers].contract_scalar(
        sv2 / (static_cast<double>(np) * np));
  } else {
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        double acc = 0.0;
        for (int s = 0; s < np; ++s) acc += k.c_x[cfg.layers].at(a, s, b, s);
        theta(a, b) += sv2 * acc / np;
      }
  }
  return theta;
}

EmittedProgram cnn_program(const ImageBatch& batch, const CnnConfig& cfg) {
  const Geometry geo = make_geometry(batch, cfg);
  const int m = batch.size();
  const int np = geo.pixels;
  const int nk = geo.offset_count();
  const double sw2 = cfg.sigma_w * cfg.sigma_w;
  const double sv2 = cfg.sigma_v * cfg.sigma_v;
  const std::string act = "act_" + cfg.phi + ":1";
  const std::string dact = "dact_" + cfg.phi + ":2";
  const bool gap = cfg.readout == CnnReadout::GAP;

  const CnnKernels kern = cnn_kernels(batch, cfg);

  ProgramBuilder b;
  // layer-1 pre-activations are the input embeddings
  std::vector<std::vector<VarId>> h1(m, std::vector<VarId>(np));
  for (int a = 0; a < m; ++a)
    for (int s = 0; s < np; ++s)
      h1[a][s] = b.add_input_vector("h1[" + std::to_string(a) + "][" +
                                    std::to_string(s) + "]");
  std::vector<VarId> readout_w(gap ? 1 : np);
  for (auto& w : readout_w) w = b.add_input_vector("v");

  const int n_in = m * np + static_cast<int>(readout_w.size());
  Matrix sigma_in = Matrix::Zero(n_in, n_in);
  sigma_in.topLeftCorner(m * np, m * np) = kern.c_h[0].v;
  for (size_t i = 0; i < readout_w.size(); ++i)
    sigma_in(m * np + i, m * np + i) = sv2;
  b.set_input_gaussian(Vector::Zero(n_in), sigma_in);

  // weights for layers 2..L, one matrix per kernel offset
  std::vector<std::vector<VarId>> w(cfg.layers + 1);
  for (int l = 2; l <= cfg.layers; ++l) {
    w[l].resize(nk);
    for (int k = 0; k < nk; ++k)
      w[l][k] = b.add_matrix(sw2, "W" + std::to_string(l) + "_k" +
                                      std::to_string(k));
  }
  VarId cinv = b.add_input_scalar(gap ? 1.0 / np : 1.0 / std::sqrt(double(np)),
                                  ScalarRule::Constant, 0.0, "readout-coeff");

  // forward
  std::vector<std::vector<std::vector<VarId>>> h(m), x(m), dh(m), dx(m);
  // per-use products y[a][l][s][k]
  std::vector<std::vector<std::vector<std::vector<VarId>>>> y(m);
  for (int a = 0; a < m; ++a) {
    h[a].assign(cfg.layers + 1, {});
    x[a].assign(cfg.layers + 1, {});
    dh[a].assign(cfg.layers + 1, {});
    dx[a].assign(cfg.layers + 1, {});
    y[a].assign(cfg.layers + 1, {});
    const std::string sa = "[" + std::to_string(a) + "]";
    h[a][1] = h1[a];
    x[a][1].resize(np);
    for (int s = 0; s < np; ++s)
      x[a][1][s] = b.nonlin(act, {h[a][1][s]}, {},
                            "x1" + sa + "[" + std::to_string(s) + "]");
    for (int l = 2; l <= cfg.layers; ++l) {
      h[a][l].resize(np);
      x[a][l].resize(np);
      y[a][l].assign(np, std::vector<VarId>(nk));
      for (int s = 0; s < np; ++s) {
        std::vector<VarId> terms;
        for (int k = 0; k < nk; ++k) {
          const int sk = geo.shift(s, k);
          if (sk < 0) continue;
          y[a][l][s][k] = b.matmul(w[l][k], false, x[a][l - 1][sk],
                                   "y" + std::to_string(l) + sa + "[" +
                                       std::to_string(s) + "][" +
                                       std::to_string(k) + "]");
          terms.push_back(y[a][l][s][k]);
        }
        h[a][l][s] = b.nonlin("sum:" + std::to_string(terms.size()), terms, {},
                              "h" + std::to_string(l) + sa + "[" +
                                  std::to_string(s) + "]");
        x[a][l][s] = b.nonlin(act, {h[a][l][s]}, {},
                              "x" + std::to_string(l) + sa + "[" +
                                  std::to_string(s) + "]");
      }
    }
    // backward
    dx[a][cfg.layers].resize(np);
    for (int s = 0; s < np; ++s)
      dx[a][cfg.layers][s] =
          b.nonlin("lincomb:1", {gap ? readout_w[0] : readout_w[s]}, {cinv},
                   "dxL" + sa + "[" + std::to_string(s) + "]");
    for (int l = cfg.layers; l >= 1; --l) {
      dh[a][l].resize(np);
      for (int s = 0; s < np; ++s)
        dh[a][l][s] = b.nonlin(dact, {h[a][l][s], dx[a][l][s]}, {},
                               "dh" + std::to_string(l) + sa + "[" +
                                   std::to_string(s) + "]");
      if (l == 1) break;
      dx[a][l - 1].resize(np);
      for (int t = 0; t < np; ++t) {
        std::vector<VarId> terms;
        // dx_t = sum over (s, k) with s + k = t of W_k^T dh_s
        for (int k = 0; k < nk; ++k) {
          int sx = t / geo.py - cfg.offsets[k].first;
          int sy = t % geo.py - cfg.offsets[k].second;
          if (sx < 0 || sx >= geo.px || sy < 0 || sy >= geo.py) continue;
          const int sfrom = geo.flat(sx, sy);
          terms.push_back(b.matmul(w[l][k], true, dh[a][l][sfrom],
                                   "bk" + std::to_string(l) + sa + "[" +
                                       std::to_string(t) + "][" +
                                       std::to_string(k) + "]"));
        }
        dx[a][l - 1][t] = b.nonlin("sum:" + std::to_string(terms.size()),
                                   terms, {},
                                   "dx" + std::to_string(l - 1) + sa + "[" +
                                       std::to_string(t) + "]");
      }
    }
  }
  b.set_special(readout_w);

  EmittedProgram out;
  out.program = b.finish();

  WeightGrouping& g = out.grouping;
  g.num_inputs = m;
  for (int l = 2; l <= cfg.layers; ++l)
    for (int k = 0; k < nk; ++k) {
      MatrixGroup mg;
      mg.matrix = w[l][k];
      mg.scale = sw2;
      for (int a = 0; a < m; ++a)
        for (int s = 0; s < np; ++s) {
          const int sk = geo.shift(s, k);
          if (sk < 0) continue;
          mg.uses.push_back({a, y[a][l][s][k], x[a][l - 1][sk], dh[a][l][s]});
        }
      g.matrices.push_back(std::move(mg));
    }
  // first layer: one group per offset, gram over (input, position) uses
  for (int k = 0; k < nk; ++k) {
    FirstLayerGroup fl;
    fl.scale = sw2;
    std::vector<std::pair<int, int>> idx;  // (input, position)
    for (int a = 0; a < m; ++a)
      for (int s = 0; s < np; ++s)
        if (geo.shift(s, k) >= 0) {
          fl.uses.push_back({a, dh[a][1][s], static_cast<int>(idx.size())});
          idx.push_back({a, s});
        }
    fl.gram = Matrix::Zero(idx.size(), idx.size());
    for (size_t p1 = 0; p1 < idx.size(); ++p1)
      for (size_t p2 = 0; p2 < idx.size(); ++p2) {
        const int s1 = geo.shift(idx[p1].second, k);
        const int s2 = geo.shift(idx[p2].second, k);
        fl.gram(p1, p2) = batch.items[idx[p1].first][s1].dot(
                              batch.items[idx[p2].first][s2]) /
                          batch.d;
      }
    g.first_layers.push_back(std::move(fl));
  }
  if (gap) {
    ReadoutGroup rg;
    rg.scale = sv2;
    for (int a = 0; a < m; ++a)
      for (int s = 0; s < np; ++s)
        rg.uses.push_back({a, x[a][cfg.layers][s], 1.0 / np});
    g.readouts.push_back(std::move(rg));
  } else {
    for (int s = 0; s < np; ++s) {
      ReadoutGroup rg;
      rg.scale = sv2;
      for (int a = 0; a < m; ++a)
        rg.uses.push_back(
            {a, x[a][cfg.layers][s], 1.0 / std::sqrt(double(np))});
      g.readouts.push_back(std::move(rg));
    }
  }

  for (int s = 0; s < np; ++s)
    out.grad_spec.readout.push_back(
        {gap ? readout_w[0] : readout_w[s], x[0][cfg.layers][s],
         gap ? 1.0 / np : 1.0 / std::sqrt(double(np))});
  for (int l = 1; l <= cfg.layers; ++l)
    for (int s = 0; s < np; ++s)
      out.grad_spec.claims.push_back({h[0][l][s], dh[0][l][s]});

  for (int a = 0; a < m; ++a)
    for (int bb = 0; bb <= a; ++bb)
      for (int s = 0; s < np; ++s)
        for (int t = 0; t < np; ++t) {
          const std::string suf = "(" + std::to_string(a) + "," +
                                  std::to_string(bb) + ")[" +
                                  std::to_string(s) + "," + std::to_string(t) +
                                  "]";
          for (int l = 1; l <= cfg.layers; ++l) {
            out.tracked.push_back({"C_x" + std::to_string(l) + suf,
                                   x[a][l][s], x[bb][l][t],
                                   kern.c_x[l].at(a, s, bb, t)});
            out.tracked.push_back({"D_h" + std::to_string(l) + suf,
                                   dh[a][l][s], dh[bb][l][t],
                                   kern.d_h[l - 1].at(a, s, bb, t)});
          }
          out.tracked.push_back({"D_xL" + suf, dx[a][cfg.layers][s],
                                 dx[bb][cfg.layers][t],
                                 kern.d_x[cfg.layers].at(a, s, bb, t)});
        }
  return out;
}

}  // namespace ntk
