#include <map>
#include <set>

#include "ntk/errors.hpp"
#include "ntk/frontends.hpp"

namespace ntk {

Matrix VectorBatch::gram() const {
  const int m = size();
  Matrix g(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j <= i; ++j)
      g(i, j) = g(j, i) = items[i].dot(items[j]) / static_cast<double>(d);
  return g;
}

namespace {

using PairFn = std::function<double(VarId, VarId)>;

Matrix assemble_with(const Program& p, const WeightGrouping& g,
                     const PairFn& inner) {
  std::set<uint32_t> covered;
  for (const auto& mg : g.matrices)
    for (const auto& u : mg.uses) covered.insert(u.y.index);
  for (const auto& l : p.body)
    if (l.op == Line::Op::MatMul && !l.transposed &&
        !covered.count(l.out.index))
      fail(ErrorCode::UncoveredMatMul,
           "matmul output #" + std::to_string(l.out.index) +
               " not covered by any weight group");

  std::map<std::pair<uint32_t, uint32_t>, double> cache;
  auto pair_value = [&](VarId a, VarId b) {
    auto key = std::minmax(a.index, b.index);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const double v = inner(a, b);
    cache.emplace(key, v);
    return v;
  };

  Matrix theta = Matrix::Zero(g.num_inputs, g.num_inputs);
  for (const auto& mg : g.matrices)
    for (const auto& u : mg.uses)
      for (const auto& w : mg.uses)
        theta(u.input, w.input) +=
            mg.scale * pair_value(u.dy, w.dy) * pair_value(u.z, w.z);
  for (const auto& fl : g.first_layers)
    for (const auto& u : fl.uses)
      for (const auto& w : fl.uses)
        theta(u.input, w.input) += fl.scale * pair_value(u.dy, w.dy) *
                                   fl.gram(u.gram_index, w.gram_index);
  for (const auto& bg : g.biases)
    for (const auto& u : bg.uses)
      for (const auto& w : bg.uses)
        theta(u.input, w.input) += bg.scale * pair_value(u.dvar, w.dvar);
  for (const auto& rg : g.readouts)
    for (const auto& u : rg.uses)
      for (const auto& w : rg.uses)
        theta(u.input, w.input) +=
            rg.scale * u.coeff * w.coeff * pair_value(u.target, w.target);
  return theta;
}

}  // namespace

Matrix assemble_ntk(const Program& p, const WeightGrouping& g,
                    const LimitState& s, const ExpectConfig& cfg) {
  PairEvaluator eval(p, s, cfg);
  return assemble_with(p, g, [&](VarId a, VarId b) {
    return eval.inner(a, b).value;
  });
}

Matrix empirical_ntk(const Instance& executed, const WeightGrouping& g) {
  return assemble_with(*executed.program, g, [&](VarId a, VarId b) {
    return empirical_inner(executed.vec(a), executed.vec(b));
  });
}

Matrix empirical_ntk(const Program& p, const WeightGrouping& g, int64_t n,
                     uint64_t seed) {
  Instance inst = instantiate(p, n, seed);
  execute(inst);
  return empirical_ntk(inst, g);
}

}  // namespace ntk
