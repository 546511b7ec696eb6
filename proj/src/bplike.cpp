#include "ntk/bplike.hpp"

#include <algorithm>

#include "ntk/errors.hpp"

namespace ntk {

std::string BpLikeReport::verdict_name() const {
  switch (verdict) {
    case Verdict::Pass: return "Pass";
    case Verdict::Fail: return "Fail";
    case Verdict::Unknown: return "Unknown";
  }
  return "?";
}

nlohmann::ordered_json BpLikeReport::to_json() const {
  nlohmann::ordered_json j;
  j["verdict"] = verdict_name();
  j["findings"] = nlohmann::ordered_json::array();
  for (const auto& f : findings)
    j["findings"].push_back({{"line", f.line},
                             {"condition", f.condition},
                             {"definite", f.definite},
                             {"explanation", f.explanation}});
  return j;
}

namespace {

std::string describe(const Program& p, VarId v) {
  const std::string& name = p.label(v);
  std::string s = std::string(var_kind_name(p.kind(v))) + "#" +
                  std::to_string(v.index);
  if (!name.empty()) s += "(" + name + ")";
  return s;
}

const char* parity_name(Parity q) {
  switch (q) {
    case Parity::Indep: return "independent of the special set";
    case Parity::Odd: return "odd";
    case Parity::EvenDep: return "even (but dependent)";
    case Parity::Unknown: return "of undecided parity";
  }
  return "?";
}

// Parity of a nonlinearity output given argument/parameter parities.
Parity apply_flips(const NonlinEntry& e, std::span<const Parity> vec,
                   std::span<const Parity> scal) {
  bool dependent = false;
  uint64_t flip_vec = 0, flip_scal = 0;
  for (size_t i = 0; i < vec.size(); ++i) {
    if (vec[i] == Parity::Unknown) return Parity::Unknown;
    if (vec[i] != Parity::Indep) dependent = true;
    if (vec[i] == Parity::Odd) flip_vec |= 1ull << i;
  }
  for (size_t i = 0; i < scal.size(); ++i) {
    if (scal[i] == Parity::Unknown) return Parity::Unknown;
    if (scal[i] != Parity::Indep) dependent = true;
    if (scal[i] == Parity::Odd) flip_scal |= 1ull << i;
  }
  if (!dependent) return Parity::Indep;
  if (flip_vec == 0 && flip_scal == 0) return Parity::EvenDep;
  for (const FlipRule& r : e.flips)
    if (r.vec_mask == flip_vec && r.scalar_mask == flip_scal)
      return r.odd ? Parity::Odd : Parity::EvenDep;
  return Parity::Unknown;
}

}  // namespace

std::vector<Parity> special_parities(const Program& p, BpLikeReport* report) {
  std::vector<Parity> parity(p.var_count(), Parity::Indep);
  std::vector<bool> special(p.var_count(), false);
  for (VarId v : p.special_set) special[v.index] = true;

  // condition 3: zero mean, uncorrelated with non-special inputs
  for (VarId v : p.special_set) {
    parity[v.index] = Parity::Odd;
    const int pos = p.input_vector_pos(v);
    if (pos < 0) continue;
    if (p.mu_in(pos) != 0.0 && report)
      report->findings.push_back(
          {-1, 3, true,
           "special input " + describe(p, v) + " has nonzero mean " +
               std::to_string(p.mu_in(pos))});
    for (size_t j = 0; j < p.input_vectors.size(); ++j) {
      const VarId other = p.input_vectors[j];
      if (special[other.index]) continue;
      if (p.sigma_in(pos, static_cast<Eigen::Index>(j)) != 0.0) {
        if (report)
          report->findings.push_back(
              {-1, 3, true,
               "special input " + describe(p, v) + " is correlated with " +
                   describe(p, other)});
        parity[other.index] = Parity::Unknown;
      }
    }
  }

  Registry& reg = Registry::instance();
  for (size_t i = 0; i < p.body.size(); ++i) {
    const Line& l = p.body[i];
    const int li = static_cast<int>(i);
    switch (l.op) {
      case Line::Op::MatMul: {
        const Parity q = parity[l.arg.index];
        parity[l.out.index] = q;
        if (l.transposed) {
          if (q != Parity::Odd && report)
            report->findings.push_back(
                {li, 1, q != Parity::Unknown,
                 "transposed matrix applied to " + describe(p, l.arg) +
                     ", which is " + parity_name(q)});
        } else {
          if (q != Parity::Indep && report)
            report->findings.push_back(
                {li, 2, q != Parity::Unknown,
                 "matrix applied to " + describe(p, l.arg) + ", which is " +
                     parity_name(q)});
        }
        break;
      }
      case Line::Op::Nonlin:
      case Line::Op::Moment: {
        const NonlinEntry& e = reg.get(l.fn);
        std::vector<Parity> vec, scal;
        vec.reserve(l.args.size());
        scal.reserve(l.scalar_args.size());
        for (VarId a : l.args) vec.push_back(parity[a.index]);
        for (VarId a : l.scalar_args) scal.push_back(parity[a.index]);
        parity[l.out.index] = apply_flips(e, vec, scal);
        break;
      }
    }
  }
  return parity;
}

BpLikeReport check_bp_like(const Program& p) {
  BpLikeReport report;
  if (p.special_set.empty()) {
    report.findings.push_back({-1, 3, true, "special set is empty"});
    report.verdict = BpLikeReport::Verdict::Fail;
    return report;
  }
  special_parities(p, &report);
  bool any_definite = false, any_unknown = false;
  for (const auto& f : report.findings)
    (f.definite ? any_definite : any_unknown) = true;
  report.verdict = any_definite  ? BpLikeReport::Verdict::Fail
                   : any_unknown ? BpLikeReport::Verdict::Unknown
                                 : BpLikeReport::Verdict::Pass;
  return report;
}

}  // namespace ntk
