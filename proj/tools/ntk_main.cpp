#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ntk/bplike.hpp"
#include "ntk/errors.hpp"
#include "ntk/finite.hpp"
#include "ntk/frontends.hpp"
#include "ntk/gia.hpp"
#include "ntk/random.hpp"
#include "ntk/verify.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace ntk;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path + " for writing");
  out << text;
}

std::vector<std::vector<double>> parse_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        fail(ErrorCode::BadConfig, "bad number '" + cell + "' in inputs");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::BadConfig, "no input rows");
  return rows;
}

VectorBatch parse_vectors(const std::string& text) {
  const auto rows = parse_rows(text);
  VectorBatch b;
  b.d = static_cast<int>(rows[0].size());
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != b.d)
      fail(ErrorCode::BadConfig, "inconsistent input dimension");
    Vector v(b.d);
    for (int i = 0; i < b.d; ++i) v(i) = row[i];
    b.items.push_back(std::move(v));
  }
  return b;
}

// rows: seq,token,v1..vd
SequenceBatch parse_sequences(const std::string& text) {
  const auto rows = parse_rows(text);
  SequenceBatch b;
  b.d = static_cast<int>(rows[0].size()) - 2;
  if (b.d < 1) fail(ErrorCode::BadConfig, "sequence rows need seq,token,v...");
  std::map<int, std::map<int, Vector>> seqs;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != b.d + 2)
      fail(ErrorCode::BadConfig, "inconsistent input dimension");
    Vector v(b.d);
    for (int i = 0; i < b.d; ++i) v(i) = row[i + 2];
    seqs[static_cast<int>(row[0])][static_cast<int>(row[1])] = std::move(v);
  }
  for (auto& [si, tokens] : seqs) {
    std::vector<Vector> seq;
    for (auto& [ti, v] : tokens) seq.push_back(std::move(v));
    b.items.push_back(std::move(seq));
  }
  return b;
}

// rows: image,px,py,c1..cd
ImageBatch parse_images(const std::string& text) {
  const auto rows = parse_rows(text);
  ImageBatch b;
  b.d = static_cast<int>(rows[0].size()) - 3;
  if (b.d < 1) fail(ErrorCode::BadConfig, "image rows need image,px,py,c...");
  int maxx = 0, maxy = 0, maxi = 0;
  for (const auto& row : rows) {
    maxi = std::max(maxi, static_cast<int>(row[0]));
    maxx = std::max(maxx, static_cast<int>(row[1]));
    maxy = std::max(maxy, static_cast<int>(row[2]));
  }
  b.px = maxx + 1;
  b.py = maxy + 1;
  b.items.assign(maxi + 1, std::vector<Vector>(b.px * b.py, Vector::Zero(b.d)));
  for (const auto& row : rows) {
    Vector v(b.d);
    for (int i = 0; i < b.d; ++i) v(i) = row[i + 3];
    b.items[static_cast<int>(row[0])]
           [static_cast<int>(row[1]) * b.py + static_cast<int>(row[2])] =
               std::move(v);
  }
  return b;
}

struct ArchBundle {
  Matrix theta;
  EmittedProgram emitted;
};

ArchBundle build_arch(const std::string& arch, const json& cfg,
                      const std::string& inputs_text,
                      const ExpectConfig& ecfg) {
  ArchBundle out;
  if (arch == "mlp") {
    MlpConfig c;
    c.depth = cfg.value("depth", 2);
    c.phi = cfg.value("phi", std::string("relu"));
    c.sigma_w = cfg.value("sigma_w", 1.0);
    c.sigma_b = cfg.value("sigma_b", 1.0);
    c.sigma_v = cfg.value("sigma_v", 1.0);
    VectorBatch batch = parse_vectors(inputs_text);
    out.theta = mlp_ntk(batch, c, ecfg);
    out.emitted = mlp_program(batch, c);
  } else if (arch == "rnn") {
    RnnConfig c;
    const std::string mode = cfg.value("mode", std::string("last"));
    if (mode == "last")
      c.mode = RnnReadout::LastState;
    else if (mode == "avg")
      c.mode = RnnReadout::AvgPool;
    else
      fail(ErrorCode::BadConfig, "rnn mode must be 'last' or 'avg'");
    c.phi = cfg.value("phi", std::string("relu"));
    c.sigma_w = cfg.value("sigma_w", 1.0);
    c.sigma_u = cfg.value("sigma_u", 1.0);
    c.sigma_b = cfg.value("sigma_b", 1.0);
    c.sigma_v = cfg.value("sigma_v", 1.0);
    SequenceBatch batch = parse_sequences(inputs_text);
    out.theta = rnn_ntk(batch, c, ecfg);
    out.emitted = rnn_program(batch, c);
  } else if (arch == "cnn") {
    CnnConfig c;
    c.layers = cfg.value("layers", 2);
    c.phi = cfg.value("phi", std::string("relu"));
    c.sigma_w = cfg.value("sigma_w", 1.0);
    c.sigma_v = cfg.value("sigma_v", 1.0);
    if (cfg.contains("offsets")) {
      c.offsets.clear();
      for (const auto& o : cfg["offsets"])
        c.offsets.push_back({o[0].get<int>(), o[1].get<int>()});
    }
    const std::string ro = cfg.value("readout", std::string("gap"));
    if (ro == "gap")
      c.readout = CnnReadout::GAP;
    else if (ro == "vectorization")
      c.readout = CnnReadout::Vectorization;
    else
      fail(ErrorCode::BadConfig, "cnn readout must be 'gap' or 'vectorization'");
    ImageBatch batch = parse_images(inputs_text);
    out.theta = cnn_ntk(batch, c, ecfg);
    out.emitted = cnn_program(batch, c);
  } else if (arch == "bn") {
    BnMlpConfig c;
    c.layers = cfg.value("layers", 2);
    c.eps = cfg.value("eps", 0.1);
    VectorBatch batch = parse_vectors(inputs_text);
    out.theta = bn_mlp_ntk(batch, c);
    out.emitted = bn_mlp_program(batch, c);
  } else if (arch == "transformer") {
    TransformerConfig c;
    c.layers = cfg.value("layers", 1);
    c.phi = cfg.value("phi", std::string("relu"));
    c.sigma_u = cfg.value("sigma_u", 1.0);
    c.sigma_w = cfg.value("sigma_w", 1.0);
    c.sigma_v = cfg.value("sigma_v", 1.0);
    SequenceBatch batch = parse_sequences(inputs_text);
    out.theta = transformer_ntk(batch, c, ecfg);
    out.emitted = transformer_program(batch, c);
  } else {
    fail(ErrorCode::BadConfig, "unknown architecture '" + arch + "'");
  }
  return out;
}

json parse_config(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("config JSON: ") + e.what());
  }
}

int run(int argc, char** argv) {
  CLI::App app{"infinite-width NTK calculator"};
  app.require_subcommand(1);

  std::string arch, config_path, inputs_path, out_path, program_path,
      timing_path;
  std::string widths_arg = "64,128,256,512,1024,2048,4096,8192";
  int seeds = 30;
  uint64_t base_seed = 1;
  int quad_order = 64;
  bool force_quadrature = false;
  int64_t width = 4096;

  auto* compute = app.add_subcommand("compute", "write the limit kernel CSV");
  compute->add_option("--arch", arch, "mlp|rnn|cnn|bn|transformer")->required();
  compute->add_option("--config", config_path)->required();
  compute->add_option("--inputs", inputs_path)->required();
  compute->add_option("--out", out_path)->required();
  compute->add_option("--quadrature-order", quad_order);
  compute->add_flag("--force-quadrature", force_quadrature,
                    "bypass closed forms");

  auto* sweep = app.add_subcommand(
      "sweep", "empirical deviation over a width/seed grid");
  sweep->add_option("--arch", arch)->required();
  sweep->add_option("--config", config_path)->required();
  sweep->add_option("--inputs", inputs_path)->required();
  sweep->add_option("--widths", widths_arg, "comma-separated widths");
  sweep->add_option("--seeds", seeds);
  sweep->add_option("--seed", base_seed, "base seed");
  sweep->add_option("--out", out_path)->required();
  sweep->add_option("--timing-out", timing_path,
                    "optional per-cell wall-clock CSV");

  auto* gia = app.add_subcommand(
      "gia-demo", "backward mean of the averaging-readout counterexample");
  gia->add_option("--width", width);
  gia->add_option("--seeds", seeds);
  gia->add_option("--seed", base_seed);

  auto* check = app.add_subcommand("check", "structural report for a program");
  check->add_option("--program", program_path)->required();
  check->add_option("--out", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ExpectConfig ecfg;
  ecfg.quad_order = quad_order;
  ecfg.allow_closed_form = !force_quadrature;

  if (compute->parsed()) {
    ArchBundle bundle =
        build_arch(arch, parse_config(config_path), slurp(inputs_path), ecfg);
    spill(out_path, kernel_csv(bundle.theta));
    std::cerr << "wrote " << bundle.theta.rows() << "x" << bundle.theta.cols()
              << " kernel to " << out_path << "\n";
  } else if (sweep->parsed()) {
    std::vector<int64_t> widths;
    std::istringstream ws(widths_arg);
    std::string cell;
    while (std::getline(ws, cell, ','))
      if (!cell.empty()) widths.push_back(std::stoll(cell));
    if (widths.empty()) fail(ErrorCode::BadConfig, "no widths given");
    ArchBundle bundle =
        build_arch(arch, parse_config(config_path), slurp(inputs_path), ecfg);
    const auto rows = run_sweep(bundle.emitted, bundle.theta, arch, widths,
                                seeds, base_seed);
    spill(out_path, sweep_csv(rows, false));
    if (!timing_path.empty()) spill(timing_path, sweep_csv(rows, true));
    const auto med = sweep_medians(rows, widths);
    std::cerr << "median frob_rel_dev:";
    for (size_t i = 0; i < widths.size(); ++i)
      std::cerr << " " << widths[i] << ":" << med[i];
    std::cerr << "\n";
  } else if (gia->parsed()) {
    const GiaDemo demo = make_gia_demo();
    auto report = [&](const Program& p, VarId dx1, const char* name) {
      std::vector<double> means(seeds);
      for (int sd = 0; sd < seeds; ++sd) {
        Instance inst =
            instantiate(p, width, rng::key(base_seed, 0x61a, sd));
        execute(inst);
        means[sd] = empirical_mean(inst.vec(dx1));
      }
      double mean = 0.0;
      for (double m : means) mean += m;
      mean /= seeds;
      double var = 0.0;
      for (double m : means) var += (m - mean) * (m - mean);
      var = seeds > 1 ? var / (seeds - 1) : 0.0;
      const double se = std::sqrt(var / std::max(seeds, 1));
      std::printf("%s: mean(dx1) = %.6f +- %.6f (SE), verdict %s\n", name,
                  mean, se, check_bp_like(p).verdict_name().c_str());
    };
    report(demo.counterexample, demo.counter_dx1, "averaging readout  ");
    report(demo.compliant, demo.compliant_dx1, "random readout     ");
  } else if (check->parsed()) {
    const Program p = Program::from_json_string(slurp(program_path));
    const std::string text = check_bp_like(p).to_json().dump(2) + "\n";
    if (out_path.empty())
      std::cout << text;
    else
      spill(out_path, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ntk::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return error_is_numeric(e.code()) ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
