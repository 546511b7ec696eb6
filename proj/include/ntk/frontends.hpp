#pragma once

#include <string>
#include <vector>

#include "ntk/finite.hpp"
#include "ntk/kernels.hpp"
#include "ntk/limit.hpp"
#include "ntk/program.hpp"

namespace ntk {

// ---------------------------------------------------------------------------
// Input batches. Gram entries are always inner products divided by the input
// dimension d.

struct VectorBatch {
  int d = 0;
  std::vector<Vector> items;
  int size() const { return static_cast<int>(items.size()); }
  Matrix gram() const;  // x_i . x_j / d
};

struct SequenceBatch {
  int d = 0;
  std::vector<std::vector<Vector>> items;  // tokens per sequence
  int size() const { return static_cast<int>(items.size()); }
  int length(int a) const { return static_cast<int>(items[a].size()); }
};

struct ImageBatch {
  int d = 0;                               // channels
  int px = 0, py = 0;                      // pixel grid
  std::vector<std::vector<Vector>> items;  // per image: px*py channel vectors
  int size() const { return static_cast<int>(items.size()); }
  int pixels() const { return px * py; }
};

// ---------------------------------------------------------------------------
// Weight grouping: for every trainable tensor, the uses y = W z with the
// matching scaled gradient dy, tagged by which batch input the use computes.

struct WeightUse {
  int input = 0;
  VarId y, z, dy;
};

struct MatrixGroup {
  VarId matrix;
  double scale = 1.0;  // trainable multiplier squared
  std::vector<WeightUse> uses;
};

// Input-side layers have fixed dimension; their activation inner products are
// supplied as a Gram matrix over the uses rather than computed in the limit.
struct FirstLayerUse {
  int input = 0;
  VarId dy;
  int gram_index = 0;
};

struct FirstLayerGroup {
  double scale = 1.0;
  std::vector<FirstLayerUse> uses;
  Matrix gram;  // indexed by gram_index pairs
};

struct BiasUse {
  int input = 0;
  VarId dvar;
};

struct BiasGroup {
  double scale = 1.0;
  std::vector<BiasUse> uses;
};

struct ReadoutUse {
  int input = 0;
  VarId target;
  double coeff = 1.0;
};

// One shared readout weight vector; several groups model independent readout
// weights (e.g. one per pixel under vectorization).
struct ReadoutGroup {
  double scale = 1.0;
  std::vector<ReadoutUse> uses;
};

struct WeightGrouping {
  int num_inputs = 0;
  std::vector<MatrixGroup> matrices;
  std::vector<FirstLayerGroup> first_layers;
  std::vector<BiasGroup> biases;
  std::vector<ReadoutGroup> readouts;
};

// A named moment with its claimed limit, for verification against empirical
// averages: limit of a^T b / n.
struct TrackedMoment {
  std::string label;
  VarId a, b;
  double limit = 0.0;
};

// What a frontend emits for empirical verification of its kernel recursions.
struct EmittedProgram {
  Program program;
  WeightGrouping grouping;
  GradCheckSpec grad_spec;
  std::vector<TrackedMoment> tracked;
};

// Generic NTK assembly from a grouping: sums D(dy, dy') C(z, z') per matrix
// plus first-layer, bias, and readout contributions.
Matrix assemble_ntk(const Program& p, const WeightGrouping& g,
                    const LimitState& s, const ExpectConfig& cfg = {});

// Same assembly from one executed instance's inner products.
Matrix empirical_ntk(const Program& p, const WeightGrouping& g, int64_t n,
                     uint64_t seed);
Matrix empirical_ntk(const Instance& executed, const WeightGrouping& g);

// ---------------------------------------------------------------------------
// MLP

struct MlpConfig {
  int depth = 2;  // hidden layers
  std::string phi = "relu";
  double sigma_w = 1.0, sigma_b = 1.0, sigma_v = 1.0;
};

struct MlpKernels {
  std::vector<Matrix> c_h;  // pre-activation kernels per layer (bias included)
  std::vector<Matrix> c_x;  // activation kernels; c_x[0] = gram
  std::vector<Matrix> d_h;  // scaled gradient kernels per layer
};

MlpKernels mlp_kernels(const VectorBatch& batch, const MlpConfig& cfg,
                       const ExpectConfig& ecfg = {});
Matrix mlp_ntk(const VectorBatch& batch, const MlpConfig& cfg,
               const ExpectConfig& ecfg = {});
EmittedProgram mlp_program(const VectorBatch& batch, const MlpConfig& cfg);

// ---------------------------------------------------------------------------
// Simple RNN

enum class RnnReadout { LastState, AvgPool };

struct RnnConfig {
  RnnReadout mode = RnnReadout::LastState;
  std::string phi = "relu";
  double sigma_w = 1.0, sigma_u = 1.0, sigma_b = 1.0, sigma_v = 1.0;
};

struct RnnKernels {
  // c[a][b](t, r): state kernels, 1-based steps stored 0-based
  std::vector<std::vector<Matrix>> c;
  // d_g[a][b](t, r): gradient kernels of the recurrent pre-activations
  std::vector<std::vector<Matrix>> d_g;
  // d_s[a][b](t, r): gradient kernels of the states
  std::vector<std::vector<Matrix>> d_s;
};

RnnKernels rnn_kernels(const SequenceBatch& batch, const RnnConfig& cfg,
                       const ExpectConfig& ecfg = {});
Matrix rnn_ntk(const SequenceBatch& batch, const RnnConfig& cfg,
               const ExpectConfig& ecfg = {});
EmittedProgram rnn_program(const SequenceBatch& batch, const RnnConfig& cfg);

// ---------------------------------------------------------------------------
// CNN

enum class CnnReadout { GAP, Vectorization };

struct CnnConfig {
  int layers = 2;
  std::string phi = "relu";
  double sigma_w = 1.0, sigma_v = 1.0;
  // kernel offsets; must satisfy K = -K
  std::vector<std::pair<int, int>> offsets = {
      {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 0},
      {0, 1},  {1, -1}, {1, 0},  {1, 1}};
  CnnReadout readout = CnnReadout::GAP;
};

struct CnnKernels {
  std::vector<FourTensor> c_x;  // c_x[0] = input pixel grams
  std::vector<FourTensor> c_h;
  std::vector<FourTensor> d_h;
  std::vector<FourTensor> d_x;  // d_x[l] pairs with layer l activations
};

CnnKernels cnn_kernels(const ImageBatch& batch, const CnnConfig& cfg,
                       const ExpectConfig& ecfg = {});
Matrix cnn_ntk(const ImageBatch& batch, const CnnConfig& cfg,
               const ExpectConfig& ecfg = {});
EmittedProgram cnn_program(const ImageBatch& batch, const CnnConfig& cfg);

// ---------------------------------------------------------------------------
// Transformer (self-attention with shared key/query/value, layernorm eps 0)

struct TransformerConfig {
  int layers = 1;
  std::string phi = "relu";
  double sigma_u = 1.0, sigma_w = 1.0, sigma_v = 1.0;
};

struct TransformerKernels {
  std::vector<FourTensor> c_k, a, c_y, c_z, c_g, c_h, c_x;  // per layer
  std::vector<Vector> delta_z, delta_x;                      // inv std scalings
  std::vector<FourTensor> d_x, d_h, d_g, d_z, d_y, d_k;
};

TransformerKernels transformer_kernels(const SequenceBatch& batch,
                                       const TransformerConfig& cfg,
                                       const ExpectConfig& ecfg = {});
Matrix transformer_ntk(const SequenceBatch& batch, const TransformerConfig& cfg,
                       const ExpectConfig& ecfg = {});
EmittedProgram transformer_program(const SequenceBatch& batch,
                                   const TransformerConfig& cfg);

// ---------------------------------------------------------------------------
// Batchnorm-relu MLP (unit trainable multipliers, no biases)

struct BnMlpConfig {
  int layers = 2;       // hidden layers
  double eps = 0.1;     // normalization variance floor (> 0)
};

struct BnMlpKernels {
  std::vector<Matrix> sigma;  // sigma[l]: activation second moments, sigma[0] = gram
};

BnMlpKernels bn_mlp_kernels(const VectorBatch& batch, const BnMlpConfig& cfg);
// NTK over the batch itself (all inputs normalized together).
Matrix bn_mlp_ntk(const VectorBatch& batch, const BnMlpConfig& cfg);
// NTK entries across two batches, normalized separately.
Matrix bn_mlp_ntk_cross(const VectorBatch& batch, const VectorBatch& batch_bar,
                        const BnMlpConfig& cfg);
EmittedProgram bn_mlp_program(const VectorBatch& batch, const BnMlpConfig& cfg);

}  // namespace ntk
