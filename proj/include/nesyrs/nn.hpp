#pragma once

#include <string>
#include <vector>

#include "nesyrs/rng.hpp"
#include "nesyrs/tape.hpp"

namespace nesyrs {

struct ParamBlock {
  std::string name;
  int rows = 0, cols = 1;  // cols == 1 for bias vectors
  std::vector<double> v;   // row-major
};

/**
 * A multilayer perceptron: affine layers with relu + dropout on all hidden
 * layers.  The last layer is linear (its output is sliced into per-variable
 * logits by the caller).
 */
struct Mlp {
  std::vector<int> sizes;              // layer widths, input first
  double dropout = 0.0;                // applied after each hidden relu
  std::vector<ParamBlock> blocks;      // W0, b0, W1, b1, ...

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
};

/** Deterministic initialization: W ~ U(-s, s) with s = sqrt(6/(fan_in+fan_out)),
 *  biases zero. */
Mlp init_mlp(const std::vector<int>& sizes, double dropout, uint64_t seed,
             const std::string& name_prefix);

enum class Mode { Train, Eval };

/** Parameter leaves for one tape (created once per batch, shared by
 *  examples). */
struct TapeParams {
  std::vector<NodeId> ids;  // aligned with Mlp::blocks
};
TapeParams stage_params(Tape& t, const Mlp& mlp);

/**
 * Forward pass on the tape.  In train mode, dropout masks are drawn from rng
 * with inverted scaling; in eval mode dropout is the identity.
 */
NodeId mlp_forward(Tape& t, const Mlp& mlp, const TapeParams& params, NodeId x, Mode mode,
                   Rng& rng);

/** Plain forward pass without a tape (eval or sampled-dropout). */
std::vector<double> mlp_forward_plain(const Mlp& mlp, const std::vector<double>& x, Mode mode,
                                      Rng* rng);

/** Accumulate tape gradients of staged parameters into grads (same block
 *  layout as the Mlp). */
void read_grads(Tape& t, const TapeParams& params, const Mlp& mlp,
                std::vector<std::vector<double>>& grads);

struct AdamState {
  double lr = 1e-3;
  double decay = 1.0;  // multiplied into lr once per epoch boundary
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;  // per block
};

AdamState init_adam(const std::vector<Mlp*>& models, double lr, double decay);

/**
 * One Adam update over the concatenated block list of the given models
 * (same order as in init_adam).  Throws on non-finite gradients, naming the
 * offending block.
 */
void adam_step(std::vector<Mlp*>& models, const std::vector<std::vector<double>>& grads,
               AdamState& state);

/** Signal an epoch boundary: lr *= decay. */
inline void adam_epoch(AdamState& state) { state.lr *= state.decay; }

// Bit-exact checkpoint serialization (hex-float text inside JSON).
std::string mlp_to_json(const Mlp& mlp);
Mlp mlp_from_json(const std::string& json_text);

}  // namespace nesyrs
