#pragma once

// Model building blocks shared by the risk, clone, numerator, policy and
// dynamics networks: the sin/cos sub-range code, learned event embeddings
// with max-pooling over a step's event set, a single-layer gated recurrent
// cell, and affine heads.

#include <random>
#include <string>
#include <vector>

#include "dac/autodiff.hpp"
#include "dac/trajectory.hpp"

namespace dac {

using ad::Mat;
using Vec = Eigen::VectorXd;

struct EmbeddingConfig {
    int state_dim = 64;   // k; paper-scale 512 reachable by config
    int value_bins = 20;  // V
    int vocab_size = 0;   // distinct observation variables

    void validate() const;
};

// Sub-range code e'(v): e'_j = sin(v*j / (V*k)), e'_{k+j} = cos(v*j / (V*k))
// for 0 <= j < k. Throws when v is outside [1, V].
Vec positional_code(int v, int value_bins, int k);

// Rows 0..V-1 hold positional_code(1..V). Constant, never trained.
Mat positional_code_table(int value_bins, int k);

// Uniform init in [-1/sqrt(fan), 1/sqrt(fan)].
Mat uniform_init(int rows, int cols, int fan, std::mt19937_64& rng);

// Event embedding: concat(variable embedding, sub-range code) through one
// affine map to R^k. Stored factored: the concatenation-projection splits
// into a k x k block for the variable part and a 2k x k block for the code
// part, which lets lookups gather from two small precomputed tables.
struct EventEmbeddingParams {
    int var_table = -1;  // vocab x k
    int var_proj = -1;   // k x k
    int pos_proj = -1;   // 2k x k
    int bias = -1;       // 1 x k

    static EventEmbeddingParams create(ad::ParameterStore& store, const std::string& prefix,
                                       const EmbeddingConfig& cfg, std::mt19937_64& rng);
};

// Gated recurrent cell. All state-to-state influence flows through the
// recurrent matrices u_*, so zeroing them makes the cell exactly memoryless:
//   r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)      (reset gate)
//   g_t = sigmoid(x_t W_g + h_{t-1} U_g + b_g)      (output gate)
//   c_t = tanh(x_t W_h + (r_t . h_{t-1}) U_h + b_h)
//   h_t = g_t . c_t
struct GatedCellParams {
    int w_r = -1, u_r = -1, b_r = -1;
    int w_g = -1, u_g = -1, b_g = -1;
    int w_h = -1, u_h = -1, b_h = -1;
    int input_dim = 0;
    int state_dim = 0;

    static GatedCellParams create(ad::ParameterStore& store, const std::string& prefix,
                                  int input_dim, int state_dim, std::mt19937_64& rng);
};

struct GatedCellVars {
    ad::Var w_r, u_r, b_r, w_g, u_g, b_g, w_h, u_h, b_h;
};

GatedCellVars cell_vars(ad::Tape& tape, ad::ParameterStore& store, const GatedCellParams& p,
                        bool trainable);
ad::Var cell_step(ad::Tape& tape, const GatedCellVars& v, ad::Var x_t, ad::Var h_prev);

// Affine head x -> x W + b. init_scale 0 zero-initializes (uniform initial
// policy / 0.5 initial probabilities).
struct AffineHeadParams {
    int weight = -1;  // in x out
    int bias = -1;    // 1 x out
    int input_dim = 0;
    int output_dim = 0;

    static AffineHeadParams create(ad::ParameterStore& store, const std::string& prefix,
                                   int input_dim, int output_dim, double init_scale,
                                   std::mt19937_64& rng);
    ad::Var apply(ad::Tape& tape, ad::ParameterStore& store, ad::Var x, bool trainable) const;
};

// Index buffers for one mini-batch of trajectories. Steps past a patient's
// length are padded with a single synthetic event; `valid` masks them out of
// every loss.
struct BatchLayout {
    int batch_size = 0;
    int max_len = 0;
    std::vector<int> lengths;

    struct StepEvents {
        std::vector<int> var_rows;  // into the variable table
        std::vector<int> pos_rows;  // subrange - 1, into the code table
        std::vector<int> segment;   // row -> patient slot
    };
    std::vector<StepEvents> steps;

    std::vector<std::vector<int>> action_at;  // per step: flat action per patient
    std::vector<std::vector<int>> change_at;  // per step: change class (27 = INITIAL)
    std::vector<int> outcome;                 // per patient
    Mat valid;                                // batch_size x max_len, 1 on real steps
};

BatchLayout build_batch_layout(const std::vector<const PatientTrajectory*>& batch,
                               const EmbeddingConfig& cfg);

// Recurrent encoder over a batch: event embedding, per-step max-pool, gated
// cell. Returns one B x k state matrix per step plus the pooled step
// representations.
struct SequenceEncoderParams {
    EventEmbeddingParams embed;
    GatedCellParams cell;
    EmbeddingConfig cfg;

    static SequenceEncoderParams create(ad::ParameterStore& store, const std::string& prefix,
                                        const EmbeddingConfig& cfg, std::mt19937_64& rng);
};

struct EncodedBatch {
    std::vector<ad::Var> pooled;  // per step: B x k
    std::vector<ad::Var> states;  // per step: B x k
};

EncodedBatch encode_batch(ad::Tape& tape, ad::ParameterStore& store,
                          const SequenceEncoderParams& enc, const BatchLayout& layout,
                          bool trainable);

// Convenience single-trajectory encoding without gradients; returns T x k.
Mat encode_trajectory(ad::ParameterStore& store, const SequenceEncoderParams& enc,
                      const PatientTrajectory& traj);

}  // namespace dac
