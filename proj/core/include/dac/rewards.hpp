#pragma once

// Dynamic IPTW over change classes plus the reward algebra. The numerator is
// a small recurrent language model over change-class sequences (actions
// only); the denominator is the behavior clone's change head evaluated at
// the patient state. Both are pre-trained, frozen, and combined into a
// clipped running product per step. Short-term reward compares the taken
// action's predicted mortality with the policy-averaged mortality.

#include <random>
#include <vector>

#include "dac/autodiff.hpp"
#include "dac/nn.hpp"
#include "dac/trajectory.hpp"

namespace dac {

// ---------------------------------------------------------------------------
// Numerator model f(a_tau | A_{tau-1}) over the 27 change classes.
// ---------------------------------------------------------------------------

struct NumeratorModel {
    ad::ParameterStore store;
    int token_table = -1;  // 28 x embed_dim; row 27 is the INITIAL token
    GatedCellParams cell;
    AffineHeadParams head;  // hidden -> 27
    int embed_dim = 16;
    int hidden_dim = 32;

    static NumeratorModel create(int embed_dim, int hidden_dim, std::uint64_t seed);

    // Rows tau = 2..T: P(class_tau | classes_{<tau}), given the trajectory's
    // class sequence (INITIAL first). Shape (T-1) x 27.
    Mat sequence_probs(const std::vector<int>& class_sequence);
};

struct NumeratorTrainOptions {
    int epochs = 8;
    int batch_size = 256;
    double learning_rate = 3e-3;
    std::uint64_t seed = 1;
};

// Negative log-likelihood of the observed classes at positions 2..T for the
// sequences in [begin, end); normalized by `denom` prediction positions.
ad::Var numerator_nll_loss(ad::Tape& tape, NumeratorModel& model,
                           const std::vector<std::vector<int>>& sequences, int begin, int end,
                           double denom);

NumeratorModel train_numerator(const std::vector<std::vector<int>>& sequences,
                               const NumeratorTrainOptions& options);

// Change-class sequences of a cohort (INITIAL first).
std::vector<std::vector<int>> cohort_change_sequences(
    const std::vector<PatientTrajectory>& cohort);

// ---------------------------------------------------------------------------
// Behavior clone pi^c: encoder shared by a 27-way change head (the Eq-1
// denominator) and a full 343-way action head (imitation baseline and
// behavior-policy estimate for off-policy evaluation).
// ---------------------------------------------------------------------------

struct BehaviorClone {
    ad::ParameterStore store;
    SequenceEncoderParams encoder;
    AffineHeadParams change_head;  // k -> 27
    AffineHeadParams action_head;  // k -> 343

    static BehaviorClone create(const EmbeddingConfig& cfg, std::uint64_t seed);

    // Per-step distributions for one trajectory: T x 27 / T x 343.
    Mat change_probs(const PatientTrajectory& traj);
    Mat action_probs(const PatientTrajectory& traj);
};

struct CloneTrainOptions {
    int epochs = 6;
    int batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

// Cross-entropy of observed change classes (steps 2..T) plus observed
// actions (all steps); each term normalized by its own global count.
ad::Var clone_ce_loss(ad::Tape& tape, BehaviorClone& clone, const BatchLayout& layout,
                      double denom_change, double denom_action);

BehaviorClone train_behavior_clone(const std::vector<PatientTrajectory>& training,
                                   const EmbeddingConfig& cfg, const CloneTrainOptions& options);

// ---------------------------------------------------------------------------
// IPTW weights and rewards.
// ---------------------------------------------------------------------------

struct WeightOptions {
    double prob_floor = 1e-4;
    double clip_min = 0.1;
    double clip_max = 10.0;
};

// w_t = clip( prod_{tau<=t} floored(numer_tau) / floored(denom_tau) ).
// Entry 0 of both inputs corresponds to the INITIAL step and contributes a
// fixed factor of 1.
Vec iptw_weights(const Vec& numerator_probs, const Vec& denominator_probs,
                 const WeightOptions& options);

// Probabilities of the observed change class per step under both frozen
// models, then the clipped running product.
Vec iptw_weights(const PatientTrajectory& traj, NumeratorModel& numerator, BehaviorClone& clone,
                 const WeightOptions& options);

// Weights for a whole cohort; clone encoding is batched and shard-parallel.
std::vector<Vec> cohort_iptw_weights(const std::vector<PatientTrajectory>& cohort,
                                     NumeratorModel& numerator, BehaviorClone& clone,
                                     const WeightOptions& options);

// R^s = sum_a pi(a|s) p_m(s,a) - p_m(s,a_taken); in [-1, 1].
double short_term_reward(const Vec& policy_probs, const Vec& mortality_probs, int action_index);

// +15 for survival, -15 for mortality; non-terminal steps carry 0.
double terminal_reward(int outcome);
inline constexpr double kTerminalRewardMagnitude = 15.0;

// Q = w (alpha R^l + (1-alpha) R^s).
double combined_reward(double weight, double long_term, double short_term, double alpha);

// Per-step quadruple feeding the actor update.
struct RewardBundle {
    Vec weights;
    Vec long_term;
    Vec short_term;
    Vec combined;
    double alpha = 0.1;
};

}  // namespace dac
