#pragma once

// The deconfounding actor-critic training loop: a shared recurrent encoder
// with an actor head, a bootstrapped long-term value head (with a frozen
// target copy), and a per-action mortality head. Mini-batches come from the
// risk-balanced resampler, rewards are weighted by the frozen IPTW models,
// and the actor ascends the weighted policy gradient with Q detached.
// Ablation flags remove exactly one ingredient each.

#include <functional>
#include <memory>
#include <vector>

#include "dac/evaluation.hpp"
#include "dac/nn.hpp"
#include "dac/rewards.hpp"
#include "dac/risk.hpp"

namespace dac {

// Non-finite loss or gradient; the CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double alpha = 0.1;
    double gamma = 0.99;
    double learning_rate = 1e-4;
    int batch_size = 256;
    int epochs = 8;
    int iters_per_epoch = 12;
    int target_sync = 100;  // actor/critic updates between target-head syncs
    WeightOptions weights;
    double match_tolerance = 0.05;  // audit-only pairing tolerance

    // Ablations: resampling (rsp), IPTW weights (dcf), short-term reward
    // (alpha -> 1), long-term reward (alpha -> 0).
    bool no_resample = false;
    bool no_iptw = false;
    bool no_short = false;
    bool no_long = false;

    std::uint64_t seed = 1;

    void validate() const;
    double effective_alpha() const;
};

struct PolicyModel {
    ad::ParameterStore store;
    SequenceEncoderParams encoder;
    AffineHeadParams actor;        // k -> 343 logits
    AffineHeadParams critic_long;  // k -> 343 values
    AffineHeadParams mortality;    // k -> 343 sigmoid
    Mat target_weight;             // frozen copy of the long-term head
    Mat target_bias;

    static PolicyModel create(const EmbeddingConfig& cfg, std::uint64_t seed);
    void sync_target();

    Mat policy_probs(const PatientTrajectory& traj);      // T x 343
    Mat long_term_values(const PatientTrajectory& traj);  // T x 343, online head
    Mat mortality_probs(const PatientTrajectory& traj);   // T x 343
    std::vector<ActionTriple> recommend(const PatientTrajectory& traj);
};

// Eq-5-style affine values for raw states (rows) under any head.
Mat affine_values(const ad::ParameterStore& store, const AffineHeadParams& head,
                  const Mat& states);
double select_action_value(const Mat& values, int row, int flat_action);

// TD targets z_t for a batch under the current encoder and the frozen target
// head: +-15 at the terminal step, gamma * max_a target(s_{t+1}, a) before.
// Rows align with the batch, columns with steps; invalid steps carry 0.
Mat td_targets(PolicyModel& model, const std::vector<const PatientTrajectory*>& batch,
               double gamma);

// Per-step loss builders shared by the training loop and the gradient-check
// suites. `states` has one row per sample; `actions` picks the coordinate.
//
// -sum_i w_i log pi(a_i | s_i); pass w_i = Q_i * valid_i / denom to ascend
// the weighted policy gradient.
ad::Var weighted_log_policy_loss(ad::Tape& tape, ad::ParameterStore& store,
                                 const AffineHeadParams& actor, ad::Var states,
                                 const std::vector<int>& actions, const Mat& weights);
// sum_i m_i (R^l(s_i, a_i) - z_i)^2.
ad::Var critic_td_loss(ad::Tape& tape, ad::ParameterStore& store,
                       const AffineHeadParams& critic, ad::Var states,
                       const std::vector<int>& actions, const Mat& targets, const Mat& mask);
// Per-action BCE on the taken coordinate: sum_i [w_pos_i log p_i +
// w_neg_i log(1 - p_i)]; pass w_pos_i = -y_i valid_i / denom etc.
ad::Var action_bce_loss(ad::Tape& tape, ad::ParameterStore& store, const AffineHeadParams& head,
                        ad::Var states, const std::vector<int>& actions, const Mat& w_pos,
                        const Mat& w_neg);

struct DacStepLosses {
    double actor = 0.0;
    double critic = 0.0;
    double mortality = 0.0;
};

// One combined gradient step (actor + critic + mortality) on a prepared
// batch. `batch_weights` holds w_t per patient (ones under no_iptw). Throws
// NumericalError on non-finite losses.
DacStepLosses dac_gradient_step(PolicyModel& model, ad::AdamOptimizer& optimizer,
                                const std::vector<const PatientTrajectory*>& batch,
                                const std::vector<const Vec*>& batch_weights,
                                const TrainConfig& config);

struct EpochMetrics {
    int epoch = 0;
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double mortality_loss = 0.0;
    double validation_wis = 0.0;
};

struct TrainResult {
    PolicyModel policy;  // validation-selected best snapshot
    std::vector<EpochMetrics> metrics;
    int best_epoch = -1;
};

// Batched per-trajectory distributions exposed as PolicyProbsFn suppliers
// (precomputed, so safe to call from parallel evaluation workers).
using ProbTable = std::shared_ptr<const std::map<std::string, Mat>>;
ProbTable policy_prob_table(PolicyModel& model, const std::vector<PatientTrajectory>& cohort);
ProbTable clone_action_prob_table(BehaviorClone& clone,
                                  const std::vector<PatientTrajectory>& cohort);
PolicyProbsFn table_policy(ProbTable table);

using EpochCallback =
    std::function<void(const EpochMetrics&, PolicyModel&, ad::AdamOptimizer&)>;

// Runs the training loop. The risk model pools the training cohort for
// resampling; the clone and numerator models provide the frozen weights (and
// the clone doubles as the behavior policy for validation WIS).
TrainResult train_dac(const std::vector<PatientTrajectory>& training,
                      const std::vector<PatientTrajectory>& validation,
                      const EmbeddingConfig& cfg, const TrainConfig& config, RiskModel& risk,
                      BehaviorClone& clone, NumeratorModel& numerator,
                      const EpochCallback& on_epoch = nullptr, int start_epoch = 0,
                      PolicyModel* resume_from = nullptr);

}  // namespace dac
