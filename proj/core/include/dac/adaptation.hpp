#pragma once

// Dynamics-matching policy adaptation. Paired dynamics models predict the
// next shared-space covariate vector from (state, action embedding); the
// target model is initialized from the source and fine-tuned on target data;
// the adapted policy picks, per state, the action whose predicted target
// next-covariates are closest to what the source policy's action would have
// produced under the source dynamics. States on both cohorts come from the
// source policy's encoder so the two dynamics models share a state space.

#include <vector>

#include "dac/trainer.hpp"

namespace dac {

// Sorted intersection of the observed variable vocabularies.
std::vector<int> shared_vocabulary(const std::vector<PatientTrajectory>& a,
                                   const std::vector<PatientTrajectory>& b);

// Per-cohort z-scoring of the shared covariate space, fitted on a training
// split. Constant variables get unit scale.
struct CovariateStandardizer {
    std::vector<int> variable_ids;
    Vec mean;
    Vec std_dev;

    static CovariateStandardizer fit(const std::vector<PatientTrajectory>& training,
                                     const std::vector<int>& variable_ids);
    // z-scored covariates at one step; variables unobserved at the step
    // contribute 0 (the training mean).
    Vec transform(const TrajectoryStep& step) const;
};

struct DynamicsModel {
    ad::ParameterStore store;
    int action_table = -1;  // kActionCount x action_dim
    AffineHeadParams map;   // (state_dim + action_dim) -> out_dim
    int state_dim = 0;
    int action_dim = 0;
    int out_dim = 0;

    static DynamicsModel create(int state_dim, int action_dim, int out_dim, std::uint64_t seed);

    // f(s, a) for a batch of rows.
    Mat predict(const Mat& states, const std::vector<int>& actions);
    // Predictions of every action at one state: kActionCount x out_dim.
    Mat predict_all_actions(const Vec& state);
};

// Flat (state, action, next-covariate) samples.
struct DynamicsDataset {
    Mat states;
    std::vector<int> actions;
    Mat targets;

    int size() const { return static_cast<int>(actions.size()); }
};

// Consecutive-step pairs encoded by the source policy's encoder; throws when
// no trajectory has at least two steps.
DynamicsDataset build_dynamics_dataset(PolicyModel& encoder_owner,
                                       const std::vector<PatientTrajectory>& cohort,
                                       const CovariateStandardizer& standardizer);

struct DynamicsTrainOptions {
    int epochs = 30;
    int batch_size = 256;
    double learning_rate = 3e-3;
    bool train_action_table = true;  // freeze for planted-recovery diagnostics
    std::uint64_t seed = 1;
};

// Squared-error loss, summed over output coordinates, averaged over `denom`
// samples.
ad::Var dynamics_mse_loss(ad::Tape& tape, DynamicsModel& model, const DynamicsDataset& data,
                          int begin, int end, double denom, bool train_action_table = true);

DynamicsModel train_dynamics(const DynamicsDataset& data, int state_dim, int action_dim,
                             int out_dim, const DynamicsTrainOptions& options);

// Continues training from an existing model (used to fine-tune the target
// copy).
void fine_tune_dynamics(DynamicsModel& model, const DynamicsDataset& data,
                        const DynamicsTrainOptions& options);

// First index achieving the minimal distance (lowest flat index on ties).
int argmin_distance(const Vec& distances);

// Squared-distance argmin of `candidate_predictions` rows against a single
// reference prediction.
int match_next_state(const Mat& candidate_predictions, const Vec& reference_prediction);

struct AdaptationContext {
    PolicyModel* source_policy = nullptr;
    DynamicsModel* source_dynamics = nullptr;
    DynamicsModel* target_dynamics = nullptr;
};

// Eq-13 rule at one encoded state.
ActionTriple adapt_action(const Vec& state, AdaptationContext& ctx);

struct AdaptationResult {
    DynamicsModel target_dynamics;
    std::vector<std::vector<ActionTriple>> decisions;  // per eval trajectory/step
    std::vector<std::vector<int>> source_actions;      // source argmax, same shape
};

// Initializes f^T = f^S, fine-tunes on `target_finetune` (skipped when
// empty), then recommends actions on `target_eval`.
AdaptationResult run_adaptation(PolicyModel& source_policy, DynamicsModel& source_dynamics,
                                const std::vector<PatientTrajectory>& target_finetune,
                                const std::vector<PatientTrajectory>& target_eval,
                                const CovariateStandardizer& target_standardizer,
                                const DynamicsTrainOptions& options);

}  // namespace dac
