#pragma once

// Off-policy evaluation and the synthetic-oracle accuracy metrics. Policies
// enter as probability suppliers over the flat action space so the same code
// evaluates the actor, the clone, the true behavior policy on synthetic
// data, and smoothed deterministic policies.

#include <functional>
#include <vector>

#include "dac/nn.hpp"
#include "dac/rewards.hpp"
#include "dac/trajectory.hpp"

namespace dac {

// Full action distribution at (trajectory, 0-based step).
using PolicyProbsFn = std::function<Vec(const PatientTrajectory&, int)>;

// Point-mass policy smoothed for importance sampling: 1 - eps on the chosen
// action, eps spread uniformly over the rest.
Vec smooth_deterministic(int action_index, int action_count, double epsilon = 0.01);

// Trajectory-wise weighted importance sampling with the dataset-average
// cumulative ratio as the self-normalizer. Rewards follow the terminal +-15
// convention; the behavior probability of each observed action is floored.
double wis(const std::vector<PatientTrajectory>& trajectories, const PolicyProbsFn& pi_eval,
           const PolicyProbsFn& pi_behavior, double gamma, double behavior_floor = 1e-4);

// ACC-3 / ACC-1 against oracle actions: per-patient step averages, then the
// cohort mean. ACC-3 requires all three parameters to match simultaneously;
// ACC-1 credits each parameter separately.
struct AccResult {
    double acc3 = 0.0;
    double acc1 = 0.0;
};
AccResult acc_metrics(const std::vector<std::vector<ActionTriple>>& recommended,
                      const std::vector<std::vector<ActionTriple>>& oracle);

// ---------------------------------------------------------------------------
// Estimated mortality: a held-out risk model over (state, action) pairs and
// a calibration curve mapping its predictions to empirical mortality.
// ---------------------------------------------------------------------------

struct ActionRiskModel {
    ad::ParameterStore store;
    SequenceEncoderParams encoder;
    AffineHeadParams head;  // k -> 343 sigmoid

    static ActionRiskModel create(const EmbeddingConfig& cfg, std::uint64_t seed);
    // T x 343 mortality probabilities.
    Mat step_action_risks(const PatientTrajectory& traj);
};

struct ActionRiskTrainOptions {
    int epochs = 6;
    int batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

// BCE on the taken action's coordinate; trained on held-out behavior data.
ActionRiskModel train_action_risk_model(const std::vector<PatientTrajectory>& held_out,
                                        const EmbeddingConfig& cfg,
                                        const ActionRiskTrainOptions& options);

struct CalibrationCurve {
    std::vector<double> centers;    // mean predicted risk per merged bin
    std::vector<double> mortality;  // empirical mortality per merged bin
    std::vector<long> counts;

    // Piecewise-linear between centers, clamped at the ends.
    double operator()(double predicted) const;
};

// Bins of `bin_width` on [0, 1]; bins with fewer than `min_count` samples
// merge rightward (a short tail merges into its left neighbor). Throws when
// the held-out outcomes are single-class.
CalibrationCurve fit_calibration(const std::vector<double>& predicted,
                                 const std::vector<int>& outcomes, double bin_width = 0.02,
                                 int min_count = 20);

// Convenience: predictions of `model` at every (state, observed action).
CalibrationCurve fit_calibration(const std::vector<PatientTrajectory>& held_out,
                                 ActionRiskModel& model, double bin_width = 0.02,
                                 int min_count = 20);

// EM: mean calibrated mortality of the policy's recommended action over all
// visited states.
double estimated_mortality(const std::vector<PatientTrajectory>& trajectories,
                           const PolicyProbsFn& policy, ActionRiskModel& model,
                           const CalibrationCurve& curve);

// ---------------------------------------------------------------------------
// Descriptive analyses: action histograms, dose-difference mortality, and
// the mortality-versus-expected-return curve.
// ---------------------------------------------------------------------------

using StepValueFn = std::function<double(const PatientTrajectory&, int)>;

struct DescriptiveReport {
    // Rows: Vt, PEEP, FiO2. Columns: levels 1..7; masses sum to 1.
    Mat clinician_hist;
    Mat policy_hist;
    // Offsets -6..6 (13 columns): mortality rate and sample count per
    // (recommended - actual) level difference.
    Mat dose_diff_mortality;
    Mat dose_diff_count;
    // Mortality by expected-return decile.
    std::vector<double> return_bin_center;
    std::vector<double> return_bin_mortality;
};

DescriptiveReport descriptive_reports(const std::vector<PatientTrajectory>& trajectories,
                                      const PolicyProbsFn& policy,
                                      const StepValueFn& expected_return);

}  // namespace dac
