#pragma once

// Confounded semi-synthetic environment: covariates and hidden states follow
// a p-order autoregressive process driven by past actions, treatments are
// drawn from a multinomial-logistic behavior policy over the confounder
// q_t = (1/t) sum_{r<=t} s_r + g(o_t), and the raw outcome w'q_T + b is
// thresholded to hit a target mortality fraction. The generator keeps full
// ground truth so a brute-force rollout oracle can label optimal actions.

#include <cstdint>
#include <utility>
#include <vector>

#include "dac/nn.hpp"
#include "dac/trajectory.hpp"

namespace dac {

struct SyntheticConfig {
    int ar_order = 2;    // p
    int horizon = 10;    // T, steps per patient
    int obs_dim = 6;     // covariate columns
    int hidden_dim = 4;  // hidden-state columns
    int num_levels = 7;  // levels per action parameter (sub-grid of the 7^3 space)

    double kappa = 2.0;  // behavior-policy confounding strength

    int n_survivor = 1000;
    int n_nonsurvivor = 3000;

    // Law parameters. The autoregressive coefficients follow
    // N(1 - r/p, (1/p)^2) per lag r; these scales control the rest.
    double treat_effect_std = 0.02;  // beta_r, upsilon_r ~ N(0, std^2)
    double noise_std = 0.01;         // eta_t, eps_t ~ N(0, std^2)
    double outcome_bias_std = 0.1;   // b ~ N(0, std^2)

    std::uint64_t seed = 1;

    void validate() const;
    int cohort_size() const { return n_survivor + n_nonsurvivor; }
    double target_mortality() const;
};

// Autoregressive coefficient block. Row r-1 holds the lag-r coefficients.
struct ArProcess {
    Mat alpha;    // p x obs_dim
    Mat mu;       // p x hidden_dim
    Vec beta;     // p, action effect on covariates
    Vec upsilon;  // p, action effect on hidden states

    int order() const { return static_cast<int>(alpha.rows()); }
    int obs_dim() const { return static_cast<int>(alpha.cols()); }
    int hidden_dim() const { return static_cast<int>(mu.cols()); }
};

// Lag window at some time t: row r-1 holds the value at t-r; actions hold
// the scalar applied at t-r.
struct ArLagState {
    Mat obs;
    Mat hidden;
    Vec actions;
};

ArLagState zero_lag_state(const ArProcess& process);

// Computes (o_t, s_t) from the lags and pushes them; the step's action is
// pushed separately once chosen.
void ar_step(const ArProcess& process, ArLagState& state, const Vec& obs_noise,
             const Vec& hidden_noise, Vec& obs_out, Vec& hidden_out);
void ar_push_action(ArLagState& state, double action_scalar);

struct PatientGroundTruth {
    Mat initial_obs;     // p x obs_dim, row m = value at time -m
    Mat initial_hidden;  // p x hidden_dim
    Mat obs;             // T x obs_dim
    Mat hidden;          // T x hidden_dim
    Mat confounder;      // T x hidden_dim (q_t)
    std::vector<int> behavior_action;  // flat indices actually taken
    double raw_outcome = 0.0;
    int label = 0;
    std::vector<ActionTriple> oracle_actions;  // per step
};

struct SyntheticGroundTruth {
    SyntheticConfig config;
    ArProcess process;
    Mat g_map;           // hidden_dim x obs_dim; q_t += g_map * o_t
    Vec outcome_weight;  // hidden_dim, entries U(-1,1)
    double outcome_bias = 0.0;
    Mat behavior_theta;  // |subgrid| x hidden_dim
    double threshold = 0.0;
    std::vector<int> action_subgrid;  // flat indices, ascending
    std::vector<PatientGroundTruth> patients;
};

// Flat indices of the L x L x L sub-grid in ascending flat order, and the
// centered scalar assigned to each position.
std::vector<int> action_subgrid(int num_levels);
double subgrid_scalar(int position, int subgrid_size);

// P(a = j | q) proportional to exp(kappa * theta_j . q); strictly positive
// and normalized.
Vec behavior_action_distribution(const Vec& q, double kappa, const Mat& theta);

struct OutcomeLabels {
    std::vector<int> labels;
    double threshold = 0.0;
};

// Threshold at the empirical quantile so that the fraction labeled 1 matches
// `target_fraction` within 1/n; label 1 means raw outcome above threshold.
OutcomeLabels label_outcomes(const std::vector<double>& raw, double target_fraction);

struct SimulatedCohort {
    std::vector<PatientTrajectory> trajectories;
    SyntheticGroundTruth truth;
};

// Deterministic given config.seed; patient simulations run from per-patient
// derived seeds. Oracle actions are filled in for every patient and step.
SimulatedCohort simulate_cohort(const SyntheticConfig& config);

// Linear response c_t of the raw outcome to the step-t action scalar
// (1-based t). Independent of patient history because the recursions are
// linear in the action scalars.
Vec action_outcome_coefficients(const SyntheticGroundTruth& truth);

// Noise-free rollout from the realized state of `patient` at 1-based step
// `t`: the candidate sub-grid position acts at t, later steps act greedily on
// the per-step linear response. Returns the terminal raw outcome.
double oracle_rollout_outcome(const SyntheticGroundTruth& truth, int patient, int t,
                              int candidate_position);
double oracle_rollout_outcome(const SyntheticGroundTruth& truth, int patient, int t,
                              int candidate_position, const Vec& response);

// Exhaustive candidate rollout scan; ties resolve to the lowest flat index.
ActionTriple oracle_optimal_action(const SyntheticGroundTruth& truth, int patient, int t);

// Memoized shortcut: by linearity the rollout argmin reduces to the sign of
// the step's response coefficient. Used to label whole cohorts; agreement
// with the rollout scan is asserted in the test suites.
int oracle_greedy_position(const Vec& response, int t, int subgrid_size);

}  // namespace dac
