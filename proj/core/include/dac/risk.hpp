#pragma once

// Standalone mortality-risk model and the balanced resampler. The risk model
// (recurrent encoder plus sigmoid head) is pre-trained on the training folds,
// frozen, and only used to pool patients by maximal per-step risk and to
// pair survivors with non-survivors of similar risk.

#include <random>
#include <string>
#include <vector>

#include "dac/autodiff.hpp"
#include "dac/nn.hpp"
#include "dac/trajectory.hpp"
#include "json.hpp"

namespace dac {

struct RiskModel {
    ad::ParameterStore store;
    SequenceEncoderParams encoder;
    AffineHeadParams head;  // k -> 1 logit

    static RiskModel create(const EmbeddingConfig& cfg, std::uint64_t seed);

    // Per-step mortality probabilities for one trajectory.
    Vec step_risks(const PatientTrajectory& traj);
    double max_risk(const PatientTrajectory& traj);
};

struct RiskTrainOptions {
    int epochs = 6;
    int batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
};

// Binary cross-entropy on the outcome at every step. Throws when the
// training set has a single outcome class.
RiskModel train_risk_model(const std::vector<PatientTrajectory>& training,
                           const EmbeddingConfig& cfg, const RiskTrainOptions& options);

// Loss builder shared with the gradient-check tests: BCE summed over the
// valid steps of the batch, divided by `denom` (defaults to the batch's own
// valid-step count; the sharded runner passes the global count instead).
ad::Var risk_bce_loss(ad::Tape& tape, RiskModel& model, const BatchLayout& layout,
                      double denom = 0.0);

// Batched max-risk scores, one per trajectory, in input order.
std::vector<double> cohort_max_risks(RiskModel& model,
                                     const std::vector<PatientTrajectory>& cohort);

struct RiskRecord {
    int cohort_index = 0;
    std::string patient_id;
    double max_risk = 0.0;
};

// Survivor / non-survivor pools sorted by (max_risk, patient_id).
struct PatientPools {
    std::vector<RiskRecord> survivors;
    std::vector<RiskRecord> nonsurvivors;

    static PatientPools build(const std::vector<PatientTrajectory>& cohort,
                              const std::vector<double>& max_risks);
};

struct BalancedBatch {
    std::vector<int> survivor_index;     // cohort indices, one per pair
    std::vector<int> nonsurvivor_index;  // aligned with survivor_index
    std::vector<double> pair_risk_gap;   // |survivor - nonsurvivor| max risk
    int pairs_within_tolerance = 0;

    // Interleaved cohort indices (nonsurvivor, survivor, ...) for training.
    std::vector<int> interleaved() const;
    nlohmann::json manifest(const std::vector<PatientTrajectory>& cohort) const;
};

// Draws batch_size/2 non-survivors uniformly with replacement and matches
// each to the survivor with the nearest max_risk (ties to the lower
// patient_id). `tolerance` only feeds the audit counter; no pair is ever
// rejected. Throws when batch_size is odd or a pool is empty.
BalancedBatch sample_balanced_batch(const PatientPools& pools, int batch_size, double tolerance,
                                    std::mt19937_64& rng);

}  // namespace dac
