#pragma once

// Canonical data model for patient trajectories: the 7x7x7 ventilator action
// space, per-parameter change classes, equal-frequency value discretization,
// and 10-fold cohort splitting. Everything here is immutable after
// construction and safe to read from concurrent workers.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dac {

inline constexpr int kLevelsPerParam = 7;
inline constexpr int kActionCount = 343;      // 7 * 7 * 7
inline constexpr int kChangeClassCount = 27;  // 3 * 3 * 3, excluding INITIAL
inline constexpr int kInitialChangeClass = 27;

// One observed (variable, value) measurement inside a time step. `subrange`
// is filled in by apply_value_bins once training-split bin edges exist; 0
// means "not yet discretized".
struct ObservationEvent {
    int variable_id = 0;
    double value = 0.0;
    int subrange = 0;
};

// Discretized ventilator setting triple. Levels are 1-based per the action
// table: index 1 is the lowest bin, 7 the open-ended top bin.
struct ActionTriple {
    int vt = 1;
    int peep = 1;
    int fio2 = 1;

    bool operator==(const ActionTriple&) const = default;
};

bool valid_action(const ActionTriple& a);

// Maps raw ventilator settings (Vt in mL/kg, PEEP in cmH2O, FiO2 in %) to
// their levels. Bin boundaries are right-open, so a value exactly on a listed
// boundary falls in the upper bin. Throws std::invalid_argument on negative
// or non-finite input.
ActionTriple discretize_action(double vt_ml_per_kg, double peep_cm_h2o, double fio2_percent);

// Bijective codec between triples and flat indices in [0, 342].
int flat_index(const ActionTriple& a);
ActionTriple unflatten(int index);

// Flat action index mapped to a centered scalar in [-1, 1]; index 0 -> -1,
// index 342 -> +1. Used wherever a single action magnitude is needed.
double action_scalar(int flat_index);

// Per-parameter {decrease, keep, increase} transition between consecutive
// actions. The first step of a trajectory has no predecessor and gets the
// distinguished INITIAL class.
struct ChangeClass {
    bool initial = false;
    int vt = 0;    // sign in {-1, 0, +1}
    int peep = 0;
    int fio2 = 0;

    bool operator==(const ChangeClass&) const = default;
};

ChangeClass action_change(const std::optional<ActionTriple>& prev, const ActionTriple& cur);

// Index in [0, 26] for non-initial classes, kInitialChangeClass (27) for the
// INITIAL class.
int change_class_index(const ChangeClass& c);
ChangeClass change_class_from_index(int index);

struct TrajectoryStep {
    std::vector<ObservationEvent> events;
    ActionTriple action;
};

struct PatientTrajectory {
    std::string patient_id;
    int outcome = 0;  // 1 = mortality
    std::vector<TrajectoryStep> steps;

    int length() const { return static_cast<int>(steps.size()); }
};

// Throws std::invalid_argument when a trajectory violates the data contract
// (empty step list, step without events, invalid action levels, outcome
// outside {0,1}, non-finite values).
void validate_trajectory(const PatientTrajectory& p);

// Change-class sequence of a trajectory: INITIAL at t=1, then per-step signs.
std::vector<ChangeClass> change_sequence(const PatientTrajectory& p);

// Equal-frequency value bins fitted on training data only. Edges are
// midpoints between the order statistics that separate quantile blocks; a
// variable with fewer distinct values than requested degrades to fewer bins,
// and a constant variable collapses to a single bin.
struct ValueBins {
    int requested_bins = 0;
    std::map<int, std::vector<double>> edges;  // variable_id -> ascending edges

    bool has_variable(int variable_id) const { return edges.count(variable_id) > 0; }
    int bin_count(int variable_id) const;
    std::vector<int> variable_ids() const;
};

ValueBins fit_value_bins(const std::vector<PatientTrajectory>& training, int bins);

// Subrange in [1, bin_count]. Out-of-range values clamp to the first/last
// bin; unknown variable ids throw.
int discretize_value(const ValueBins& bins, int variable_id, double value);

// Fills ObservationEvent::subrange in place for every event.
void apply_value_bins(const ValueBins& bins, std::vector<PatientTrajectory>& cohort);

// 10-fold assignment plus the 7 train / 1 validation / 2 test designation
// used by the experiment driver.
struct CohortSplit {
    std::map<std::string, int> fold_of;  // patient_id -> fold in [0, 9]

    // rotation r designates validation = fold (7+r)%10 and test = folds
    // (8+r)%10, (9+r)%10; the remaining seven folds train.
    std::vector<std::string> train_ids(int rotation = 0) const;
    std::vector<std::string> validation_ids(int rotation = 0) const;
    std::vector<std::string> test_ids(int rotation = 0) const;
};

inline constexpr int kFoldCount = 10;

// Deterministic given seed; fold sizes differ by at most one. Throws when
// fewer than 10 patients are supplied.
CohortSplit split_cohort(std::vector<std::string> patient_ids, std::uint64_t seed);

// Selects the sub-cohort with the given ids, preserving id order.
std::vector<PatientTrajectory> select_patients(const std::vector<PatientTrajectory>& cohort,
                                               const std::vector<std::string>& ids);

}  // namespace dac
