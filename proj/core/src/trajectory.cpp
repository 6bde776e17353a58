#include "dac/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace dac {

namespace {

// Right-open boundaries from the action table: level i covers
// [edges[i-2], edges[i-1]) with level 1 starting at 0 and level 7 open-ended.
constexpr double kVtEdges[] = {2.5, 5.0, 7.5, 10.0, 12.5, 15.0};
constexpr double kPeepEdges[] = {5.0, 7.0, 9.0, 11.0, 13.0, 15.0};
constexpr double kFio2Edges[] = {30.0, 35.0, 40.0, 45.0, 50.0, 55.0};

int level_of(double value, const double (&edges)[6]) {
    int level = 1;
    for (double e : edges) {
        if (value >= e) ++level;
    }
    return level;
}

int sign_of(int delta) { return (delta > 0) - (delta < 0); }

}  // namespace

bool valid_action(const ActionTriple& a) {
    auto ok = [](int v) { return v >= 1 && v <= kLevelsPerParam; };
    return ok(a.vt) && ok(a.peep) && ok(a.fio2);
}

ActionTriple discretize_action(double vt_ml_per_kg, double peep_cm_h2o, double fio2_percent) {
    for (double v : {vt_ml_per_kg, peep_cm_h2o, fio2_percent}) {
        if (!std::isfinite(v) || v < 0.0) {
            throw std::invalid_argument("discretize_action: raw settings must be finite and >= 0");
        }
    }
    return ActionTriple{level_of(vt_ml_per_kg, kVtEdges), level_of(peep_cm_h2o, kPeepEdges),
                        level_of(fio2_percent, kFio2Edges)};
}

int flat_index(const ActionTriple& a) {
    if (!valid_action(a)) {
        throw std::invalid_argument("flat_index: action levels must be in [1,7]");
    }
    return (a.vt - 1) * kLevelsPerParam * kLevelsPerParam + (a.peep - 1) * kLevelsPerParam +
           (a.fio2 - 1);
}

ActionTriple unflatten(int index) {
    if (index < 0 || index >= kActionCount) {
        throw std::invalid_argument("unflatten: flat index must be in [0,342]");
    }
    ActionTriple a;
    a.fio2 = index % kLevelsPerParam + 1;
    a.peep = (index / kLevelsPerParam) % kLevelsPerParam + 1;
    a.vt = index / (kLevelsPerParam * kLevelsPerParam) + 1;
    return a;
}

double action_scalar(int flat) {
    if (flat < 0 || flat >= kActionCount) {
        throw std::invalid_argument("action_scalar: flat index must be in [0,342]");
    }
    return 2.0 * flat / (kActionCount - 1) - 1.0;
}

ChangeClass action_change(const std::optional<ActionTriple>& prev, const ActionTriple& cur) {
    if (!valid_action(cur) || (prev && !valid_action(*prev))) {
        throw std::invalid_argument("action_change: invalid action triple");
    }
    ChangeClass c;
    if (!prev) {
        c.initial = true;
        return c;
    }
    c.vt = sign_of(cur.vt - prev->vt);
    c.peep = sign_of(cur.peep - prev->peep);
    c.fio2 = sign_of(cur.fio2 - prev->fio2);
    return c;
}

int change_class_index(const ChangeClass& c) {
    if (c.initial) return kInitialChangeClass;
    return (c.vt + 1) * 9 + (c.peep + 1) * 3 + (c.fio2 + 1);
}

ChangeClass change_class_from_index(int index) {
    if (index == kInitialChangeClass) {
        ChangeClass c;
        c.initial = true;
        return c;
    }
    if (index < 0 || index >= kChangeClassCount) {
        throw std::invalid_argument("change_class_from_index: index must be in [0,27]");
    }
    ChangeClass c;
    c.vt = index / 9 - 1;
    c.peep = (index / 3) % 3 - 1;
    c.fio2 = index % 3 - 1;
    return c;
}

void validate_trajectory(const PatientTrajectory& p) {
    if (p.patient_id.empty()) throw std::invalid_argument("trajectory: empty patient_id");
    if (p.steps.empty()) throw std::invalid_argument("trajectory " + p.patient_id + ": no steps");
    if (p.outcome != 0 && p.outcome != 1) {
        throw std::invalid_argument("trajectory " + p.patient_id + ": outcome must be 0 or 1");
    }
    for (const TrajectoryStep& s : p.steps) {
        if (s.events.empty()) {
            throw std::invalid_argument("trajectory " + p.patient_id +
                                        ": every step needs at least one event");
        }
        if (!valid_action(s.action)) {
            throw std::invalid_argument("trajectory " + p.patient_id + ": invalid action levels");
        }
        for (const ObservationEvent& e : s.events) {
            if (!std::isfinite(e.value)) {
                throw std::invalid_argument("trajectory " + p.patient_id +
                                            ": non-finite event value");
            }
        }
    }
}

std::vector<ChangeClass> change_sequence(const PatientTrajectory& p) {
    std::vector<ChangeClass> seq;
    seq.reserve(p.steps.size());
    std::optional<ActionTriple> prev;
    for (const TrajectoryStep& s : p.steps) {
        seq.push_back(action_change(prev, s.action));
        prev = s.action;
    }
    return seq;
}

int ValueBins::bin_count(int variable_id) const {
    auto it = edges.find(variable_id);
    if (it == edges.end()) {
        throw std::invalid_argument("ValueBins: unknown variable_id " + std::to_string(variable_id));
    }
    return static_cast<int>(it->second.size()) + 1;
}

std::vector<int> ValueBins::variable_ids() const {
    std::vector<int> ids;
    ids.reserve(edges.size());
    for (const auto& [id, _] : edges) ids.push_back(id);
    return ids;
}

ValueBins fit_value_bins(const std::vector<PatientTrajectory>& training, int bins) {
    if (bins < 1) throw std::invalid_argument("fit_value_bins: bins must be >= 1");
    std::map<int, std::vector<double>> values;
    for (const PatientTrajectory& p : training) {
        for (const TrajectoryStep& s : p.steps) {
            for (const ObservationEvent& e : s.events) values[e.variable_id].push_back(e.value);
        }
    }

    ValueBins out;
    out.requested_bins = bins;
    for (auto& [id, vals] : values) {
        std::sort(vals.begin(), vals.end());
        const int n = static_cast<int>(vals.size());
        int distinct = 1;
        for (int i = 1; i < n; ++i) {
            if (vals[i] != vals[i - 1]) ++distinct;
        }
        const int v = std::min(bins, distinct);  // degrade when data is too coarse

        std::vector<double> edges;
        for (int i = 1; i < v; ++i) {
            // Edge between the last element of quantile block i and the next
            // element; midpoints keep training values off the boundaries.
            int hi = static_cast<int>(static_cast<long long>(i) * n / v);
            hi = std::clamp(hi, 1, n - 1);
            double edge = 0.5 * (vals[hi - 1] + vals[hi]);
            // A tie straddling the cut would place training values on the
            // boundary; drop the edge instead (degrades the bin count).
            if (edge > vals[hi - 1] && (edges.empty() || edge > edges.back())) {
                edges.push_back(edge);
            }
        }
        out.edges[id] = std::move(edges);
    }
    return out;
}

int discretize_value(const ValueBins& bins, int variable_id, double value) {
    auto it = bins.edges.find(variable_id);
    if (it == bins.edges.end()) {
        throw std::invalid_argument("discretize_value: unknown variable_id " +
                                    std::to_string(variable_id));
    }
    if (!std::isfinite(value)) throw std::invalid_argument("discretize_value: non-finite value");
    const std::vector<double>& e = it->second;
    // Right-open bins: value == edge falls in the upper bin. Values outside
    // the training range clamp to the first/last bin by construction.
    return 1 + static_cast<int>(std::upper_bound(e.begin(), e.end(), value) - e.begin());
}

void apply_value_bins(const ValueBins& bins, std::vector<PatientTrajectory>& cohort) {
    for (PatientTrajectory& p : cohort) {
        for (TrajectoryStep& s : p.steps) {
            for (ObservationEvent& e : s.events) {
                e.subrange = discretize_value(bins, e.variable_id, e.value);
            }
        }
    }
}

namespace {

std::vector<std::string> designated_ids(const CohortSplit& split, const std::vector<int>& folds) {
    std::vector<std::string> ids;
    for (const auto& [id, fold] : split.fold_of) {
        if (std::find(folds.begin(), folds.end(), fold) != folds.end()) ids.push_back(id);
    }
    return ids;
}

}  // namespace

std::vector<std::string> CohortSplit::train_ids(int rotation) const {
    std::vector<int> folds;
    for (int i = 0; i < 7; ++i) folds.push_back((i + rotation) % kFoldCount);
    return designated_ids(*this, folds);
}

std::vector<std::string> CohortSplit::validation_ids(int rotation) const {
    return designated_ids(*this, {(7 + rotation) % kFoldCount});
}

std::vector<std::string> CohortSplit::test_ids(int rotation) const {
    return designated_ids(*this, {(8 + rotation) % kFoldCount, (9 + rotation) % kFoldCount});
}

CohortSplit split_cohort(std::vector<std::string> patient_ids, std::uint64_t seed) {
    if (patient_ids.size() < kFoldCount) {
        throw std::invalid_argument("split_cohort: need at least 10 patients");
    }
    std::sort(patient_ids.begin(), patient_ids.end());
    if (std::adjacent_find(patient_ids.begin(), patient_ids.end()) != patient_ids.end()) {
        throw std::invalid_argument("split_cohort: duplicate patient_id");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(patient_ids.begin(), patient_ids.end(), rng);
    CohortSplit split;
    for (std::size_t i = 0; i < patient_ids.size(); ++i) {
        split.fold_of[patient_ids[i]] = static_cast<int>(i % kFoldCount);
    }
    return split;
}

std::vector<PatientTrajectory> select_patients(const std::vector<PatientTrajectory>& cohort,
                                               const std::vector<std::string>& ids) {
    std::map<std::string, const PatientTrajectory*> by_id;
    for (const PatientTrajectory& p : cohort) by_id[p.patient_id] = &p;
    std::vector<PatientTrajectory> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw std::invalid_argument("select_patients: unknown id " + id);
        out.push_back(*it->second);
    }
    return out;
}

}  // namespace dac
