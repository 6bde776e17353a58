#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "dac/trajectory.hpp"
#include "doctest.h"

using namespace dac;

namespace {

PatientTrajectory make_patient(const std::string& id, int outcome,
                               const std::vector<std::vector<double>>& step_values,
                               const std::vector<ActionTriple>& actions) {
    PatientTrajectory p;
    p.patient_id = id;
    p.outcome = outcome;
    for (std::size_t t = 0; t < step_values.size(); ++t) {
        TrajectoryStep s;
        for (std::size_t j = 0; j < step_values[t].size(); ++j) {
            s.events.push_back({static_cast<int>(j), step_values[t][j], 0});
        }
        s.action = actions[t];
        p.steps.push_back(s);
    }
    return p;
}

}  // namespace

TEST_SUITE_BEGIN("trajectory");

TEST_CASE("discretize_action maps table rows") {
    CHECK(discretize_action(6.0, 8.0, 42.0) == ActionTriple{3, 3, 4});
    CHECK(discretize_action(0.0, 0.0, 25.0) == ActionTriple{1, 1, 1});
    CHECK(discretize_action(20.0, 20.0, 80.0) == ActionTriple{7, 7, 7});
}

TEST_CASE("discretize_action boundary falls in upper bin") {
    CHECK(discretize_action(2.5, 0.0, 25.0).vt == 2);
    CHECK(discretize_action(15.0, 15.0, 55.0) == ActionTriple{7, 7, 7});
}

TEST_CASE("discretize_action rejects invalid input") {
    CHECK_THROWS_AS(discretize_action(-1.0, 5.0, 30.0), std::invalid_argument);
    CHECK_THROWS_AS(discretize_action(5.0, std::nan(""), 30.0), std::invalid_argument);
}

TEST_CASE("discretize_action is monotone per parameter") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 60.0);
    for (int i = 0; i < 500; ++i) {
        double a = u(rng), b = u(rng);
        if (a > b) std::swap(a, b);
        CHECK(discretize_action(a, 5.0, 30.0).vt <= discretize_action(b, 5.0, 30.0).vt);
        CHECK(discretize_action(5.0, a, 30.0).peep <= discretize_action(5.0, b, 30.0).peep);
        CHECK(discretize_action(5.0, 5.0, a).fio2 <= discretize_action(5.0, 5.0, b).fio2);
    }
}

TEST_CASE("flat_index endpoints") {
    CHECK(flat_index({1, 1, 1}) == 0);
    CHECK(flat_index({7, 7, 7}) == 342);
    CHECK_THROWS_AS(unflatten(343), std::invalid_argument);
    CHECK_THROWS_AS(unflatten(-1), std::invalid_argument);
    CHECK_THROWS_AS(flat_index({0, 1, 1}), std::invalid_argument);
}

TEST_CASE("flat_index is a bijection over all 343 triples") {
    std::set<int> seen;
    for (int vt = 1; vt <= 7; ++vt) {
        for (int peep = 1; peep <= 7; ++peep) {
            for (int fio2 = 1; fio2 <= 7; ++fio2) {
                ActionTriple a{vt, peep, fio2};
                int idx = flat_index(a);
                CHECK(idx >= 0);
                CHECK(idx <= 342);
                CHECK(seen.insert(idx).second);
                CHECK(unflatten(idx) == a);
            }
        }
    }
    CHECK(seen.size() == 343);
}

TEST_CASE("action_scalar spans [-1, 1]") {
    CHECK(action_scalar(0) == doctest::Approx(-1.0));
    CHECK(action_scalar(342) == doctest::Approx(1.0));
    CHECK(action_scalar(171) == doctest::Approx(0.0));
}

TEST_CASE("action_change basics") {
    CHECK(action_change(ActionTriple{3, 3, 4}, {3, 3, 4}) == ChangeClass{false, 0, 0, 0});
    CHECK(action_change(ActionTriple{3, 3, 4}, {4, 3, 3}) == ChangeClass{false, 1, 0, -1});
    CHECK(action_change(std::nullopt, {5, 2, 6}).initial);
}

TEST_CASE("change class codec covers 27 classes plus INITIAL") {
    std::set<int> seen;
    for (int dv = -1; dv <= 1; ++dv) {
        for (int dp = -1; dp <= 1; ++dp) {
            for (int df = -1; df <= 1; ++df) {
                ChangeClass c{false, dv, dp, df};
                int idx = change_class_index(c);
                CHECK(idx >= 0);
                CHECK(idx < kChangeClassCount);
                CHECK(seen.insert(idx).second);
                CHECK(change_class_from_index(idx) == c);
            }
        }
    }
    CHECK(seen.size() == 27);
    ChangeClass init;
    init.initial = true;
    CHECK(change_class_index(init) == kInitialChangeClass);
    CHECK(change_class_from_index(kInitialChangeClass).initial);
}

TEST_CASE("fit_value_bins quartile example") {
    std::vector<std::vector<double>> vals(1);
    for (int i = 1; i <= 100; ++i) vals[0].push_back(i);
    // One patient, 100 steps, one variable per step.
    std::vector<ActionTriple> actions(100, ActionTriple{1, 1, 1});
    std::vector<std::vector<double>> step_values;
    for (int i = 1; i <= 100; ++i) step_values.push_back({static_cast<double>(i)});
    auto p = make_patient("p1", 0, step_values, actions);

    ValueBins bins = fit_value_bins({p}, 4);
    REQUIRE(bins.edges.at(0).size() == 3);
    CHECK(bins.edges.at(0)[0] == doctest::Approx(25.5));
    CHECK(bins.edges.at(0)[1] == doctest::Approx(50.5));
    CHECK(bins.edges.at(0)[2] == doctest::Approx(75.5));
    CHECK(discretize_value(bins, 0, 60.0) == 3);
    CHECK(discretize_value(bins, 0, -10.0) == 1);    // clamps below
    CHECK(discretize_value(bins, 0, 1000.0) == 4);   // clamps above
    CHECK_THROWS_AS(discretize_value(bins, 99, 1.0), std::invalid_argument);
}

TEST_CASE("constant variable collapses to one bin") {
    std::vector<std::vector<double>> step_values(20, std::vector<double>{3.14});
    std::vector<ActionTriple> actions(20, ActionTriple{1, 1, 1});
    auto p = make_patient("p1", 0, step_values, actions);
    ValueBins bins = fit_value_bins({p}, 5);
    CHECK(bins.bin_count(0) == 1);
    CHECK(discretize_value(bins, 0, 3.14) == 1);
    CHECK(discretize_value(bins, 0, -99.0) == 1);
}

TEST_CASE("equal-frequency property when bins divide distinct samples") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const int V = 1 + static_cast<int>(rng() % 8);
        const int per_bin = 3 + static_cast<int>(rng() % 9);
        const int n = V * per_bin;
        std::vector<double> raw(n);
        std::uniform_real_distribution<double> u(-100.0, 100.0);
        std::set<double> uniq;
        for (double& x : raw) {
            do {
                x = u(rng);
            } while (!uniq.insert(x).second);
        }
        std::vector<std::vector<double>> step_values;
        for (double x : raw) step_values.push_back({x});
        std::vector<ActionTriple> actions(n, ActionTriple{1, 1, 1});
        auto p = make_patient("p", 0, step_values, actions);
        ValueBins bins = fit_value_bins({p}, V);
        std::map<int, int> count;
        for (double x : raw) count[discretize_value(bins, 0, x)]++;
        REQUIRE(static_cast<int>(count.size()) == V);
        for (auto& [_, c] : count) CHECK(c == per_bin);
    }
}

TEST_CASE("split_cohort partitions with near-equal folds") {
    auto ids = [](int n) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back("p" + std::to_string(1000 + i));
        return v;
    };

    CohortSplit s100 = split_cohort(ids(100), 42);
    std::map<int, int> fold_sizes;
    for (auto& [_, f] : s100.fold_of) fold_sizes[f]++;
    REQUIRE(fold_sizes.size() == 10);
    for (auto& [_, n] : fold_sizes) CHECK(n == 10);

    CohortSplit s103 = split_cohort(ids(103), 42);
    fold_sizes.clear();
    for (auto& [_, f] : s103.fold_of) fold_sizes[f]++;
    int elevens = 0, tens = 0;
    for (auto& [_, n] : fold_sizes) {
        if (n == 11) ++elevens;
        if (n == 10) ++tens;
    }
    CHECK(elevens == 3);
    CHECK(tens == 7);

    CohortSplit again = split_cohort(ids(103), 42);
    CHECK(again.fold_of == s103.fold_of);
    CohortSplit other = split_cohort(ids(103), 43);
    CHECK(other.fold_of != s103.fold_of);

    CHECK_THROWS_AS(split_cohort(ids(9), 1), std::invalid_argument);
}

TEST_CASE("split designation covers the cohort exactly once") {
    std::vector<std::string> ids;
    for (int i = 0; i < 57; ++i) ids.push_back("x" + std::to_string(i));
    CohortSplit s = split_cohort(ids, 5);
    for (int rot = 0; rot < 10; ++rot) {
        auto train = s.train_ids(rot);
        auto val = s.validation_ids(rot);
        auto test = s.test_ids(rot);
        CHECK(train.size() + val.size() + test.size() == ids.size());
        std::set<std::string> all(train.begin(), train.end());
        all.insert(val.begin(), val.end());
        all.insert(test.begin(), test.end());
        CHECK(all.size() == ids.size());
    }
}

TEST_CASE("validate_trajectory rejects contract violations") {
    auto good = make_patient("p", 1, {{1.0, 2.0}}, {ActionTriple{2, 3, 4}});
    CHECK_NOTHROW(validate_trajectory(good));

    auto empty_steps = good;
    empty_steps.steps.clear();
    CHECK_THROWS_AS(validate_trajectory(empty_steps), std::invalid_argument);

    auto no_events = good;
    no_events.steps[0].events.clear();
    CHECK_THROWS_AS(validate_trajectory(no_events), std::invalid_argument);

    auto bad_outcome = good;
    bad_outcome.outcome = 2;
    CHECK_THROWS_AS(validate_trajectory(bad_outcome), std::invalid_argument);

    auto bad_action = good;
    bad_action.steps[0].action.vt = 9;
    CHECK_THROWS_AS(validate_trajectory(bad_action), std::invalid_argument);
}

TEST_CASE("change_sequence starts INITIAL and tracks signs") {
    auto p = make_patient("p", 0, {{1.0}, {1.0}, {1.0}},
                          {ActionTriple{3, 3, 4}, ActionTriple{4, 3, 3}, ActionTriple{4, 3, 3}});
    auto seq = change_sequence(p);
    REQUIRE(seq.size() == 3);
    CHECK(seq[0].initial);
    CHECK(seq[1] == ChangeClass{false, 1, 0, -1});
    CHECK(seq[2] == ChangeClass{false, 0, 0, 0});
}

TEST_SUITE_END();
