#include <random>

#include "dac/risk.hpp"
#include "dac/stats.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace dac;
using dac::testutil::fd_check;

TEST_SUITE_BEGIN("risk");

namespace {

// Two-variable cohort with outcome 1 iff x0 > x1: linearly separable after
// equal-frequency binning.
std::vector<PatientTrajectory> separable_cohort(int n, std::uint64_t seed, int steps = 2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<PatientTrajectory> cohort;
    for (int i = 0; i < n; ++i) {
        PatientTrajectory p;
        p.patient_id = "s" + std::to_string(1000 + i);
        double x0 = u(rng), x1 = u(rng);
        p.outcome = x0 > x1 ? 1 : 0;
        for (int t = 0; t < steps; ++t) {
            TrajectoryStep s;
            s.events.push_back({0, x0, 0});
            s.events.push_back({1, x1, 0});
            s.action = ActionTriple{1, 1, 1};
            p.steps.push_back(s);
        }
        cohort.push_back(std::move(p));
    }
    return cohort;
}

EmbeddingConfig small_cfg(int k = 8, int V = 8, int vocab = 2) {
    EmbeddingConfig cfg;
    cfg.state_dim = k;
    cfg.value_bins = V;
    cfg.vocab_size = vocab;
    return cfg;
}

}  // namespace

TEST_CASE("risk model separates a linear toy cohort") {
    auto train = separable_cohort(400, 11);
    auto held_out = separable_cohort(200, 12);
    EmbeddingConfig cfg = small_cfg();
    ValueBins bins = fit_value_bins(train, cfg.value_bins);
    apply_value_bins(bins, train);
    apply_value_bins(bins, held_out);

    RiskTrainOptions opt;
    opt.epochs = 40;
    opt.batch_size = 128;
    opt.learning_rate = 3e-3;
    opt.seed = 5;
    RiskModel model = train_risk_model(train, cfg, opt);

    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : held_out) {
        scores.push_back(model.max_risk(p));
        labels.push_back(p.outcome);
    }
    CHECK(auroc(scores, labels) >= 0.95);
}

TEST_CASE("risk training rejects single-class cohorts") {
    auto cohort = separable_cohort(20, 3);
    for (auto& p : cohort) p.outcome = 0;
    EmbeddingConfig cfg = small_cfg();
    ValueBins bins = fit_value_bins(cohort, cfg.value_bins);
    apply_value_bins(bins, cohort);
    CHECK_THROWS_AS(train_risk_model(cohort, cfg, RiskTrainOptions{}), std::invalid_argument);
}

TEST_CASE("risk BCE gradient matches finite differences") {
    auto cohort = separable_cohort(3, 21, 3);
    EmbeddingConfig cfg = small_cfg(4, 4, 2);
    ValueBins bins = fit_value_bins(cohort, cfg.value_bins);
    apply_value_bins(bins, cohort);

    RiskModel model = RiskModel::create(cfg, 9);
    // Non-degenerate head so probabilities move off 0.5.
    std::mt19937_64 rng(2);
    model.store.at(model.head.weight).value = testutil::random_matrix(4, 1, rng, 0.3);

    std::vector<const PatientTrajectory*> batch;
    for (const auto& p : cohort) batch.push_back(&p);
    BatchLayout layout = build_batch_layout(batch, cfg);

    auto loss = [&](bool grad) {
        ad::Tape tape;
        ad::Var l = risk_bce_loss(tape, model, layout);
        if (grad) tape.backward(l);
        return tape.scalar(l);
    };
    auto rep = fd_check(model.store, loss);
    CHECK(rep.checked_entries > 0);
    CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("perfect constant prediction gives zero loss on an all-survivor batch") {
    auto cohort = separable_cohort(4, 31, 1);
    for (auto& p : cohort) p.outcome = 0;
    EmbeddingConfig cfg = small_cfg(4, 4, 2);
    ValueBins bins = fit_value_bins(cohort, cfg.value_bins);
    apply_value_bins(bins, cohort);

    RiskModel model = RiskModel::create(cfg, 9);
    // Forcing the head bias very negative drives p -> 0 so -log(1-p) -> 0.
    model.store.at(model.head.bias).value.setConstant(-40.0);

    std::vector<const PatientTrajectory*> batch;
    for (const auto& p : cohort) batch.push_back(&p);
    BatchLayout layout = build_batch_layout(batch, cfg);
    ad::Tape tape;
    ad::Var l = risk_bce_loss(tape, model, layout);
    CHECK(tape.scalar(l) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pools partition the cohort and sort by risk") {
    auto cohort = separable_cohort(50, 7);
    std::vector<double> risks;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < cohort.size(); ++i) risks.push_back(u(rng));
    PatientPools pools = PatientPools::build(cohort, risks);
    CHECK(pools.survivors.size() + pools.nonsurvivors.size() == cohort.size());
    for (std::size_t i = 1; i < pools.survivors.size(); ++i) {
        CHECK(pools.survivors[i - 1].max_risk <= pools.survivors[i].max_risk);
    }
    for (const auto& r : pools.survivors) {
        CHECK(cohort[static_cast<std::size_t>(r.cohort_index)].outcome == 0);
    }
    for (const auto& r : pools.nonsurvivors) {
        CHECK(cohort[static_cast<std::size_t>(r.cohort_index)].outcome == 1);
    }
}

TEST_CASE("balanced batches are exactly class-balanced") {
    auto cohort = separable_cohort(60, 17);
    std::vector<double> risks(cohort.size());
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& r : risks) r = u(rng);
    PatientPools pools = PatientPools::build(cohort, risks);

    std::mt19937_64 sampler(99);
    for (int rep = 0; rep < 20; ++rep) {
        BalancedBatch b = sample_balanced_batch(pools, 32, 0.05, sampler);
        CHECK(b.survivor_index.size() == 16);
        CHECK(b.nonsurvivor_index.size() == 16);
        for (int idx : b.survivor_index) {
            CHECK(cohort[static_cast<std::size_t>(idx)].outcome == 0);
        }
        for (int idx : b.nonsurvivor_index) {
            CHECK(cohort[static_cast<std::size_t>(idx)].outcome == 1);
        }
        CHECK(b.interleaved().size() == 32);
    }
    CHECK_THROWS_AS(sample_balanced_batch(pools, 31, 0.05, sampler), std::invalid_argument);
}

TEST_CASE("nearest-neighbor matching follows the sorted pools") {
    // Survivor risks {0.1, 0.5}; non-survivor risks {0.45, 0.9}. Drawing the
    // 0.45 non-survivor must pair with the 0.5 survivor (gap 0.05).
    std::vector<PatientTrajectory> cohort = separable_cohort(4, 23, 1);
    cohort[0].outcome = 0;
    cohort[1].outcome = 0;
    cohort[2].outcome = 1;
    cohort[3].outcome = 1;
    std::vector<double> risks{0.1, 0.5, 0.45, 0.9};
    PatientPools pools = PatientPools::build(cohort, risks);

    std::mt19937_64 rng(1);
    bool saw_045 = false;
    for (int rep = 0; rep < 50 && !saw_045; ++rep) {
        BalancedBatch b = sample_balanced_batch(pools, 2, 0.3, rng);
        if (b.nonsurvivor_index[0] == 2) {
            saw_045 = true;
            CHECK(b.survivor_index[0] == 1);  // the 0.5 survivor
            CHECK(b.pair_risk_gap[0] == doctest::Approx(0.05));
        }
    }
    CHECK(saw_045);

    // Identical risk multisets give zero-gap pairs.
    std::vector<double> equal_risks{0.3, 0.7, 0.3, 0.7};
    PatientPools eq = PatientPools::build(cohort, equal_risks);
    for (int rep = 0; rep < 10; ++rep) {
        BalancedBatch b = sample_balanced_batch(eq, 4, 0.0, rng);
        for (double gap : b.pair_risk_gap) CHECK(gap == doctest::Approx(0.0));
        CHECK(b.pairs_within_tolerance == 2);
    }
}

TEST_CASE("risk-gap ties resolve to the lower patient_id") {
    std::vector<PatientTrajectory> cohort = separable_cohort(4, 29, 1);
    cohort[0].outcome = 0;
    cohort[0].patient_id = "b";
    cohort[1].outcome = 0;
    cohort[1].patient_id = "a";
    cohort[2].outcome = 1;
    cohort[3].outcome = 1;
    std::vector<double> risks{0.4, 0.4, 0.4, 0.4};  // all equal: pure id tie
    PatientPools pools = PatientPools::build(cohort, risks);
    std::mt19937_64 rng(5);
    BalancedBatch b = sample_balanced_batch(pools, 2, 0.1, rng);
    CHECK(cohort[static_cast<std::size_t>(b.survivor_index[0])].patient_id == "a");
}

TEST_SUITE_END();
