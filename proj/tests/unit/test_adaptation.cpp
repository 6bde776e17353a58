#include <random>

#include "dac/adaptation.hpp"
#include "dac/synthetic.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace dac;
using dac::testutil::fd_check;
using dac::testutil::random_matrix;

TEST_SUITE_BEGIN("adaptation");

namespace {

EmbeddingConfig tiny_embed() {
    EmbeddingConfig cfg;
    cfg.state_dim = 6;
    cfg.value_bins = 5;
    cfg.vocab_size = 3;
    return cfg;
}

std::vector<PatientTrajectory> tiny_cohort(std::uint64_t seed, int n = 40, int horizon = 4) {
    SyntheticConfig sc;
    sc.ar_order = 1;
    sc.horizon = horizon;
    sc.obs_dim = 3;
    sc.hidden_dim = 2;
    sc.n_survivor = n / 4;
    sc.n_nonsurvivor = n - n / 4;
    sc.seed = seed;
    auto cohort = simulate_cohort(sc).trajectories;
    ValueBins bins = fit_value_bins(cohort, tiny_embed().value_bins);
    apply_value_bins(bins, cohort);
    return cohort;
}

}  // namespace

TEST_CASE("standardizer z-scores the shared space and zeroes unknowns") {
    auto cohort = tiny_cohort(3);
    std::vector<int> vars = shared_vocabulary(cohort, cohort);
    CHECK(vars == std::vector<int>{0, 1, 2});

    CovariateStandardizer st = CovariateStandardizer::fit(cohort, vars);
    // Transformed training data has near-zero mean per coordinate.
    Vec acc = Vec::Zero(3);
    long n = 0;
    for (const auto& p : cohort) {
        for (const auto& s : p.steps) {
            acc += st.transform(s);
            ++n;
        }
    }
    acc /= static_cast<double>(n);
    CHECK(acc.cwiseAbs().maxCoeff() < 1e-10);

    TrajectoryStep missing;
    missing.events.push_back({0, st.mean(0), 1});  // at the mean -> exactly 0
    Vec x = st.transform(missing);
    CHECK(x(0) == doctest::Approx(0.0));
    CHECK(x(1) == doctest::Approx(0.0));  // unobserved
}

TEST_CASE("dynamics loss matches finite differences") {
    std::mt19937_64 rng(5);
    DynamicsModel model = DynamicsModel::create(3, 2, 2, 11);
    DynamicsDataset data;
    data.states = random_matrix(4, 3, rng);
    data.targets = random_matrix(4, 2, rng);
    data.actions = {0, 7, 342, 100};

    auto loss = [&](bool grad) {
        ad::Tape tape;
        ad::Var l = dynamics_mse_loss(tape, model, data, 0, 4, 4.0, true);
        if (grad) tape.backward(l);
        return tape.scalar(l);
    };
    auto rep = fd_check(model.store, loss);
    CHECK(rep.checked_entries > 0);
    CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("zero targets drive the dynamics map toward zero") {
    std::mt19937_64 rng(7);
    DynamicsDataset data;
    data.states = random_matrix(400, 3, rng);
    data.targets = Mat::Zero(400, 2);
    for (int i = 0; i < 400; ++i) data.actions.push_back(static_cast<int>(rng() % kActionCount));

    DynamicsTrainOptions opt;
    opt.epochs = 200;
    opt.learning_rate = 1e-2;
    opt.seed = 13;
    DynamicsModel model = train_dynamics(data, 3, 2, 2, opt);
    Mat pred = model.predict(data.states.topRows(50),
                             {data.actions.begin(), data.actions.begin() + 50});
    CHECK(pred.cwiseAbs().maxCoeff() <= 1e-2);
}

TEST_CASE("planted linear dynamics are recovered") {
    // Generate x' = [s | e_a] M + b with a frozen action table; training with
    // the table frozen must recover M and b.
    std::mt19937_64 rng(17);
    const int k = 3, ad_dim = 2, out = 2, n = 3000;
    DynamicsModel model = DynamicsModel::create(k, ad_dim, out, 19);
    Mat table = model.store.at(model.action_table).value;  // frozen generator features
    Mat m_true = random_matrix(k + ad_dim, out, rng);
    Mat b_true = random_matrix(1, out, rng);

    DynamicsDataset data;
    data.states = random_matrix(n, k, rng);
    data.targets = Mat(n, out);
    for (int i = 0; i < n; ++i) {
        int a = static_cast<int>(rng() % kActionCount);
        data.actions.push_back(a);
        Mat x(1, k + ad_dim);
        x << data.states.row(i), table.row(a);
        data.targets.row(i) = x * m_true + b_true;
    }

    DynamicsTrainOptions opt;
    opt.epochs = 400;
    opt.batch_size = 512;
    opt.learning_rate = 1e-2;
    opt.train_action_table = false;
    opt.seed = 19;  // same seed: the created model shares the frozen table
    DynamicsModel trained = train_dynamics(data, k, ad_dim, out, opt);

    CHECK((trained.store.at(trained.map.weight).value - m_true).cwiseAbs().maxCoeff() <= 1e-2);
    CHECK((trained.store.at(trained.map.bias).value - b_true).cwiseAbs().maxCoeff() <= 1e-2);
}

TEST_CASE("argmin distance selection with ties to the lowest index") {
    Vec d(3);
    d << 0.5, 0.1, 0.9;
    CHECK(argmin_distance(d) == 1);
    Vec tie(4);
    tie << 0.3, 0.1, 0.1, 0.2;
    CHECK(argmin_distance(tie) == 1);

    // Invariance under strictly monotone transforms of the distance.
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int rep = 0; rep < 200; ++rep) {
        Vec dist(7);
        for (int i = 0; i < 7; ++i) dist(i) = u(rng);
        Vec transformed = (2.0 * dist.array() + 1.0).sqrt().matrix();
        CHECK(argmin_distance(dist) == argmin_distance(transformed));
    }
}

TEST_CASE("match_next_state enumerates candidates") {
    Mat candidates(3, 2);
    candidates << 1.0, 0.0, 0.2, 0.1, 5.0, 5.0;
    Vec ref(2);
    ref << 0.25, 0.1;
    CHECK(match_next_state(candidates, ref) == 1);
}

TEST_CASE("identical dynamics reproduce the source policy pointwise") {
    EmbeddingConfig cfg = tiny_embed();
    PolicyModel policy = PolicyModel::create(cfg, 31);
    std::mt19937_64 rng(3);
    policy.store.at(policy.actor.weight).value =
        random_matrix(cfg.state_dim, kActionCount, rng, 0.4);

    DynamicsModel source = DynamicsModel::create(cfg.state_dim, 4, 3, 37);
    DynamicsModel target = DynamicsModel::create(cfg.state_dim, 4, 3, 41);
    target.store = source.store;  // f^T = f^S

    AdaptationContext ctx{&policy, &source, &target};
    for (int rep = 0; rep < 1000; ++rep) {
        Vec state = random_matrix(cfg.state_dim, 1, rng).col(0);
        Mat logits = state.transpose() * policy.store.at(policy.actor.weight).value;
        logits.rowwise() += policy.store.at(policy.actor.bias).value.row(0);
        int source_action = 0;
        logits.row(0).maxCoeff(&source_action);
        CHECK(adapt_action(state, ctx) == unflatten(source_action));
    }
}

TEST_CASE("permuted dynamics invert the permutation") {
    // Three candidate actions with distinct next-state predictions; the
    // target dynamics sees them under a cyclic shift sigma. The adapted
    // policy must answer sigma^{-1}(source action).
    Mat source_pred(3, 2);
    source_pred << 1, 0, 0, 1, 1, 1;
    // sigma: target action a predicts what source action sigma(a) predicts,
    // sigma = (0 -> 1, 1 -> 2, 2 -> 0).
    Mat target_pred(3, 2);
    target_pred.row(0) = source_pred.row(1);
    target_pred.row(1) = source_pred.row(2);
    target_pred.row(2) = source_pred.row(0);
    for (int source_action = 0; source_action < 3; ++source_action) {
        int adapted = match_next_state(target_pred, source_pred.row(source_action).transpose());
        // sigma(adapted) == source_action.
        CHECK(target_pred.row(adapted) == source_pred.row(source_action));
        int expected = source_action == 0 ? 2 : source_action - 1;
        CHECK(adapted == expected);
    }
}

TEST_CASE("run_adaptation with no target data reproduces the source decisions") {
    EmbeddingConfig cfg = tiny_embed();
    auto cohort = tiny_cohort(43, 24);
    PolicyModel policy = PolicyModel::create(cfg, 47);
    std::mt19937_64 rng(9);
    policy.store.at(policy.actor.weight).value =
        random_matrix(cfg.state_dim, kActionCount, rng, 0.4);

    std::vector<int> vars = shared_vocabulary(cohort, cohort);
    CovariateStandardizer st = CovariateStandardizer::fit(cohort, vars);
    DynamicsDataset data = build_dynamics_dataset(policy, cohort, st);
    DynamicsTrainOptions opt;
    opt.epochs = 3;
    DynamicsModel source = train_dynamics(data, cfg.state_dim, 4,
                                          static_cast<int>(vars.size()), opt);

    auto source_hash = source.store.value_hash();
    AdaptationResult res = run_adaptation(policy, source, {}, cohort, st, opt);
    CHECK(source.store.value_hash() == source_hash);  // f^S untouched
    CHECK(res.target_dynamics.store.value_hash() == source_hash);
    for (std::size_t i = 0; i < res.decisions.size(); ++i) {
        for (std::size_t t = 0; t < res.decisions[i].size(); ++t) {
            CHECK(res.decisions[i][t] == unflatten(res.source_actions[i][t]));
        }
    }

    // Fine-tuning on target data leaves the source checkpoint untouched.
    AdaptationResult tuned = run_adaptation(policy, source, cohort, cohort, st, opt);
    CHECK(source.store.value_hash() == source_hash);
    CHECK(tuned.target_dynamics.store.value_hash() != source_hash);
}

TEST_CASE("dataset construction rejects all-length-1 cohorts") {
    EmbeddingConfig cfg = tiny_embed();
    auto cohort = tiny_cohort(51, 12, 4);
    for (auto& p : cohort) p.steps.resize(1);
    PolicyModel policy = PolicyModel::create(cfg, 3);
    std::vector<int> vars{0, 1, 2};
    CovariateStandardizer st = CovariateStandardizer::fit(cohort, vars);
    CHECK_THROWS_AS(build_dynamics_dataset(policy, cohort, st), std::invalid_argument);
}

TEST_SUITE_END();
