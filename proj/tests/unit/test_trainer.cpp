#include <random>

#include "dac/synthetic.hpp"
#include "dac/trainer.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace dac;
using dac::testutil::fd_check;
using dac::testutil::random_matrix;

TEST_SUITE_BEGIN("trainer");

namespace {

struct SmallWorld {
    SyntheticConfig synth;
    EmbeddingConfig embed;
    std::vector<PatientTrajectory> train, val;
    SimulatedCohort cohort;
    RiskModel risk;
    BehaviorClone clone;
    NumeratorModel numerator;

    explicit SmallWorld(std::uint64_t seed = 7, int n_surv = 30, int n_mort = 60)
        : risk(RiskModel::create(make_embed(), seed)),
          clone(BehaviorClone::create(make_embed(), seed)),
          numerator(NumeratorModel::create(8, 8, seed)) {
        synth.ar_order = 1;
        synth.horizon = 4;
        synth.obs_dim = 3;
        synth.hidden_dim = 2;
        synth.n_survivor = n_surv;
        synth.n_nonsurvivor = n_mort;
        synth.seed = seed;
        cohort = simulate_cohort(synth);
        embed = make_embed();
        ValueBins bins = fit_value_bins(cohort.trajectories, embed.value_bins);
        apply_value_bins(bins, cohort.trajectories);
        int split = static_cast<int>(cohort.trajectories.size()) * 3 / 4;
        train.assign(cohort.trajectories.begin(), cohort.trajectories.begin() + split);
        val.assign(cohort.trajectories.begin() + split, cohort.trajectories.end());
    }

    static EmbeddingConfig make_embed() {
        EmbeddingConfig cfg;
        cfg.state_dim = 8;
        cfg.value_bins = 5;
        cfg.vocab_size = 3;
        return cfg;
    }
};

TrainConfig fast_config() {
    TrainConfig tc;
    tc.epochs = 2;
    tc.iters_per_epoch = 3;
    tc.batch_size = 16;
    tc.learning_rate = 1e-3;
    tc.seed = 3;
    return tc;
}

}  // namespace

TEST_CASE("long-term head is an exact affine map with action selection") {
    ad::ParameterStore store;
    std::mt19937_64 rng(1);
    AffineHeadParams head = AffineHeadParams::create(store, "h", 2, 2, 0.0, rng);

    // Bias-only: zero weight returns the bias for every state.
    store.at(head.bias).value << 0.5, -0.5;
    Mat states(3, 2);
    states << 1, 2, -1, 0, 3, 3;
    Mat values = affine_values(store, head, states);
    for (int r = 0; r < 3; ++r) {
        CHECK(values(r, 0) == doctest::Approx(0.5));
        CHECK(values(r, 1) == doctest::Approx(-0.5));
    }

    // Hand-set identity weight: s = (1,2) gives (1.5, 1.5).
    store.at(head.weight).value << 1, 0, 0, 1;
    Mat v2 = affine_values(store, head, states);
    CHECK(v2(0, 0) == doctest::Approx(1.5));
    CHECK(v2(0, 1) == doctest::Approx(1.5));

    CHECK(select_action_value(v2, 0, 1) == doctest::Approx(1.5));
    CHECK_THROWS_AS(select_action_value(v2, 0, 99), std::invalid_argument);
}

TEST_CASE("td targets: terminal value, myopic limit, and a hand-set bootstrap") {
    SmallWorld w(11);
    PolicyModel model = PolicyModel::create(w.embed, 5);
    std::vector<const PatientTrajectory*> batch{&w.train[0], &w.train[1]};

    // gamma = 0 collapses to the terminal reward alone.
    Mat z0 = td_targets(model, batch, 0.0);
    for (int i = 0; i < 2; ++i) {
        const int len = batch[static_cast<std::size_t>(i)]->length();
        for (int t = 0; t + 1 < len; ++t) CHECK(z0(i, t) == doctest::Approx(0.0));
        CHECK(z0(i, len - 1) ==
              doctest::Approx(terminal_reward(batch[static_cast<std::size_t>(i)]->outcome)));
    }

    // Hand-set target head: value of action a is a/10 regardless of state, so
    // max_a = 34.2/10; z = 0.9 * 3.42 for non-terminal steps.
    model.target_weight.setZero();
    for (int a = 0; a < kActionCount; ++a) model.target_bias(0, a) = a / 10.0;
    Mat z = td_targets(model, batch, 0.9);
    for (int i = 0; i < 2; ++i) {
        const int len = batch[static_cast<std::size_t>(i)]->length();
        for (int t = 0; t + 1 < len; ++t) CHECK(z(i, t) == doctest::Approx(0.9 * 34.2));
    }

    // Single-step episode: target is exactly +-15.
    PatientTrajectory one = w.train[0];
    one.steps.resize(1);
    one.outcome = 0;
    std::vector<const PatientTrajectory*> single{&one};
    Mat z1 = td_targets(model, single, 0.99);
    CHECK(z1(0, 0) == doctest::Approx(15.0));
}

TEST_CASE("targets are invariant to online-head updates between syncs") {
    SmallWorld w(13);
    PolicyModel model = PolicyModel::create(w.embed, 5);
    std::mt19937_64 rng(2);
    model.store.at(model.critic_long.weight).value = random_matrix(8, kActionCount, rng, 0.1);
    model.sync_target();
    std::vector<const PatientTrajectory*> batch{&w.train[0], &w.train[1], &w.train[2]};

    Mat before = td_targets(model, batch, 0.95);
    model.store.at(model.critic_long.weight).value += random_matrix(8, kActionCount, rng, 0.5);
    Mat after = td_targets(model, batch, 0.95);
    CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);

    model.sync_target();
    Mat synced = td_targets(model, batch, 0.95);
    CHECK((before - synced).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("actor surrogate, critic TD, and mortality BCE match finite differences") {
    std::mt19937_64 rng(21);
    ad::ParameterStore store;
    AffineHeadParams actor = AffineHeadParams::create(store, "actor", 3, 3, 0.0, rng);
    AffineHeadParams critic = AffineHeadParams::create(store, "critic", 3, 3, 0.0, rng);
    AffineHeadParams mort = AffineHeadParams::create(store, "mort", 3, 3, 0.0, rng);
    store.at(actor.weight).value = random_matrix(3, 3, rng, 0.4);
    store.at(critic.weight).value = random_matrix(3, 3, rng, 0.4);
    store.at(mort.weight).value = random_matrix(3, 3, rng, 0.4);

    Mat states = random_matrix(2, 3, rng);  // 2 samples ("2-state, 3-action toy")
    std::vector<int> actions{2, 0};
    Mat q(2, 1);
    q << 0.7, -1.3;
    Mat targets(2, 1);
    targets << 2.7, -15.0;
    Mat mask = Mat::Constant(2, 1, 0.5);
    Mat w_pos(2, 1), w_neg(2, 1);
    w_pos << -0.5, 0.0;
    w_neg << 0.0, -0.5;

    auto actor_loss = [&](bool grad) {
        ad::Tape tape;
        Mat w = -q / 2.0;  // ascend: negative Q weights on log pi
        ad::Var l = weighted_log_policy_loss(tape, store, actor, tape.constant(states), actions,
                                             w);
        if (grad) tape.backward(l);
        return tape.scalar(l);
    };
    auto critic_loss = [&](bool grad) {
        ad::Tape tape;
        ad::Var l =
            critic_td_loss(tape, store, critic, tape.constant(states), actions, targets, mask);
        if (grad) tape.backward(l);
        return tape.scalar(l);
    };
    auto mort_loss = [&](bool grad) {
        ad::Tape tape;
        ad::Var l = action_bce_loss(tape, store, mort, tape.constant(states), actions, w_pos,
                                    w_neg);
        if (grad) tape.backward(l);
        return tape.scalar(l);
    };
    CHECK(fd_check(store, actor_loss).max_rel_error <= 1e-4);
    CHECK(fd_check(store, critic_loss).max_rel_error <= 1e-4);
    CHECK(fd_check(store, mort_loss).max_rel_error <= 1e-4);
}

TEST_CASE("mortality BCE closed forms") {
    std::mt19937_64 rng(31);
    ad::ParameterStore store;
    AffineHeadParams mort = AffineHeadParams::create(store, "m", 2, 2, 0.0, rng);
    Mat states = Mat::Zero(2, 2);  // sigmoid(0) = 0.5 everywhere
    std::vector<int> actions{0, 1};
    Mat w_pos(2, 1), w_neg(2, 1);
    w_pos << -0.5, 0.0;  // sample 0 has y=1
    w_neg << 0.0, -0.5;  // sample 1 has y=0
    ad::Tape tape;
    ad::Var l = action_bce_loss(tape, store, mort, tape.constant(states), actions, w_pos, w_neg);
    CHECK(tape.scalar(l) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Perfect prediction: drive the logits to the right extremes.
    store.at(mort.bias).value << 40.0, -40.0;
    ad::Tape tape2;
    ad::Var l2 = action_bce_loss(tape2, store, mort, tape2.constant(states), actions, w_pos,
                                 w_neg);
    CHECK(tape2.scalar(l2) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("two-action bandit: policy concentrates on the rewarded action") {
    std::mt19937_64 rng(41);
    ad::ParameterStore store;
    AffineHeadParams actor = AffineHeadParams::create(store, "a", 1, 2, 0.0, rng);
    ad::AdamOptimizer opt;
    opt.learning_rate = 1e-2;
    Mat states = Mat::Ones(2, 1);
    std::vector<int> actions{0, 1};
    Mat w(2, 1);
    w << -1.0 / 2.0, 1.0 / 2.0;  // Q(a_0)=+1, Q(a_1)=-1, ascend
    for (int step = 0; step < 500; ++step) {
        store.zero_grad();
        ad::Tape tape;
        ad::Var l = weighted_log_policy_loss(tape, store, actor, tape.constant(states), actions,
                                             w);
        tape.backward(l);
        opt.step(store);
    }
    Mat logits = Mat::Ones(1, 1) * store.at(actor.weight).value;
    logits.rowwise() += store.at(actor.bias).value.row(0);
    double p0 = 1.0 / (1.0 + std::exp(logits(0, 1) - logits(0, 0)));
    CHECK(p0 >= 0.9);
}

TEST_CASE("zero Q leaves the actor untouched") {
    SmallWorld w(17);
    TrainConfig tc = fast_config();
    tc.no_short = true;  // Q = w * R^l with the critic still at zero: exactly 0
    PolicyModel model = PolicyModel::create(w.embed, 5);
    ad::AdamOptimizer opt;
    opt.learning_rate = 1e-2;
    std::vector<const PatientTrajectory*> batch{&w.train[0], &w.train[1]};
    std::vector<Vec> ones;
    for (auto* p : batch) ones.push_back(Vec::Ones(p->length()));
    std::vector<const Vec*> weights{&ones[0], &ones[1]};

    Mat actor_before = model.store.at(model.actor.weight).value;
    // Freeze critic/mortality gradients by zeroing their learning influence:
    // a single step with zero heads keeps Q = w*(alpha*0 + (1-alpha)*0) = 0.
    DacStepLosses losses = dac_gradient_step(model, opt, batch, weights, tc);
    CHECK(losses.actor == doctest::Approx(0.0));
    // The actor head receives exactly zero gradient, so Adam leaves it at its
    // initial value.
    CHECK((model.store.at(model.actor.weight).value - actor_before).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("policy probabilities are a strict distribution everywhere") {
    SmallWorld w(19);
    PolicyModel model = PolicyModel::create(w.embed, 23);
    std::mt19937_64 rng(3);
    model.store.at(model.actor.weight).value = random_matrix(8, kActionCount, rng, 0.3);
    Mat probs = model.policy_probs(w.train[4]);
    for (int t = 0; t < probs.rows(); ++t) {
        CHECK(std::fabs(probs.row(t).sum() - 1.0) <= 1e-6);
        CHECK(probs.row(t).minCoeff() > 0.0);
    }
    auto rec = model.recommend(w.train[4]);
    CHECK(static_cast<int>(rec.size()) == w.train[4].length());
}

TEST_CASE("training is deterministic given the seed") {
    SmallWorld w(23);
    TrainConfig tc = fast_config();
    TrainResult a = train_dac(w.train, w.val, w.embed, tc, w.risk, w.clone, w.numerator);
    TrainResult b = train_dac(w.train, w.val, w.embed, tc, w.risk, w.clone, w.numerator);
    CHECK(a.policy.store.value_hash() == b.policy.store.value_hash());
    CHECK(a.best_epoch == b.best_epoch);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].validation_wis == b.metrics[i].validation_wis);
    }

    TrainConfig other = tc;
    other.seed = 999;
    TrainResult c = train_dac(w.train, w.val, w.embed, other, w.risk, w.clone, w.numerator);
    CHECK(a.policy.store.value_hash() != c.policy.store.value_hash());
}

TEST_CASE("frozen models stay frozen through training") {
    SmallWorld w(29);
    TrainConfig tc = fast_config();
    auto risk_hash = w.risk.store.value_hash();
    auto clone_hash = w.clone.store.value_hash();
    auto numerator_hash = w.numerator.store.value_hash();
    train_dac(w.train, w.val, w.embed, tc, w.risk, w.clone, w.numerator);
    CHECK(w.risk.store.value_hash() == risk_hash);
    CHECK(w.clone.store.value_hash() == clone_hash);
    CHECK(w.numerator.store.value_hash() == numerator_hash);
}

TEST_CASE("ablation flags compose structurally") {
    TrainConfig tc;
    CHECK(tc.effective_alpha() == doctest::Approx(0.1));
    tc.no_short = true;
    CHECK(tc.effective_alpha() == doctest::Approx(1.0));
    tc.no_short = false;
    tc.no_long = true;
    CHECK(tc.effective_alpha() == doctest::Approx(0.0));
    tc.no_short = true;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);

    // no_iptw is exactly the unit-clip special case: same seed, same batches,
    // identical checkpoints.
    SmallWorld w(31);
    TrainConfig a = fast_config();
    a.no_iptw = true;
    TrainConfig b = fast_config();
    b.weights.clip_min = b.weights.clip_max = 1.0;
    TrainResult ra = train_dac(w.train, w.val, w.embed, a, w.risk, w.clone, w.numerator);
    TrainResult rb = train_dac(w.train, w.val, w.embed, b, w.risk, w.clone, w.numerator);
    CHECK(ra.policy.store.value_hash() == rb.policy.store.value_hash());
}

TEST_CASE("plain actor-critic equality: first gradient step against a reference") {
    SmallWorld w(37);
    TrainConfig tc = fast_config();
    tc.no_iptw = true;
    tc.no_resample = true;
    tc.no_short = true;  // alpha = 1: plain actor-critic on the long head
    tc.learning_rate = 1e-3;

    PolicyModel model = PolicyModel::create(w.embed, 77);
    std::mt19937_64 rng(5);
    model.store.at(model.actor.weight).value = random_matrix(8, kActionCount, rng, 0.2);
    model.store.at(model.critic_long.weight).value = random_matrix(8, kActionCount, rng, 0.2);
    model.store.at(model.mortality.weight).value = random_matrix(8, kActionCount, rng, 0.2);
    model.sync_target();
    PolicyModel reference = model;  // deep copy via ParameterStore copy

    std::vector<const PatientTrajectory*> batch{&w.train[0], &w.train[1], &w.train[2],
                                                &w.train[3]};
    std::vector<Vec> ones;
    for (auto* p : batch) ones.push_back(Vec::Ones(p->length()));
    std::vector<const Vec*> weights;
    for (auto& v : ones) weights.push_back(&v);

    ad::AdamOptimizer opt;
    opt.learning_rate = tc.learning_rate;
    dac_gradient_step(model, opt, batch, weights, tc);

    // Reference: an independent plain actor-critic step assembled from raw
    // tape primitives on the same batch.
    {
        double denom = 0.0;
        for (auto* p : batch) denom += p->length();
        BatchLayout layout = build_batch_layout(batch, w.embed);
        ad::Tape tape;
        EncodedBatch enc =
            encode_batch(tape, reference.store, reference.encoder, layout, true);
        ad::Var loss;
        for (int t = 0; t < layout.max_len; ++t) {
            ad::Var logits = reference.actor.apply(tape, reference.store, enc.states[t], true);
            ad::Var log_pi = tape.log_softmax_rows(logits);
            ad::Var values =
                reference.critic_long.apply(tape, reference.store, enc.states[t], true);
            ad::Var mort = tape.sigmoid(
                reference.mortality.apply(tape, reference.store, enc.states[t], true));
            const Mat values_now = tape.value(values);

            Mat next_best;
            if (t + 1 < layout.max_len) {
                Mat nv = tape.value(enc.states[t + 1]) * reference.target_weight;
                nv.rowwise() += reference.target_bias.row(0);
                next_best = nv.rowwise().maxCoeff();
            }
            const auto& actions = layout.action_at[static_cast<std::size_t>(t)];
            Mat w_actor = Mat::Zero(layout.batch_size, 1);
            Mat z = Mat::Zero(layout.batch_size, 1);
            Mat mask = Mat::Zero(layout.batch_size, 1);
            Mat w_pos = Mat::Zero(layout.batch_size, 1), w_neg = Mat::Zero(layout.batch_size, 1);
            for (int i = 0; i < layout.batch_size; ++i) {
                if (layout.valid(i, t) == 0.0) continue;
                int a = actions[static_cast<std::size_t>(i)];
                int y = layout.outcome[static_cast<std::size_t>(i)];
                int len = layout.lengths[static_cast<std::size_t>(i)];
                // Plain AC: Q = R^l(s,a) from the online critic, detached.
                w_actor(i, 0) = -values_now(i, a) / denom;
                z(i, 0) = (t == len - 1) ? terminal_reward(y) : tc.gamma * next_best(i, 0);
                mask(i, 0) = 1.0 / denom;
                w_pos(i, 0) = -static_cast<double>(y) / denom;
                w_neg(i, 0) = -(1.0 - y) / denom;
            }
            ad::Var actor_term =
                tape.weighted_sum_all(tape.select_per_row(log_pi, actions), w_actor);
            ad::Var critic_term = tape.weighted_sum_all(
                tape.square(tape.sub(tape.select_per_row(values, actions), tape.constant(z))),
                mask);
            ad::Var taken_mort = tape.select_per_row(mort, actions);
            ad::Var mort_term = tape.add(
                tape.weighted_sum_all(tape.clamped_log(taken_mort, 1e-7), w_pos),
                tape.weighted_sum_all(
                    tape.clamped_log(
                        tape.sub(tape.constant(Mat::Ones(layout.batch_size, 1)), taken_mort),
                        1e-7),
                    w_neg));
            ad::Var term = tape.add(tape.add(actor_term, critic_term), mort_term);
            loss = loss.valid() ? tape.add(loss, term) : term;
        }
        reference.store.zero_grad();
        tape.backward(loss);
        ad::AdamOptimizer ref_opt;
        ref_opt.learning_rate = tc.learning_rate;
        ref_opt.step(reference.store);
    }

    for (int p = 0; p < model.store.size(); ++p) {
        CAPTURE(model.store.at(p).name);
        CHECK((model.store.at(p).value - reference.store.at(p).value).cwiseAbs().maxCoeff() <=
              1e-12);
    }
}

TEST_CASE("divergence guard trips on non-finite losses") {
    SmallWorld w(41);
    TrainConfig tc = fast_config();
    PolicyModel model = PolicyModel::create(w.embed, 5);
    model.store.at(model.critic_long.weight).value.setConstant(
        std::numeric_limits<double>::quiet_NaN());
    ad::AdamOptimizer opt;
    std::vector<const PatientTrajectory*> batch{&w.train[0]};
    std::vector<Vec> ones{Vec::Ones(w.train[0].length())};
    std::vector<const Vec*> weights{&ones[0]};
    CHECK_THROWS_AS(dac_gradient_step(model, opt, batch, weights, tc), NumericalError);
}

TEST_SUITE_END();
