#include "dac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dac/parallel.hpp"
#include "dac/random.hpp"

namespace dac {

void TrainConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("train.alpha must be in [0,1]");
    if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("train.gamma must be in (0,1]");
    if (learning_rate <= 0.0) throw std::invalid_argument("train.learning_rate must be > 0");
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw std::invalid_argument("train.batch_size must be even and >= 2");
    }
    if (epochs < 1 || iters_per_epoch < 1) {
        throw std::invalid_argument("train.epochs and train.iters_per_epoch must be >= 1");
    }
    if (target_sync < 1) throw std::invalid_argument("train.target_sync must be >= 1");
    if (no_short && no_long) {
        throw std::invalid_argument("train: no_short and no_long remove every reward term");
    }
}

double TrainConfig::effective_alpha() const {
    if (no_short) return 1.0;
    if (no_long) return 0.0;
    return alpha;
}

PolicyModel PolicyModel::create(const EmbeddingConfig& cfg, std::uint64_t seed) {
    PolicyModel m;
    std::mt19937_64 rng(derive_seed(seed, 0x706f6c69ULL));
    m.encoder = SequenceEncoderParams::create(m.store, "policy.encoder", cfg, rng);
    m.actor = AffineHeadParams::create(m.store, "policy.actor", cfg.state_dim, kActionCount, 0.0,
                                       rng);
    m.critic_long = AffineHeadParams::create(m.store, "policy.critic_long", cfg.state_dim,
                                             kActionCount, 0.0, rng);
    m.mortality = AffineHeadParams::create(m.store, "policy.mortality", cfg.state_dim,
                                           kActionCount, 0.0, rng);
    m.sync_target();
    return m;
}

void PolicyModel::sync_target() {
    target_weight = store.at(critic_long.weight).value;
    target_bias = store.at(critic_long.bias).value;
}

Mat affine_values(const ad::ParameterStore& store, const AffineHeadParams& head,
                  const Mat& states) {
    Mat out = states * store.at(head.weight).value;
    out.rowwise() += store.at(head.bias).value.row(0);
    return out;
}

double select_action_value(const Mat& values, int row, int flat_action) {
    if (row < 0 || row >= values.rows() || flat_action < 0 || flat_action >= values.cols()) {
        throw std::invalid_argument("select_action_value: index out of range");
    }
    return values(row, flat_action);
}

namespace {

Mat softmax_rows(const Mat& logits) {
    Mat probs(logits.rows(), logits.cols());
    for (int r = 0; r < logits.rows(); ++r) {
        double mx = logits.row(r).maxCoeff();
        Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
        probs.row(r) = (e / e.sum()).matrix();
    }
    return probs;
}

Mat head_matrix(PolicyModel& model, const PatientTrajectory& traj, const AffineHeadParams& head,
                bool as_probs, bool as_sigmoid) {
    ad::Tape tape;
    std::vector<const PatientTrajectory*> one{&traj};
    BatchLayout layout = build_batch_layout(one, model.encoder.cfg);
    EncodedBatch encoded = encode_batch(tape, model.store, model.encoder, layout, false);
    Mat out(traj.length(), head.output_dim);
    for (int t = 0; t < traj.length(); ++t) {
        ad::Var v = head.apply(tape, model.store, encoded.states[t], false);
        if (as_sigmoid) v = tape.sigmoid(v);
        out.row(t) = tape.value(v).row(0);
    }
    if (as_probs) out = softmax_rows(out);
    return out;
}

}  // namespace

Mat PolicyModel::policy_probs(const PatientTrajectory& traj) {
    return head_matrix(*this, traj, actor, true, false);
}

Mat PolicyModel::long_term_values(const PatientTrajectory& traj) {
    return head_matrix(*this, traj, critic_long, false, false);
}

Mat PolicyModel::mortality_probs(const PatientTrajectory& traj) {
    return head_matrix(*this, traj, mortality, false, true);
}

std::vector<ActionTriple> PolicyModel::recommend(const PatientTrajectory& traj) {
    Mat probs = policy_probs(traj);
    std::vector<ActionTriple> actions;
    actions.reserve(static_cast<std::size_t>(traj.length()));
    for (int t = 0; t < traj.length(); ++t) {
        int best = 0;
        probs.row(t).maxCoeff(&best);
        actions.push_back(unflatten(best));
    }
    return actions;
}

Mat td_targets(PolicyModel& model, const std::vector<const PatientTrajectory*>& batch,
               double gamma) {
    BatchLayout layout = build_batch_layout(batch, model.encoder.cfg);
    ad::Tape tape;
    EncodedBatch encoded = encode_batch(tape, model.store, model.encoder, layout, false);

    Mat targets = Mat::Zero(layout.batch_size, layout.max_len);
    for (int t = 0; t < layout.max_len; ++t) {
        Mat next_best;
        if (t + 1 < layout.max_len) {
            Mat next_values = tape.value(encoded.states[t + 1]) * model.target_weight;
            next_values.rowwise() += model.target_bias.row(0);
            next_best = next_values.rowwise().maxCoeff();
        }
        for (int i = 0; i < layout.batch_size; ++i) {
            if (layout.valid(i, t) == 0.0) continue;
            const int len = layout.lengths[static_cast<std::size_t>(i)];
            if (t == len - 1) {
                targets(i, t) =
                    terminal_reward(layout.outcome[static_cast<std::size_t>(i)]);
            } else {
                targets(i, t) = gamma * next_best(i, 0);
            }
        }
    }
    return targets;
}

ad::Var weighted_log_policy_loss(ad::Tape& tape, ad::ParameterStore& store,
                                 const AffineHeadParams& actor, ad::Var states,
                                 const std::vector<int>& actions, const Mat& weights) {
    ad::Var log_pi = tape.log_softmax_rows(actor.apply(tape, store, states, true));
    return tape.weighted_sum_all(tape.select_per_row(log_pi, actions), weights);
}

ad::Var critic_td_loss(ad::Tape& tape, ad::ParameterStore& store,
                       const AffineHeadParams& critic, ad::Var states,
                       const std::vector<int>& actions, const Mat& targets, const Mat& mask) {
    ad::Var values = critic.apply(tape, store, states, true);
    ad::Var taken = tape.select_per_row(values, actions);
    return tape.weighted_sum_all(tape.square(tape.sub(taken, tape.constant(targets))), mask);
}

ad::Var action_bce_loss(ad::Tape& tape, ad::ParameterStore& store, const AffineHeadParams& head,
                        ad::Var states, const std::vector<int>& actions, const Mat& w_pos,
                        const Mat& w_neg) {
    ad::Var probs = tape.sigmoid(head.apply(tape, store, states, true));
    ad::Var taken = tape.select_per_row(probs, actions);
    const int n = static_cast<int>(actions.size());
    return tape.add(
        tape.weighted_sum_all(tape.clamped_log(taken, 1e-7), w_pos),
        tape.weighted_sum_all(tape.clamped_log(tape.sub(tape.constant(Mat::Ones(n, 1)), taken),
                                               1e-7),
                              w_neg));
}

namespace {

struct ShardLossValues {
    double actor = 0.0;
    double critic = 0.0;
    double mortality = 0.0;
};

// Builds the combined batch loss for one shard on `tape` and reports the
// component values. Everything entering Q (Eq-10) is detached: only the
// log-policy, the online critic coordinate, and the mortality coordinate
// carry gradients.
ad::Var build_dac_loss(ad::Tape& tape, PolicyModel& model,
                       const std::vector<const PatientTrajectory*>& shard,
                       const std::vector<const Vec*>& shard_weights, const TrainConfig& config,
                       double denom, ShardLossValues& values) {
    BatchLayout layout = build_batch_layout(shard, model.encoder.cfg);
    EncodedBatch encoded = encode_batch(tape, model.store, model.encoder, layout, true);
    const double alpha = config.effective_alpha();

    ad::Var total;
    auto add_term = [&](ad::Var term) {
        total = total.valid() ? tape.add(total, term) : term;
    };

    for (int t = 0; t < layout.max_len; ++t) {
        const std::vector<int>& actions = layout.action_at[static_cast<std::size_t>(t)];

        ad::Var actor_logits = model.actor.apply(tape, model.store, encoded.states[t], true);
        ad::Var log_pi = tape.log_softmax_rows(actor_logits);
        ad::Var critic_values =
            model.critic_long.apply(tape, model.store, encoded.states[t], true);
        ad::Var mort_probs =
            tape.sigmoid(model.mortality.apply(tape, model.store, encoded.states[t], true));

        // Detached copies feeding the reward algebra.
        const Mat pi_val = tape.value(log_pi).array().exp().matrix();
        const Mat critic_val = tape.value(critic_values);
        const Mat mort_val = tape.value(mort_probs);

        // TD target from the frozen head at the next step's state values.
        Mat next_best;
        if (t + 1 < layout.max_len) {
            Mat next_values = tape.value(encoded.states[t + 1]) * model.target_weight;
            next_values.rowwise() += model.target_bias.row(0);
            next_best = next_values.rowwise().maxCoeff();
        }

        Mat w_actor = Mat::Zero(layout.batch_size, 1);
        Mat z = Mat::Zero(layout.batch_size, 1);
        Mat w_pos = Mat::Zero(layout.batch_size, 1);
        Mat w_neg = Mat::Zero(layout.batch_size, 1);
        Mat mask = Mat::Zero(layout.batch_size, 1);
        for (int i = 0; i < layout.batch_size; ++i) {
            if (layout.valid(i, t) == 0.0) continue;
            mask(i, 0) = 1.0 / denom;
            const int a = actions[static_cast<std::size_t>(i)];
            const int len = layout.lengths[static_cast<std::size_t>(i)];
            const int y = layout.outcome[static_cast<std::size_t>(i)];

            const double w_t = (*shard_weights[static_cast<std::size_t>(i)])(t);
            const double r_long = critic_val(i, a);
            const double r_short =
                pi_val.row(i).dot(mort_val.row(i)) - mort_val(i, a);
            const double q = combined_reward(w_t, r_long, r_short, alpha);
            w_actor(i, 0) = -q / denom;  // ascend the surrogate

            z(i, 0) = (t == len - 1) ? terminal_reward(y) : config.gamma * next_best(i, 0);
            w_pos(i, 0) = -static_cast<double>(y) / denom;
            w_neg(i, 0) = -(1.0 - static_cast<double>(y)) / denom;
        }

        ad::Var actor_term =
            tape.weighted_sum_all(tape.select_per_row(log_pi, actions), w_actor);
        ad::Var critic_term = tape.weighted_sum_all(
            tape.square(tape.sub(tape.select_per_row(critic_values, actions),
                                 tape.constant(z))),
            mask);
        ad::Var mort_taken = tape.select_per_row(mort_probs, actions);
        ad::Var mort_term = tape.add(
            tape.weighted_sum_all(tape.clamped_log(mort_taken, 1e-7), w_pos),
            tape.weighted_sum_all(
                tape.clamped_log(
                    tape.sub(tape.constant(Mat::Ones(layout.batch_size, 1)), mort_taken), 1e-7),
                w_neg));

        values.actor += tape.scalar(actor_term);
        values.critic += tape.scalar(critic_term);
        values.mortality += tape.scalar(mort_term);
        add_term(actor_term);
        add_term(critic_term);
        add_term(mort_term);
    }
    return total;
}

}  // namespace

DacStepLosses dac_gradient_step(PolicyModel& model, ad::AdamOptimizer& optimizer,
                                const std::vector<const PatientTrajectory*>& batch,
                                const std::vector<const Vec*>& batch_weights,
                                const TrainConfig& config) {
    if (batch.empty() || batch.size() != batch_weights.size()) {
        throw std::invalid_argument("dac_gradient_step: batch and weights must align");
    }
    double denom = 0.0;
    for (const PatientTrajectory* p : batch) denom += static_cast<double>(p->length());

    const int shard_size = 64;
    const int shards = (static_cast<int>(batch.size()) + shard_size - 1) / shard_size;
    std::vector<ShardLossValues> shard_values(static_cast<std::size_t>(shards));

    model.store.zero_grad();
    ad::sharded_backward(
        model.store, static_cast<int>(batch.size()), shard_size,
        [&](ad::Tape& tape, int begin, int end) {
            std::vector<const PatientTrajectory*> shard(batch.begin() + begin,
                                                        batch.begin() + end);
            std::vector<const Vec*> weights(batch_weights.begin() + begin,
                                            batch_weights.begin() + end);
            return build_dac_loss(tape, model, shard, weights, config, denom,
                                  shard_values[static_cast<std::size_t>(begin / shard_size)]);
        });

    DacStepLosses losses;
    for (const ShardLossValues& v : shard_values) {
        losses.actor += v.actor;
        losses.critic += v.critic;
        losses.mortality += v.mortality;
    }
    if (!std::isfinite(losses.actor) || !std::isfinite(losses.critic) ||
        !std::isfinite(losses.mortality)) {
        throw NumericalError("dac_gradient_step: non-finite loss");
    }
    optimizer.step(model.store);
    return losses;
}

namespace {

std::vector<Mat> batched_prob_matrices(const std::vector<PatientTrajectory>& cohort,
                                       const std::function<Mat(const PatientTrajectory&)>& fn) {
    std::vector<Mat> out(cohort.size());
    parallel_shards(static_cast<int>(cohort.size()), 32, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            out[static_cast<std::size_t>(i)] = fn(cohort[static_cast<std::size_t>(i)]);
        }
    });
    return out;
}

ProbTable table_from(const std::vector<PatientTrajectory>& cohort, std::vector<Mat> probs) {
    auto table = std::make_shared<std::map<std::string, Mat>>();
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        (*table)[cohort[i].patient_id] = std::move(probs[i]);
    }
    return table;
}

}  // namespace

ProbTable policy_prob_table(PolicyModel& model, const std::vector<PatientTrajectory>& cohort) {
    return table_from(cohort, batched_prob_matrices(cohort, [&](const PatientTrajectory& p) {
                          return model.policy_probs(p);
                      }));
}

ProbTable clone_action_prob_table(BehaviorClone& clone,
                                  const std::vector<PatientTrajectory>& cohort) {
    return table_from(cohort, batched_prob_matrices(cohort, [&](const PatientTrajectory& p) {
                          return clone.action_probs(p);
                      }));
}

PolicyProbsFn table_policy(ProbTable table) {
    return [table](const PatientTrajectory& p, int t) -> Vec {
        auto it = table->find(p.patient_id);
        if (it == table->end()) {
            throw std::invalid_argument("table_policy: unknown patient " + p.patient_id);
        }
        return it->second.row(t).transpose();
    };
}

TrainResult train_dac(const std::vector<PatientTrajectory>& training,
                      const std::vector<PatientTrajectory>& validation,
                      const EmbeddingConfig& cfg, const TrainConfig& config, RiskModel& risk,
                      BehaviorClone& clone, NumeratorModel& numerator,
                      const EpochCallback& on_epoch, int start_epoch,
                      PolicyModel* resume_from) {
    config.validate();
    if (training.empty()) throw std::invalid_argument("train_dac: empty training set");

    // Frozen per-patient weights; ones when the confounding balance module is
    // ablated.
    std::vector<Vec> weights;
    if (config.no_iptw) {
        weights.reserve(training.size());
        for (const auto& p : training) weights.push_back(Vec::Ones(p.length()));
    } else {
        weights = cohort_iptw_weights(training, numerator, clone, config.weights);
    }

    // Risk pools for the resampler.
    PatientPools pools;
    if (!config.no_resample) {
        pools = PatientPools::build(training, cohort_max_risks(risk, training));
        if (pools.survivors.empty() || pools.nonsurvivors.empty()) {
            throw std::invalid_argument("train_dac: resampling needs both outcome classes");
        }
    }

    PolicyModel model = resume_from ? std::move(*resume_from)
                                    : PolicyModel::create(cfg, config.seed);
    ad::AdamOptimizer opt;
    opt.learning_rate = config.learning_rate;
    std::mt19937_64 rng(derive_seed(config.seed, 0x64616374ULL));
    std::uniform_int_distribution<int> uniform_patient(0,
                                                       static_cast<int>(training.size()) - 1);

    ProbTable clone_table;
    if (!validation.empty()) clone_table = clone_action_prob_table(clone, validation);

    TrainResult result;
    long updates = 0;
    double best_wis = -std::numeric_limits<double>::infinity();

    for (int epoch = start_epoch; epoch < start_epoch + config.epochs; ++epoch) {
        EpochMetrics em;
        em.epoch = epoch;
        for (int iter = 0; iter < config.iters_per_epoch; ++iter) {
            std::vector<int> indices;
            if (config.no_resample) {
                indices.reserve(static_cast<std::size_t>(config.batch_size));
                for (int i = 0; i < config.batch_size; ++i) indices.push_back(uniform_patient(rng));
            } else {
                indices = sample_balanced_batch(pools, config.batch_size,
                                                config.match_tolerance, rng)
                              .interleaved();
            }
            std::vector<const PatientTrajectory*> batch;
            std::vector<const Vec*> batch_weights;
            batch.reserve(indices.size());
            for (int idx : indices) {
                batch.push_back(&training[static_cast<std::size_t>(idx)]);
                batch_weights.push_back(&weights[static_cast<std::size_t>(idx)]);
            }
            DacStepLosses losses = dac_gradient_step(model, opt, batch, batch_weights, config);
            em.actor_loss += losses.actor;
            em.critic_loss += losses.critic;
            em.mortality_loss += losses.mortality;
            if (++updates % config.target_sync == 0) model.sync_target();
        }
        em.actor_loss /= config.iters_per_epoch;
        em.critic_loss /= config.iters_per_epoch;
        em.mortality_loss /= config.iters_per_epoch;

        if (!validation.empty()) {
            ProbTable policy_table = policy_prob_table(model, validation);
            em.validation_wis = wis(validation, table_policy(policy_table),
                                    table_policy(clone_table), config.gamma);
        }
        result.metrics.push_back(em);
        if (on_epoch) on_epoch(em, model, opt);

        if (validation.empty() || em.validation_wis > best_wis) {
            best_wis = em.validation_wis;
            result.best_epoch = epoch;
            result.policy.store = model.store;  // deep copy of parameters
            result.policy.encoder = model.encoder;
            result.policy.actor = model.actor;
            result.policy.critic_long = model.critic_long;
            result.policy.mortality = model.mortality;
            result.policy.target_weight = model.target_weight;
            result.policy.target_bias = model.target_bias;
        }
    }
    return result;
}

}  // namespace dac
