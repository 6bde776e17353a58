#include "dac/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dac/parallel.hpp"
#include "dac/random.hpp"

namespace dac {

NumeratorModel NumeratorModel::create(int embed_dim, int hidden_dim, std::uint64_t seed) {
    if (embed_dim < 1 || hidden_dim < 1) {
        throw std::invalid_argument("NumeratorModel: dimensions must be >= 1");
    }
    NumeratorModel m;
    m.embed_dim = embed_dim;
    m.hidden_dim = hidden_dim;
    std::mt19937_64 rng(derive_seed(seed, 0x6e756d65ULL));
    m.token_table = m.store.add("numerator.tokens",
                                uniform_init(kChangeClassCount + 1, embed_dim, embed_dim, rng));
    m.cell = GatedCellParams::create(m.store, "numerator.cell", embed_dim, hidden_dim, rng);
    m.head = AffineHeadParams::create(m.store, "numerator.head", hidden_dim, kChangeClassCount,
                                      0.0, rng);
    return m;
}

namespace {

void check_sequence(const std::vector<int>& seq) {
    if (seq.empty()) throw std::invalid_argument("change sequence must be non-empty");
    if (seq.front() != kInitialChangeClass) {
        throw std::invalid_argument("change sequence must start with the INITIAL class");
    }
    for (std::size_t i = 1; i < seq.size(); ++i) {
        if (seq[i] < 0 || seq[i] >= kChangeClassCount) {
            throw std::invalid_argument("change sequence has an out-of-range class");
        }
    }
}

// Shared forward pass over a batch of equal-or-ragged sequences. Returns the
// per-position log-softmax Vars (rows = sequences) for positions predicting
// tokens 2..max_len.
struct NumeratorForward {
    std::vector<ad::Var> log_probs;           // per position: B x 27
    std::vector<std::vector<int>> target_at;  // per position: target or -1
};

NumeratorForward numerator_forward(ad::Tape& tape, NumeratorModel& model,
                                   const std::vector<std::vector<int>>& sequences, int begin,
                                   int end, bool trainable) {
    const int b = end - begin;
    int max_len = 0;
    for (int i = begin; i < end; ++i) {
        check_sequence(sequences[static_cast<std::size_t>(i)]);
        max_len = std::max(max_len, static_cast<int>(sequences[static_cast<std::size_t>(i)].size()));
    }

    ad::Var tokens = trainable ? tape.parameter(model.store, model.token_table)
                               : tape.constant(model.store.at(model.token_table).value);
    GatedCellVars cv = cell_vars(tape, model.store, model.cell, trainable);

    NumeratorForward fwd;
    ad::Var h = tape.constant(Mat::Zero(b, model.hidden_dim));
    for (int pos = 0; pos + 1 < max_len; ++pos) {
        std::vector<int> rows(static_cast<std::size_t>(b), kInitialChangeClass);
        std::vector<int> targets(static_cast<std::size_t>(b), -1);
        for (int i = 0; i < b; ++i) {
            const auto& seq = sequences[static_cast<std::size_t>(begin + i)];
            if (pos < static_cast<int>(seq.size())) rows[static_cast<std::size_t>(i)] = seq[static_cast<std::size_t>(pos)];
            if (pos + 1 < static_cast<int>(seq.size())) {
                targets[static_cast<std::size_t>(i)] = seq[static_cast<std::size_t>(pos + 1)];
            }
        }
        ad::Var x = tape.gather_rows(tokens, rows);
        h = cell_step(tape, cv, x, h);
        ad::Var logits = model.head.apply(tape, model.store, h, trainable);
        fwd.log_probs.push_back(tape.log_softmax_rows(logits));
        fwd.target_at.push_back(std::move(targets));
    }
    return fwd;
}

}  // namespace

ad::Var numerator_nll_loss(ad::Tape& tape, NumeratorModel& model,
                           const std::vector<std::vector<int>>& sequences, int begin, int end,
                           double denom) {
    NumeratorForward fwd = numerator_forward(tape, model, sequences, begin, end, true);
    if (denom <= 0.0) {
        denom = 0.0;
        for (const auto& t : fwd.target_at) {
            for (int v : t) denom += v >= 0 ? 1.0 : 0.0;
        }
    }
    ad::Var loss;
    const int b = end - begin;
    for (std::size_t pos = 0; pos < fwd.log_probs.size(); ++pos) {
        Mat w = Mat::Zero(b, kChangeClassCount);
        for (int i = 0; i < b; ++i) {
            int target = fwd.target_at[pos][static_cast<std::size_t>(i)];
            if (target >= 0) w(i, target) = -1.0 / denom;
        }
        ad::Var term = tape.weighted_sum_all(fwd.log_probs[pos], w);
        loss = loss.valid() ? tape.add(loss, term) : term;
    }
    return loss;
}

NumeratorModel train_numerator(const std::vector<std::vector<int>>& sequences,
                               const NumeratorTrainOptions& options) {
    if (sequences.empty()) throw std::invalid_argument("train_numerator: no sequences");
    NumeratorModel model = NumeratorModel::create(16, 32, options.seed);
    ad::AdamOptimizer opt;
    opt.learning_rate = options.learning_rate;

    const int n = static_cast<int>(sequences.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(derive_seed(options.seed, 0x6f72646572ULL));

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < n; begin += options.batch_size) {
            const int end = std::min(n, begin + options.batch_size);
            std::vector<std::vector<int>> batch;
            batch.reserve(static_cast<std::size_t>(end - begin));
            double denom = 0.0;
            for (int i = begin; i < end; ++i) {
                batch.push_back(sequences[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
                denom += static_cast<double>(batch.back().size()) - 1.0;
            }
            model.store.zero_grad();
            ad::sharded_backward(model.store, static_cast<int>(batch.size()), 64,
                                 [&](ad::Tape& tape, int b, int e) {
                                     return numerator_nll_loss(tape, model, batch, b, e, denom);
                                 });
            opt.step(model.store);
        }
    }
    return model;
}

Mat NumeratorModel::sequence_probs(const std::vector<int>& class_sequence) {
    check_sequence(class_sequence);
    const int T = static_cast<int>(class_sequence.size());
    if (T < 2) return Mat(0, kChangeClassCount);
    ad::Tape tape;
    std::vector<std::vector<int>> one{class_sequence};
    NumeratorForward fwd = numerator_forward(tape, *this, one, 0, 1, false);
    Mat probs(T - 1, kChangeClassCount);
    for (int pos = 0; pos < T - 1; ++pos) {
        probs.row(pos) = tape.value(fwd.log_probs[static_cast<std::size_t>(pos)])
                             .row(0)
                             .array()
                             .exp()
                             .matrix();
    }
    return probs;
}

std::vector<std::vector<int>> cohort_change_sequences(
    const std::vector<PatientTrajectory>& cohort) {
    std::vector<std::vector<int>> out;
    out.reserve(cohort.size());
    for (const PatientTrajectory& p : cohort) {
        std::vector<int> seq;
        seq.reserve(p.steps.size());
        for (const ChangeClass& c : change_sequence(p)) seq.push_back(change_class_index(c));
        out.push_back(std::move(seq));
    }
    return out;
}

BehaviorClone BehaviorClone::create(const EmbeddingConfig& cfg, std::uint64_t seed) {
    BehaviorClone clone;
    std::mt19937_64 rng(derive_seed(seed, 0x636c6f6eULL));
    clone.encoder = SequenceEncoderParams::create(clone.store, "clone.encoder", cfg, rng);
    clone.change_head = AffineHeadParams::create(clone.store, "clone.change_head", cfg.state_dim,
                                                 kChangeClassCount, 0.0, rng);
    clone.action_head = AffineHeadParams::create(clone.store, "clone.action_head", cfg.state_dim,
                                                 kActionCount, 0.0, rng);
    return clone;
}

ad::Var clone_ce_loss(ad::Tape& tape, BehaviorClone& clone, const BatchLayout& layout,
                      double denom_change, double denom_action) {
    EncodedBatch encoded = encode_batch(tape, clone.store, clone.encoder, layout, true);
    if (denom_change <= 0.0) {
        denom_change = 0.0;
        for (int t = 1; t < layout.max_len; ++t) denom_change += layout.valid.col(t).sum();
        denom_change = std::max(denom_change, 1.0);
    }
    if (denom_action <= 0.0) denom_action = std::max(layout.valid.sum(), 1.0);

    ad::Var loss;
    for (int t = 0; t < layout.max_len; ++t) {
        ad::Var action_lp = tape.log_softmax_rows(
            clone.action_head.apply(tape, clone.store, encoded.states[t], true));
        Mat wa = Mat::Zero(layout.batch_size, kActionCount);
        for (int i = 0; i < layout.batch_size; ++i) {
            if (layout.valid(i, t) > 0.0) {
                wa(i, layout.action_at[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]) =
                    -1.0 / denom_action;
            }
        }
        ad::Var term = tape.weighted_sum_all(action_lp, wa);
        loss = loss.valid() ? tape.add(loss, term) : term;

        if (t >= 1) {
            ad::Var change_lp = tape.log_softmax_rows(
                clone.change_head.apply(tape, clone.store, encoded.states[t], true));
            Mat wc = Mat::Zero(layout.batch_size, kChangeClassCount);
            for (int i = 0; i < layout.batch_size; ++i) {
                int cls = layout.change_at[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
                if (layout.valid(i, t) > 0.0 && cls != kInitialChangeClass) {
                    wc(i, cls) = -1.0 / denom_change;
                }
            }
            loss = tape.add(loss, tape.weighted_sum_all(change_lp, wc));
        }
    }
    return loss;
}

BehaviorClone train_behavior_clone(const std::vector<PatientTrajectory>& training,
                                   const EmbeddingConfig& cfg, const CloneTrainOptions& options) {
    if (training.empty()) throw std::invalid_argument("train_behavior_clone: empty training set");
    BehaviorClone clone = BehaviorClone::create(cfg, options.seed);
    ad::AdamOptimizer opt;
    opt.learning_rate = options.learning_rate;

    const int n = static_cast<int>(training.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(derive_seed(options.seed, 0x73687566ULL));

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < n; begin += options.batch_size) {
            const int end = std::min(n, begin + options.batch_size);
            std::vector<const PatientTrajectory*> batch;
            batch.reserve(static_cast<std::size_t>(end - begin));
            for (int i = begin; i < end; ++i) {
                batch.push_back(
                    &training[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }
            BatchLayout full = build_batch_layout(batch, cfg);
            double denom_action = full.valid.sum();
            double denom_change = 0.0;
            for (int t = 1; t < full.max_len; ++t) denom_change += full.valid.col(t).sum();
            denom_change = std::max(denom_change, 1.0);

            clone.store.zero_grad();
            ad::sharded_backward(clone.store, static_cast<int>(batch.size()), 64,
                                 [&](ad::Tape& tape, int b, int e) {
                                     std::vector<const PatientTrajectory*> shard(
                                         batch.begin() + b, batch.begin() + e);
                                     BatchLayout sl = build_batch_layout(shard, cfg);
                                     return clone_ce_loss(tape, clone, sl, denom_change,
                                                          denom_action);
                                 });
            opt.step(clone.store);
        }
    }
    return clone;
}

namespace {

Mat clone_head_probs(BehaviorClone& clone, const PatientTrajectory& traj,
                     const AffineHeadParams& head) {
    ad::Tape tape;
    std::vector<const PatientTrajectory*> one{&traj};
    BatchLayout layout = build_batch_layout(one, clone.encoder.cfg);
    EncodedBatch encoded = encode_batch(tape, clone.store, clone.encoder, layout, false);
    Mat probs(traj.length(), head.output_dim);
    for (int t = 0; t < traj.length(); ++t) {
        ad::Var lp = tape.log_softmax_rows(head.apply(tape, clone.store, encoded.states[t],
                                                      false));
        probs.row(t) = tape.value(lp).row(0).array().exp().matrix();
    }
    return probs;
}

}  // namespace

Mat BehaviorClone::change_probs(const PatientTrajectory& traj) {
    return clone_head_probs(*this, traj, change_head);
}

Mat BehaviorClone::action_probs(const PatientTrajectory& traj) {
    return clone_head_probs(*this, traj, action_head);
}

Vec iptw_weights(const Vec& numerator_probs, const Vec& denominator_probs,
                 const WeightOptions& options) {
    if (numerator_probs.size() != denominator_probs.size()) {
        throw std::invalid_argument("iptw_weights: aligned probability vectors required");
    }
    if (options.prob_floor <= 0.0 || options.clip_min <= 0.0 ||
        options.clip_max < options.clip_min) {
        throw std::invalid_argument("iptw_weights: invalid stabilizer options");
    }
    const int T = static_cast<int>(numerator_probs.size());
    Vec weights(T);
    double running = 1.0;
    for (int t = 0; t < T; ++t) {
        if (t > 0) {  // the INITIAL step contributes a factor of 1
            double numer = std::max(numerator_probs(t), options.prob_floor);
            double denom = std::max(denominator_probs(t), options.prob_floor);
            running *= numer / denom;
        }
        weights(t) = std::clamp(running, options.clip_min, options.clip_max);
    }
    return weights;
}

Vec iptw_weights(const PatientTrajectory& traj, NumeratorModel& numerator, BehaviorClone& clone,
                 const WeightOptions& options) {
    const int T = traj.length();
    std::vector<int> classes;
    for (const ChangeClass& c : change_sequence(traj)) classes.push_back(change_class_index(c));

    Mat numer = numerator.sequence_probs(classes);     // (T-1) x 27
    Mat denom = clone.change_probs(traj);              // T x 27
    Vec numer_obs = Vec::Ones(T), denom_obs = Vec::Ones(T);
    for (int t = 1; t < T; ++t) {
        int cls = classes[static_cast<std::size_t>(t)];
        numer_obs(t) = numer(t - 1, cls);
        denom_obs(t) = denom(t, cls);
    }
    return iptw_weights(numer_obs, denom_obs, options);
}

std::vector<Vec> cohort_iptw_weights(const std::vector<PatientTrajectory>& cohort,
                                     NumeratorModel& numerator, BehaviorClone& clone,
                                     const WeightOptions& options) {
    std::vector<Vec> out(cohort.size());
    parallel_shards(static_cast<int>(cohort.size()), 32, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            out[static_cast<std::size_t>(i)] =
                iptw_weights(cohort[static_cast<std::size_t>(i)], numerator, clone, options);
        }
    });
    return out;
}

double short_term_reward(const Vec& policy_probs, const Vec& mortality_probs, int action_index) {
    if (policy_probs.size() != mortality_probs.size()) {
        throw std::invalid_argument("short_term_reward: distribution size mismatch");
    }
    if (action_index < 0 || action_index >= policy_probs.size()) {
        throw std::invalid_argument("short_term_reward: action index out of range");
    }
    return policy_probs.dot(mortality_probs) - mortality_probs(action_index);
}

double terminal_reward(int outcome) {
    if (outcome != 0 && outcome != 1) {
        throw std::invalid_argument("terminal_reward: outcome must be 0 or 1");
    }
    return outcome == 1 ? -kTerminalRewardMagnitude : kTerminalRewardMagnitude;
}

double combined_reward(double weight, double long_term, double short_term, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) {
        throw std::invalid_argument("combined_reward: alpha must be in [0,1]");
    }
    return weight * (alpha * long_term + (1.0 - alpha) * short_term);
}

}  // namespace dac
