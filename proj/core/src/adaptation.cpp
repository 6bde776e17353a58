#include "dac/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "dac/parallel.hpp"
#include "dac/random.hpp"

namespace dac {

std::vector<int> shared_vocabulary(const std::vector<PatientTrajectory>& a,
                                   const std::vector<PatientTrajectory>& b) {
    auto vocabulary = [](const std::vector<PatientTrajectory>& cohort) {
        std::set<int> vars;
        for (const auto& p : cohort) {
            for (const auto& s : p.steps) {
                for (const auto& e : s.events) vars.insert(e.variable_id);
            }
        }
        return vars;
    };
    std::set<int> va = vocabulary(a), vb = vocabulary(b);
    std::vector<int> shared;
    std::set_intersection(va.begin(), va.end(), vb.begin(), vb.end(),
                          std::back_inserter(shared));
    if (shared.empty()) throw std::invalid_argument("shared_vocabulary: no common variables");
    return shared;
}

CovariateStandardizer CovariateStandardizer::fit(const std::vector<PatientTrajectory>& training,
                                                 const std::vector<int>& variable_ids) {
    if (variable_ids.empty()) {
        throw std::invalid_argument("CovariateStandardizer: empty variable list");
    }
    CovariateStandardizer st;
    st.variable_ids = variable_ids;
    const int d = static_cast<int>(variable_ids.size());
    st.mean = Vec::Zero(d);
    st.std_dev = Vec::Ones(d);

    std::map<int, int> position;
    for (int i = 0; i < d; ++i) position[variable_ids[static_cast<std::size_t>(i)]] = i;

    Vec sum = Vec::Zero(d), sum_sq = Vec::Zero(d);
    std::vector<long> counts(static_cast<std::size_t>(d), 0);
    for (const auto& p : training) {
        for (const auto& s : p.steps) {
            for (const auto& e : s.events) {
                auto it = position.find(e.variable_id);
                if (it == position.end()) continue;
                sum(it->second) += e.value;
                sum_sq(it->second) += e.value * e.value;
                counts[static_cast<std::size_t>(it->second)] += 1;
            }
        }
    }
    for (int i = 0; i < d; ++i) {
        const long c = counts[static_cast<std::size_t>(i)];
        if (c > 0) {
            st.mean(i) = sum(i) / static_cast<double>(c);
            double var = sum_sq(i) / static_cast<double>(c) - st.mean(i) * st.mean(i);
            st.std_dev(i) = var > 1e-12 ? std::sqrt(var) : 1.0;
        }
    }
    return st;
}

Vec CovariateStandardizer::transform(const TrajectoryStep& step) const {
    const int d = static_cast<int>(variable_ids.size());
    Vec x = Vec::Zero(d);
    for (const auto& e : step.events) {
        auto it = std::lower_bound(variable_ids.begin(), variable_ids.end(), e.variable_id);
        if (it == variable_ids.end() || *it != e.variable_id) continue;
        const int i = static_cast<int>(it - variable_ids.begin());
        x(i) = (e.value - mean(i)) / std_dev(i);
    }
    return x;
}

DynamicsModel DynamicsModel::create(int state_dim, int action_dim, int out_dim,
                                    std::uint64_t seed) {
    if (state_dim < 1 || action_dim < 1 || out_dim < 1) {
        throw std::invalid_argument("DynamicsModel: dimensions must be >= 1");
    }
    DynamicsModel m;
    m.state_dim = state_dim;
    m.action_dim = action_dim;
    m.out_dim = out_dim;
    std::mt19937_64 rng(derive_seed(seed, 0x64796e61ULL));
    m.action_table = m.store.add("dynamics.action_table",
                                 uniform_init(kActionCount, action_dim, action_dim, rng));
    m.map = AffineHeadParams::create(m.store, "dynamics.map", state_dim + action_dim, out_dim,
                                     1.0, rng);
    return m;
}

Mat DynamicsModel::predict(const Mat& states, const std::vector<int>& actions) {
    if (states.rows() != static_cast<int>(actions.size())) {
        throw std::invalid_argument("DynamicsModel::predict: one action per state row");
    }
    ad::Tape tape;
    ad::Var s = tape.constant(states);
    ad::Var e = tape.gather_rows(tape.constant(store.at(action_table).value), actions);
    ad::Var out = map.apply(tape, store, tape.concat_cols(s, e), false);
    return tape.value(out);
}

Mat DynamicsModel::predict_all_actions(const Vec& state) {
    Mat states = state.transpose().replicate(kActionCount, 1);
    std::vector<int> actions(static_cast<std::size_t>(kActionCount));
    for (int a = 0; a < kActionCount; ++a) actions[static_cast<std::size_t>(a)] = a;
    return predict(states, actions);
}

DynamicsDataset build_dynamics_dataset(PolicyModel& encoder_owner,
                                       const std::vector<PatientTrajectory>& cohort,
                                       const CovariateStandardizer& standardizer) {
    long samples = 0;
    for (const auto& p : cohort) samples += std::max(0, p.length() - 1);
    if (samples == 0) {
        throw std::invalid_argument("build_dynamics_dataset: need trajectories with T >= 2");
    }
    const int k = encoder_owner.encoder.cfg.state_dim;
    const int d = static_cast<int>(standardizer.variable_ids.size());

    DynamicsDataset data;
    data.states = Mat(samples, k);
    data.targets = Mat(samples, d);
    data.actions.resize(static_cast<std::size_t>(samples));

    // Per-trajectory row offsets so shards can write disjoint slices.
    std::vector<long> offset(cohort.size() + 1, 0);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        offset[i + 1] = offset[i] + std::max(0, cohort[i].length() - 1);
    }

    parallel_shards(static_cast<int>(cohort.size()), 32, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const PatientTrajectory& p = cohort[static_cast<std::size_t>(i)];
            if (p.length() < 2) continue;
            Mat states = encode_trajectory(encoder_owner.store, encoder_owner.encoder, p);
            long row = offset[static_cast<std::size_t>(i)];
            for (int t = 0; t + 1 < p.length(); ++t, ++row) {
                data.states.row(row) = states.row(t);
                data.actions[static_cast<std::size_t>(row)] =
                    flat_index(p.steps[static_cast<std::size_t>(t)].action);
                data.targets.row(row) =
                    standardizer.transform(p.steps[static_cast<std::size_t>(t + 1)]).transpose();
            }
        }
    });
    return data;
}

ad::Var dynamics_mse_loss(ad::Tape& tape, DynamicsModel& model, const DynamicsDataset& data,
                          int begin, int end, double denom, bool train_action_table) {
    const int n = end - begin;
    Mat states = data.states.middleRows(begin, n);
    Mat targets = data.targets.middleRows(begin, n);
    std::vector<int> actions(data.actions.begin() + begin, data.actions.begin() + end);

    ad::Var table = train_action_table
                        ? tape.parameter(model.store, model.action_table)
                        : tape.constant(model.store.at(model.action_table).value);
    ad::Var x = tape.concat_cols(tape.constant(states), tape.gather_rows(table, actions));
    ad::Var pred = model.map.apply(tape, model.store, x, true);
    ad::Var err = tape.square(tape.sub(pred, tape.constant(targets)));
    return tape.scale(tape.sum_all(err), 1.0 / denom);
}

namespace {

void dynamics_epochs(DynamicsModel& model, const DynamicsDataset& data,
                     const DynamicsTrainOptions& options, ad::AdamOptimizer& opt) {
    const int n = data.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(derive_seed(options.seed, 0x64796e73ULL));

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < n; begin += options.batch_size) {
            const int end = std::min(n, begin + options.batch_size);
            // Gather the shuffled slice into a contiguous view.
            DynamicsDataset batch;
            batch.states = Mat(end - begin, model.state_dim);
            batch.targets = Mat(end - begin, model.out_dim);
            batch.actions.resize(static_cast<std::size_t>(end - begin));
            for (int i = begin; i < end; ++i) {
                const int src = order[static_cast<std::size_t>(i)];
                batch.states.row(i - begin) = data.states.row(src);
                batch.targets.row(i - begin) = data.targets.row(src);
                batch.actions[static_cast<std::size_t>(i - begin)] =
                    data.actions[static_cast<std::size_t>(src)];
            }
            const double denom = static_cast<double>(end - begin);
            model.store.zero_grad();
            ad::sharded_backward(model.store, end - begin, 128,
                                 [&](ad::Tape& tape, int b, int e) {
                                     return dynamics_mse_loss(tape, model, batch, b, e, denom,
                                                              options.train_action_table);
                                 });
            opt.step(model.store);
        }
    }
}

}  // namespace

DynamicsModel train_dynamics(const DynamicsDataset& data, int state_dim, int action_dim,
                             int out_dim, const DynamicsTrainOptions& options) {
    if (data.size() == 0) throw std::invalid_argument("train_dynamics: empty dataset");
    DynamicsModel model = DynamicsModel::create(state_dim, action_dim, out_dim, options.seed);
    ad::AdamOptimizer opt;
    opt.learning_rate = options.learning_rate;
    dynamics_epochs(model, data, options, opt);
    return model;
}

void fine_tune_dynamics(DynamicsModel& model, const DynamicsDataset& data,
                        const DynamicsTrainOptions& options) {
    if (data.size() == 0) return;
    ad::AdamOptimizer opt;
    opt.learning_rate = options.learning_rate;
    dynamics_epochs(model, data, options, opt);
}

int argmin_distance(const Vec& distances) {
    if (distances.size() == 0) throw std::invalid_argument("argmin_distance: empty input");
    int best = 0;
    for (int i = 1; i < distances.size(); ++i) {
        if (distances(i) < distances(best)) best = i;
    }
    return best;
}

int match_next_state(const Mat& candidate_predictions, const Vec& reference_prediction) {
    Vec distances(candidate_predictions.rows());
    for (int a = 0; a < candidate_predictions.rows(); ++a) {
        distances(a) =
            (candidate_predictions.row(a).transpose() - reference_prediction).squaredNorm();
    }
    return argmin_distance(distances);
}

ActionTriple adapt_action(const Vec& state, AdaptationContext& ctx) {
    if (!ctx.source_policy || !ctx.source_dynamics || !ctx.target_dynamics) {
        throw std::invalid_argument("adapt_action: incomplete context");
    }
    // Source policy's action at this state.
    Mat logits = state.transpose() * ctx.source_policy->store.at(ctx.source_policy->actor.weight).value;
    logits.rowwise() += ctx.source_policy->store.at(ctx.source_policy->actor.bias).value.row(0);
    int source_action = 0;
    logits.row(0).maxCoeff(&source_action);

    Mat ref = ctx.source_dynamics->predict(state.transpose(), {source_action});
    Mat candidates = ctx.target_dynamics->predict_all_actions(state);
    return unflatten(match_next_state(candidates, ref.row(0).transpose()));
}

AdaptationResult run_adaptation(PolicyModel& source_policy, DynamicsModel& source_dynamics,
                                const std::vector<PatientTrajectory>& target_finetune,
                                const std::vector<PatientTrajectory>& target_eval,
                                const CovariateStandardizer& target_standardizer,
                                const DynamicsTrainOptions& options) {
    AdaptationResult result;
    result.target_dynamics = DynamicsModel::create(source_dynamics.state_dim,
                                                   source_dynamics.action_dim,
                                                   source_dynamics.out_dim, options.seed);
    // f^T starts as an exact copy of f^S.
    result.target_dynamics.store = source_dynamics.store;

    if (!target_finetune.empty()) {
        DynamicsDataset data =
            build_dynamics_dataset(source_policy, target_finetune, target_standardizer);
        fine_tune_dynamics(result.target_dynamics, data, options);
    }

    AdaptationContext ctx{&source_policy, &source_dynamics, &result.target_dynamics};
    result.decisions.resize(target_eval.size());
    result.source_actions.resize(target_eval.size());
    parallel_shards(static_cast<int>(target_eval.size()), 16, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const PatientTrajectory& p = target_eval[static_cast<std::size_t>(i)];
            Mat states = encode_trajectory(source_policy.store, source_policy.encoder, p);
            auto& decisions = result.decisions[static_cast<std::size_t>(i)];
            auto& source_actions = result.source_actions[static_cast<std::size_t>(i)];
            for (int t = 0; t < p.length(); ++t) {
                Vec s = states.row(t).transpose();
                decisions.push_back(adapt_action(s, ctx));
                Mat logits =
                    s.transpose() * source_policy.store.at(source_policy.actor.weight).value;
                logits.rowwise() +=
                    source_policy.store.at(source_policy.actor.bias).value.row(0);
                int a = 0;
                logits.row(0).maxCoeff(&a);
                source_actions.push_back(a);
            }
        }
    });
    return result;
}

}  // namespace dac
