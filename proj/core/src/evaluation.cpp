#include "dac/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dac/parallel.hpp"
#include "dac/random.hpp"

namespace dac {

Vec smooth_deterministic(int action_index, int action_count, double epsilon) {
    if (action_index < 0 || action_index >= action_count) {
        throw std::invalid_argument("smooth_deterministic: action index out of range");
    }
    if (epsilon <= 0.0 || epsilon >= 1.0) {
        throw std::invalid_argument("smooth_deterministic: epsilon in (0,1) required");
    }
    Vec probs = Vec::Constant(action_count, epsilon / (action_count - 1));
    probs(action_index) = 1.0 - epsilon;
    return probs;
}

double wis(const std::vector<PatientTrajectory>& trajectories, const PolicyProbsFn& pi_eval,
           const PolicyProbsFn& pi_behavior, double gamma, double behavior_floor) {
    if (trajectories.empty()) throw std::invalid_argument("wis: empty dataset");
    if (behavior_floor <= 0.0) throw std::invalid_argument("wis: behavior floor must be > 0");

    const int n = static_cast<int>(trajectories.size());
    int horizon = 0;
    for (const auto& p : trajectories) horizon = std::max(horizon, p.length());

    // Cumulative ratios rho_{1:t}, held constant past each trajectory's end.
    Mat cumulative = Mat::Ones(n, horizon);
    std::vector<double> returns(static_cast<std::size_t>(n), 0.0);
    parallel_shards(n, 32, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const PatientTrajectory& p = trajectories[static_cast<std::size_t>(i)];
            double running = 1.0;
            for (int t = 0; t < horizon; ++t) {
                if (t < p.length()) {
                    int a = flat_index(p.steps[static_cast<std::size_t>(t)].action);
                    double e = pi_eval(p, t)(a);
                    double b = std::max(pi_behavior(p, t)(a), behavior_floor);
                    running *= e / b;
                }
                cumulative(i, t) = running;
            }
            returns[static_cast<std::size_t>(i)] =
                std::pow(gamma, p.length() - 1) * terminal_reward(p.outcome);
        }
    });

    Vec horizon_mean = cumulative.colwise().mean();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const PatientTrajectory& p = trajectories[static_cast<std::size_t>(i)];
        double w_h = horizon_mean(p.length() - 1);
        if (w_h <= 0.0) continue;  // every ratio vanished at this horizon
        total += cumulative(i, p.length() - 1) / w_h * returns[static_cast<std::size_t>(i)];
    }
    return total / static_cast<double>(n);
}

AccResult acc_metrics(const std::vector<std::vector<ActionTriple>>& recommended,
                      const std::vector<std::vector<ActionTriple>>& oracle) {
    if (recommended.size() != oracle.size() || recommended.empty()) {
        throw std::invalid_argument("acc_metrics: aligned non-empty inputs required");
    }
    double acc3 = 0.0, acc1 = 0.0;
    for (std::size_t i = 0; i < recommended.size(); ++i) {
        if (recommended[i].size() != oracle[i].size() || recommended[i].empty()) {
            throw std::invalid_argument("acc_metrics: per-patient length mismatch");
        }
        double p3 = 0.0, p1 = 0.0;
        for (std::size_t t = 0; t < recommended[i].size(); ++t) {
            const ActionTriple& r = recommended[i][t];
            const ActionTriple& o = oracle[i][t];
            double fv = r.vt == o.vt ? 1.0 : 0.0;
            double fp = r.peep == o.peep ? 1.0 : 0.0;
            double ff = r.fio2 == o.fio2 ? 1.0 : 0.0;
            p3 += fv * fp * ff;
            p1 += fv + fp + ff;
        }
        const double T = static_cast<double>(recommended[i].size());
        acc3 += p3 / T;
        acc1 += p1 / (3.0 * T);
    }
    const double n = static_cast<double>(recommended.size());
    return {acc3 / n, acc1 / n};
}

ActionRiskModel ActionRiskModel::create(const EmbeddingConfig& cfg, std::uint64_t seed) {
    ActionRiskModel m;
    std::mt19937_64 rng(derive_seed(seed, 0x61637269ULL));
    m.encoder = SequenceEncoderParams::create(m.store, "action_risk.encoder", cfg, rng);
    m.head = AffineHeadParams::create(m.store, "action_risk.head", cfg.state_dim, kActionCount,
                                      0.0, rng);
    return m;
}

Mat ActionRiskModel::step_action_risks(const PatientTrajectory& traj) {
    ad::Tape tape;
    std::vector<const PatientTrajectory*> one{&traj};
    BatchLayout layout = build_batch_layout(one, encoder.cfg);
    EncodedBatch encoded = encode_batch(tape, store, encoder, layout, false);
    Mat risks(traj.length(), kActionCount);
    for (int t = 0; t < traj.length(); ++t) {
        risks.row(t) =
            tape.value(tape.sigmoid(head.apply(tape, store, encoded.states[t], false))).row(0);
    }
    return risks;
}

namespace {

constexpr double kLogFloor = 1e-7;

ad::Var action_risk_loss(ad::Tape& tape, ActionRiskModel& model, const BatchLayout& layout,
                         double denom) {
    EncodedBatch encoded = encode_batch(tape, model.store, model.encoder, layout, true);
    if (denom <= 0.0) denom = std::max(layout.valid.sum(), 1.0);
    ad::Var loss;
    for (int t = 0; t < layout.max_len; ++t) {
        ad::Var probs =
            tape.sigmoid(model.head.apply(tape, model.store, encoded.states[t], true));
        ad::Var taken =
            tape.select_per_row(probs, layout.action_at[static_cast<std::size_t>(t)]);
        Mat w_pos(layout.batch_size, 1), w_neg(layout.batch_size, 1);
        for (int i = 0; i < layout.batch_size; ++i) {
            double valid = layout.valid(i, t);
            double y = static_cast<double>(layout.outcome[static_cast<std::size_t>(i)]);
            w_pos(i, 0) = -valid * y / denom;
            w_neg(i, 0) = -valid * (1.0 - y) / denom;
        }
        ad::Var term = tape.add(
            tape.weighted_sum_all(tape.clamped_log(taken, kLogFloor), w_pos),
            tape.weighted_sum_all(
                tape.clamped_log(
                    tape.sub(tape.constant(Mat::Ones(layout.batch_size, 1)), taken), kLogFloor),
                w_neg));
        loss = loss.valid() ? tape.add(loss, term) : term;
    }
    return loss;
}

}  // namespace

ActionRiskModel train_action_risk_model(const std::vector<PatientTrajectory>& held_out,
                                        const EmbeddingConfig& cfg,
                                        const ActionRiskTrainOptions& options) {
    if (held_out.empty()) throw std::invalid_argument("train_action_risk_model: empty data");
    bool pos = false, neg = false;
    for (const auto& p : held_out) (p.outcome ? pos : neg) = true;
    if (!pos || !neg) {
        throw std::invalid_argument("train_action_risk_model: both outcome classes required");
    }

    ActionRiskModel model = ActionRiskModel::create(cfg, options.seed);
    ad::AdamOptimizer opt;
    opt.learning_rate = options.learning_rate;
    const int n = static_cast<int>(held_out.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(derive_seed(options.seed, 0x61725368ULL));

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < n; begin += options.batch_size) {
            const int end = std::min(n, begin + options.batch_size);
            std::vector<const PatientTrajectory*> batch;
            for (int i = begin; i < end; ++i) {
                batch.push_back(
                    &held_out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }
            BatchLayout full = build_batch_layout(batch, cfg);
            const double denom = full.valid.sum();
            model.store.zero_grad();
            ad::sharded_backward(model.store, static_cast<int>(batch.size()), 64,
                                 [&](ad::Tape& tape, int b, int e) {
                                     std::vector<const PatientTrajectory*> shard(
                                         batch.begin() + b, batch.begin() + e);
                                     BatchLayout sl = build_batch_layout(shard, cfg);
                                     return action_risk_loss(tape, model, sl, denom);
                                 });
            opt.step(model.store);
        }
    }
    return model;
}

CalibrationCurve fit_calibration(const std::vector<double>& predicted,
                                 const std::vector<int>& outcomes, double bin_width,
                                 int min_count) {
    if (predicted.size() != outcomes.size() || predicted.empty()) {
        throw std::invalid_argument("fit_calibration: aligned non-empty inputs required");
    }
    if (bin_width <= 0.0 || bin_width > 1.0) {
        throw std::invalid_argument("fit_calibration: bin width in (0,1] required");
    }
    bool pos = false, neg = false;
    for (int y : outcomes) (y ? pos : neg) = true;
    if (!pos || !neg) throw std::invalid_argument("fit_calibration: single-class outcomes");

    const int bins = static_cast<int>(std::ceil(1.0 / bin_width));
    std::vector<long> count(static_cast<std::size_t>(bins), 0);
    std::vector<double> sum_pred(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> sum_y(static_cast<std::size_t>(bins), 0.0);
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        double p = std::clamp(predicted[i], 0.0, 1.0);
        int b = std::min(bins - 1, static_cast<int>(p / bin_width));
        count[static_cast<std::size_t>(b)]++;
        sum_pred[static_cast<std::size_t>(b)] += p;
        sum_y[static_cast<std::size_t>(b)] += outcomes[i];
    }

    CalibrationCurve curve;
    long acc_count = 0;
    double acc_pred = 0.0, acc_y = 0.0;
    for (int b = 0; b < bins; ++b) {
        acc_count += count[static_cast<std::size_t>(b)];
        acc_pred += sum_pred[static_cast<std::size_t>(b)];
        acc_y += sum_y[static_cast<std::size_t>(b)];
        if (acc_count >= min_count) {
            curve.centers.push_back(acc_pred / acc_count);
            curve.mortality.push_back(acc_y / acc_count);
            curve.counts.push_back(acc_count);
            acc_count = 0;
            acc_pred = acc_y = 0.0;
        }
    }
    if (acc_count > 0) {
        if (curve.centers.empty()) {
            curve.centers.push_back(acc_pred / acc_count);
            curve.mortality.push_back(acc_y / acc_count);
            curve.counts.push_back(acc_count);
        } else {
            // Short tail merges into the last emitted bin.
            long total = curve.counts.back() + acc_count;
            curve.centers.back() =
                (curve.centers.back() * curve.counts.back() + acc_pred) / total;
            curve.mortality.back() =
                (curve.mortality.back() * curve.counts.back() + acc_y) / total;
            curve.counts.back() = total;
        }
    }
    return curve;
}

double CalibrationCurve::operator()(double predicted) const {
    if (centers.empty()) throw std::logic_error("CalibrationCurve: empty curve");
    if (predicted <= centers.front()) return mortality.front();
    if (predicted >= centers.back()) return mortality.back();
    auto it = std::upper_bound(centers.begin(), centers.end(), predicted);
    std::size_t hi = static_cast<std::size_t>(it - centers.begin());
    std::size_t lo = hi - 1;
    double span = centers[hi] - centers[lo];
    if (span <= 0.0) return mortality[hi];
    double u = (predicted - centers[lo]) / span;
    return (1.0 - u) * mortality[lo] + u * mortality[hi];
}

CalibrationCurve fit_calibration(const std::vector<PatientTrajectory>& held_out,
                                 ActionRiskModel& model, double bin_width, int min_count) {
    std::vector<double> predicted;
    std::vector<int> outcomes;
    std::vector<std::vector<double>> per_patient(held_out.size());
    parallel_shards(static_cast<int>(held_out.size()), 32, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const PatientTrajectory& p = held_out[static_cast<std::size_t>(i)];
            Mat risks = model.step_action_risks(p);
            auto& out = per_patient[static_cast<std::size_t>(i)];
            out.reserve(static_cast<std::size_t>(p.length()));
            for (int t = 0; t < p.length(); ++t) {
                out.push_back(risks(t, flat_index(p.steps[static_cast<std::size_t>(t)].action)));
            }
        }
    });
    for (std::size_t i = 0; i < held_out.size(); ++i) {
        for (double r : per_patient[i]) {
            predicted.push_back(r);
            outcomes.push_back(held_out[i].outcome);
        }
    }
    return fit_calibration(predicted, outcomes, bin_width, min_count);
}

double estimated_mortality(const std::vector<PatientTrajectory>& trajectories,
                           const PolicyProbsFn& policy, ActionRiskModel& model,
                           const CalibrationCurve& curve) {
    if (trajectories.empty()) throw std::invalid_argument("estimated_mortality: empty dataset");
    std::vector<double> per_patient(trajectories.size(), 0.0);
    std::vector<int> steps(trajectories.size(), 0);
    parallel_shards(static_cast<int>(trajectories.size()), 32, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const PatientTrajectory& p = trajectories[static_cast<std::size_t>(i)];
            Mat risks = model.step_action_risks(p);
            double acc = 0.0;
            for (int t = 0; t < p.length(); ++t) {
                Vec probs = policy(p, t);
                int action = 0;
                probs.maxCoeff(&action);
                acc += curve(risks(t, action));
            }
            per_patient[static_cast<std::size_t>(i)] = acc;
            steps[static_cast<std::size_t>(i)] = p.length();
        }
    });
    double total = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < per_patient.size(); ++i) {
        total += per_patient[i];
        n += steps[i];
    }
    return total / static_cast<double>(n);
}

DescriptiveReport descriptive_reports(const std::vector<PatientTrajectory>& trajectories,
                                      const PolicyProbsFn& policy,
                                      const StepValueFn& expected_return) {
    if (trajectories.empty()) throw std::invalid_argument("descriptive_reports: empty dataset");
    DescriptiveReport rep;
    rep.clinician_hist = Mat::Zero(3, kLevelsPerParam);
    rep.policy_hist = Mat::Zero(3, kLevelsPerParam);
    rep.dose_diff_mortality = Mat::Zero(3, 13);
    rep.dose_diff_count = Mat::Zero(3, 13);
    Mat dose_diff_deaths = Mat::Zero(3, 13);

    struct StepRecord {
        double value;
        int outcome;
    };
    std::vector<StepRecord> records;

    long steps = 0;
    for (const PatientTrajectory& p : trajectories) {
        for (int t = 0; t < p.length(); ++t) {
            const ActionTriple actual = p.steps[static_cast<std::size_t>(t)].action;
            Vec probs = policy(p, t);
            int rec_flat = 0;
            probs.maxCoeff(&rec_flat);
            const ActionTriple rec = unflatten(rec_flat);

            const int actual_level[3] = {actual.vt, actual.peep, actual.fio2};
            const int rec_level[3] = {rec.vt, rec.peep, rec.fio2};
            for (int param = 0; param < 3; ++param) {
                rep.clinician_hist(param, actual_level[param] - 1) += 1.0;
                rep.policy_hist(param, rec_level[param] - 1) += 1.0;
                int offset = rec_level[param] - actual_level[param] + 6;
                rep.dose_diff_count(param, offset) += 1.0;
                dose_diff_deaths(param, offset) += p.outcome;
            }
            if (expected_return) {
                records.push_back({expected_return(p, t), p.outcome});
            }
            ++steps;
        }
    }
    rep.clinician_hist /= static_cast<double>(steps);
    rep.policy_hist /= static_cast<double>(steps);
    for (int param = 0; param < 3; ++param) {
        for (int o = 0; o < 13; ++o) {
            rep.dose_diff_mortality(param, o) =
                rep.dose_diff_count(param, o) > 0.0
                    ? dose_diff_deaths(param, o) / rep.dose_diff_count(param, o)
                    : 0.0;
        }
    }

    if (!records.empty()) {
        std::sort(records.begin(), records.end(),
                  [](const StepRecord& a, const StepRecord& b) { return a.value < b.value; });
        const int deciles = 10;
        const std::size_t n = records.size();
        for (int d = 0; d < deciles; ++d) {
            std::size_t lo = n * static_cast<std::size_t>(d) / deciles;
            std::size_t hi = n * static_cast<std::size_t>(d + 1) / deciles;
            if (hi <= lo) continue;
            double value = 0.0, deaths = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                value += records[i].value;
                deaths += records[i].outcome;
            }
            rep.return_bin_center.push_back(value / static_cast<double>(hi - lo));
            rep.return_bin_mortality.push_back(deaths / static_cast<double>(hi - lo));
        }
    }
    return rep;
}

}  // namespace dac
