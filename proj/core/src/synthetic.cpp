#include "dac/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "dac/parallel.hpp"
#include "dac/random.hpp"

namespace dac {

void SyntheticConfig::validate() const {
    if (ar_order < 1) throw std::invalid_argument("synthetic.ar_order must be >= 1");
    if (horizon < ar_order) throw std::invalid_argument("synthetic.horizon must be >= ar_order");
    if (obs_dim < 1) throw std::invalid_argument("synthetic.obs_dim must be >= 1");
    if (hidden_dim < 1) throw std::invalid_argument("synthetic.hidden_dim must be >= 1");
    if (num_levels < 1 || num_levels > kLevelsPerParam) {
        throw std::invalid_argument("synthetic.num_levels must be in [1,7]");
    }
    if (kappa < 0.0) throw std::invalid_argument("synthetic.kappa must be >= 0");
    if (n_survivor < 0 || n_nonsurvivor < 0 || cohort_size() < 2) {
        throw std::invalid_argument("synthetic cohort needs at least 2 patients");
    }
    if (treat_effect_std < 0.0 || noise_std < 0.0 || outcome_bias_std < 0.0) {
        throw std::invalid_argument("synthetic scale parameters must be >= 0");
    }
}

double SyntheticConfig::target_mortality() const {
    return static_cast<double>(n_nonsurvivor) / static_cast<double>(cohort_size());
}

ArLagState zero_lag_state(const ArProcess& process) {
    ArLagState s;
    s.obs = Mat::Zero(process.order(), process.obs_dim());
    s.hidden = Mat::Zero(process.order(), process.hidden_dim());
    s.actions = Vec::Zero(process.order());
    return s;
}

void ar_step(const ArProcess& process, ArLagState& state, const Vec& obs_noise,
             const Vec& hidden_noise, Vec& obs_out, Vec& hidden_out) {
    const int p = process.order();
    const double inv_p = 1.0 / static_cast<double>(p);
    obs_out = obs_noise;
    for (int j = 0; j < process.obs_dim(); ++j) {
        double acc = 0.0;
        for (int r = 0; r < p; ++r) {
            acc += process.alpha(r, j) * state.obs(r, j) + process.beta(r) * state.actions(r);
        }
        obs_out(j) += inv_p * acc;
    }
    hidden_out = hidden_noise;
    for (int j = 0; j < process.hidden_dim(); ++j) {
        double acc = 0.0;
        for (int r = 0; r < p; ++r) {
            acc += process.mu(r, j) * state.hidden(r, j) + process.upsilon(r) * state.actions(r);
        }
        hidden_out(j) += inv_p * acc;
    }
    // Shift the windows; the caller pushes the action separately.
    for (int r = p - 1; r > 0; --r) {
        state.obs.row(r) = state.obs.row(r - 1);
        state.hidden.row(r) = state.hidden.row(r - 1);
    }
    state.obs.row(0) = obs_out.transpose();
    state.hidden.row(0) = hidden_out.transpose();
}

void ar_push_action(ArLagState& state, double action_scalar) {
    const int p = static_cast<int>(state.actions.size());
    for (int r = p - 1; r > 0; --r) state.actions(r) = state.actions(r - 1);
    state.actions(0) = action_scalar;
}

std::vector<int> action_subgrid(int num_levels) {
    if (num_levels < 1 || num_levels > kLevelsPerParam) {
        throw std::invalid_argument("action_subgrid: num_levels must be in [1,7]");
    }
    std::vector<int> grid;
    grid.reserve(static_cast<std::size_t>(num_levels) * num_levels * num_levels);
    for (int vt = 1; vt <= num_levels; ++vt) {
        for (int peep = 1; peep <= num_levels; ++peep) {
            for (int fio2 = 1; fio2 <= num_levels; ++fio2) {
                grid.push_back(flat_index({vt, peep, fio2}));
            }
        }
    }
    return grid;  // already ascending: flat order is lexicographic in levels
}

double subgrid_scalar(int position, int subgrid_size) {
    if (subgrid_size <= 1) return 0.0;
    return 2.0 * position / (subgrid_size - 1) - 1.0;
}

Vec behavior_action_distribution(const Vec& q, double kappa, const Mat& theta) {
    if (kappa < 0.0) throw std::invalid_argument("behavior_action_distribution: kappa >= 0");
    if (theta.cols() != q.size()) {
        throw std::invalid_argument("behavior_action_distribution: theta/q dimension mismatch");
    }
    Vec logits = kappa * (theta * q);
    double mx = logits.maxCoeff();
    Vec probs = (logits.array() - mx).exp();
    probs /= probs.sum();
    return probs;
}

OutcomeLabels label_outcomes(const std::vector<double>& raw, double target_fraction) {
    if (raw.size() < 2) throw std::invalid_argument("label_outcomes: need >= 2 outcomes");
    if (target_fraction < 0.0 || target_fraction > 1.0) {
        throw std::invalid_argument("label_outcomes: target fraction in [0,1]");
    }
    std::vector<double> sorted = raw;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) {
        throw std::invalid_argument("label_outcomes: degenerate constant outcomes");
    }
    const int n = static_cast<int>(raw.size());
    const int k = static_cast<int>(std::lround(target_fraction * n));  // labeled 1

    OutcomeLabels out;
    if (k <= 0) {
        out.threshold = sorted.back();
    } else if (k >= n) {
        out.threshold = sorted.front() - 1.0;
    } else {
        out.threshold = sorted[static_cast<std::size_t>(n - k - 1)];
    }
    out.labels.reserve(raw.size());
    for (double y : raw) out.labels.push_back(y > out.threshold ? 1 : 0);
    return out;
}

namespace {

// Stream ids for cohort-level draws; per-patient streams start at 1000.
enum : std::uint64_t {
    kStreamAlpha = 1,
    kStreamMu = 2,
    kStreamTreat = 3,
    kStreamGMap = 4,
    kStreamOutcome = 5,
    kStreamTheta = 6,
    kPatientStreamBase = 1000,
};

Mat normal_matrix(std::mt19937_64& rng, int rows, int cols, double mean, double std) {
    std::normal_distribution<double> n(mean, std);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
    }
    return m;
}

Mat uniform_matrix(std::mt19937_64& rng, int rows, int cols, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
    }
    return m;
}

int sample_categorical(const Vec& probs, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double x = u(rng);
    double acc = 0.0;
    for (int i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        if (x < acc) return i;
    }
    return static_cast<int>(probs.size()) - 1;
}

// Lag window at decision step t (1-based): values at t-1 .. t-p plus the
// action scalars taken there. Negative times read the initial lags.
ArLagState lag_state_at(const SyntheticGroundTruth& gt, const PatientGroundTruth& pt, int t) {
    const int p = gt.process.order();
    ArLagState state = zero_lag_state(gt.process);
    const int n_sub = static_cast<int>(gt.action_subgrid.size());
    for (int r = 1; r <= p; ++r) {
        int time = t - r;  // value index
        if (time >= 1) {
            state.obs.row(r - 1) = pt.obs.row(time - 1);
            state.hidden.row(r - 1) = pt.hidden.row(time - 1);
            int flat = pt.behavior_action[static_cast<std::size_t>(time - 1)];
            auto it = std::lower_bound(gt.action_subgrid.begin(), gt.action_subgrid.end(), flat);
            state.actions(r - 1) =
                subgrid_scalar(static_cast<int>(it - gt.action_subgrid.begin()), n_sub);
        } else {
            state.obs.row(r - 1) = pt.initial_obs.row(-time);
            state.hidden.row(r - 1) = pt.initial_hidden.row(-time);
            state.actions(r - 1) = 0.0;  // no pre-admission treatment effect
        }
    }
    return state;
}

}  // namespace

Vec action_outcome_coefficients(const SyntheticGroundTruth& gt) {
    const SyntheticConfig& cfg = gt.config;
    const int T = cfg.horizon;
    Vec zero_obs_noise = Vec::Zero(cfg.obs_dim);
    Vec zero_hidden_noise = Vec::Zero(cfg.hidden_dim);

    auto terminal_outcome = [&](int impulse_t) {
        ArLagState state = zero_lag_state(gt.process);
        Vec o(cfg.obs_dim), s(cfg.hidden_dim);
        Vec hidden_sum = Vec::Zero(cfg.hidden_dim);
        Vec last_obs = Vec::Zero(cfg.obs_dim);
        for (int t = 1; t <= T; ++t) {
            ar_step(gt.process, state, zero_obs_noise, zero_hidden_noise, o, s);
            hidden_sum += s;
            last_obs = o;
            ar_push_action(state, t == impulse_t ? 1.0 : 0.0);
        }
        Vec q = hidden_sum / static_cast<double>(T) + gt.g_map * last_obs;
        return gt.outcome_weight.dot(q) + gt.outcome_bias;
    };

    const double baseline = terminal_outcome(0);  // no impulse
    Vec c(T);
    for (int t = 1; t <= T; ++t) c(t - 1) = terminal_outcome(t) - baseline;
    return c;
}

int oracle_greedy_position(const Vec& response, int t, int subgrid_size) {
    double c = response(t - 1);
    if (c < 0.0) return subgrid_size - 1;  // push the scalar to +1
    return 0;                              // minimize, ties to the lowest index
}

double oracle_rollout_outcome(const SyntheticGroundTruth& gt, int patient, int t,
                              int candidate_position, const Vec& response) {
    const SyntheticConfig& cfg = gt.config;
    const int T = cfg.horizon;
    if (patient < 0 || patient >= static_cast<int>(gt.patients.size())) {
        throw std::invalid_argument("oracle: patient index out of range");
    }
    if (t < 1 || t > T) throw std::invalid_argument("oracle: step out of range");
    const PatientGroundTruth& pt = gt.patients[static_cast<std::size_t>(patient)];
    const int n_sub = static_cast<int>(gt.action_subgrid.size());
    if (candidate_position < 0 || candidate_position >= n_sub) {
        throw std::invalid_argument("oracle: candidate position out of range");
    }

    // Realized hidden states up to and including step t.
    Vec hidden_sum = Vec::Zero(cfg.hidden_dim);
    for (int r = 1; r <= t; ++r) hidden_sum += pt.hidden.row(r - 1).transpose();
    Vec last_obs = pt.obs.row(t - 1).transpose();

    // Window advanced past step t's observation, candidate action applied.
    ArLagState state = lag_state_at(gt, pt, t + 1);
    state.actions(0) = subgrid_scalar(candidate_position, n_sub);

    Vec zero_obs_noise = Vec::Zero(cfg.obs_dim);
    Vec zero_hidden_noise = Vec::Zero(cfg.hidden_dim);
    Vec o(cfg.obs_dim), s(cfg.hidden_dim);
    for (int step = t + 1; step <= T; ++step) {
        ar_step(gt.process, state, zero_obs_noise, zero_hidden_noise, o, s);
        hidden_sum += s;
        last_obs = o;
        ar_push_action(state,
                       subgrid_scalar(oracle_greedy_position(response, step, n_sub), n_sub));
    }
    Vec q = hidden_sum / static_cast<double>(T) + gt.g_map * last_obs;
    return gt.outcome_weight.dot(q) + gt.outcome_bias;
}

double oracle_rollout_outcome(const SyntheticGroundTruth& gt, int patient, int t,
                              int candidate_position) {
    return oracle_rollout_outcome(gt, patient, t, candidate_position,
                                  action_outcome_coefficients(gt));
}

ActionTriple oracle_optimal_action(const SyntheticGroundTruth& gt, int patient, int t) {
    const Vec response = action_outcome_coefficients(gt);
    const int n_sub = static_cast<int>(gt.action_subgrid.size());
    int best = 0;
    double best_y = oracle_rollout_outcome(gt, patient, t, 0, response);
    for (int pos = 1; pos < n_sub; ++pos) {
        double y = oracle_rollout_outcome(gt, patient, t, pos, response);
        if (y < best_y) {
            best_y = y;
            best = pos;
        }
    }
    return unflatten(gt.action_subgrid[static_cast<std::size_t>(best)]);
}

SimulatedCohort simulate_cohort(const SyntheticConfig& config) {
    config.validate();
    const int n = config.cohort_size();
    const int T = config.horizon;
    const int p = config.ar_order;
    const double inv_p = 1.0 / static_cast<double>(p);

    SimulatedCohort cohort;
    SyntheticGroundTruth& gt = cohort.truth;
    gt.config = config;
    gt.action_subgrid = action_subgrid(config.num_levels);
    const int n_sub = static_cast<int>(gt.action_subgrid.size());

    {
        auto rng = make_rng(config.seed, kStreamAlpha);
        gt.process.alpha = Mat(p, config.obs_dim);
        for (int r = 0; r < p; ++r) {
            gt.process.alpha.row(r) =
                normal_matrix(rng, 1, config.obs_dim, 1.0 - (r + 1.0) * inv_p, inv_p).row(0);
        }
    }
    {
        auto rng = make_rng(config.seed, kStreamMu);
        gt.process.mu = Mat(p, config.hidden_dim);
        for (int r = 0; r < p; ++r) {
            gt.process.mu.row(r) =
                normal_matrix(rng, 1, config.hidden_dim, 1.0 - (r + 1.0) * inv_p, inv_p).row(0);
        }
    }
    {
        auto rng = make_rng(config.seed, kStreamTreat);
        gt.process.beta = normal_matrix(rng, p, 1, 0.0, config.treat_effect_std).col(0);
        gt.process.upsilon = normal_matrix(rng, p, 1, 0.0, config.treat_effect_std).col(0);
    }
    {
        auto rng = make_rng(config.seed, kStreamGMap);
        gt.g_map = uniform_matrix(rng, config.hidden_dim, config.obs_dim, -1.0, 1.0);
    }
    {
        auto rng = make_rng(config.seed, kStreamOutcome);
        gt.outcome_weight = uniform_matrix(rng, config.hidden_dim, 1, -1.0, 1.0).col(0);
        gt.outcome_bias = normal_matrix(rng, 1, 1, 0.0, config.outcome_bias_std)(0, 0);
    }
    {
        auto rng = make_rng(config.seed, kStreamTheta);
        gt.behavior_theta = normal_matrix(rng, n_sub, config.hidden_dim, 0.0,
                                          1.0 / std::sqrt(config.hidden_dim));
    }

    gt.patients.resize(static_cast<std::size_t>(n));
    std::vector<double> raw(static_cast<std::size_t>(n));

    parallel_shards(n, 64, [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            auto rng = make_rng(config.seed, kPatientStreamBase + static_cast<std::uint64_t>(i));
            PatientGroundTruth& pt = gt.patients[static_cast<std::size_t>(i)];
            pt.initial_obs = normal_matrix(rng, p, config.obs_dim, 0.0, 1.0);
            pt.initial_hidden = normal_matrix(rng, p, config.hidden_dim, 0.0, 1.0);
            pt.obs = Mat(T, config.obs_dim);
            pt.hidden = Mat(T, config.hidden_dim);
            pt.confounder = Mat(T, config.hidden_dim);
            pt.behavior_action.resize(static_cast<std::size_t>(T));

            ArLagState state = zero_lag_state(gt.process);
            state.obs = pt.initial_obs;
            state.hidden = pt.initial_hidden;

            Vec hidden_sum = Vec::Zero(config.hidden_dim);
            Vec o(config.obs_dim), s(config.hidden_dim);
            std::normal_distribution<double> noise(0.0, config.noise_std);
            for (int t = 1; t <= T; ++t) {
                Vec obs_noise(config.obs_dim), hidden_noise(config.hidden_dim);
                for (int j = 0; j < config.obs_dim; ++j) obs_noise(j) = noise(rng);
                for (int j = 0; j < config.hidden_dim; ++j) hidden_noise(j) = noise(rng);
                ar_step(gt.process, state, obs_noise, hidden_noise, o, s);
                hidden_sum += s;
                Vec q = hidden_sum / static_cast<double>(t) + gt.g_map * o;

                pt.obs.row(t - 1) = o.transpose();
                pt.hidden.row(t - 1) = s.transpose();
                pt.confounder.row(t - 1) = q.transpose();

                Vec probs = behavior_action_distribution(q, config.kappa, gt.behavior_theta);
                int pos = sample_categorical(probs, rng);
                pt.behavior_action[static_cast<std::size_t>(t - 1)] =
                    gt.action_subgrid[static_cast<std::size_t>(pos)];
                ar_push_action(state, subgrid_scalar(pos, n_sub));
            }
            Vec q_final = hidden_sum / static_cast<double>(T) +
                          gt.g_map * pt.obs.row(T - 1).transpose();
            pt.raw_outcome = gt.outcome_weight.dot(q_final) + gt.outcome_bias;
            raw[static_cast<std::size_t>(i)] = pt.raw_outcome;
        }
    });

    OutcomeLabels labels = label_outcomes(raw, config.target_mortality());
    gt.threshold = labels.threshold;

    // Oracle actions: the rollout argmin reduces to the sign of the per-step
    // linear response, which is shared by every patient. The rollout scan
    // itself is exercised against this shortcut in the test suites.
    {
        const Vec response = action_outcome_coefficients(gt);
        std::vector<ActionTriple> per_step(static_cast<std::size_t>(T));
        for (int t = 1; t <= T; ++t) {
            int pos = oracle_greedy_position(response, t, n_sub);
            per_step[static_cast<std::size_t>(t - 1)] =
                unflatten(gt.action_subgrid[static_cast<std::size_t>(pos)]);
        }
        for (int i = 0; i < n; ++i) {
            PatientGroundTruth& pt = gt.patients[static_cast<std::size_t>(i)];
            pt.label = labels.labels[static_cast<std::size_t>(i)];
            pt.oracle_actions = per_step;
        }
    }

    cohort.trajectories.reserve(static_cast<std::size_t>(n));
    char buf[32];
    for (int i = 0; i < n; ++i) {
        const PatientGroundTruth& pt = gt.patients[static_cast<std::size_t>(i)];
        PatientTrajectory traj;
        std::snprintf(buf, sizeof(buf), "p%06d", i);
        traj.patient_id = buf;
        traj.outcome = pt.label;
        traj.steps.resize(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            TrajectoryStep& step = traj.steps[static_cast<std::size_t>(t)];
            step.events.reserve(static_cast<std::size_t>(config.obs_dim));
            for (int j = 0; j < config.obs_dim; ++j) {
                step.events.push_back({j, pt.obs(t, j), 0});
            }
            step.action = unflatten(pt.behavior_action[static_cast<std::size_t>(t)]);
        }
        cohort.trajectories.push_back(std::move(traj));
    }
    return cohort;
}

}  // namespace dac
