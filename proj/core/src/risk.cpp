#include "dac/risk.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dac/parallel.hpp"
#include "dac/random.hpp"

namespace dac {

namespace {

constexpr double kProbFloor = 1e-7;

std::vector<const PatientTrajectory*> slice(const std::vector<PatientTrajectory>& cohort,
                                            const std::vector<int>& order, int begin, int end) {
    std::vector<const PatientTrajectory*> out;
    out.reserve(static_cast<std::size_t>(end - begin));
    for (int i = begin; i < end; ++i) {
        out.push_back(&cohort[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    }
    return out;
}

}  // namespace

RiskModel RiskModel::create(const EmbeddingConfig& cfg, std::uint64_t seed) {
    RiskModel m;
    std::mt19937_64 rng(derive_seed(seed, 0x7269736bULL));  // "risk"
    m.encoder = SequenceEncoderParams::create(m.store, "risk.encoder", cfg, rng);
    m.head = AffineHeadParams::create(m.store, "risk.head", cfg.state_dim, 1, 0.0, rng);
    return m;
}

ad::Var risk_bce_loss(ad::Tape& tape, RiskModel& model, const BatchLayout& layout, double denom) {
    EncodedBatch encoded = encode_batch(tape, model.store, model.encoder, layout, true);
    if (denom <= 0.0) denom = layout.valid.sum();
    ad::Var loss;
    for (int t = 0; t < layout.max_len; ++t) {
        ad::Var prob = tape.sigmoid(model.head.apply(tape, model.store, encoded.states[t], true));
        // Fold outcome and validity into constant weights:
        //   -[y log p + (1-y) log(1-p)] summed over valid rows.
        Mat w_pos(layout.batch_size, 1), w_neg(layout.batch_size, 1);
        for (int i = 0; i < layout.batch_size; ++i) {
            double valid = layout.valid(i, t);
            double y = static_cast<double>(layout.outcome[static_cast<std::size_t>(i)]);
            w_pos(i, 0) = -valid * y / denom;
            w_neg(i, 0) = -valid * (1.0 - y) / denom;
        }
        ad::Var term = tape.add(
            tape.weighted_sum_all(tape.clamped_log(prob, kProbFloor), w_pos),
            tape.weighted_sum_all(
                tape.clamped_log(tape.sub(tape.constant(Mat::Ones(layout.batch_size, 1)), prob),
                                 kProbFloor),
                w_neg));
        loss = loss.valid() ? tape.add(loss, term) : term;
    }
    return loss;
}

RiskModel train_risk_model(const std::vector<PatientTrajectory>& training,
                           const EmbeddingConfig& cfg, const RiskTrainOptions& options) {
    if (training.empty()) throw std::invalid_argument("train_risk_model: empty training set");
    bool has_pos = false, has_neg = false;
    for (const auto& p : training) (p.outcome ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) {
        throw std::invalid_argument("train_risk_model: both outcome classes required");
    }

    RiskModel model = RiskModel::create(cfg, options.seed);
    ad::AdamOptimizer opt;
    opt.learning_rate = options.learning_rate;

    const int n = static_cast<int>(training.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(derive_seed(options.seed, 0x5368756666ULL));

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int begin = 0; begin < n; begin += options.batch_size) {
            const int end = std::min(n, begin + options.batch_size);
            auto batch = slice(training, order, begin, end);
            BatchLayout layout = build_batch_layout(batch, cfg);
            const double denom = layout.valid.sum();
            model.store.zero_grad();
            ad::sharded_backward(
                model.store, static_cast<int>(batch.size()), 64,
                [&](ad::Tape& tape, int b, int e) {
                    std::vector<const PatientTrajectory*> shard(batch.begin() + b,
                                                                batch.begin() + e);
                    BatchLayout sl = build_batch_layout(shard, cfg);
                    return risk_bce_loss(tape, model, sl, denom);
                });
            opt.step(model.store);
        }
    }
    return model;
}

Vec RiskModel::step_risks(const PatientTrajectory& traj) {
    ad::Tape tape;
    std::vector<const PatientTrajectory*> one{&traj};
    BatchLayout layout = build_batch_layout(one, encoder.cfg);
    EncodedBatch encoded = encode_batch(tape, store, encoder, layout, false);
    Vec risks(traj.length());
    for (int t = 0; t < traj.length(); ++t) {
        ad::Var p = tape.sigmoid(head.apply(tape, store, encoded.states[t], false));
        risks(t) = tape.value(p)(0, 0);
    }
    return risks;
}

double RiskModel::max_risk(const PatientTrajectory& traj) { return step_risks(traj).maxCoeff(); }

std::vector<double> cohort_max_risks(RiskModel& model,
                                     const std::vector<PatientTrajectory>& cohort) {
    std::vector<double> out(cohort.size(), 0.0);
    const int n = static_cast<int>(cohort.size());
    parallel_shards(n, 64, [&](int begin, int end) {
        std::vector<const PatientTrajectory*> shard;
        shard.reserve(static_cast<std::size_t>(end - begin));
        for (int i = begin; i < end; ++i) shard.push_back(&cohort[static_cast<std::size_t>(i)]);
        ad::Tape tape;
        BatchLayout layout = build_batch_layout(shard, model.encoder.cfg);
        EncodedBatch encoded = encode_batch(tape, model.store, model.encoder, layout, false);
        Mat max_prob = Mat::Zero(layout.batch_size, 1);
        for (int t = 0; t < layout.max_len; ++t) {
            ad::Var p = tape.sigmoid(model.head.apply(tape, model.store, encoded.states[t],
                                                      false));
            const Mat& probs = tape.value(p);
            for (int i = 0; i < layout.batch_size; ++i) {
                if (layout.valid(i, t) > 0.0) max_prob(i, 0) = std::max(max_prob(i, 0), probs(i, 0));
            }
        }
        for (int i = begin; i < end; ++i) out[static_cast<std::size_t>(i)] = max_prob(i - begin, 0);
    });
    return out;
}

PatientPools PatientPools::build(const std::vector<PatientTrajectory>& cohort,
                                 const std::vector<double>& max_risks) {
    if (cohort.size() != max_risks.size()) {
        throw std::invalid_argument("PatientPools: one risk per patient required");
    }
    PatientPools pools;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        RiskRecord rec{static_cast<int>(i), cohort[i].patient_id, max_risks[i]};
        (cohort[i].outcome == 1 ? pools.nonsurvivors : pools.survivors).push_back(rec);
    }
    auto by_risk_then_id = [](const RiskRecord& a, const RiskRecord& b) {
        if (a.max_risk != b.max_risk) return a.max_risk < b.max_risk;
        return a.patient_id < b.patient_id;
    };
    std::sort(pools.survivors.begin(), pools.survivors.end(), by_risk_then_id);
    std::sort(pools.nonsurvivors.begin(), pools.nonsurvivors.end(), by_risk_then_id);
    return pools;
}

namespace {

// Nearest survivor by max_risk; among equally near records the lowest
// patient_id wins.
const RiskRecord& nearest_survivor(const std::vector<RiskRecord>& survivors, double risk) {
    auto cmp = [](const RiskRecord& r, double v) { return r.max_risk < v; };
    auto it = std::lower_bound(survivors.begin(), survivors.end(), risk, cmp);

    const RiskRecord* best = nullptr;
    double best_gap = 0.0;
    auto consider = [&](std::vector<RiskRecord>::const_iterator cand) {
        if (cand == survivors.end()) return;
        double gap = std::fabs(cand->max_risk - risk);
        if (!best || gap < best_gap ||
            (gap == best_gap && cand->patient_id < best->patient_id)) {
            best = &*cand;
            best_gap = gap;
        }
    };
    // Scan equal-risk runs on both sides of the insertion point.
    if (it != survivors.end()) {
        auto right = it;
        consider(right);
        while (std::next(right) != survivors.end() &&
               std::next(right)->max_risk == right->max_risk) {
            ++right;
            consider(right);
        }
    }
    if (it != survivors.begin()) {
        auto left = std::prev(it);
        consider(left);
        while (left != survivors.begin() && std::prev(left)->max_risk == left->max_risk) {
            --left;
            consider(left);
        }
    }
    return *best;
}

}  // namespace

std::vector<int> BalancedBatch::interleaved() const {
    std::vector<int> out;
    out.reserve(survivor_index.size() * 2);
    for (std::size_t i = 0; i < survivor_index.size(); ++i) {
        out.push_back(nonsurvivor_index[i]);
        out.push_back(survivor_index[i]);
    }
    return out;
}

nlohmann::json BalancedBatch::manifest(const std::vector<PatientTrajectory>& cohort) const {
    nlohmann::json pairs = nlohmann::json::array();
    for (std::size_t i = 0; i < survivor_index.size(); ++i) {
        pairs.push_back(nlohmann::json{
            {"nonsurvivor", cohort[static_cast<std::size_t>(nonsurvivor_index[i])].patient_id},
            {"survivor", cohort[static_cast<std::size_t>(survivor_index[i])].patient_id},
            {"risk_gap", pair_risk_gap[i]}});
    }
    return nlohmann::json{{"pairs", std::move(pairs)},
                          {"within_tolerance", pairs_within_tolerance}};
}

BalancedBatch sample_balanced_batch(const PatientPools& pools, int batch_size, double tolerance,
                                    std::mt19937_64& rng) {
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw std::invalid_argument("sample_balanced_batch: batch_size must be even and >= 2");
    }
    if (pools.survivors.empty() || pools.nonsurvivors.empty()) {
        throw std::invalid_argument("sample_balanced_batch: both pools must be non-empty");
    }
    BalancedBatch batch;
    const int pairs = batch_size / 2;
    std::uniform_int_distribution<std::size_t> pick(0, pools.nonsurvivors.size() - 1);
    for (int i = 0; i < pairs; ++i) {
        const RiskRecord& ns = pools.nonsurvivors[pick(rng)];
        const RiskRecord& sv = nearest_survivor(pools.survivors, ns.max_risk);
        batch.nonsurvivor_index.push_back(ns.cohort_index);
        batch.survivor_index.push_back(sv.cohort_index);
        double gap = std::fabs(sv.max_risk - ns.max_risk);
        batch.pair_risk_gap.push_back(gap);
        if (gap <= tolerance) ++batch.pairs_within_tolerance;
    }
    return batch;
}

}  // namespace dac
