// Experiment driver: generate | train | adapt | evaluate | report | verify.
// Every command works inside a content-hashed run directory derived from the
// configuration file plus command-line overrides, so artifacts from
// different settings never collide. Exit codes: 0 success, 2 validation
// error, 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dac/adaptation.hpp"
#include "dac/checkpoint.hpp"
#include "dac/evaluation.hpp"
#include "dac/io.hpp"
#include "dac/random.hpp"
#include "dac/runconfig.hpp"
#include "dac/svg.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dac;

namespace {

// ---------------------------------------------------------------------------
// Shared data loading
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<PatientTrajectory> cohort;
    ValueBins bins;
    CohortSplit split;
    bool has_truth = false;
    SyntheticGroundTruth truth;
    std::vector<std::string> truth_ids;
    EmbeddingConfig embed;

    std::map<std::string, int> index_of;
    const PatientTrajectory& by_id(const std::string& id) const {
        return cohort[static_cast<std::size_t>(index_of.at(id))];
    }
    std::vector<PatientTrajectory> select(const std::vector<std::string>& ids) const {
        return select_patients(cohort, ids);
    }
};

EmbeddingConfig embed_config_for(const RunConfig& rc, const ValueBins& bins) {
    EmbeddingConfig cfg;
    cfg.state_dim = rc.state_dim;
    cfg.value_bins = bins.requested_bins;
    int max_var = -1;
    for (int id : bins.variable_ids()) max_var = std::max(max_var, id);
    cfg.vocab_size = max_var + 1;
    cfg.validate();
    return cfg;
}

Dataset load_dataset(const RunConfig& rc, const std::string& data_dir) {
    Dataset ds;
    const fs::path dir(data_dir);
    ds.cohort = read_trajectories((dir / "trajectories.jsonl").string());
    ds.bins = read_value_bins((dir / "bins.json").string());
    ds.split = read_split((dir / "split.json").string());
    if (fs::exists(dir / "ground_truth.jsonl")) {
        ds.truth = read_ground_truth((dir / "ground_truth.jsonl").string(), &ds.truth_ids);
        ds.has_truth = true;
    }
    apply_value_bins(ds.bins, ds.cohort);
    ds.embed = embed_config_for(rc, ds.bins);
    for (std::size_t i = 0; i < ds.cohort.size(); ++i) {
        ds.index_of[ds.cohort[i].patient_id] = static_cast<int>(i);
    }
    return ds;
}

// Oracle actions per patient id from a ground-truth sidecar.
std::map<std::string, std::vector<ActionTriple>> oracle_by_id(const Dataset& ds) {
    std::map<std::string, std::vector<ActionTriple>> out;
    for (std::size_t i = 0; i < ds.truth_ids.size(); ++i) {
        out[ds.truth_ids[i]] = ds.truth.patients[i].oracle_actions;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers
// ---------------------------------------------------------------------------

json embed_meta(const EmbeddingConfig& cfg) {
    return json{{"state_dim", cfg.state_dim},
                {"value_bins", cfg.value_bins},
                {"vocab_size", cfg.vocab_size}};
}

void check_embed_meta(const json& meta, const EmbeddingConfig& cfg, const std::string& path) {
    if (meta.value("state_dim", -1) != cfg.state_dim ||
        meta.value("value_bins", -1) != cfg.value_bins ||
        meta.value("vocab_size", -1) != cfg.vocab_size) {
        throw ConfigError("checkpoint",
                          path + " was trained under a different data configuration");
    }
}

std::string ckpt_path(const RunConfig& rc, const std::string& name) {
    return (fs::path(rc.checkpoint_dir()) / (name + ".json")).string();
}

RiskModel load_or_train_risk(const RunConfig& rc, const Dataset& ds,
                             const std::vector<PatientTrajectory>& train, bool force) {
    const std::string path = ckpt_path(rc, "risk");
    if (!force && fs::exists(path)) {
        RiskModel model = RiskModel::create(ds.embed, rc.risk.seed);
        check_embed_meta(load_checkpoint(path, model.store), ds.embed, path);
        return model;
    }
    std::cout << "[train] fitting mortality risk model on " << train.size() << " patients\n";
    RiskModel model = train_risk_model(train, ds.embed, rc.risk);
    json meta = embed_meta(ds.embed);
    meta["kind"] = "risk";
    save_checkpoint(path, model.store, ad::AdamOptimizer{}, meta, rc.header());
    return model;
}

BehaviorClone load_or_train_clone(const RunConfig& rc, const Dataset& ds,
                                  const std::vector<PatientTrajectory>& train, bool force) {
    const std::string path = ckpt_path(rc, "clone");
    if (!force && fs::exists(path)) {
        BehaviorClone clone = BehaviorClone::create(ds.embed, rc.clone.seed);
        check_embed_meta(load_checkpoint(path, clone.store), ds.embed, path);
        return clone;
    }
    std::cout << "[train] fitting behavior clone on " << train.size() << " patients\n";
    BehaviorClone clone = train_behavior_clone(train, ds.embed, rc.clone);
    json meta = embed_meta(ds.embed);
    meta["kind"] = "clone";
    save_checkpoint(path, clone.store, ad::AdamOptimizer{}, meta, rc.header());
    return clone;
}

NumeratorModel load_or_train_numerator(const RunConfig& rc,
                                       const std::vector<PatientTrajectory>& train,
                                       bool force) {
    const std::string path = ckpt_path(rc, "numerator");
    if (!force && fs::exists(path)) {
        NumeratorModel model = NumeratorModel::create(16, 32, rc.numerator.seed);
        load_checkpoint(path, model.store);
        return model;
    }
    std::cout << "[train] fitting action-sequence numerator model\n";
    NumeratorModel model = train_numerator(cohort_change_sequences(train), rc.numerator);
    json meta{{"kind", "numerator"}, {"embed_dim", model.embed_dim},
              {"hidden_dim", model.hidden_dim}};
    save_checkpoint(path, model.store, ad::AdamOptimizer{}, meta, rc.header());
    return model;
}

PolicyModel load_policy(const RunConfig& rc, const Dataset& ds, const std::string& name,
                        json* meta_out = nullptr) {
    const std::string path = ckpt_path(rc, name);
    if (!fs::exists(path)) {
        throw ConfigError("checkpoint", path + " not found; run `dac train` first");
    }
    PolicyModel model = PolicyModel::create(ds.embed, rc.train.seed);
    json meta = load_checkpoint(path, model.store);
    check_embed_meta(meta, ds.embed, path);
    model.sync_target();
    if (meta_out) *meta_out = meta;
    return model;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& rc, bool force) {
    const fs::path dir(rc.data_dir());
    if (fs::exists(dir / "trajectories.jsonl") && !force) {
        throw ConfigError("generate",
                          "run " + rc.run_id + " already has data; pass --force to overwrite");
    }
    std::cout << "[generate] run " << rc.run_id << ": simulating "
              << rc.synthetic.cohort_size() << " patients\n";
    SimulatedCohort cohort = simulate_cohort(rc.synthetic);

    std::vector<std::string> ids;
    for (const auto& p : cohort.trajectories) ids.push_back(p.patient_id);
    CohortSplit split = split_cohort(ids, rc.split_seed);
    std::vector<PatientTrajectory> train =
        select_patients(cohort.trajectories, split.train_ids(rc.split_rotation));
    ValueBins bins = fit_value_bins(train, rc.value_bins);

    atomic_write_text((fs::path(rc.run_dir()) / "config.snapshot.cfg").string(),
                      rc.raw.canonical());
    write_trajectories((dir / "trajectories.jsonl").string(), cohort.trajectories, rc.header());
    write_ground_truth((dir / "ground_truth.jsonl").string(), cohort.truth, ids, rc.header());
    write_value_bins((dir / "bins.json").string(), bins, rc.header());
    write_split((dir / "split.json").string(), split, rc.header());

    int deaths = 0;
    for (const auto& p : cohort.trajectories) deaths += p.outcome;
    std::cout << "[generate] wrote " << cohort.trajectories.size() << " trajectories ("
              << deaths << " non-survivors) under " << rc.run_dir() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& rc, bool force) {
    Dataset ds = load_dataset(rc, rc.data_dir());
    atomic_write_text((fs::path(rc.run_dir()) / "config.snapshot.cfg").string(),
                      rc.raw.canonical());
    std::vector<PatientTrajectory> train = ds.select(ds.split.train_ids(rc.split_rotation));
    std::vector<PatientTrajectory> val = ds.select(ds.split.validation_ids(rc.split_rotation));

    RiskModel risk = load_or_train_risk(rc, ds, train, force);
    BehaviorClone clone = load_or_train_clone(rc, ds, train, force);
    NumeratorModel numerator = load_or_train_numerator(rc, train, force);

    // Resume from the newest per-epoch checkpoint unless --force.
    int start_epoch = 0;
    PolicyModel resume = PolicyModel::create(ds.embed, rc.train.seed);
    ad::AdamOptimizer resume_opt;
    resume_opt.learning_rate = rc.train.learning_rate;
    bool resuming = false;
    if (!force) {
        for (int e = rc.train.epochs - 1; e >= 0; --e) {
            char name[32];
            std::snprintf(name, sizeof(name), "dac_epoch_%03d", e);
            if (fs::exists(ckpt_path(rc, name))) {
                json meta = load_checkpoint(ckpt_path(rc, name), resume.store, &resume_opt);
                check_embed_meta(meta, ds.embed, ckpt_path(rc, name));
                resume.sync_target();
                start_epoch = e + 1;
                resuming = true;
                std::cout << "[train] resuming after epoch " << e << "\n";
                break;
            }
        }
    }
    if (start_epoch >= rc.train.epochs) {
        std::cout << "[train] all " << rc.train.epochs << " epochs already trained\n";
        return 0;
    }

    TrainConfig tc = rc.train;
    tc.epochs = rc.train.epochs - start_epoch;

    const std::string metrics_path = (fs::path(rc.log_dir()) / "train_metrics.jsonl").string();
    fs::create_directories(rc.log_dir());
    std::ostringstream metrics_log;
    if (!force && fs::exists(metrics_path) && resuming) {
        metrics_log << read_text_file(metrics_path);
    }

    auto on_epoch = [&](const EpochMetrics& em, PolicyModel& model, ad::AdamOptimizer& opt) {
        char name[32];
        std::snprintf(name, sizeof(name), "dac_epoch_%03d", em.epoch);
        json meta = embed_meta(ds.embed);
        meta["kind"] = "dac";
        meta["epoch"] = em.epoch;
        save_checkpoint(ckpt_path(rc, name), model.store, opt, meta, rc.header());
        metrics_log << json{{"epoch", em.epoch},
                            {"actor_loss", em.actor_loss},
                            {"critic_loss", em.critic_loss},
                            {"mortality_loss", em.mortality_loss},
                            {"validation_wis", em.validation_wis}}
                           .dump()
                    << "\n";
        atomic_write_text(metrics_path, metrics_log.str());
        std::cout << "[train] epoch " << em.epoch << " actor " << em.actor_loss << " critic "
                  << em.critic_loss << " mortality " << em.mortality_loss << " val WIS "
                  << em.validation_wis << "\n";
    };

    TrainResult result =
        train_dac(train, val, ds.embed, tc, risk, clone, numerator, on_epoch, start_epoch,
                  resuming ? &resume : nullptr);

    // Keep the best snapshot across resumes.
    double best_wis = result.metrics.empty()
                          ? 0.0
                          : result.metrics[static_cast<std::size_t>(
                                               result.best_epoch - start_epoch)]
                                .validation_wis;
    const std::string best_path = ckpt_path(rc, "dac_best");
    bool write_best = true;
    if (!force && fs::exists(best_path)) {
        json old_meta = read_checkpoint_meta(best_path);
        if (old_meta.value("validation_wis", -1e300) >= best_wis) write_best = false;
    }
    if (write_best) {
        json meta = embed_meta(ds.embed);
        meta["kind"] = "dac";
        meta["epoch"] = result.best_epoch;
        meta["validation_wis"] = best_wis;
        save_checkpoint(best_path, result.policy.store, ad::AdamOptimizer{}, meta, rc.header());
    }
    std::cout << "[train] best epoch " << result.best_epoch << " (validation WIS " << best_wis
              << ") -> " << best_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

json curve_to_json(const CalibrationCurve& curve) {
    return json{{"centers", curve.centers},
                {"mortality", curve.mortality},
                {"counts", curve.counts}};
}

json matrix_json(const Mat& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

struct EvalInputs {
    std::vector<PatientTrajectory> test;
    PolicyProbsFn pi_eval;
    PolicyProbsFn pi_behavior;
    StepValueFn expected_return;  // may be empty
    std::map<std::string, std::vector<ActionTriple>> oracle;
};

json run_evaluation(const RunConfig& rc, const Dataset& eval_ds, EvalInputs& in) {
    double wis_value = wis(in.test, in.pi_eval, in.pi_behavior, rc.train.gamma);

    // Estimated mortality via the held-out (state, action) risk model.
    const std::string risk_path = ckpt_path(rc, "eval_risk_" + rc.eval.policy);
    ActionRiskModel action_risk = ActionRiskModel::create(eval_ds.embed, rc.eval.risk.seed);
    if (fs::exists(risk_path)) {
        check_embed_meta(load_checkpoint(risk_path, action_risk.store), eval_ds.embed,
                         risk_path);
    } else {
        std::cout << "[evaluate] fitting calibration risk model on " << in.test.size()
                  << " held-out patients\n";
        action_risk = train_action_risk_model(in.test, eval_ds.embed, rc.eval.risk);
        json meta = embed_meta(eval_ds.embed);
        meta["kind"] = "action_risk";
        save_checkpoint(risk_path, action_risk.store, ad::AdamOptimizer{}, meta, rc.header());
    }
    CalibrationCurve curve = fit_calibration(in.test, action_risk, rc.eval.calibration_bin_width,
                                             rc.eval.calibration_min_count);
    double em = estimated_mortality(in.test, in.pi_eval, action_risk, curve);

    // ACC against the synthetic oracle when ground truth is available.
    double acc3 = -1.0, acc1 = -1.0;
    if (!in.oracle.empty()) {
        std::vector<std::vector<ActionTriple>> recommended, oracle;
        for (const auto& p : in.test) {
            auto it = in.oracle.find(p.patient_id);
            if (it == in.oracle.end()) continue;
            std::vector<ActionTriple> rec;
            for (int t = 0; t < p.length(); ++t) {
                Vec probs = in.pi_eval(p, t);
                int a = 0;
                probs.maxCoeff(&a);
                rec.push_back(unflatten(a));
            }
            recommended.push_back(std::move(rec));
            oracle.push_back(it->second);
        }
        if (!recommended.empty()) {
            AccResult acc = acc_metrics(recommended, oracle);
            acc3 = acc.acc3;
            acc1 = acc.acc1;
        }
    }

    DescriptiveReport desc = descriptive_reports(in.test, in.pi_eval, in.expected_return);

    json report{{"run_id", rc.run_id},
                {"config_hash", rc.run_id},
                {"policy", rc.eval.policy},
                {"wis", wis_value},
                {"estimated_mortality", em},
                {"acc3", acc3},
                {"acc1", acc1},
                {"calibration", curve_to_json(curve)},
                {"clinician_hist", matrix_json(desc.clinician_hist)},
                {"policy_hist", matrix_json(desc.policy_hist)},
                {"dose_diff_mortality", matrix_json(desc.dose_diff_mortality)},
                {"dose_diff_count", matrix_json(desc.dose_diff_count)},
                {"return_bin_center", desc.return_bin_center},
                {"return_bin_mortality", desc.return_bin_mortality}};

    std::printf("policy        EM      WIS     ACC-3   ACC-1\n");
    std::printf("%-12s  %.4f  %.4f  ", rc.eval.policy.c_str(), em, wis_value);
    if (acc3 >= 0.0) {
        std::printf("%.4f  %.4f\n", acc3, acc1);
    } else {
        std::printf("n/a     n/a\n");
    }
    return report;
}

int cmd_evaluate(const RunConfig& rc) {
    Dataset ds = load_dataset(rc, rc.data_dir());
    std::vector<PatientTrajectory> test = ds.select(ds.split.test_ids(rc.split_rotation));
    std::vector<PatientTrajectory> train = ds.select(ds.split.train_ids(rc.split_rotation));

    BehaviorClone clone = load_or_train_clone(rc, ds, train, false);

    EvalInputs in;
    Dataset* eval_ds = &ds;
    Dataset target_ds;

    if (rc.eval.policy == "adapted") {
        if (rc.adapt.target_data_dir.empty()) {
            throw ConfigError("adapt.target_data_dir", "required for eval.policy = adapted");
        }
        target_ds = load_dataset(rc, rc.adapt.target_data_dir);
        eval_ds = &target_ds;
        const std::string decisions_path = ckpt_path(rc, "adapted_decisions");
        if (!fs::exists(decisions_path)) {
            throw ConfigError("evaluate", decisions_path + " not found; run `dac adapt` first");
        }
        json decisions = json::parse(read_text_file(decisions_path));
        auto table = std::make_shared<std::map<std::string, std::vector<int>>>();
        for (const auto& [id, flats] : decisions.at("decisions").items()) {
            (*table)[id] = flats.get<std::vector<int>>();
        }
        for (const auto& [id, _] : *table) {
            in.test.push_back(target_ds.by_id(id));
        }
        const double eps = rc.eval.smoothing_epsilon;
        in.pi_eval = [table, eps](const PatientTrajectory& p, int t) {
            return smooth_deterministic(table->at(p.patient_id)[static_cast<std::size_t>(t)],
                                        kActionCount, eps);
        };
        ProbTable behavior = clone_action_prob_table(clone, in.test);
        in.pi_behavior = table_policy(behavior);
        if (target_ds.has_truth) in.oracle = oracle_by_id(target_ds);
    } else {
        in.test = test;
        ProbTable behavior = clone_action_prob_table(clone, in.test);
        in.pi_behavior = table_policy(behavior);
        if (ds.has_truth) in.oracle = oracle_by_id(ds);

        if (rc.eval.policy == "dac") {
            auto policy = std::make_shared<PolicyModel>(load_policy(rc, ds, "dac_best"));
            ProbTable probs = policy_prob_table(*policy, in.test);
            in.pi_eval = table_policy(probs);
            auto values = std::make_shared<std::map<std::string, Mat>>();
            for (const auto& p : in.test) (*values)[p.patient_id] = policy->long_term_values(p);
            in.expected_return = [values](const PatientTrajectory& p, int t) {
                const Mat& v = values->at(p.patient_id);
                int a = 0;
                v.row(t).maxCoeff(&a);
                return v(t, a);
            };
        } else if (rc.eval.policy == "clone" || rc.eval.policy == "behavior") {
            in.pi_eval = in.pi_behavior;
        } else {
            throw ConfigError("eval.policy", "unknown policy " + rc.eval.policy);
        }
    }

    json report = run_evaluation(rc, *eval_ds, in);
    const std::string out =
        (fs::path(rc.report_dir()) / (rc.run_id + "_eval_" + rc.eval.policy + ".json")).string();
    atomic_write_text(out, report.dump(2) + "\n");
    std::cout << "[evaluate] report written to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// adapt
// ---------------------------------------------------------------------------

int cmd_adapt(const RunConfig& rc, bool force) {
    if (rc.adapt.target_data_dir.empty()) {
        throw ConfigError("adapt.target_data_dir", "required for `dac adapt`");
    }
    Dataset source = load_dataset(rc, rc.data_dir());
    std::vector<PatientTrajectory> source_train =
        source.select(source.split.train_ids(rc.split_rotation));
    PolicyModel policy = load_policy(rc, source, "dac_best");

    // Target trajectories discretized with the SOURCE bins so the source
    // encoder sees a compatible vocabulary.
    Dataset target;
    {
        const fs::path dir(rc.adapt.target_data_dir);
        target.cohort = read_trajectories((dir / "trajectories.jsonl").string());
        target.split = read_split((dir / "split.json").string());
        if (fs::exists(dir / "ground_truth.jsonl")) {
            target.truth =
                read_ground_truth((dir / "ground_truth.jsonl").string(), &target.truth_ids);
            target.has_truth = true;
        }
        target.bins = source.bins;
        apply_value_bins(target.bins, target.cohort);
        target.embed = source.embed;
        for (std::size_t i = 0; i < target.cohort.size(); ++i) {
            target.index_of[target.cohort[i].patient_id] = static_cast<int>(i);
        }
    }
    std::vector<PatientTrajectory> target_train =
        target.select(target.split.train_ids(rc.split_rotation));
    std::vector<PatientTrajectory> target_eval =
        target.select(target.split.test_ids(rc.split_rotation));

    // Shared covariate space, z-scored per cohort on its own training split.
    std::vector<int> shared = shared_vocabulary(source.cohort, target.cohort);
    CovariateStandardizer source_std = CovariateStandardizer::fit(source_train, shared);
    CovariateStandardizer target_std = CovariateStandardizer::fit(target_train, shared);

    // Source dynamics.
    DynamicsModel source_dyn = DynamicsModel::create(
        source.embed.state_dim, rc.adapt.action_dim, static_cast<int>(shared.size()),
        rc.adapt.seed);
    const std::string source_dyn_path = ckpt_path(rc, "dynamics_source");
    if (!force && fs::exists(source_dyn_path)) {
        load_checkpoint(source_dyn_path, source_dyn.store);
    } else {
        std::cout << "[adapt] training source dynamics on " << source_train.size()
                  << " patients\n";
        DynamicsDataset data = build_dynamics_dataset(policy, source_train, source_std);
        source_dyn = train_dynamics(data, source.embed.state_dim, rc.adapt.action_dim,
                                    static_cast<int>(shared.size()), rc.adapt.dynamics);
        json meta{{"kind", "dynamics"},
                  {"state_dim", source.embed.state_dim},
                  {"value_bins", source.embed.value_bins},
                  {"vocab_size", source.embed.vocab_size},
                  {"out_dim", static_cast<int>(shared.size())}};
        save_checkpoint(source_dyn_path, source_dyn.store, ad::AdamOptimizer{}, meta,
                        rc.header());
    }

    // Fine-tuning subset of the target training folds.
    std::vector<PatientTrajectory> finetune;
    {
        std::mt19937_64 rng(derive_seed(rc.adapt.seed, 0x66726163ULL));
        std::vector<int> order(target_train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::shuffle(order.begin(), order.end(), rng);
        const int keep = static_cast<int>(
            std::lround(rc.adapt.finetune_fraction * static_cast<double>(target_train.size())));
        for (int i = 0; i < keep; ++i) {
            finetune.push_back(target_train[static_cast<std::size_t>(order[i])]);
        }
    }
    std::cout << "[adapt] fine-tuning target dynamics on " << finetune.size() << " of "
              << target_train.size() << " target patients\n";

    AdaptationResult result = run_adaptation(policy, source_dyn, finetune, target_eval,
                                             target_std, rc.adapt.dynamics);

    json meta{{"kind", "dynamics"},
              {"state_dim", source.embed.state_dim},
              {"value_bins", source.embed.value_bins},
              {"vocab_size", source.embed.vocab_size},
              {"out_dim", static_cast<int>(shared.size())},
              {"finetune_patients", static_cast<int>(finetune.size())}};
    save_checkpoint(ckpt_path(rc, "dynamics_target"), result.target_dynamics.store,
                    ad::AdamOptimizer{}, meta, rc.header());

    json decisions = json::object();
    std::ostringstream csv;
    csv << "patient_id,step,vt,peep,fio2,source_flat\n";
    for (std::size_t i = 0; i < target_eval.size(); ++i) {
        const auto& p = target_eval[i];
        std::vector<int> flats;
        for (std::size_t t = 0; t < result.decisions[i].size(); ++t) {
            const ActionTriple& a = result.decisions[i][t];
            flats.push_back(flat_index(a));
            csv << p.patient_id << "," << t + 1 << "," << a.vt << "," << a.peep << "," << a.fio2
                << "," << result.source_actions[i][t] << "\n";
        }
        decisions[p.patient_id] = flats;
    }
    json payload{{"run_id", rc.run_id},
                 {"config_hash", rc.run_id},
                 {"meta", {{"kind", "adapted_decisions"}}},
                 {"decisions", std::move(decisions)}};
    atomic_write_text(ckpt_path(rc, "adapted_decisions"), payload.dump());
    atomic_write_text((fs::path(rc.report_dir()) / (rc.run_id + "_adapted_decisions.csv"))
                          .string(),
                      csv.str());
    std::cout << "[adapt] decisions for " << target_eval.size() << " target patients written\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const RunConfig& rc) {
    const std::string eval_path =
        (fs::path(rc.report_dir()) / (rc.run_id + "_eval_" + rc.eval.policy + ".json")).string();
    if (!fs::exists(eval_path)) {
        throw ConfigError("report", eval_path + " not found; run `dac evaluate` first");
    }
    json report = json::parse(read_text_file(eval_path));
    const fs::path dir(rc.report_dir());
    const std::string prefix = rc.run_id + "_";
    const char* params[3] = {"vt", "peep", "fio2"};

    auto row = [](const json& m, int r) {
        std::vector<double> v;
        for (const auto& x : m.at(static_cast<std::size_t>(r))) v.push_back(x.get<double>());
        return v;
    };

    std::vector<std::string> levels;
    for (int l = 1; l <= 7; ++l) levels.push_back(std::to_string(l));
    for (int p = 0; p < 3; ++p) {
        std::string title = std::string("Action distribution (") + params[p] + ")";
        std::string chart = svg::bar_chart(
            title, levels,
            {{"clinician", row(report.at("clinician_hist"), p)},
             {"policy", row(report.at("policy_hist"), p)}});
        atomic_write_text((dir / (prefix + "actions_" + params[p] + ".svg")).string(), chart);

        std::vector<double> offsets, mortality;
        for (int o = -6; o <= 6; ++o) offsets.push_back(o);
        mortality = row(report.at("dose_diff_mortality"), p);
        std::string dd = svg::line_chart(
            std::string("Mortality vs setting difference (") + params[p] + ")",
            {{"mortality", offsets, mortality}}, "recommended - actual level",
            "mortality rate");
        atomic_write_text((dir / (prefix + "dose_diff_" + params[p] + ".svg")).string(), dd);
    }

    {
        std::vector<double> centers = report.at("calibration").at("centers")
                                          .get<std::vector<double>>();
        std::vector<double> mortality = report.at("calibration").at("mortality")
                                            .get<std::vector<double>>();
        if (!centers.empty()) {
            std::string cal = svg::line_chart("Calibration", {{"empirical", centers, mortality}},
                                              "predicted mortality", "empirical mortality");
            atomic_write_text((dir / (prefix + "calibration.svg")).string(), cal);
        }
    }
    {
        std::vector<double> centers = report.at("return_bin_center").get<std::vector<double>>();
        std::vector<double> mortality =
            report.at("return_bin_mortality").get<std::vector<double>>();
        if (!centers.empty()) {
            std::string rm =
                svg::line_chart("Mortality vs expected return",
                                {{"mortality", centers, mortality}}, "expected return",
                                "mortality rate");
            atomic_write_text((dir / (prefix + "return_mortality.svg")).string(), rm);
        }
    }

    // CSV tables.
    std::ostringstream hist_csv;
    hist_csv << "param,level,clinician,policy\n";
    for (int p = 0; p < 3; ++p) {
        auto ch = row(report.at("clinician_hist"), p);
        auto ph = row(report.at("policy_hist"), p);
        for (int l = 0; l < 7; ++l) {
            hist_csv << params[p] << "," << l + 1 << "," << ch[static_cast<std::size_t>(l)]
                     << "," << ph[static_cast<std::size_t>(l)] << "\n";
        }
    }
    atomic_write_text((dir / (prefix + "action_hist.csv")).string(), hist_csv.str());

    std::ostringstream dd_csv;
    dd_csv << "param,offset,mortality,count\n";
    for (int p = 0; p < 3; ++p) {
        auto mort = row(report.at("dose_diff_mortality"), p);
        auto count = row(report.at("dose_diff_count"), p);
        for (int o = 0; o < 13; ++o) {
            dd_csv << params[p] << "," << o - 6 << "," << mort[static_cast<std::size_t>(o)]
                   << "," << count[static_cast<std::size_t>(o)] << "\n";
        }
    }
    atomic_write_text((dir / (prefix + "dose_diff.csv")).string(), dd_csv.str());

    std::ostringstream metrics_csv;
    metrics_csv << "metric,value\n";
    metrics_csv << "wis," << report.at("wis").get<double>() << "\n";
    metrics_csv << "estimated_mortality," << report.at("estimated_mortality").get<double>()
                << "\n";
    if (report.at("acc3").get<double>() >= 0.0) {
        metrics_csv << "acc3," << report.at("acc3").get<double>() << "\n";
        metrics_csv << "acc1," << report.at("acc1").get<double>() << "\n";
    }
    atomic_write_text((dir / (prefix + "metrics.csv")).string(), metrics_csv.str());

    std::cout << "[report] figures and tables written under " << rc.report_dir() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify(const RunConfig& rc) {
    const fs::path root(rc.run_dir());
    if (!fs::exists(root)) throw ConfigError("verify", "run directory not found: " + root.string());

    // The snapshot's artifact-defining sections must hash back to the run id.
    const fs::path snapshot = root / "config.snapshot.cfg";
    int checked = 0, failed = 0;
    if (fs::exists(snapshot)) {
        ConfigMap snap = ConfigMap::parse_file(snapshot.string());
        std::string hash = hex_hash64(RunConfig::artifact_canonical(snap));
        bool ok = hash == rc.run_id;
        std::cout << (ok ? "OK   " : "FAIL ") << snapshot.string() << " (config hash)\n";
        ++checked;
        failed += ok ? 0 : 1;
    }

    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const std::string path = entry.path().string();
        if (path.size() < 5 || (path.substr(path.size() - 5) != ".json" &&
                                path.substr(path.size() - 6) != ".jsonl")) {
            continue;
        }
        std::ifstream in(path);
        std::string first_line;
        std::getline(in, first_line);
        if (first_line.empty() || first_line[0] != '{') continue;
        json j;
        try {
            j = json::parse(first_line);
        } catch (const json::parse_error&) {
            continue;
        }
        if (!j.contains("run_id")) continue;
        bool ok = j.value("run_id", "") == rc.run_id &&
                  j.value("config_hash", "") == rc.run_id;
        std::cout << (ok ? "OK   " : "FAIL ") << path << "\n";
        ++checked;
        failed += ok ? 0 : 1;
    }
    std::cout << "[verify] " << checked << " files checked, " << failed << " mismatched\n";
    if (failed > 0) throw ConfigError("verify", "run id / config hash mismatches found");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deconfounding actor-critic toolkit for ventilator treatment policies"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    std::vector<std::string> ablate;

    app.add_option("--config", config_path, "Path to the experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Master seed override (synthetic, split, training)")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_flag("--force", force, "Overwrite existing artifacts");
    app.add_option("--ablate", ablate,
                   "Ablations: rsp (resampling), dcf (IPTW), short, long; repeatable");

    for (const char* name :
         {"generate", "train", "adapt", "evaluate", "report", "verify"}) {
        app.add_subcommand(name)->fallthrough();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        std::map<std::string, std::string> overrides;
        if (seed_set) {
            overrides["synthetic.seed"] = std::to_string(seed);
            overrides["split.seed"] = std::to_string(seed);
            overrides["train.seed"] = std::to_string(seed);
        }
        for (const std::string& a : ablate) {
            if (a == "rsp") {
                overrides["train.no_resample"] = "true";
            } else if (a == "dcf") {
                overrides["train.no_iptw"] = "true";
            } else if (a == "short") {
                overrides["train.no_short"] = "true";
            } else if (a == "long") {
                overrides["train.no_long"] = "true";
            } else {
                throw ConfigError("--ablate", "unknown ablation '" + a + "'");
            }
        }
        RunConfig rc = RunConfig::load(config_path, overrides);

        if (app.got_subcommand("generate")) return cmd_generate(rc, force);
        if (app.got_subcommand("train")) return cmd_train(rc, force);
        if (app.got_subcommand("adapt")) return cmd_adapt(rc, force);
        if (app.got_subcommand("evaluate")) return cmd_evaluate(rc);
        if (app.got_subcommand("report")) return cmd_report(rc);
        if (app.got_subcommand("verify")) return cmd_verify(rc);
        throw ConfigError("command", "no subcommand selected");
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
