#include "dac/runconfig.hpp"

#include <cstdlib>
#include <functional>
#include <filesystem>
#include <sstream>

namespace dac {

namespace {

void wrap_validation(const std::string& field, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(field, e.what());
    }
}

}  // namespace

RunConfig RunConfig::load(const std::string& config_path,
                          const std::map<std::string, std::string>& overrides) {
    ConfigMap map = ConfigMap::parse_file(config_path);
    for (const auto& [k, v] : overrides) map.set(k, v);
    return from_map(std::move(map));
}

RunConfig RunConfig::from_map(ConfigMap map) {
    RunConfig rc;
    rc.raw = std::move(map);
    const ConfigMap& m = rc.raw;

    rc.workspace = m.get_string("paths.workspace", "");
    if (rc.workspace.empty()) {
        const char* env = std::getenv("DAC_WORKSPACE");
        rc.workspace = env && *env ? env : ".";
    }

    SyntheticConfig& s = rc.synthetic;
    s.ar_order = m.get_int("synthetic.ar_order", s.ar_order);
    s.horizon = m.get_int("synthetic.horizon", s.horizon);
    s.obs_dim = m.get_int("synthetic.obs_dim", s.obs_dim);
    s.hidden_dim = m.get_int("synthetic.hidden_dim", s.hidden_dim);
    s.num_levels = m.get_int("synthetic.num_levels", s.num_levels);
    s.kappa = m.get_double("synthetic.kappa", s.kappa);
    s.n_survivor = m.get_int("synthetic.n_survivor", s.n_survivor);
    s.n_nonsurvivor = m.get_int("synthetic.n_nonsurvivor", s.n_nonsurvivor);
    s.treat_effect_std = m.get_double("synthetic.treat_effect_std", s.treat_effect_std);
    s.noise_std = m.get_double("synthetic.noise_std", s.noise_std);
    s.outcome_bias_std = m.get_double("synthetic.outcome_bias_std", s.outcome_bias_std);
    s.seed = m.get_u64("synthetic.seed", s.seed);
    wrap_validation("synthetic", [&] { s.validate(); });

    rc.value_bins = m.get_int("data.value_bins", rc.value_bins);
    if (rc.value_bins < 1) throw ConfigError("data.value_bins", "must be >= 1");
    rc.state_dim = m.get_int("embedding.state_dim", rc.state_dim);
    if (rc.state_dim < 1) throw ConfigError("embedding.state_dim", "must be >= 1");
    rc.split_seed = m.get_u64("split.seed", rc.split_seed);
    rc.split_rotation = m.get_int("split.rotation", rc.split_rotation);
    if (rc.split_rotation < 0 || rc.split_rotation >= kFoldCount) {
        throw ConfigError("split.rotation", "must be in [0,9]");
    }

    TrainConfig& t = rc.train;
    t.alpha = m.get_double("train.alpha", t.alpha);
    t.gamma = m.get_double("train.gamma", t.gamma);
    t.learning_rate = m.get_double("train.learning_rate", t.learning_rate);
    t.batch_size = m.get_int("train.batch_size", t.batch_size);
    t.epochs = m.get_int("train.epochs", t.epochs);
    t.iters_per_epoch = m.get_int("train.iters_per_epoch", t.iters_per_epoch);
    t.target_sync = m.get_int("train.target_sync", t.target_sync);
    t.weights.prob_floor = m.get_double("train.prob_floor", t.weights.prob_floor);
    t.weights.clip_min = m.get_double("train.weight_clip_min", t.weights.clip_min);
    t.weights.clip_max = m.get_double("train.weight_clip_max", t.weights.clip_max);
    t.match_tolerance = m.get_double("train.match_tolerance", t.match_tolerance);
    t.no_resample = m.get_bool("train.no_resample", t.no_resample);
    t.no_iptw = m.get_bool("train.no_iptw", t.no_iptw);
    t.no_short = m.get_bool("train.no_short", t.no_short);
    t.no_long = m.get_bool("train.no_long", t.no_long);
    t.seed = m.get_u64("train.seed", t.seed);
    wrap_validation("train", [&] { t.validate(); });

    rc.risk.epochs = m.get_int("risk.epochs", rc.risk.epochs);
    rc.risk.batch_size = m.get_int("risk.batch_size", rc.risk.batch_size);
    rc.risk.learning_rate = m.get_double("risk.learning_rate", rc.risk.learning_rate);
    rc.risk.seed = m.get_u64("risk.seed", rc.train.seed);

    rc.clone.epochs = m.get_int("clone.epochs", rc.clone.epochs);
    rc.clone.batch_size = m.get_int("clone.batch_size", rc.clone.batch_size);
    rc.clone.learning_rate = m.get_double("clone.learning_rate", rc.clone.learning_rate);
    rc.clone.seed = m.get_u64("clone.seed", rc.train.seed);

    rc.numerator.epochs = m.get_int("numerator.epochs", rc.numerator.epochs);
    rc.numerator.batch_size = m.get_int("numerator.batch_size", rc.numerator.batch_size);
    rc.numerator.learning_rate =
        m.get_double("numerator.learning_rate", rc.numerator.learning_rate);
    rc.numerator.seed = m.get_u64("numerator.seed", rc.train.seed);

    EvalSettings& e = rc.eval;
    e.policy = m.get_string("eval.policy", e.policy);
    if (e.policy != "dac" && e.policy != "clone" && e.policy != "behavior" &&
        e.policy != "adapted") {
        throw ConfigError("eval.policy", "must be dac, clone, behavior, or adapted");
    }
    e.smoothing_epsilon = m.get_double("eval.smoothing_epsilon", e.smoothing_epsilon);
    if (e.smoothing_epsilon <= 0.0 || e.smoothing_epsilon >= 1.0) {
        throw ConfigError("eval.smoothing_epsilon", "must be in (0,1)");
    }
    e.calibration_bin_width = m.get_double("eval.calibration_bin_width",
                                           e.calibration_bin_width);
    e.calibration_min_count = m.get_int("eval.calibration_min_count", e.calibration_min_count);
    e.risk.epochs = m.get_int("eval.risk_epochs", e.risk.epochs);
    e.risk.batch_size = m.get_int("eval.risk_batch_size", e.risk.batch_size);
    e.risk.learning_rate = m.get_double("eval.risk_learning_rate", e.risk.learning_rate);
    e.risk.seed = m.get_u64("eval.risk_seed", rc.train.seed);

    AdaptSettings& a = rc.adapt;
    a.target_data_dir = m.get_string("adapt.target_data_dir", a.target_data_dir);
    a.finetune_fraction = m.get_double("adapt.finetune_fraction", a.finetune_fraction);
    if (a.finetune_fraction < 0.0 || a.finetune_fraction > 1.0) {
        throw ConfigError("adapt.finetune_fraction", "must be in [0,1]");
    }
    a.action_dim = m.get_int("adapt.action_dim", a.action_dim);
    if (a.action_dim < 1) throw ConfigError("adapt.action_dim", "must be >= 1");
    a.dynamics.epochs = m.get_int("adapt.dynamics_epochs", a.dynamics.epochs);
    a.dynamics.batch_size = m.get_int("adapt.dynamics_batch_size", a.dynamics.batch_size);
    a.dynamics.learning_rate =
        m.get_double("adapt.dynamics_learning_rate", a.dynamics.learning_rate);
    a.seed = m.get_u64("adapt.seed", rc.train.seed);
    a.dynamics.seed = a.seed;

    rc.run_id = hex_hash64(artifact_canonical(rc.raw));
    return rc;
}

std::string RunConfig::artifact_canonical(const ConfigMap& map) {
    static const char* kPrefixes[] = {"synthetic.", "data.",  "split.", "embedding.",
                                      "train.",     "risk.",  "clone.", "numerator."};
    std::ostringstream out;
    for (const auto& [k, v] : map.values()) {
        for (const char* prefix : kPrefixes) {
            if (k.rfind(prefix, 0) == 0) {
                out << k << " = " << v << "\n";
                break;
            }
        }
    }
    return out.str();
}

std::string RunConfig::run_dir() const {
    return (std::filesystem::path(workspace) / "runs" / run_id).string();
}
std::string RunConfig::data_dir() const {
    return (std::filesystem::path(run_dir()) / "data").string();
}
std::string RunConfig::checkpoint_dir() const {
    return (std::filesystem::path(run_dir()) / "checkpoints").string();
}
std::string RunConfig::report_dir() const {
    return (std::filesystem::path(run_dir()) / "reports").string();
}
std::string RunConfig::log_dir() const {
    return (std::filesystem::path(run_dir()) / "logs").string();
}

FileHeader RunConfig::header() const {
    FileHeader h;
    h.run_id = run_id;
    h.config_hash = run_id;
    return h;
}

}  // namespace dac
