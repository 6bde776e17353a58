#include "dac/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dac {

using nlohmann::json;

namespace {

json header_json(const FileHeader& h, const char* format, int version) {
    return json{{"format", format},
                {"version", version},
                {"run_id", h.run_id},
                {"config_hash", h.config_hash}};
}

FileHeader parse_header(const std::string& line, const char* expect_format, int expect_version) {
    json j = json::parse(line);
    FileHeader h;
    h.format = j.at("format").get<std::string>();
    h.version = j.at("version").get<int>();
    h.run_id = j.value("run_id", "");
    h.config_hash = j.value("config_hash", "");
    if (h.format != expect_format) {
        throw std::runtime_error("file format mismatch: expected " + std::string(expect_format) +
                                 ", found " + h.format);
    }
    if (h.version != expect_version) {
        throw std::runtime_error("unsupported " + h.format + " version " +
                                 std::to_string(h.version));
    }
    return h;
}

json matrix_to_json(const Mat& m) {
    json data = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat matrix_from_json(const json& j) {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    const json& data = j.at("data");
    if (static_cast<int>(data.size()) != rows * cols) {
        throw std::runtime_error("matrix payload size mismatch");
    }
    Mat m(rows, cols);
    int idx = 0;
    for (int i = 0; i < rows; ++i) {
        for (int jj = 0; jj < cols; ++jj) m(i, jj) = data[static_cast<std::size_t>(idx++)];
    }
    return m;
}

json vector_to_json(const Vec& v) {
    json data = json::array();
    for (int i = 0; i < v.size(); ++i) data.push_back(v(i));
    return data;
}

Vec vector_from_json(const json& j) {
    Vec v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)];
    return v;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) throw std::runtime_error("empty file: " + path);
    return lines;
}

}  // namespace

void atomic_write_text(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
        out << content;
        if (!out.good()) throw std::runtime_error("short write: " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string serialize_trajectories(const std::vector<PatientTrajectory>& cohort,
                                   const FileHeader& header) {
    std::ostringstream out;
    out << header_json(header, "dac.trajectories", kTrajectoryFormatVersion).dump() << "\n";
    for (const PatientTrajectory& p : cohort) {
        json steps = json::array();
        for (const TrajectoryStep& s : p.steps) {
            json events = json::array();
            for (const ObservationEvent& e : s.events) {
                events.push_back(json{{"var", e.variable_id}, {"value", e.value}});
            }
            steps.push_back(json{{"events", std::move(events)},
                                 {"action", {s.action.vt, s.action.peep, s.action.fio2}}});
        }
        out << json{{"patient_id", p.patient_id},
                    {"outcome", p.outcome},
                    {"steps", std::move(steps)}}
                   .dump()
            << "\n";
    }
    return out.str();
}

void write_trajectories(const std::string& path, const std::vector<PatientTrajectory>& cohort,
                        const FileHeader& header) {
    atomic_write_text(path, serialize_trajectories(cohort, header));
}

std::vector<PatientTrajectory> read_trajectories(const std::string& path, FileHeader* header) {
    std::vector<std::string> lines = read_lines(path);
    FileHeader h = parse_header(lines.front(), "dac.trajectories", kTrajectoryFormatVersion);
    if (header) *header = h;

    std::vector<PatientTrajectory> cohort;
    cohort.reserve(lines.size() - 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        json j = json::parse(lines[i]);
        PatientTrajectory p;
        p.patient_id = j.at("patient_id").get<std::string>();
        p.outcome = j.at("outcome").get<int>();
        for (const json& js : j.at("steps")) {
            TrajectoryStep step;
            for (const json& je : js.at("events")) {
                step.events.push_back(
                    {je.at("var").get<int>(), je.at("value").get<double>(), 0});
            }
            const json& ja = js.at("action");
            step.action = ActionTriple{ja.at(0).get<int>(), ja.at(1).get<int>(),
                                       ja.at(2).get<int>()};
            p.steps.push_back(std::move(step));
        }
        validate_trajectory(p);
        cohort.push_back(std::move(p));
    }
    return cohort;
}

void write_ground_truth(const std::string& path, const SyntheticGroundTruth& truth,
                        const std::vector<std::string>& patient_ids, const FileHeader& header) {
    if (patient_ids.size() != truth.patients.size()) {
        throw std::invalid_argument("write_ground_truth: one id per patient required");
    }
    const SyntheticConfig& c = truth.config;
    std::ostringstream out;
    json head = header_json(header, "dac.ground_truth", kGroundTruthFormatVersion);
    head["generator"] = json{
        {"ar_order", c.ar_order},
        {"horizon", c.horizon},
        {"obs_dim", c.obs_dim},
        {"hidden_dim", c.hidden_dim},
        {"num_levels", c.num_levels},
        {"kappa", c.kappa},
        {"n_survivor", c.n_survivor},
        {"n_nonsurvivor", c.n_nonsurvivor},
        {"treat_effect_std", c.treat_effect_std},
        {"noise_std", c.noise_std},
        {"outcome_bias_std", c.outcome_bias_std},
        {"seed", c.seed},
        {"alpha", matrix_to_json(truth.process.alpha)},
        {"mu", matrix_to_json(truth.process.mu)},
        {"beta", vector_to_json(truth.process.beta)},
        {"upsilon", vector_to_json(truth.process.upsilon)},
        {"g_map", matrix_to_json(truth.g_map)},
        {"outcome_weight", vector_to_json(truth.outcome_weight)},
        {"outcome_bias", truth.outcome_bias},
        {"behavior_theta", matrix_to_json(truth.behavior_theta)},
        {"threshold", truth.threshold},
    };
    out << head.dump() << "\n";

    for (std::size_t i = 0; i < truth.patients.size(); ++i) {
        const PatientGroundTruth& pt = truth.patients[i];
        json oracle = json::array();
        for (const ActionTriple& a : pt.oracle_actions) {
            oracle.push_back({a.vt, a.peep, a.fio2});
        }
        out << json{{"patient_id", patient_ids[i]},
                    {"initial_obs", matrix_to_json(pt.initial_obs)},
                    {"initial_hidden", matrix_to_json(pt.initial_hidden)},
                    {"obs", matrix_to_json(pt.obs)},
                    {"hidden", matrix_to_json(pt.hidden)},
                    {"confounder", matrix_to_json(pt.confounder)},
                    {"behavior_action", pt.behavior_action},
                    {"raw_outcome", pt.raw_outcome},
                    {"label", pt.label},
                    {"oracle_actions", std::move(oracle)}}
                   .dump()
            << "\n";
    }
    atomic_write_text(path, out.str());
}

SyntheticGroundTruth read_ground_truth(const std::string& path,
                                       std::vector<std::string>* patient_ids,
                                       FileHeader* header) {
    std::vector<std::string> lines = read_lines(path);
    json head = json::parse(lines.front());
    FileHeader h = parse_header(lines.front(), "dac.ground_truth", kGroundTruthFormatVersion);
    if (header) *header = h;

    SyntheticGroundTruth truth;
    const json& g = head.at("generator");
    truth.config.ar_order = g.at("ar_order").get<int>();
    truth.config.horizon = g.at("horizon").get<int>();
    truth.config.obs_dim = g.at("obs_dim").get<int>();
    truth.config.hidden_dim = g.at("hidden_dim").get<int>();
    truth.config.num_levels = g.at("num_levels").get<int>();
    truth.config.kappa = g.at("kappa").get<double>();
    truth.config.n_survivor = g.at("n_survivor").get<int>();
    truth.config.n_nonsurvivor = g.at("n_nonsurvivor").get<int>();
    truth.config.treat_effect_std = g.at("treat_effect_std").get<double>();
    truth.config.noise_std = g.at("noise_std").get<double>();
    truth.config.outcome_bias_std = g.at("outcome_bias_std").get<double>();
    truth.config.seed = g.at("seed").get<std::uint64_t>();
    truth.process.alpha = matrix_from_json(g.at("alpha"));
    truth.process.mu = matrix_from_json(g.at("mu"));
    truth.process.beta = vector_from_json(g.at("beta"));
    truth.process.upsilon = vector_from_json(g.at("upsilon"));
    truth.g_map = matrix_from_json(g.at("g_map"));
    truth.outcome_weight = vector_from_json(g.at("outcome_weight"));
    truth.outcome_bias = g.at("outcome_bias").get<double>();
    truth.behavior_theta = matrix_from_json(g.at("behavior_theta"));
    truth.threshold = g.at("threshold").get<double>();
    truth.action_subgrid = action_subgrid(truth.config.num_levels);

    if (patient_ids) patient_ids->clear();
    for (std::size_t i = 1; i < lines.size(); ++i) {
        json j = json::parse(lines[i]);
        PatientGroundTruth pt;
        pt.initial_obs = matrix_from_json(j.at("initial_obs"));
        pt.initial_hidden = matrix_from_json(j.at("initial_hidden"));
        pt.obs = matrix_from_json(j.at("obs"));
        pt.hidden = matrix_from_json(j.at("hidden"));
        pt.confounder = matrix_from_json(j.at("confounder"));
        pt.behavior_action = j.at("behavior_action").get<std::vector<int>>();
        pt.raw_outcome = j.at("raw_outcome").get<double>();
        pt.label = j.at("label").get<int>();
        for (const json& ja : j.at("oracle_actions")) {
            pt.oracle_actions.push_back(
                ActionTriple{ja.at(0).get<int>(), ja.at(1).get<int>(), ja.at(2).get<int>()});
        }
        truth.patients.push_back(std::move(pt));
        if (patient_ids) patient_ids->push_back(j.at("patient_id").get<std::string>());
    }
    return truth;
}

void write_value_bins(const std::string& path, const ValueBins& bins, const FileHeader& header) {
    std::ostringstream out;
    out << header_json(header, "dac.value_bins", kBinsFormatVersion).dump() << "\n";
    json vars = json::object();
    for (const auto& [id, edges] : bins.edges) vars[std::to_string(id)] = edges;
    out << json{{"requested_bins", bins.requested_bins}, {"edges", std::move(vars)}}.dump()
        << "\n";
    atomic_write_text(path, out.str());
}

ValueBins read_value_bins(const std::string& path, FileHeader* header) {
    std::vector<std::string> lines = read_lines(path);
    FileHeader h = parse_header(lines.front(), "dac.value_bins", kBinsFormatVersion);
    if (header) *header = h;
    if (lines.size() < 2) throw std::runtime_error("value-bins file missing payload");
    json j = json::parse(lines[1]);
    ValueBins bins;
    bins.requested_bins = j.at("requested_bins").get<int>();
    for (const auto& [key, value] : j.at("edges").items()) {
        bins.edges[std::stoi(key)] = value.get<std::vector<double>>();
    }
    return bins;
}

void write_split(const std::string& path, const CohortSplit& split, const FileHeader& header) {
    std::ostringstream out;
    out << header_json(header, "dac.split", kSplitFormatVersion).dump() << "\n";
    json folds = json::object();
    for (const auto& [id, fold] : split.fold_of) folds[id] = fold;
    out << json{{"folds", std::move(folds)}}.dump() << "\n";
    atomic_write_text(path, out.str());
}

CohortSplit read_split(const std::string& path, FileHeader* header) {
    std::vector<std::string> lines = read_lines(path);
    FileHeader h = parse_header(lines.front(), "dac.split", kSplitFormatVersion);
    if (header) *header = h;
    if (lines.size() < 2) throw std::runtime_error("split file missing payload");
    json j = json::parse(lines[1]);
    CohortSplit split;
    for (const auto& [id, fold] : j.at("folds").items()) {
        split.fold_of[id] = fold.get<int>();
    }
    return split;
}

}  // namespace dac
