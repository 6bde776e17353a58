#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dac/checkpoint.hpp"
#include "dac/config.hpp"
#include "dac/io.hpp"
#include "dac/synthetic.hpp"
#include "doctest.h"

using namespace dac;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("config_io");

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dac_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("config parsing: comments, overrides, includes") {
    TempDir dir;
    {
        std::ofstream base(dir.file("base.cfg"));
        base << "train.alpha = 0.1\n"
             << "train.gamma = 0.99   # discount\n"
             << "synthetic.kappa = 2.0\n";
    }
    {
        std::ofstream main(dir.file("main.cfg"));
        main << "include base.cfg\n"
             << "train.alpha = 0.2\n"
             << "paths.workspace = /tmp/ws\n";
    }
    ConfigMap cfg = ConfigMap::parse_file(dir.file("main.cfg"));
    CHECK(cfg.get_double("train.alpha", 0.0) == doctest::Approx(0.2));
    CHECK(cfg.get_double("train.gamma", 0.0) == doctest::Approx(0.99));
    CHECK(cfg.get_string("paths.workspace", "") == "/tmp/ws");
    CHECK(cfg.get_int("missing.key", 7) == 7);

    CHECK_THROWS_AS(cfg.get_int("paths.workspace", 0), ConfigError);
    try {
        cfg.get_int("paths.workspace", 0);
    } catch (const ConfigError& e) {
        CHECK(e.field() == "paths.workspace");
    }
}

TEST_CASE("config canonical hash is include-order independent") {
    ConfigMap a = ConfigMap::parse_text("x.b = 2\nx.a = 1\n");
    ConfigMap b = ConfigMap::parse_text("x.a = 1\nx.b = 2\n");
    CHECK(a.content_hash() == b.content_hash());
    ConfigMap c = ConfigMap::parse_text("x.a = 1\nx.b = 3\n");
    CHECK(a.content_hash() != c.content_hash());
    CHECK(a.content_hash().size() == 16);
}

TEST_CASE("config rejects malformed lines") {
    CHECK_THROWS_AS(ConfigMap::parse_text("not a key value"), ConfigError);
    CHECK_THROWS_AS(ConfigMap::parse_text("= value"), ConfigError);
    CHECK_THROWS_AS(ConfigMap::parse_text("include /nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("trajectory files round-trip and carry the header") {
    TempDir dir;
    SyntheticConfig cfg;
    cfg.ar_order = 1;
    cfg.horizon = 3;
    cfg.obs_dim = 2;
    cfg.hidden_dim = 2;
    cfg.n_survivor = 3;
    cfg.n_nonsurvivor = 9;
    cfg.seed = 3;
    SimulatedCohort cohort = simulate_cohort(cfg);

    FileHeader header{"", 1, "run-abc", "hash-123"};
    std::string path = dir.file("traj.jsonl");
    write_trajectories(path, cohort.trajectories, header);

    FileHeader readback;
    std::vector<PatientTrajectory> loaded = read_trajectories(path, &readback);
    CHECK(readback.run_id == "run-abc");
    CHECK(readback.config_hash == "hash-123");
    REQUIRE(loaded.size() == cohort.trajectories.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].patient_id == cohort.trajectories[i].patient_id);
        CHECK(loaded[i].outcome == cohort.trajectories[i].outcome);
        REQUIRE(loaded[i].steps.size() == cohort.trajectories[i].steps.size());
        for (std::size_t t = 0; t < loaded[i].steps.size(); ++t) {
            CHECK(loaded[i].steps[t].action == cohort.trajectories[i].steps[t].action);
            CHECK(loaded[i].steps[t].events.size() ==
                  cohort.trajectories[i].steps[t].events.size());
            CHECK(loaded[i].steps[t].events[0].value ==
                  cohort.trajectories[i].steps[t].events[0].value);
        }
    }

    // Serialization is byte-stable.
    CHECK(serialize_trajectories(cohort.trajectories, header) ==
          serialize_trajectories(cohort.trajectories, header));

    // Version guard.
    std::string text = read_text_file(path);
    text.replace(text.find("\"version\":1"), 11, "\"version\":9");
    atomic_write_text(dir.file("bad.jsonl"), text);
    CHECK_THROWS(read_trajectories(dir.file("bad.jsonl")));
}

TEST_CASE("ground truth sidecar round-trips bit-exact") {
    TempDir dir;
    SyntheticConfig cfg;
    cfg.ar_order = 2;
    cfg.horizon = 4;
    cfg.obs_dim = 2;
    cfg.hidden_dim = 3;
    cfg.n_survivor = 2;
    cfg.n_nonsurvivor = 6;
    cfg.seed = 11;
    SimulatedCohort cohort = simulate_cohort(cfg);
    std::vector<std::string> ids;
    for (const auto& p : cohort.trajectories) ids.push_back(p.patient_id);

    std::string path = dir.file("gt.jsonl");
    write_ground_truth(path, cohort.truth, ids, FileHeader{"", 1, "r", "h"});
    std::vector<std::string> ids_back;
    SyntheticGroundTruth loaded = read_ground_truth(path, &ids_back);

    CHECK(ids_back == ids);
    CHECK(loaded.config.horizon == cfg.horizon);
    CHECK(loaded.threshold == cohort.truth.threshold);
    CHECK((loaded.process.alpha - cohort.truth.process.alpha).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.g_map - cohort.truth.g_map).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.behavior_theta - cohort.truth.behavior_theta).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(loaded.patients.size() == cohort.truth.patients.size());
    for (std::size_t i = 0; i < loaded.patients.size(); ++i) {
        CHECK((loaded.patients[i].obs - cohort.truth.patients[i].obs).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK(loaded.patients[i].behavior_action == cohort.truth.patients[i].behavior_action);
        CHECK(loaded.patients[i].oracle_actions == cohort.truth.patients[i].oracle_actions);
        CHECK(loaded.patients[i].raw_outcome == cohort.truth.patients[i].raw_outcome);
    }

    // The reloaded truth drives the oracle identically.
    CHECK(oracle_optimal_action(loaded, 1, 2) == oracle_optimal_action(cohort.truth, 1, 2));
}

TEST_CASE("value bins and split files round-trip") {
    TempDir dir;
    ValueBins bins;
    bins.requested_bins = 4;
    bins.edges[0] = {1.5, 2.5, 3.5};
    bins.edges[7] = {0.25};
    write_value_bins(dir.file("bins.json"), bins, FileHeader{"", 1, "r", "h"});
    ValueBins loaded = read_value_bins(dir.file("bins.json"));
    CHECK(loaded.requested_bins == 4);
    CHECK(loaded.edges == bins.edges);

    CohortSplit split;
    for (int i = 0; i < 25; ++i) split.fold_of["p" + std::to_string(i)] = i % 10;
    write_split(dir.file("split.json"), split, FileHeader{"", 1, "r", "h"});
    CohortSplit split_back = read_split(dir.file("split.json"));
    CHECK(split_back.fold_of == split.fold_of);
}

TEST_CASE("checkpoints restore parameters, optimizer state, and metadata") {
    TempDir dir;
    std::mt19937_64 rng(4);
    ad::ParameterStore store;
    store.add("layer.weight", uniform_init(3, 4, 4, rng));
    store.add("layer.bias", uniform_init(1, 4, 4, rng));
    ad::AdamOptimizer opt;
    opt.step_count = 42;
    store.at(0).adam_m.setConstant(0.5);

    nlohmann::json meta{{"kind", "risk"}, {"state_dim", 4}};
    std::string path = dir.file("ckpt.json");
    save_checkpoint(path, store, opt, meta, FileHeader{"", 1, "run-1", "hash-1"});

    ad::ParameterStore fresh;
    fresh.add("layer.weight", 3, 4);
    fresh.add("layer.bias", 1, 4);
    ad::AdamOptimizer fresh_opt;
    FileHeader header;
    nlohmann::json loaded_meta = load_checkpoint(path, fresh, &fresh_opt, &header);

    CHECK(loaded_meta.at("kind") == "risk");
    CHECK(header.run_id == "run-1");
    CHECK(fresh_opt.step_count == 42);
    CHECK(fresh.value_hash() == store.value_hash());
    CHECK((fresh.at(0).adam_m - store.at(0).adam_m).cwiseAbs().maxCoeff() == 0.0);

    // Shape mismatch rejected.
    ad::ParameterStore wrong;
    wrong.add("layer.weight", 3, 5);
    wrong.add("layer.bias", 1, 4);
    CHECK_THROWS(load_checkpoint(path, wrong));

    CHECK(read_checkpoint_meta(path).at("state_dim") == 4);
}

TEST_CASE("atomic write never leaves a partial target") {
    TempDir dir;
    std::string path = dir.file("out.txt");
    atomic_write_text(path, "hello");
    CHECK(read_text_file(path) == "hello");
    atomic_write_text(path, "world");
    CHECK(read_text_file(path) == "world");
    CHECK(!fs::exists(path + ".tmp"));
}

TEST_SUITE_END();
