#include "dac/checkpoint.hpp"

#include <sstream>
#include <stdexcept>

namespace dac {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "dac.checkpoint";
constexpr int kVersion = 1;

json matrix_payload(const Mat& m) {
    json data = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat matrix_restore(const json& j) {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    const json& data = j.at("data");
    if (static_cast<int>(data.size()) != rows * cols) {
        throw std::runtime_error("checkpoint: matrix payload size mismatch");
    }
    Mat m(rows, cols);
    int idx = 0;
    for (int i = 0; i < rows; ++i) {
        for (int jj = 0; jj < cols; ++jj) m(i, jj) = data[static_cast<std::size_t>(idx++)];
    }
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ad::ParameterStore& store,
                     const ad::AdamOptimizer& optimizer, const json& meta,
                     const FileHeader& header) {
    json root{{"format", kFormat},
              {"version", kVersion},
              {"run_id", header.run_id},
              {"config_hash", header.config_hash},
              {"meta", meta}};
    root["optimizer"] = json{{"learning_rate", optimizer.learning_rate},
                             {"beta1", optimizer.beta1},
                             {"beta2", optimizer.beta2},
                             {"epsilon", optimizer.epsilon},
                             {"step_count", optimizer.step_count}};
    json params = json::array();
    for (int i = 0; i < store.size(); ++i) {
        const ad::Parameter& p = store.at(i);
        params.push_back(json{{"name", p.name},
                              {"value", matrix_payload(p.value)},
                              {"adam_m", matrix_payload(p.adam_m)},
                              {"adam_v", matrix_payload(p.adam_v)}});
    }
    root["parameters"] = std::move(params);
    atomic_write_text(path, root.dump());
}

json load_checkpoint(const std::string& path, ad::ParameterStore& store,
                     ad::AdamOptimizer* optimizer, FileHeader* header) {
    json root = json::parse(read_text_file(path));
    if (root.at("format").get<std::string>() != kFormat) {
        throw std::runtime_error("checkpoint: wrong format tag in " + path);
    }
    if (root.at("version").get<int>() != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    if (header) {
        header->format = kFormat;
        header->version = kVersion;
        header->run_id = root.value("run_id", "");
        header->config_hash = root.value("config_hash", "");
    }
    if (optimizer) {
        const json& o = root.at("optimizer");
        optimizer->learning_rate = o.at("learning_rate").get<double>();
        optimizer->beta1 = o.at("beta1").get<double>();
        optimizer->beta2 = o.at("beta2").get<double>();
        optimizer->epsilon = o.at("epsilon").get<double>();
        optimizer->step_count = o.at("step_count").get<long>();
    }

    const json& params = root.at("parameters");
    if (static_cast<int>(params.size()) != store.size()) {
        throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    }
    for (const json& jp : params) {
        const std::string name = jp.at("name").get<std::string>();
        int id = store.find(name);
        if (id < 0) throw std::runtime_error("checkpoint: unknown parameter " + name);
        ad::Parameter& p = store.at(id);
        Mat value = matrix_restore(jp.at("value"));
        if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        }
        p.value = std::move(value);
        p.adam_m = matrix_restore(jp.at("adam_m"));
        p.adam_v = matrix_restore(jp.at("adam_v"));
    }
    return root.at("meta");
}

json read_checkpoint_meta(const std::string& path, FileHeader* header) {
    json root = json::parse(read_text_file(path));
    if (header) {
        header->format = root.value("format", "");
        header->version = root.value("version", 0);
        header->run_id = root.value("run_id", "");
        header->config_hash = root.value("config_hash", "");
    }
    return root.at("meta");
}

}  // namespace dac
