#pragma once

// Model checkpoints: named parameter arrays with shapes, optimizer state,
// and a metadata object carrying the model kind, dimensions and the config
// hash of the data pipeline that produced it. Loading into a freshly built
// model matches parameters by name and rejects shape mismatches.

#include <string>

#include "dac/autodiff.hpp"
#include "dac/io.hpp"
#include "json.hpp"

namespace dac {

void save_checkpoint(const std::string& path, const ad::ParameterStore& store,
                     const ad::AdamOptimizer& optimizer, const nlohmann::json& meta,
                     const FileHeader& header);

// Copies values (and optimizer state when present) into `store`, which must
// already contain identically named, identically shaped parameters. Returns
// the checkpoint metadata.
nlohmann::json load_checkpoint(const std::string& path, ad::ParameterStore& store,
                               ad::AdamOptimizer* optimizer = nullptr,
                               FileHeader* header = nullptr);

// Reads only the metadata object.
nlohmann::json read_checkpoint_meta(const std::string& path, FileHeader* header = nullptr);

}  // namespace dac
