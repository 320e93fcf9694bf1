// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "gvqa/model.hpp"

namespace gvqa {

// Checkpoint archive: magic "GVQACKPT", format version, a JSON header
// (configs, vocabulary, stage provenance, freeze map, free-form metadata),
// then the named f64 parameter arrays. Written atomically
// (temp-file-then-rename).

struct CheckpointData {
  ModelState state;
  std::vector<std::string> vocab;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const ModelState& state,
                     const std::vector<std::string>& vocab,
                     const std::map<std::string, std::string>& meta);

CheckpointData load_checkpoint(const std::string& path);

}  // namespace gvqa
