// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "chunkflow/model.hpp"

namespace chunkflow {

// "CFCK" container, version 1: model config, role and named parameter
// tensors with shape headers. See docs/formats.md.
void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path);
DenoiserModel load_checkpoint(const std::filesystem::path& path);

}  // namespace chunkflow
