#pragma once

#include <filesystem>
#include <string>

#include "taxpose/model.hpp"

namespace taxpose {

inline constexpr int kCheckpointFormatVersion = 1;

/// JSON text: format_version, dimensions, variant flags, goal names, and
/// every parameter tensor as a nested array of rows. Reals are written in
/// shortest round-trip form, so a save/load cycle is bit-exact.
std::string checkpoint_to_json(const TaxPoseModel& model);
TaxPoseModel checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const TaxPoseModel& model);
TaxPoseModel load_checkpoint(const std::filesystem::path& path);

}  // namespace taxpose
