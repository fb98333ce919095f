#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "taxpose/geometry.hpp"

namespace taxpose {

/// A cloud read from the text format, with the optional fourth column
/// holding per-point symmetry labels.
struct LabeledCloud {
  PointCloudd cloud;
  std::optional<Eigen::VectorXd> labels;
};

// Point-cloud text format: one point per line, reals separated by single
// spaces, '#' lines ignored. Values are written with 17 significant digits
// so reading back reproduces every double exactly.
LabeledCloud read_cloud(std::istream& in);
LabeledCloud read_cloud(const std::filesystem::path& path);
void write_cloud(std::ostream& out, const PointCloudd& cloud,
                 const Eigen::VectorXd* labels = nullptr);

/// 12 reals on one line: row-major rotation, then translation.
std::string format_transform(const RigidTransformd& t);
RigidTransformd parse_transform(const std::string& line);
RigidTransformd read_transform(const std::filesystem::path& path);

std::string format_real(double value);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace taxpose
