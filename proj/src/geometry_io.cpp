#include "taxpose/geometry_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace taxpose {
namespace {

std::vector<double> parse_reals(const std::string& line, std::size_t line_no) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
    if (pos >= line.size()) break;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(line.substr(pos), &used);
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(line_no) + ": expected a real number");
    }
    values.push_back(v);
    pos += used;
  }
  return values;
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

LabeledCloud read_cloud(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto values = parse_reals(line, line_no);
    if (values.empty()) continue;
    if (values.size() != 3 && values.size() != 4)
      throw FormatError("line " + std::to_string(line_no) + ": expected 3 or 4 values, got " +
                        std::to_string(values.size()));
    if (!rows.empty() && values.size() != rows.front().size())
      throw FormatError("line " + std::to_string(line_no) + ": inconsistent column count");
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw FormatError("point cloud file contains no points");

  Points3d points(3, static_cast<Eigen::Index>(rows.size()));
  const bool labeled = rows.front().size() == 4;
  Eigen::VectorXd labels(labeled ? rows.size() : 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int k = 0; k < 3; ++k) points(k, static_cast<Eigen::Index>(i)) = rows[i][k];
    if (labeled) labels[static_cast<Eigen::Index>(i)] = rows[i][3];
  }
  LabeledCloud out{PointCloudd(std::move(points)), std::nullopt};
  if (labeled) out.labels = std::move(labels);
  return out;
}

LabeledCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_cloud(in);
}

void write_cloud(std::ostream& out, const PointCloudd& cloud, const Eigen::VectorXd* labels) {
  if (labels && labels->size() != cloud.size())
    throw LengthMismatch("label count does not match point count");
  const auto& p = cloud.points();
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    out << format_real(p(0, i)) << ' ' << format_real(p(1, i)) << ' ' << format_real(p(2, i));
    if (labels) out << ' ' << format_real((*labels)[i]);
    out << '\n';
  }
}

std::string format_transform(const RigidTransformd& t) {
  std::string line;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      line += format_real(t.rotation(r, c));
      line += ' ';
    }
  for (int k = 0; k < 3; ++k) {
    line += format_real(t.translation[k]);
    if (k < 2) line += ' ';
  }
  return line;
}

RigidTransformd parse_transform(const std::string& line) {
  const auto values = parse_reals(line, 1);
  if (values.size() != 12)
    throw FormatError("transform must have 12 values, got " + std::to_string(values.size()));
  RigidTransformd t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = values[3 * r + c];
  for (int k = 0; k < 3; ++k) t.translation[k] = values[9 + k];
  if (!is_rotation<double>(t.rotation, 1e-6)) throw FormatError("transform rotation is not in SO(3)");
  return t;
}

RigidTransformd read_transform(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') return parse_transform(line);
  throw FormatError("no transform in " + path.string());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace taxpose
