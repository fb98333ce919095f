#include "taxpose/checkpoint.hpp"

#include <json.hpp>

#include "taxpose/errors.hpp"
#include "taxpose/geometry_io.hpp"

namespace taxpose {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw FormatError("tensor '" + name + "' must be a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw FormatError("tensor '" + name + "' is ragged");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw FormatError("tensor '" + name + "' holds a non-number");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

std::string checkpoint_to_json(const TaxPoseModel& model) {
  const ModelConfig& c = model.config;
  json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["embed_dim"] = c.embed_dim;
  doc["hidden_dim"] = c.hidden_dim;
  doc["goal_context_dim"] = c.goal_context_dim;
  doc["knn"] = c.knn;
  doc["cross_variant"] = to_string(c.cross);
  doc["residuals_enabled"] = c.residuals_enabled;
  doc["weighted_svd_enabled"] = c.weighted_svd_enabled;
  doc["symmetry_labels"] = c.symmetry_labels;
  doc["goal_names"] = c.goal_names;
  json params = json::object();
  visit_parameters([&](const std::string& name, const Eigen::MatrixXd& m) { params[name] = matrix_to_json(m); },
                   model.params);
  doc["parameters"] = std::move(params);
  return doc.dump(1) + "\n";
}

TaxPoseModel checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw FormatError("unsupported checkpoint format_version " + std::to_string(version));
    TaxPoseModel model;
    ModelConfig& c = model.config;
    c.embed_dim = doc.at("embed_dim").get<int>();
    c.hidden_dim = doc.at("hidden_dim").get<int>();
    c.goal_context_dim = doc.at("goal_context_dim").get<int>();
    c.knn = doc.at("knn").get<int>();
    c.cross = cross_variant_from_string(doc.at("cross_variant").get<std::string>());
    c.residuals_enabled = doc.at("residuals_enabled").get<bool>();
    c.weighted_svd_enabled = doc.at("weighted_svd_enabled").get<bool>();
    c.symmetry_labels = doc.at("symmetry_labels").get<bool>();
    c.goal_names = doc.at("goal_names").get<std::vector<std::string>>();

    // Shapes come from a freshly initialized model; loaded tensors must match.
    std::mt19937_64 rng(0);
    const TaxPoseModel shape = init_model(c, rng);
    model.params = shape.params;
    const json& params = doc.at("parameters");
    visit_parameters(
        [&](const std::string& name, Eigen::MatrixXd& m, const Eigen::MatrixXd& ref) {
          if (!params.contains(name)) throw FormatError("checkpoint is missing tensor '" + name + "'");
          m = matrix_from_json(params.at(name), name);
          if (m.rows() != ref.rows() || m.cols() != ref.cols())
            throw FormatError("tensor '" + name + "' has the wrong shape");
        },
        model.params, shape.params);
    if (!parameters_finite(model.params)) throw FormatError("checkpoint holds non-finite parameters");
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const TaxPoseModel& model) {
  write_file_atomic(path, checkpoint_to_json(model));
}

TaxPoseModel load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_file(path)); }

}  // namespace taxpose
