#pragma once

#include "capfa/bayes_efa.hpp"
#include "capfa/efa.hpp"
#include "capfa/factor_selection.hpp"
#include "capfa/rotation.hpp"

#include <json.hpp>

#include <filesystem>

namespace capfa {

// Matrices are stored row-major as {"rows": r, "cols": c, "data": [...]}.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

// {"labels", "n", "k", "loadings", "uniquenesses", "fit": {...}, ...}
nlohmann::json to_json(const UnrotatedSolution& s);
UnrotatedSolution unrotated_from_json(const nlohmann::json& j);

// {"labels", "method", "pattern", "structure", "phi", "uniquenesses", "criterion", ...}
nlohmann::json to_json(const RotatedSolution& rs);
RotatedSolution rotated_from_json(const nlohmann::json& j);

nlohmann::json to_json(const HullResult& h);
HullResult hull_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BayesPosterior& bp);
BayesPosterior bayes_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);

// Two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace capfa
