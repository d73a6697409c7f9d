#pragma once

#include "deviate/core.hpp"

#include "json.hpp"

#include <vector>

namespace deviate::json_io {

inline nlohmann::json vector_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

inline nlohmann::json matrix_json(const Matrix& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Vector vector_from(const nlohmann::json& j) {
  if (!j.is_array()) throw UsageError("expected a JSON array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Matrix matrix_from(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw UsageError("expected a JSON array of rows");
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = static_cast<Eigen::Index>(j[0].size());
  Matrix a(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) throw UsageError("ragged JSON matrix");
    for (Eigen::Index k = 0; k < c; ++k) a(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return a;
}

}  // namespace deviate::json_io
