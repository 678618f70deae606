#pragma once

#include "doebe/common.hpp"

#include <json.hpp>

namespace doebe::io {

inline nlohmann::json vector_to_json(const VectorRef& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

/// Column-major {rows, cols, data}.
inline nlohmann::json matrix_to_json(const MatrixRef& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Matrix>(data.data(), m.rows(), m.cols()) = m;
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) {
    throw std::invalid_argument("matrix record: data length does not match rows x cols");
  }
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

}  // namespace doebe::io
