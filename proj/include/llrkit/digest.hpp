#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <string_view>

#include "llrkit/netzoo.hpp"

namespace llrkit {

/// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> values);

/// Digest over the spec descriptor and the raw parameter bytes.
std::string digest(const netzoo::ParamPoint& params);
std::string digest(const Eigen::MatrixXd& matrix);

}  // namespace llrkit
