#include "llrkit/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>

#include "llrkit/errors.hpp"

namespace llrkit {

namespace {

std::string to_hex(const unsigned char* data, unsigned int len) {
  std::string out(len * 2, '0');
  for (unsigned int i = 0; i < len; ++i) std::snprintf(&out[2 * i], 3, "%02x", data[i]);
  return out;
}

std::string sha256_raw(const void* data, std::size_t len) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  if (EVP_Digest(data, len, md.data(), &md_len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  return to_hex(md.data(), md_len);
}

}  // namespace

std::string sha256_hex(std::string_view bytes) { return sha256_raw(bytes.data(), bytes.size()); }

std::string sha256_hex(std::span<const double> values) {
  return sha256_raw(values.data(), values.size_bytes());
}

std::string digest(const netzoo::ParamPoint& params) {
  const auto& s = params.spec();
  std::string buf;
  buf += netzoo::to_string(s.family);
  buf += '|' + std::to_string(s.input_dim) + '|' + std::to_string(s.conv_dims) + '|';
  for (int w : s.hidden_widths) buf += std::to_string(w) + ',';
  buf += '|' + std::to_string(s.kernel_count) + '|' + std::to_string(s.kernel_size) + '|';
  buf += s.hidden_bias ? '1' : '0';
  buf += s.output_bias ? '1' : '0';
  buf += netzoo::to_string(s.activation);
  buf += '|';
  const auto v = params.values();
  buf.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  return sha256_hex(buf);
}

std::string digest(const Eigen::MatrixXd& matrix) {
  std::string buf = std::to_string(matrix.rows()) + 'x' + std::to_string(matrix.cols()) + '|';
  buf.append(reinterpret_cast<const char*>(matrix.data()),
             static_cast<std::size_t>(matrix.size()) * sizeof(double));
  return sha256_hex(buf);
}

}  // namespace llrkit
