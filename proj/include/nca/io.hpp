#pragma once

#include <stdexcept>
#include <string>

namespace nca::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that reads back to the same double (%.17g).
std::string format_double(double v);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace nca::io
