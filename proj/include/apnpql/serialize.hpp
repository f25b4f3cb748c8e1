#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "apnpql/nn.hpp"

namespace apnpql::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian raw encoding; doubles are written bit-for-bit.
void write_u32(std::ostream& out, std::uint32_t value);
void write_i64(std::ostream& out, std::int64_t value);
void write_f64(std::ostream& out, double value);
void write_string(std::ostream& out, const std::string& value);
void write_vector(std::ostream& out, const Vector& value);
void write_matrix(std::ostream& out, const Matrix& value);

std::uint32_t read_u32(std::istream& in);
std::int64_t read_i64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
Vector read_vector(std::istream& in);
Matrix read_matrix(std::istream& in);

/// Writes / checks a 4-byte tag followed by a format version.
void write_header(std::ostream& out, const char tag[4], std::uint32_t version);
std::uint32_t read_header(std::istream& in, const char tag[4]);

}  // namespace apnpql::io
