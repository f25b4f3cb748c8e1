#include "apnpql/serialize.hpp"

#include <cstring>
#include <istream>
#include <ostream>

namespace apnpql::io {

namespace {

template <typename T>
void write_raw(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
  if (!out) throw FormatError("write failed");
}

template <typename T>
T read_raw(std::istream& in) {
  char bytes[sizeof(T)];
  in.read(bytes, sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError("unexpected end of stream");
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr std::int64_t kMaxElements = std::int64_t{1} << 32;

}  // namespace

void write_u32(std::ostream& out, std::uint32_t value) { write_raw(out, value); }
void write_i64(std::ostream& out, std::int64_t value) { write_raw(out, value); }
void write_f64(std::ostream& out, double value) { write_raw(out, value); }

void write_string(std::ostream& out, const std::string& value) {
  write_i64(out, static_cast<std::int64_t>(value.size()));
  out.write(value.data(), static_cast<std::streamsize>(value.size()));
}

void write_vector(std::ostream& out, const Vector& value) {
  write_i64(out, value.size());
  for (Eigen::Index i = 0; i < value.size(); ++i) write_f64(out, value[i]);
}

void write_matrix(std::ostream& out, const Matrix& value) {
  write_i64(out, value.rows());
  write_i64(out, value.cols());
  for (Eigen::Index i = 0; i < value.size(); ++i) write_f64(out, value.data()[i]);
}

std::uint32_t read_u32(std::istream& in) { return read_raw<std::uint32_t>(in); }
std::int64_t read_i64(std::istream& in) { return read_raw<std::int64_t>(in); }
double read_f64(std::istream& in) { return read_raw<double>(in); }

std::string read_string(std::istream& in) {
  auto n = read_i64(in);
  if (n < 0 || n > kMaxElements) throw FormatError("bad string length");
  std::string s(static_cast<std::size_t>(n), '\0');
  in.read(s.data(), n);
  if (in.gcount() != n) throw FormatError("unexpected end of stream");
  return s;
}

Vector read_vector(std::istream& in) {
  auto n = read_i64(in);
  if (n < 0 || n > kMaxElements) throw FormatError("bad vector length");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = read_f64(in);
  return v;
}

Matrix read_matrix(std::istream& in) {
  auto rows = read_i64(in);
  auto cols = read_i64(in);
  if (rows < 0 || cols < 0 || rows * cols > kMaxElements) {
    throw FormatError("bad matrix shape");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = read_f64(in);
  return m;
}

void write_header(std::ostream& out, const char tag[4], std::uint32_t version) {
  out.write(tag, 4);
  write_u32(out, version);
}

std::uint32_t read_header(std::istream& in, const char tag[4]) {
  char got[4];
  in.read(got, 4);
  if (in.gcount() != 4 || std::memcmp(got, tag, 4) != 0) {
    throw FormatError(std::string("missing '") + std::string(tag, 4) + "' header");
  }
  return read_u32(in);
}

}  // namespace apnpql::io
