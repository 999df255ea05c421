#include "nfwpo/binary_io.hpp"

#include <bit>
#include <cstring>

#include "nfwpo/errors.hpp"

namespace nfwpo::io {

namespace {

// Upper bound on any length prefix; guards against reading garbage sizes.
constexpr std::uint64_t kMaxLength = std::uint64_t{1} << 32;

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

}  // namespace

void BinaryWriter::u8(std::uint8_t v) { put_le(out_, v); }
void BinaryWriter::u32(std::uint32_t v) { put_le(out_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(out_, v); }
void BinaryWriter::i64(std::int64_t v) { put_le(out_, v); }
void BinaryWriter::f64(double v) { put_le(out_, std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::vec(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
}

void BinaryWriter::mat(const Eigen::MatrixXd& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
}

void BinaryWriter::f64s(const std::vector<double>& v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void BinaryReader::raw(char* dst, std::size_t n) {
  in_.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("unexpected end of binary stream");
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  raw(reinterpret_cast<char*>(&v), 1);
  return v;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::int64_t BinaryReader::i64() {
  std::int64_t v;
  raw(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const auto n = u64();
  if (n > kMaxLength) throw FormatError("string length out of range");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

Eigen::VectorXd BinaryReader::vec() {
  const auto n = u64();
  if (n > kMaxLength) throw FormatError("vector length out of range");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f64();
  return v;
}

Eigen::MatrixXd BinaryReader::mat() {
  const auto rows = u64();
  const auto cols = u64();
  if (rows > kMaxLength || cols > kMaxLength || rows * cols > kMaxLength)
    throw FormatError("matrix shape out of range");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = f64();
  return m;
}

std::vector<double> BinaryReader::f64s() {
  const auto n = u64();
  if (n > kMaxLength) throw FormatError("array length out of range");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

void BinaryReader::expect_tag(const std::string& tag) {
  const auto got = str();
  if (got != tag) throw FormatError("expected section '" + tag + "', found '" + got + "'");
}

}  // namespace nfwpo::io
