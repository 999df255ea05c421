#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nfwpo::io {

/// Little-endian binary stream used for checkpoints. Doubles are stored as
/// their raw IEEE-754 bits so a write/read cycle is bit-exact.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void str(const std::string& s);
  void vec(const Eigen::VectorXd& v);
  void mat(const Eigen::MatrixXd& m);
  void f64s(const std::vector<double>& v);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  std::string str();
  Eigen::VectorXd vec();
  Eigen::MatrixXd mat();
  std::vector<double> f64s();

  /// Throws FormatError unless the next tag matches.
  void expect_tag(const std::string& tag);

 private:
  void raw(char* dst, std::size_t n);
  std::istream& in_;
};

}  // namespace nfwpo::io
