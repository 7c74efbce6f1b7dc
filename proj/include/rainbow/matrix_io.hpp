#pragma once

#include <Eigen/Core>
#include <string>

namespace rainbow {

// RBM1 binary matrix format:
//   bytes 0..7   magic: 'R' 'B' 'M' 'A' 'T' 0x00 0x00 0x01
//   bytes 8..15  rows, unsigned 64-bit little-endian
//   bytes 16..23 cols, unsigned 64-bit little-endian
//   then rows*cols IEEE-754 binary64 little-endian values, row-major.
// Round trips are bit-exact.

void write_matrix(const Eigen::MatrixXd& m, const std::string& path);
Eigen::MatrixXd read_matrix(const std::string& path);

// Text alternative for small matrices; one row per line, comma separated,
// %.17g formatting so values survive a round trip exactly.
void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path);
Eigen::MatrixXd read_matrix_csv(const std::string& path);

}  // namespace rainbow
