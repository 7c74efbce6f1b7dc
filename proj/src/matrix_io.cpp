#include "rainbow/matrix_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "rainbow/common.hpp"

namespace rainbow {

namespace {

constexpr unsigned char kMagic[8] = {'R', 'B', 'M', 'A', 'T', 0x00, 0x00, 0x01};

static_assert(std::endian::native == std::endian::little,
              "RBM1 writer assumes a little-endian host");

void put_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint64_t get_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace

void write_matrix(const Eigen::MatrixXd& m, const std::string& path) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(m(i, j)))
                throw io_error("write_matrix: non-finite entry at (" + std::to_string(i) + "," +
                               std::to_string(j) + ")");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("write_matrix: cannot open " + path);
    out.write(reinterpret_cast<const char*>(kMagic), 8);
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    // row-major payload
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
    if (!out) throw io_error("write_matrix: short write to " + path);
}

Eigen::MatrixXd read_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_matrix: cannot open " + path);
    unsigned char magic[8] = {};
    in.read(reinterpret_cast<char*>(magic), 8);
    if (in.gcount() != 8) throw io_error("read_matrix: truncated header in " + path);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw io_error("read_matrix: header magic mismatch in " + path);
    const std::uint64_t rows = get_u64(in);
    const std::uint64_t cols = get_u64(in);
    if (!in) throw io_error("read_matrix: truncated header in " + path);
    if (rows > (1u << 20) || cols > (1u << 20))
        throw io_error("read_matrix: implausible dimensions in " + path);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::vector<double> row(cols);
    for (std::uint64_t i = 0; i < rows; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(cols * sizeof(double)));
        if (static_cast<std::uint64_t>(in.gcount()) != cols * sizeof(double))
            throw io_error("read_matrix: truncated payload in " + path);
        for (std::uint64_t j = 0; j < cols; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    return m;
}

void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(m(i, j))) throw io_error("write_matrix_csv: non-finite entry");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("write_matrix_csv: cannot open " + path);
    char buf[32];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out << buf;
            if (j + 1 < m.cols()) out << ',';
        }
        out << '\n';
    }
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("read_matrix_csv: cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (!rows.empty() && vals.size() != rows.front().size())
            throw io_error("read_matrix_csv: ragged rows in " + path);
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw io_error("read_matrix_csv: empty file " + path);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows.front().size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

}  // namespace rainbow
