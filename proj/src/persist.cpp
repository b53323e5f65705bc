#include "eki/persist.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace eki {

namespace {

static_assert(std::endian::native == std::endian::little, "binary matrices are little-endian");

constexpr std::array<char, 4> kMagic{'E', 'K', 'I', 'M'};
constexpr std::uint32_t kVersion = 1;

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ofstream out(path, mode);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ifstream in(path, mode);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return in;
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path, std::ios::out | std::ios::trunc);
  char buf[32];
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error("ragged CSV matrix in " + path.string());
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

void write_matrix_binary(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_out(path, std::ios::out | std::ios::binary | std::ios::trunc);
  const std::int64_t rows = m.rows(), cols = m.cols();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!out) throw Error("write failed for " + path.string());
}

Matrix read_matrix_binary(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::in | std::ios::binary);
  std::array<char, 4> magic{};
  std::uint32_t version = 0;
  std::int64_t rows = 0, cols = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || magic != kMagic) throw Error(path.string() + " is not a binary matrix file");
  if (version != kVersion) throw Error("unsupported binary matrix version in " + path.string());
  if (rows < 0 || cols < 0) throw Error("corrupt matrix header in " + path.string());
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!in) throw Error("truncated matrix data in " + path.string());
  return m;
}

void save_matrix_pair(const std::filesystem::path& dir, const std::string& name, const Matrix& m) {
  write_matrix_binary(dir / (name + ".bin"), m);
  write_matrix_csv(dir / (name + ".csv"), m);
}

Matrix load_matrix(const std::filesystem::path& dir, const std::string& name) {
  return read_matrix_binary(dir / (name + ".bin"));
}

}  // namespace eki
