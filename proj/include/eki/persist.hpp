#pragma once

// Persistence of truth fields, noise realizations and KL eigenpairs so an
// experiment can be re-run exactly. Each matrix is written twice: a binary
// file (exact round trip) and a CSV file (%.17g, also exact, for humans).
//
// Binary layout: "EKIM", uint32 version = 1, int64 rows, int64 cols, then
// rows * cols little-endian doubles in column-major order.

#include "eki/core.hpp"

#include <filesystem>
#include <string>

namespace eki {

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

void write_matrix_binary(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_binary(const std::filesystem::path& path);

/// Writes <dir>/<name>.bin and <dir>/<name>.csv.
void save_matrix_pair(const std::filesystem::path& dir, const std::string& name, const Matrix& m);
/// Reads <dir>/<name>.bin.
Matrix load_matrix(const std::filesystem::path& dir, const std::string& name);

}  // namespace eki
