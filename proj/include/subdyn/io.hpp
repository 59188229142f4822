// io.hpp: CSV tables and operator dumps (JSON header + COO triplet blob).
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/fock.hpp"

namespace subdyn::io {

// Shortest round-trip decimal form; identical doubles print identically.
std::string format_double(double x);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  void add(const std::vector<double>& row);
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

// Blob layout, little endian: int64 rows, int64 cols, int64 nnz, then nnz
// records of (int64 row, int64 col, double re, double im), column-major order.
// The header <stem>.json carries the space descriptor, sector_shift and the
// hermitian flag.
struct OperatorDump {
  std::string label;
  fock::Statistics statistics = fock::Statistics::Fermi;
  int modes = 0;
  int n_max = 0;
  int n_cap = 0;
  int sector_shift = 0;
  bool hermitian = false;
  SpMat mat;
};

OperatorDump make_dump(const std::string& label, const fock::FockSpace& space, const fock::Operator& op);
// Dense matrices are pruned at `drop` before storing.
OperatorDump make_dump(const std::string& label, const fock::FockSpace& space, const Mat& op, int sector_shift,
                       double drop = 0.0);

// Writes <dir>/<stem>.json and <dir>/<stem>.bin.
void write_operator(const std::filesystem::path& dir, const std::string& stem, const OperatorDump& dump);
OperatorDump read_operator(const std::filesystem::path& dir, const std::string& stem);

}  // namespace subdyn::io
