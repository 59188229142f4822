// io.cpp
#include "subdyn/io.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace subdyn::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double x) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

void CsvTable::add(const std::vector<double>& row) {
  std::vector<std::string> s;
  s.reserve(row.size());
  for (double x : row) s.push_back(format_double(x));
  rows.push_back(std::move(s));
}

namespace {

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool in_q = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_q) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        in_q = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      in_q = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

void put(std::ofstream& f, std::int64_t v) { f.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put(std::ofstream& f, double v) { f.write(reinterpret_cast<const char*>(&v), sizeof v); }
template <class T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw ValidationError("operator blob truncated");
  return v;
}

}  // namespace

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) f << (i ? "," : "") << quote(cells[i]);
    f << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (std::getline(f, line)) t.header = split_line(line);
  while (std::getline(f, line))
    if (!line.empty()) t.rows.push_back(split_line(line));
  return t;
}

OperatorDump make_dump(const std::string& label, const fock::FockSpace& space, const fock::Operator& op) {
  OperatorDump d;
  d.label = label;
  d.statistics = space.statistics;
  d.modes = space.modes;
  d.n_max = space.n_max;
  d.n_cap = space.n_cap;
  d.sector_shift = op.sector_shift;
  d.hermitian = op.hermitian;
  d.mat = op.mat;
  d.mat.makeCompressed();
  return d;
}

OperatorDump make_dump(const std::string& label, const fock::FockSpace& space, const Mat& op, int sector_shift,
                       double drop) {
  fock::Operator o;
  o.mat = op.sparseView(1.0, drop);
  o.sector_shift = sector_shift;
  o.hermitian = op.rows() == op.cols() && max_abs(op - op.adjoint()) <= 1e-12 * std::max(1.0, max_abs(op));
  return make_dump(label, space, o);
}

void write_operator(const fs::path& dir, const std::string& stem, const OperatorDump& d) {
  json h = {{"label", d.label},
            {"space",
             {{"statistics", d.statistics == fock::Statistics::Fermi ? "fermi" : "bose"},
              {"modes", d.modes},
              {"n_max", d.n_max},
              {"n_cap", d.n_cap}}},
            {"rows", d.mat.rows()},
            {"cols", d.mat.cols()},
            {"nnz", d.mat.nonZeros()},
            {"sector_shift", d.sector_shift},
            {"hermitian", d.hermitian},
            {"blob", stem + ".bin"},
            {"layout", "int64 rows, int64 cols, int64 nnz, nnz x (int64 row, int64 col, f64 re, f64 im), little endian"}};
  std::ofstream hf(dir / (stem + ".json"));
  if (!hf) throw ValidationError("cannot write " + (dir / (stem + ".json")).string());
  hf << h.dump(2) << '\n';

  std::ofstream bf(dir / (stem + ".bin"), std::ios::binary);
  put(bf, static_cast<std::int64_t>(d.mat.rows()));
  put(bf, static_cast<std::int64_t>(d.mat.cols()));
  put(bf, static_cast<std::int64_t>(d.mat.nonZeros()));
  for (int k = 0; k < d.mat.outerSize(); ++k)
    for (SpMat::InnerIterator it(d.mat, k); it; ++it) {
      put(bf, static_cast<std::int64_t>(it.row()));
      put(bf, static_cast<std::int64_t>(it.col()));
      put(bf, it.value().real());
      put(bf, it.value().imag());
    }
}

OperatorDump read_operator(const fs::path& dir, const std::string& stem) {
  std::ifstream hf(dir / (stem + ".json"));
  if (!hf) throw ValidationError("cannot read " + (dir / (stem + ".json")).string());
  json h = json::parse(hf);
  OperatorDump d;
  d.label = h.at("label").get<std::string>();
  const auto& sp = h.at("space");
  d.statistics = sp.at("statistics").get<std::string>() == "fermi" ? fock::Statistics::Fermi : fock::Statistics::Bose;
  d.modes = sp.at("modes");
  d.n_max = sp.at("n_max");
  d.n_cap = sp.at("n_cap");
  d.sector_shift = h.at("sector_shift");
  d.hermitian = h.at("hermitian");

  std::ifstream bf(dir / h.at("blob").get<std::string>(), std::ios::binary);
  if (!bf) throw ValidationError("missing operator blob for " + stem);
  const auto rows = get<std::int64_t>(bf), cols = get<std::int64_t>(bf), nnz = get<std::int64_t>(bf);
  if (rows != h.at("rows").get<std::int64_t>() || cols != h.at("cols").get<std::int64_t>() || nnz < 0)
    throw ValidationError("operator blob does not match its header: " + stem);
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(static_cast<std::size_t>(nnz));
  for (std::int64_t i = 0; i < nnz; ++i) {
    const auto r = get<std::int64_t>(bf), c = get<std::int64_t>(bf);
    const double re = get<double>(bf), im = get<double>(bf);
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw ValidationError("operator blob index out of range: " + stem);
    trip.emplace_back(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c), cplx(re, im));
  }
  d.mat.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  d.mat.setFromTriplets(trip.begin(), trip.end());
  return d;
}

}  // namespace subdyn::io
