// scenario.hpp: Scenario schema, per-kind runners, manifests and sweeps.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdyn/common.hpp"
#include "subdyn/fock.hpp"
#include "subdyn/io.hpp"
#include "subdyn/modes.hpp"

namespace subdyn::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* version = "0.1.0";

enum Exit : int { ok = 0, validation = 2, numerical = 3, assertion = 4 };

struct BasisSpec {
  int dimension = 1;
  std::vector<double> lengths{1.0};
  int cutoff = 4;
  double mass = 1.0;
  std::vector<std::size_t> keep;  // empty keeps all
};

struct FockSpec {
  fock::Statistics statistics = fock::Statistics::Fermi;
  int n_max = -1;  // < 0: number of modes
  int n_cap = -1;
};

struct EpsilonSpec {
  double value = 0.0;  // <= 0: default window value
  double tau0 = 0.0;
  double tau1 = 0.0;
  bool check_window = true;
};

struct MicroSpec {
  std::vector<double> energies;
  std::vector<double> bath_levels;
  double coupling = 0.0;
  double beta = 1.0;
  double internal = 0.0;
  Mat initial;
};

struct Fields {
  std::vector<double> beta, mu, v;
};

struct KineticsSpec {
  double epsilon = 1.0;
  bool born_only = false;
  double beta = 1.0, mu = 0.0;  // occupations of the reference distribution
  double shell = -1.0;
  bool substitute = true;
  double tau1 = 0.0;
  double audit_tau = 0.01;
  int draws = 100;
};

struct Scenario {
  json config;  // echo, after overrides
  std::string name, kind;
  std::optional<std::uint64_t> seed;
  double hbar = 1.0;

  bool has_basis = false;
  BasisSpec basis;
  FockSpec fock;
  modes::Potential potential;
  EpsilonSpec epsilon;
  MicroSpec micro;
  KineticsSpec kinetics;

  // subdynamics: samples over [start tau0, end tau1]
  int samples = 20;
  double window_start = 2.0, window_end = 0.5;
  // trajectories
  int count = 1000;
  double t_end = 1.0;
  int max_events = 3;
  // thermo and memory
  int cells = 2;
  Fields fields;
  double thermo_end = 0.2;
  int thermo_steps = 10;
  double step = 0.05;
  std::vector<Fields> history;
  std::vector<double> times;
  int order = 16;

  std::map<std::string, double> tolerances;
  std::map<std::string, std::string> outputs;  // table key -> file name
};

// Throws ValidationError with the offending key path.
Scenario parse_scenario(const json& config);
json load_json(const fs::path& path);

// Dotted path ("micro.coupling", "thermo.beta.0"); every component but the
// last must exist.
void set_path(json& config, const std::string& path, const json& value);

struct Assertion {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool upper = true;  // value <= bound, else value >= bound
  bool pass() const { return upper ? value <= bound : value >= bound; }
};

struct RunResult {
  std::map<std::string, double> summary;
  std::vector<Assertion> assertions;
  std::vector<std::pair<std::string, io::CsvTable>> tables;  // output key, table
  bool valid = true;  // numerical validity (epsilon window, convergence)
  std::string validity_note;
};

// Runs the pipeline of scenario.kind; module exceptions propagate.
RunResult execute(const Scenario& s, int threads = 1);

json error_record(int code, const std::string& message);
int exit_code(const RunResult& r);

struct Outcome {
  int code = 0;
  json manifest;
};

// Creates out_dir, writes the CSV outputs and manifest.json (always, with the
// error record on failure).
Outcome run_to_dir(const Scenario& s, const fs::path& out_dir, int threads = 1);

struct SweepRow {
  json value;
  int code = 0;
  std::map<std::string, double> summary;
  std::string error;
};

// One run per value under out_dir/run_<i>; sweep.csv aggregates the summaries.
// Parallel over values when threads > 1, rows stay in input order.
std::vector<SweepRow> sweep(const json& config, const std::string& param, const std::vector<json>& values,
                            const fs::path& out_dir, int threads = 1);

// Fock operators of the scenario's space (H, N, a_f) and, for the
// microsystem kinds, the generator blobs. Returns the dump manifest.
json dump_ops(const Scenario& s, const fs::path& out_dir);

}  // namespace subdyn::cli
