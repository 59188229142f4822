// scenario.cpp
#include "scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <thread>

#include "subdyn/dynamics.hpp"
#include "subdyn/kinetics.hpp"
#include "subdyn/lindblad.hpp"
#include "subdyn/scattering.hpp"
#include "subdyn/thermo.hpp"
#include "subdyn/trajectories.hpp"

namespace subdyn::cli {

namespace {

const std::set<std::string> kinds{"subdynamics", "trajectories", "kinetics", "thermo", "memory"};
constexpr double off = std::numeric_limits<double>::quiet_NaN();

// Default tolerances per kind; NaN entries are checks that only run when set.
const std::map<std::string, std::map<std::string, double>> default_tolerances{
    {"subdynamics", {{"max_deviation", 0.05}}},
    {"trajectories", {{"sigma_ratio", 3.0}, {"subcollection", 1e-6}}},
    {"kinetics", {{"mass_residual", 1e-12}, {"positivity", -1e-8}, {"collision_rate", off}, {"energy_relative", off}}},
    {"thermo", {{"entropy_step", -1e-10}, {"hamiltonian_flux", 1e-10}, {"mismatch", 1e-8}}},
    {"memory", {{"agreement", 1e-8}}},
};
const std::set<std::string> lower_bounds{"positivity", "entropy_step"};

const std::map<std::string, std::string> default_outputs{
    {"subdynamics", "subdynamics.csv"}, {"trajectories", "trajectories.csv"}, {"kinetics", "kinetics.csv"},
    {"thermo", "thermo.csv"}, {"memory", "memory.csv"}};

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ValidationError(where + ": " + what);
}

void only_keys(const json& o, const std::string& where, const std::set<std::string>& allowed) {
  if (!o.is_object()) bad(where, "expected an object");
  for (auto it = o.begin(); it != o.end(); ++it)
    if (!allowed.count(it.key())) bad(where + "." + it.key(), "unknown key");
}

const json* find(const json& o, const std::string& key) {
  auto it = o.find(key);
  return it == o.end() ? nullptr : &*it;
}

double number(const json& o, const std::string& key, const std::string& where, std::optional<double> def = {}) {
  const json* v = find(o, key);
  if (!v) {
    if (def) return *def;
    bad(where + "." + key, "required number missing");
  }
  if (!v->is_number()) bad(where + "." + key, "expected a number");
  const double x = v->get<double>();
  if (!std::isfinite(x)) bad(where + "." + key, "not finite");
  return x;
}

double positive(const json& o, const std::string& key, const std::string& where, std::optional<double> def = {}) {
  const double x = number(o, key, where, def);
  if (!(x > 0.0)) bad(where + "." + key, "must be positive");
  return x;
}

long long integer(const json& o, const std::string& key, const std::string& where, std::optional<long long> def = {},
                  long long lo = std::numeric_limits<long long>::min()) {
  const json* v = find(o, key);
  if (!v) {
    if (def) return *def;
    bad(where + "." + key, "required integer missing");
  }
  if (!v->is_number_integer()) bad(where + "." + key, "expected an integer");
  const long long x = v->get<long long>();
  if (x < lo) bad(where + "." + key, "must be >= " + std::to_string(lo));
  return x;
}

bool boolean(const json& o, const std::string& key, const std::string& where, bool def) {
  const json* v = find(o, key);
  if (!v) return def;
  if (!v->is_boolean()) bad(where + "." + key, "expected true or false");
  return v->get<bool>();
}

std::string text(const json& o, const std::string& key, const std::string& where, std::optional<std::string> def = {}) {
  const json* v = find(o, key);
  if (!v) {
    if (def) return *def;
    bad(where + "." + key, "required string missing");
  }
  if (!v->is_string()) bad(where + "." + key, "expected a string");
  return v->get<std::string>();
}

std::vector<double> numbers(const json& o, const std::string& key, const std::string& where, bool required,
                            std::size_t size = 0) {
  const json* v = find(o, key);
  if (!v) {
    if (required) bad(where + "." + key, "required array missing");
    return {};
  }
  if (!v->is_array()) bad(where + "." + key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : *v) {
    if (!x.is_number() || !std::isfinite(x.get<double>())) bad(where + "." + key, "expected finite numbers");
    out.push_back(x.get<double>());
  }
  if (size && out.size() != size) bad(where + "." + key, "expected " + std::to_string(size) + " entries");
  return out;
}

const json& block(const json& c, const std::string& key, bool required) {
  static const json empty = json::object();
  const json* v = find(c, key);
  if (!v) {
    if (required) bad(key, "required block missing");
    return empty;
  }
  if (!v->is_object()) bad(key, "expected an object");
  return *v;
}

Fields parse_fields(const json& o, const std::string& where, std::size_t cells, bool velocity_optional) {
  only_keys(o, where, {"beta", "mu", "v"});
  Fields f;
  f.beta = numbers(o, "beta", where, true, cells);
  f.mu = numbers(o, "mu", where, true, cells);
  f.v = numbers(o, "v", where, !velocity_optional, cells);
  if (f.v.empty()) f.v.assign(cells, 0.0);
  for (double b : f.beta)
    if (!(b > 0.0)) bad(where + ".beta", "must be positive");
  return f;
}

std::size_t mode_count(const Scenario& s) {
  if (!s.basis.keep.empty()) return s.basis.keep.size();
  return modes::build_box_basis(s.basis.dimension, s.basis.lengths, s.basis.cutoff, s.basis.mass,
                                {64, 64, s.hbar})
      .size();
}

}  // namespace

json load_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
}

Scenario parse_scenario(const json& c) {
  if (!c.is_object()) bad("config", "top level must be an object");
  only_keys(c, "config",
            {"name", "description", "kind", "seed", "hbar", "basis", "fock", "potential", "epsilon", "micro",
             "subdynamics", "trajectories", "kinetics", "thermo", "memory", "tolerances", "outputs"});
  Scenario s;
  s.config = c;
  s.name = text(c, "name", "config");
  if (s.name.empty()) bad("config.name", "empty");
  s.kind = text(c, "kind", "config");
  if (!kinds.count(s.kind)) bad("config.kind", "unknown run kind '" + s.kind + "'");
  if (find(c, "seed")) {
    const json& v = c["seed"];
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      bad("config.seed", "expected a non-negative integer");
    s.seed = v.get<std::uint64_t>();
  }
  s.hbar = positive(c, "hbar", "config", 1.0);
  if (find(c, "description")) text(c, "description", "config");

  const bool micro_kind = s.kind == "subdynamics" || s.kind == "trajectories";
  if (!micro_kind && find(c, "micro")) bad("micro", "block does not belong to a " + s.kind + " run");
  if (micro_kind && !s.seed) bad("config.seed", "required for " + s.kind + " runs");

  // basis
  const json& b = block(c, "basis", !micro_kind);
  s.has_basis = find(c, "basis") != nullptr;
  if (s.has_basis) {
    only_keys(b, "basis", {"dimension", "lengths", "cutoff", "mass", "keep"});
    s.basis.dimension = static_cast<int>(integer(b, "dimension", "basis", 1, 1));
    if (s.basis.dimension > 3) bad("basis.dimension", "must be 1, 2 or 3");
    s.basis.lengths = numbers(b, "lengths", "basis", true, static_cast<std::size_t>(s.basis.dimension));
    for (double L : s.basis.lengths)
      if (!(L > 0.0)) bad("basis.lengths", "must be positive");
    s.basis.cutoff = static_cast<int>(integer(b, "cutoff", "basis", {}, 1));
    s.basis.mass = positive(b, "mass", "basis", 1.0);
    if (const json* k = find(b, "keep")) {
      if (!k->is_array()) bad("basis.keep", "expected an array of mode indices");
      std::set<std::size_t> seen;
      for (const auto& x : *k) {
        if (!x.is_number_integer() || x.get<long long>() < 0) bad("basis.keep", "expected non-negative integers");
        const auto i = x.get<std::size_t>();
        if (!seen.insert(i).second) bad("basis.keep", "duplicate mode " + std::to_string(i));
        s.basis.keep.push_back(i);
      }
      if (s.basis.keep.empty()) bad("basis.keep", "empty");
    }
    const std::size_t total = modes::build_box_basis(s.basis.dimension, s.basis.lengths, s.basis.cutoff,
                                                     s.basis.mass, {64, 64, s.hbar})
                                  .size();
    for (auto i : s.basis.keep)
      if (i >= total) bad("basis.keep", "mode " + std::to_string(i) + " beyond the " + std::to_string(total) + " modes");
  }

  const json& f = block(c, "fock", false);
  only_keys(f, "fock", {"statistics", "n_max", "n_cap"});
  const std::string st = text(f, "statistics", "fock", std::string("fermi"));
  if (st == "fermi")
    s.fock.statistics = fock::Statistics::Fermi;
  else if (st == "bose")
    s.fock.statistics = fock::Statistics::Bose;
  else
    bad("fock.statistics", "expected 'fermi' or 'bose'");
  s.fock.n_max = static_cast<int>(integer(f, "n_max", "fock", -1, -1));
  s.fock.n_cap = static_cast<int>(integer(f, "n_cap", "fock", -1, -1));

  const json& p = block(c, "potential", false);
  only_keys(p, "potential", {"shape", "strength", "range"});
  const std::string shape = text(p, "shape", "potential", std::string("none"));
  if (shape == "none")
    s.potential.shape = modes::PotentialShape::None;
  else if (shape == "contact")
    s.potential.shape = modes::PotentialShape::Contact;
  else if (shape == "gaussian")
    s.potential.shape = modes::PotentialShape::Gaussian;
  else
    bad("potential.shape", "expected 'none', 'contact' or 'gaussian'");
  s.potential.strength = number(p, "strength", "potential", 0.0);
  s.potential.range = positive(p, "range", "potential", 0.1);

  const json& e = block(c, "epsilon", false);
  only_keys(e, "epsilon", {"value", "tau0", "tau1", "check_window"});
  s.epsilon.value = number(e, "value", "epsilon", 0.0);
  s.epsilon.tau0 = number(e, "tau0", "epsilon", 0.0);
  s.epsilon.tau1 = number(e, "tau1", "epsilon", 0.0);
  s.epsilon.check_window = boolean(e, "check_window", "epsilon", true);

  if (micro_kind) {
    const json& m = block(c, "micro", true);
    only_keys(m, "micro", {"energies", "bath_levels", "coupling", "beta", "internal", "initial"});
    s.micro.energies = numbers(m, "energies", "micro", false);
    if (s.micro.energies.empty()) {
      if (!s.has_basis) bad("micro.energies", "required when no basis is given");
      const auto mb = modes::build_box_basis(s.basis.dimension, s.basis.lengths, s.basis.cutoff, s.basis.mass,
                                             {64, 64, s.hbar});
      const auto sel = s.basis.keep.empty() ? mb : modes::select_modes(mb, s.basis.keep);
      s.micro.energies = sel.energies;
    }
    s.micro.bath_levels = numbers(m, "bath_levels", "micro", true);
    if (s.micro.bath_levels.empty()) bad("micro.bath_levels", "empty");
    s.micro.coupling = number(m, "coupling", "micro");
    s.micro.beta = positive(m, "beta", "micro", 1.0);
    s.micro.internal = number(m, "internal", "micro", 0.0);
    const auto M = static_cast<Eigen::Index>(s.micro.energies.size());
    const json* init = find(m, "initial");
    if (!init) bad("micro.initial", "required one-particle density matrix missing");
    if (!init->is_array() || static_cast<Eigen::Index>(init->size()) != M)
      bad("micro.initial", "expected " + std::to_string(M) + " rows");
    s.micro.initial = Mat::Zero(M, M);
    for (Eigen::Index i = 0; i < M; ++i) {
      const json& row = (*init)[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != M)
        bad("micro.initial", "row " + std::to_string(i) + " must have " + std::to_string(M) + " entries");
      for (Eigen::Index j = 0; j < M; ++j) {
        const json& x = row[static_cast<std::size_t>(j)];
        if (x.is_number())
          s.micro.initial(i, j) = x.get<double>();
        else if (x.is_array() && x.size() == 2 && x[0].is_number() && x[1].is_number())
          s.micro.initial(i, j) = cplx(x[0].get<double>(), x[1].get<double>());
        else
          bad("micro.initial", "entries are numbers or [re, im] pairs");
      }
    }
    const Mat& r = s.micro.initial;
    if (max_abs(r - r.adjoint()) > 1e-12) bad("micro.initial", "not hermitian");
    if (std::abs(r.trace().real() - 1.0) > 1e-10) bad("micro.initial", "trace must be 1");
    Eigen::SelfAdjointEigenSolver<Mat> es(r);
    if (es.eigenvalues().minCoeff() < -1e-12) bad("micro.initial", "not positive semidefinite");
  }

  if (s.kind == "subdynamics") {
    const json& d = block(c, "subdynamics", false);
    only_keys(d, "subdynamics", {"samples", "start_tau0", "end_tau1"});
    s.samples = static_cast<int>(integer(d, "samples", "subdynamics", 20, 1));
    s.window_start = number(d, "start_tau0", "subdynamics", 2.0);
    s.window_end = positive(d, "end_tau1", "subdynamics", 0.5);
    if (s.window_start < 0.0) bad("subdynamics.start_tau0", "must be >= 0");
  } else if (s.kind == "trajectories") {
    const json& d = block(c, "trajectories", true);
    only_keys(d, "trajectories", {"count", "t_end", "samples", "max_events"});
    s.count = static_cast<int>(integer(d, "count", "trajectories", 1000, 1));
    s.t_end = positive(d, "t_end", "trajectories");
    s.samples = static_cast<int>(integer(d, "samples", "trajectories", 5, 1));
    s.max_events = static_cast<int>(integer(d, "max_events", "trajectories", 3, 0));
  } else if (s.kind == "kinetics") {
    const json& d = block(c, "kinetics", true);
    only_keys(d, "kinetics",
              {"epsilon", "born_only", "beta", "mu", "shell", "substitute", "tau1", "audit_tau", "draws"});
    s.kinetics.epsilon = positive(d, "epsilon", "kinetics", 1.0);
    s.kinetics.born_only = boolean(d, "born_only", "kinetics", false);
    s.kinetics.beta = positive(d, "beta", "kinetics");
    s.kinetics.mu = number(d, "mu", "kinetics");
    s.kinetics.shell = number(d, "shell", "kinetics", -1.0);
    s.kinetics.substitute = boolean(d, "substitute", "kinetics", true);
    s.kinetics.tau1 = number(d, "tau1", "kinetics", 0.0);
    s.kinetics.audit_tau = positive(d, "audit_tau", "kinetics", 0.01);
    s.kinetics.draws = static_cast<int>(integer(d, "draws", "kinetics", 100, 1));
  } else if (s.kind == "thermo") {
    const json& d = block(c, "thermo", true);
    only_keys(d, "thermo", {"cells", "fields", "t_end", "steps", "reference", "epsilon", "shell"});
    s.cells = static_cast<int>(integer(d, "cells", "thermo", 2, 1));
    s.fields = parse_fields(block(d, "fields", true), "thermo.fields", static_cast<std::size_t>(s.cells), true);
    s.thermo_end = positive(d, "t_end", "thermo");
    s.thermo_steps = static_cast<int>(integer(d, "steps", "thermo", 10, 1));
    const json* ref = find(d, "reference");
    if (!ref || !ref->is_object()) bad("thermo.reference", "required object {beta, mu} missing");
    only_keys(*ref, "thermo.reference", {"beta", "mu"});
    s.kinetics.beta = positive(*ref, "beta", "thermo.reference");
    s.kinetics.mu = number(*ref, "mu", "thermo.reference");
    s.kinetics.epsilon = positive(d, "epsilon", "thermo", 3.0);
    s.kinetics.shell = number(d, "shell", "thermo", 1e-9);
  } else if (s.kind == "memory") {
    const json& d = block(c, "memory", true);
    only_keys(d, "memory", {"cells", "step", "history", "times", "order"});
    s.cells = static_cast<int>(integer(d, "cells", "memory", 2, 1));
    s.step = positive(d, "step", "memory");
    const json* h = find(d, "history");
    if (!h || !h->is_array() || h->size() < 2) bad("memory.history", "expected at least two field samples");
    for (std::size_t i = 0; i < h->size(); ++i)
      s.history.push_back(parse_fields((*h)[i], "memory.history." + std::to_string(i),
                                       static_cast<std::size_t>(s.cells), false));
    s.times = numbers(d, "times", "memory", true);
    const double t_max = s.step * static_cast<double>(s.history.size() - 1);
    for (double t : s.times)
      if (t < 0.0 || t > t_max) bad("memory.times", "outside the history [0, " + io::format_double(t_max) + "]");
    s.order = static_cast<int>(integer(d, "order", "memory", 16, 1));
  }
  for (const auto& k : kinds)
    if (k != s.kind && find(c, k)) bad(k, "block does not belong to a " + s.kind + " run");

  if (!micro_kind) {
    const std::size_t M = mode_count(s);
    if (s.fock.n_max > static_cast<int>(M) && s.fock.statistics == fock::Statistics::Fermi)
      bad("fock.n_max", "exceeds the number of modes for fermions");
  }

  s.tolerances = default_tolerances.at(s.kind);
  const json& t = block(c, "tolerances", false);
  for (auto it = t.begin(); it != t.end(); ++it) {
    if (!s.tolerances.count(it.key())) bad("tolerances." + it.key(), "not a check of " + s.kind + " runs");
    s.tolerances[it.key()] = number(t, it.key(), "tolerances");
  }

  s.outputs = {{"series", default_outputs.at(s.kind)}};
  const json& o = block(c, "outputs", false);
  only_keys(o, "outputs", {"series"});
  if (find(o, "series")) {
    const std::string name = text(o, "series", "outputs");
    const fs::path pth(name);
    if (name.empty() || pth.is_absolute() || pth.has_parent_path() || name == "manifest.json" || name == "." ||
        name == "..")
      bad("outputs.series", "must be a plain file name");
    s.outputs["series"] = name;
  }
  return s;
}

void set_path(json& config, const std::string& path, const json& value) {
  if (path.empty()) throw ValidationError("empty parameter path");
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ValidationError("bad parameter path '" + path + "'");
    const bool last = dot == std::string::npos;
    if (node->is_array()) {
      std::size_t i = 0;
      try {
        std::size_t used = 0;
        i = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ValidationError("parameter path '" + path + "': '" + key + "' is not an index");
      }
      if (i >= node->size()) throw ValidationError("parameter path '" + path + "': index out of range");
      node = &(*node)[i];
    } else if (node->is_object()) {
      if (!last && !node->contains(key)) throw ValidationError("parameter path '" + path + "' not addressable");
      node = &(*node)[key];
    } else {
      throw ValidationError("parameter path '" + path + "' not addressable");
    }
    if (last) break;
    start = dot + 1;
  }
  *node = value;
}

namespace {

struct SystemSetup {
  modes::ModeBasis basis;
  fock::FockSpace space;
  modes::PotentialTensor V;
};

SystemSetup system_setup(const Scenario& s) {
  SystemSetup d;
  auto full = modes::build_box_basis(s.basis.dimension, s.basis.lengths, s.basis.cutoff, s.basis.mass,
                                     {64, 64, s.hbar});
  d.basis = s.basis.keep.empty() ? full : modes::select_modes(full, s.basis.keep);
  const int M = static_cast<int>(d.basis.size());
  d.space = fock::enumerate_basis(s.fock.statistics, M, s.fock.n_max < 0 ? M : s.fock.n_max, s.fock.n_cap);
  d.V = s.potential.shape == modes::PotentialShape::None ? modes::zero_tensor(d.basis.size())
                                                          : modes::potential_tensor(d.basis, s.potential);
  return d;
}

struct MicroSetup {
  lindblad::MicroEmbedding emb;
  lindblad::MicroCoefficients coeff;
  lindblad::LindbladGenerator gen;
};

MicroSetup micro_setup(const Scenario& s) {
  const int M = static_cast<int>(s.micro.energies.size());
  auto macro = lindblad::random_bath(s.micro.bath_levels, M, s.micro.coupling, *s.seed, s.micro.internal);
  MicroSetup m{lindblad::build_embedding(s.micro.energies, macro, s.micro.beta, s.hbar), {}, {}};
  lindblad::MicroOptions mo;
  mo.epsilon = s.epsilon.value;
  mo.tau0 = s.epsilon.tau0;
  mo.tau1 = s.epsilon.tau1;
  mo.check_window = s.epsilon.check_window;
  m.coeff = lindblad::micro_coefficients(m.emb, mo);
  m.gen = lindblad::micro_generator(m.emb, m.coeff);
  return m;
}

std::vector<double> occupations(const Scenario& s, const std::vector<double>& E) {
  return s.fock.statistics == fock::Statistics::Fermi ? kinetics::fermi_dirac(E, s.kinetics.beta, s.kinetics.mu)
                                                      : kinetics::bose_einstein(E, s.kinetics.beta, s.kinetics.mu);
}

kinetics::KineticGenerator kinetic_generator(const Scenario& s, const SystemSetup& d, std::vector<double>& n) {
  n = occupations(s, d.basis.energies);
  auto pb = scattering::make_pair_basis(s.fock.statistics, static_cast<int>(d.basis.size()));
  lindblad::KineticOptions ko;
  ko.epsilon = s.kinetics.epsilon;
  ko.hbar = s.hbar;
  ko.born_only = s.kinetics.born_only;
  auto kops = lindblad::build_heff_gamma_R_kinetic(pb, d.basis.energies, d.V, n, ko);
  kinetics::KineticConfig kc;
  kc.tau1 = s.kinetics.tau1;
  kc.substitute = s.kinetics.substitute;
  kc.shell = s.kinetics.shell;
  return kinetics::make_kinetic_generator(d.space, kops, kc);
}

void check(RunResult& r, const Scenario& s, const std::string& key, double value) {
  const double bound = s.tolerances.at(key);
  if (std::isnan(bound)) return;
  r.assertions.push_back({key, value, bound, !lower_bounds.count(key)});
}

RunResult run_subdynamics(const Scenario& s) {
  RunResult r;
  auto m = micro_setup(s);
  dynamics::SubdynamicsOptions o;
  const double t0 = s.window_start * m.coeff.tau0, t1 = s.window_end * m.coeff.tau1;
  if (!(t1 > t0)) throw ValidationError("subdynamics: empty sampling window");
  for (int i = 0; i <= s.samples; ++i) o.times.push_back(t0 + i * (t1 - t0) / s.samples);
  if (s.epsilon.check_window) {
    o.tau0 = m.coeff.tau0;
    o.tau1 = m.coeff.tau1;
  }
  const int M = static_cast<int>(s.micro.energies.size());
  auto rep = dynamics::subdynamics_compare(m.emb, m.gen, s.micro.initial, dynamics::population_observables(M), o);

  r.summary = {{"epsilon", m.coeff.epsilon},
               {"tau0", m.coeff.tau0},
               {"tau1", m.coeff.tau1},
               {"delta", m.coeff.delta},
               {"raw_trace_residual", m.coeff.raw_trace_residual},
               {"max_deviation", rep.max_deviation},
               {"max_abs_deviation", rep.max_abs_deviation},
               {"max_signal", rep.max_signal},
               {"number_drift_exact", rep.number_drift_exact},
               {"number_drift_reduced", rep.number_drift_reduced},
               {"window_ok", rep.window_ok ? 1.0 : 0.0}};
  check(r, s, "max_deviation", rep.max_deviation);
  if (!rep.window_ok) {
    r.valid = false;
    r.validity_note = rep.window_note;
  }
  io::CsvTable t;
  t.header = {"time"};
  for (const auto& l : rep.labels)
    for (const char* part : {"_exact", "_reduced", "_free"}) t.header.push_back(l + part);
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    std::vector<double> row{rep.times[i]};
    for (std::size_t k = 0; k < rep.labels.size(); ++k) {
      row.push_back(rep.exact[k][i]);
      row.push_back(rep.reduced[k][i]);
      row.push_back(rep.free[k][i]);
    }
    t.add(row);
  }
  r.tables.emplace_back("series", std::move(t));
  return r;
}

RunResult run_trajectories(const Scenario& s, int threads) {
  RunResult r;
  auto m = micro_setup(s);
  std::vector<double> times;
  for (int i = 1; i <= s.samples; ++i) times.push_back(s.t_end * i / s.samples);
  trajectories::UnravelOptions uo;
  uo.sample_times = times;
  uo.threads = std::max(1, threads);
  auto ens = trajectories::unravel(m.gen, s.micro.initial, 0.0, s.t_end, s.count, *s.seed, uo);
  auto master = dynamics::evolve_master(m.gen, s.micro.initial, times);

  io::CsvTable t;
  t.header = {"time", "trace_gap", "sigma"};
  double max_gap = 0.0, max_ratio = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double gap = trajectories::trace_norm(ens.mean[i] - master.states[i]);
    const double sigma = ens.sigma[i];
    max_gap = std::max(max_gap, gap);
    max_ratio = std::max(max_ratio, gap <= 1e-12 ? 0.0 : gap / std::max(sigma, 1e-300));
    t.add({times[i], gap, sigma});
  }
  auto sub = trajectories::subcollections(m.gen, s.micro.initial, s.t_end, s.max_events);
  const double sub_gap = trajectories::trace_norm(sub.sum() - master.states.back());
  double jumps = 0.0;
  for (const auto& rec : ens.records) jumps += static_cast<double>(rec.events.size());

  r.summary = {{"epsilon", m.coeff.epsilon},
               {"tau0", m.coeff.tau0},
               {"max_trace_gap", max_gap},
               {"max_sigma_ratio", max_ratio},
               {"subcollection_gap", sub_gap},
               {"remainder", sub.remainder},
               {"mean_jumps", jumps / s.count},
               {"rejected_steps", static_cast<double>(ens.rejected_steps)}};
  check(r, s, "sigma_ratio", max_ratio);
  r.assertions.push_back({"subcollection", sub_gap, sub.remainder + s.tolerances.at("subcollection"), true});
  r.tables.emplace_back("series", std::move(t));
  return r;
}

RunResult run_kinetics(const Scenario& s) {
  RunResult r;
  auto d = system_setup(s);
  std::vector<double> n;
  auto kin = kinetic_generator(s, d, n);
  Mat w = kinetics::product_state(d.space, n);
  auto audit = kinetics::conservation_and_positivity(kin, s.kinetics.audit_tau, w, s.kinetics.draws,
                                                     s.seed.value_or(1));
  auto rates = kinetics::collision_rates(kin, w);
  double max_rate = 0.0;
  for (double x : rates) max_rate = std::max(max_rate, std::abs(x));
  r.summary = {{"mass_residual", audit.mass_residual},
               {"energy_residual", audit.energy_residual},
               {"energy_relative", audit.energy_relative},
               {"collision_rate", audit.collision_rate},
               {"positivity_min_form", audit.positivity_min_form},
               {"positivity_min_eig", audit.positivity_min_eig},
               {"max_mode_rate", max_rate},
               {"gamma_mismatch", kin.ops.gamma_mismatch},
               {"gamma_mismatch_shell", kin.ops.gamma_mismatch_shell}};
  check(r, s, "mass_residual", audit.mass_residual);
  check(r, s, "positivity", audit.positivity_min_form);
  check(r, s, "collision_rate", max_rate);
  check(r, s, "energy_relative", audit.energy_relative);
  io::CsvTable t;
  t.header = {"mode", "energy", "occupation", "rate"};
  for (std::size_t h = 0; h < n.size(); ++h) t.add({static_cast<double>(h), d.basis.energies[h], n[h], rates[h]});
  r.tables.emplace_back("series", std::move(t));
  return r;
}

thermo::ThermoState to_state(const thermo::CellGrid& g, const Fields& f) {
  thermo::ThermoState st;
  st.grid = g;
  st.beta = f.beta;
  st.mu = f.mu;
  st.v = f.v;
  return st;
}

RunResult run_thermo(const Scenario& s) {
  RunResult r;
  auto d = system_setup(s);
  if (d.basis.dimension != 1) throw ValidationError("thermo: cells need a 1D basis");
  auto grid = thermo::uniform_cells(d.basis, s.cells);
  auto ops = thermo::build_density_operators(d.space, d.basis, grid, modes::PotentialTensor{});
  std::vector<double> n;
  auto kin = kinetic_generator(s, d, n);
  std::vector<double> times;
  for (int i = 0; i <= s.thermo_steps; ++i) times.push_back(s.thermo_end * i / s.thermo_steps);
  thermo::ThermoOptions o;
  o.hamiltonian = fock::build_hamiltonian(d.space, d.basis.energies, d.V).dense();
  auto series = thermo::evolve_thermo(to_state(grid, s.fields), ops, kin, times, o);
  if (!series.completed) {
    r.valid = false;
    r.validity_note = "field fit failed: " + series.failure;
  }
  double min_step = std::numeric_limits<double>::infinity(), ham = 0.0, kinf = 0.0;
  for (std::size_t i = 1; i < series.entropy.size(); ++i)
    min_step = std::min(min_step, series.entropy[i] - series.entropy[i - 1]);
  for (double x : series.hamiltonian_flux) ham = std::max(ham, x);
  for (double x : series.kinetic_flux) kinf = std::max(kinf, x);
  if (!std::isfinite(min_step)) min_step = 0.0;
  r.summary = {{"entropy_initial", series.entropy.front()},
               {"entropy_final", series.entropy.back()},
               {"min_entropy_step", min_step},
               {"max_hamiltonian_flux", ham},
               {"max_kinetic_flux", kinf},
               {"max_mismatch", series.max_mismatch},
               {"completed", series.completed ? 1.0 : 0.0}};
  check(r, s, "entropy_step", min_step);
  check(r, s, "hamiltonian_flux", ham);
  check(r, s, "mismatch", series.max_mismatch);

  io::CsvTable t;
  t.header = {"time", "entropy", "entropy_production", "hamiltonian_flux", "kinetic_flux"};
  for (int c = 0; c < s.cells; ++c)
    for (const char* f : {"beta_", "mu_", "v_"}) t.header.push_back(f + std::to_string(c));
  for (std::size_t i = 0; i < series.states.size(); ++i) {
    std::vector<double> row{series.times[i], series.entropy[i], series.entropy_production[i],
                            series.hamiltonian_flux[i], series.kinetic_flux[i]};
    for (int c = 0; c < s.cells; ++c) {
      row.push_back(series.states[i].beta[c]);
      row.push_back(series.states[i].mu[c]);
      row.push_back(series.states[i].v[c]);
    }
    t.add(row);
  }
  r.tables.emplace_back("series", std::move(t));
  return r;
}

RunResult run_memory(const Scenario& s) {
  RunResult r;
  auto d = system_setup(s);
  if (d.basis.dimension != 1) throw ValidationError("memory: cells need a 1D basis");
  auto grid = thermo::uniform_cells(d.basis, s.cells);
  auto ops = thermo::build_density_operators(d.space, d.basis, grid, d.V);
  Mat H = fock::build_hamiltonian(d.space, d.basis.energies, d.V).dense();
  thermo::MemoryHistory h;
  h.step = s.step;
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    h.times.push_back(s.step * static_cast<double>(i));
    h.states.push_back(to_state(grid, s.history[i]));
  }
  thermo::MemoryOptions mo;
  mo.order = s.order;
  io::CsvTable t;
  t.header = {"time", "agreement", "exponent_gap", "bulk_norm", "gradient_norm", "boundary_norm"};
  double worst = 0.0, gap = 0.0;
  for (double time : s.times) {
    auto m = thermo::memory_state(h, ops, H, time, mo);
    worst = std::max(worst, m.agreement);
    gap = std::max(gap, m.exponent_gap);
    auto norm = [](const Mat& a) { return a.size() ? a.norm() : 0.0; };
    t.add({time, m.agreement, m.exponent_gap, norm(m.bulk), norm(m.gradient), norm(m.boundary)});
  }
  r.summary = {{"max_agreement", worst}, {"max_exponent_gap", gap}, {"dimension", static_cast<double>(d.space.dim())}};
  check(r, s, "agreement", worst);
  r.tables.emplace_back("series", std::move(t));
  return r;
}

json versions() {
  return {{"subdyn", version},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

RunResult execute(const Scenario& s, int threads) {
  if (s.kind == "subdynamics") return run_subdynamics(s);
  if (s.kind == "trajectories") return run_trajectories(s, threads);
  if (s.kind == "kinetics") return run_kinetics(s);
  if (s.kind == "thermo") return run_thermo(s);
  return run_memory(s);
}

json error_record(int code, const std::string& message) {
  const char* kind = code == validation ? "validation" : code == numerical ? "numerical" : "assertion";
  return {{"code", code}, {"kind", kind}, {"message", message}};
}

int exit_code(const RunResult& r) {
  if (!r.valid) return numerical;
  for (const auto& a : r.assertions)
    if (!a.pass()) return assertion;
  return ok;
}

Outcome run_to_dir(const Scenario& s, const fs::path& out_dir, int threads) {
  fs::create_directories(out_dir);
  Outcome out;
  json& m = out.manifest;
  m["name"] = s.name;
  m["kind"] = s.kind;
  m["config"] = s.config;
  m["versions"] = versions();
  m["seed"] = s.seed ? json(*s.seed) : json(nullptr);
  m["summary"] = json::object();
  m["assertions"] = json::array();
  m["outputs"] = json::array();
  m["error"] = nullptr;
  try {
    RunResult r = execute(s, threads);
    for (const auto& [k, v] : r.summary) m["summary"][k] = number_or_null(v);
    for (const auto& a : r.assertions)
      m["assertions"].push_back({{"name", a.name},
                                 {"value", number_or_null(a.value)},
                                 {"bound", a.bound},
                                 {"relation", a.upper ? "<=" : ">="},
                                 {"pass", a.pass()}});
    for (const auto& [key, table] : r.tables) {
      const std::string file = s.outputs.at(key);
      io::write_csv(out_dir / file, table);
      m["outputs"].push_back({{"key", key}, {"file", file}, {"rows", table.rows.size()}});
    }
    out.code = exit_code(r);
    if (out.code == numerical) {
      m["error"] = error_record(out.code, r.validity_note.empty() ? "numerical validity flag" : r.validity_note);
    } else if (out.code == assertion) {
      std::string failed;
      for (const auto& a : r.assertions)
        if (!a.pass()) failed += (failed.empty() ? "" : ", ") + a.name;
      m["error"] = error_record(out.code, "assertion failed: " + failed);
    }
  } catch (const ValidationError& e) {
    out.code = validation;
    m["error"] = error_record(out.code, e.what());
  } catch (const NumericalError& e) {
    out.code = numerical;
    m["error"] = error_record(out.code, e.what());
  } catch (const AssertionFailure& e) {
    out.code = assertion;
    m["error"] = error_record(out.code, e.what());
  } catch (const std::exception& e) {
    out.code = assertion;
    m["error"] = error_record(out.code, std::string("unexpected failure: ") + e.what());
  }
  m["status"] = out.code == ok ? "ok" : "failed";
  m["exit_code"] = out.code;
  std::ofstream f(out_dir / "manifest.json");
  f << m.dump(2) << '\n';
  return out;
}

std::vector<SweepRow> sweep(const json& config, const std::string& param, const std::vector<json>& values,
                            const fs::path& out_dir, int threads) {
  if (param.empty()) throw ValidationError("sweep needs --param");
  {
    json probe = config;
    set_path(probe, param, values.empty() ? json(nullptr) : values.front());
  }
  fs::create_directories(out_dir);
  std::vector<SweepRow> rows(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < values.size();) {
      SweepRow& row = rows[i];
      row.value = values[i];
      try {
        json c = config;
        set_path(c, param, values[i]);
        Scenario s = parse_scenario(c);
        auto o = run_to_dir(s, out_dir / ("run_" + std::to_string(i)), 1);
        row.code = o.code;
        for (auto it = o.manifest["summary"].begin(); it != o.manifest["summary"].end(); ++it)
          row.summary[it.key()] = it->is_number() ? it->get<double>() : std::numeric_limits<double>::quiet_NaN();
        if (!o.manifest["error"].is_null()) row.error = o.manifest["error"]["message"].get<std::string>();
      } catch (const ValidationError& e) {
        row.code = validation;
        row.error = e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(values.size())));
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::set<std::string> keys;
  for (const auto& r : rows)
    for (const auto& [k, v] : r.summary) keys.insert(k);
  io::CsvTable t;
  t.header = {"index", "param", "value", "exit_code", "status"};
  t.header.insert(t.header.end(), keys.begin(), keys.end());
  t.header.push_back("error");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::vector<std::string> cells{std::to_string(i), param, r.value.is_string() ? r.value.get<std::string>() : r.value.dump(),
                                   std::to_string(r.code), r.code == ok ? "ok" : "failed"};
    for (const auto& k : keys) {
      auto it = r.summary.find(k);
      cells.push_back(it == r.summary.end() || std::isnan(it->second) ? "" : io::format_double(it->second));
    }
    cells.push_back(r.error);
    t.rows.push_back(std::move(cells));
  }
  io::write_csv(out_dir / "sweep.csv", t);
  return rows;
}

json dump_ops(const Scenario& s, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  json m = {{"name", s.name}, {"kind", s.kind}, {"versions", versions()}, {"operators", json::array()}};
  auto add = [&](const std::string& stem, const io::OperatorDump& d, const std::string& role) {
    io::write_operator(out_dir, stem, d);
    m["operators"].push_back({{"label", d.label}, {"role", role}, {"header", stem + ".json"}, {"blob", stem + ".bin"}});
  };
  if (s.kind == "subdynamics" || s.kind == "trajectories") {
    auto mi = micro_setup(s);
    // one-particle generator; the space descriptor is the single-particle sector
    const int M = static_cast<int>(s.micro.energies.size());
    fock::FockSpace one;
    one.statistics = s.fock.statistics;
    one.modes = M;
    one.n_max = 1;
    one.n_cap = 1;
    add("H_eff", io::make_dump("H_eff", one, mi.gen.H_eff, 0), "hamiltonian");
    add("Q", io::make_dump("Q", one, mi.gen.Q, 0), "optical potential");
    for (std::size_t j = 0; j < mi.gen.jumps.size(); ++j)
      add("jump_" + std::to_string(j), io::make_dump(mi.gen.jumps[j].label, one, mi.gen.jumps[j].op, 0), "jump");
    m["epsilon"] = mi.coeff.epsilon;
    m["tau0"] = mi.coeff.tau0;
    return m;
  }
  auto d = system_setup(s);
  add("hamiltonian", io::make_dump("H", d.space, fock::build_hamiltonian(d.space, d.basis.energies, d.V)),
      "hamiltonian");
  add("number", io::make_dump("N", d.space, fock::charge_operators(d.space, d.basis.mass).number), "charge");
  for (int f = 0; f < d.space.modes; ++f)
    add("a_" + std::to_string(f), io::make_dump("a_" + std::to_string(f), d.space, fock::annihilate(d.space, f)),
        "annihilator");
  return m;
}

}  // namespace subdyn::cli
