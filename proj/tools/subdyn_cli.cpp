// subdyn_cli.cpp: Scenario runner: run, sweep, validate, dump-ops.
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "scenario.hpp"

using namespace subdyn;
using namespace subdyn::cli;

namespace {

struct Common {
  std::string config;
  std::string out_dir = "out";
  long long seed = -1;
  int threads = 1;
};

void add_common(CLI::App* app, Common& c, bool outputs) {
  app->add_option("--config", c.config, "scenario JSON file")->required()->envname("SUBDYN_CONFIG");
  app->add_option("--seed", c.seed, "overrides the scenario seed")->envname("SUBDYN_SEED");
  if (outputs) {
    app->add_option("--out-dir", c.out_dir, "artifact directory")->envname("SUBDYN_OUT_DIR");
    app->add_option("--threads", c.threads, "worker threads")->envname("SUBDYN_THREADS")->check(CLI::Range(1, 4096));
  }
}

json load(const Common& c) {
  json cfg = load_json(c.config);
  if (c.seed >= 0) {
    if (!cfg.is_object()) throw ValidationError("config: top level must be an object");
    cfg["seed"] = c.seed;
  }
  return cfg;
}

int report(int code, const std::string& message) {
  std::cerr << error_record(code, message).dump() << '\n';
  return code;
}

// --values takes a comma-separated list; each item is read as JSON and falls
// back to a plain string.
std::vector<json> parse_values(const std::string& text) {
  std::vector<json> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
    item = a == std::string::npos ? "" : item.substr(a, b - a + 1);
    if (!item.empty()) {
      json v = json::parse(item, nullptr, false);
      out.push_back(v.is_discarded() ? json(item) : v);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subdyn: microsystem subdynamics, kinetics and thermodynamics scenarios"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version));

  Common run_o, sweep_o, val_o, dump_o;
  auto* run = app.add_subcommand("run", "run one scenario");
  add_common(run, run_o, true);
  auto* sw = app.add_subcommand("sweep", "run a scenario once per parameter value");
  add_common(sw, sweep_o, true);
  std::string param, values;
  sw->add_option("--param", param, "dotted path into the config, e.g. micro.coupling")
      ->required()
      ->envname("SUBDYN_PARAM");
  sw->add_option("--values", values, "comma-separated values (may be empty)")->envname("SUBDYN_VALUES");
  auto* val = app.add_subcommand("validate", "check a scenario against the schema");
  add_common(val, val_o, false);
  auto* dump = app.add_subcommand("dump-ops", "write the scenario's operators as JSON headers and binary blobs");
  add_common(dump, dump_o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return report(validation, e.what());
  }

  try {
    if (*run) {
      Scenario s = parse_scenario(load(run_o));
      auto out = run_to_dir(s, run_o.out_dir, run_o.threads);
      std::cout << json{{"name", s.name},
                        {"status", out.manifest["status"]},
                        {"exit_code", out.code},
                        {"summary", out.manifest["summary"]},
                        {"manifest", (fs::path(run_o.out_dir) / "manifest.json").string()}}
                       .dump()
                << '\n';
      if (out.code != ok) std::cerr << out.manifest["error"].dump() << '\n';
      return out.code;
    }
    if (*sw) {
      json cfg = load(sweep_o);
      parse_scenario(cfg);
      auto rows = cli::sweep(cfg, param, parse_values(values), sweep_o.out_dir, sweep_o.threads);
      int failed = 0;
      for (const auto& r : rows) failed += r.code != ok;
      std::cout << json{{"rows", rows.size()},
                        {"failed", failed},
                        {"table", (fs::path(sweep_o.out_dir) / "sweep.csv").string()}}
                       .dump()
                << '\n';
      return ok;
    }
    if (*val) {
      Scenario s = parse_scenario(load(val_o));
      std::cout << json{{"name", s.name}, {"kind", s.kind}, {"valid", true}}.dump() << '\n';
      return ok;
    }
    Scenario s = parse_scenario(load(dump_o));
    json m = dump_ops(s, dump_o.out_dir);
    std::ofstream(fs::path(dump_o.out_dir) / "operators.json") << m.dump(2) << '\n';
    std::cout << json{{"name", s.name}, {"operators", m["operators"].size()}}.dump() << '\n';
    return ok;
  } catch (const ValidationError& e) {
    return report(validation, e.what());
  } catch (const NumericalError& e) {
    return report(numerical, e.what());
  } catch (const AssertionFailure& e) {
    return report(assertion, e.what());
  } catch (const std::exception& e) {
    return report(assertion, std::string("unexpected failure: ") + e.what());
  }
}
