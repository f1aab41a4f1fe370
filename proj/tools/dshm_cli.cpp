// Command-line front end: validate, run, compare, plot.
#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dshm/cli_harness.hpp"

namespace {

using dshm::ordered_json;

int fail(const std::string& code, const std::string& message, const std::vector<std::string>& issues = {},
         int status = 1) {
  ordered_json e = {{"code", code}, {"message", message}};
  if (!issues.empty()) e["issues"] = issues;
  std::cerr << ordered_json{{"error", e}}.dump(2) << "\n";
  return status;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// "1-20" or "1,4,9"
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(s, ',')) {
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto a = std::stoull(part.substr(0, dash)), b = std::stoull(part.substr(dash + 1));
        if (b < a) throw dshm::Error("usage.seeds", "seed range '" + part + "' runs backwards");
        for (auto v = a; v <= b; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw dshm::Error("usage.seeds", "cannot read seed list '" + s + "'");
    }
  }
  if (out.empty()) throw dshm::Error("usage.seeds", "empty seed list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dshm: simulated wireless structural health monitoring"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", modes_arg, seeds_arg, run_dir, which, mode_arg;
  std::uint64_t seed = 0;

  auto* validate = app.add_subcommand("validate", "check a scenario config and print it with all defaults");
  validate->add_option("config", config_path, "scenario config (JSON)")->required();

  auto* run = app.add_subcommand("run", "run one seeded scenario and write its CSV artifacts");
  run->add_option("config", config_path, "scenario config (JSON)")->required();
  auto* seed_opt = run->add_option("--seed", seed, "seed, overrides the config");
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--mode", mode_arg, "mode, overrides the config");

  auto* compare = app.add_subcommand("compare", "run several modes on identical seeds");
  compare->add_option("config", config_path, "scenario config (JSON)")->required();
  compare->add_option("--modes", modes_arg, "comma separated modes")->required();
  compare->add_option("--seeds", seeds_arg, "seed list such as 1-20 or 3,5 (default: config seed)");
  compare->add_option("--out", out_dir, "directory for comparison.csv");

  auto* plot = app.add_subcommand("plot", "write plot data from a run directory");
  plot->add_option("run_dir", run_dir, "directory written by run")->required();
  plot->add_option("--which", which, "plot key")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), {}, 64);
  }

  try {
    if (*validate) {
      const auto cfg = dshm::load_config(config_path);
      std::cout << ordered_json{{"status", "ok"}, {"config", dshm::to_json(cfg)}}.dump(2) << "\n";
      return 0;
    }
    if (*run) {
      auto cfg = dshm::load_config(config_path);
      if (*seed_opt) cfg.seed = seed;
      if (!mode_arg.empty()) {
        const auto m = dshm::parse_mode(mode_arg);
        if (!m) throw dshm::Error("usage.mode", "unknown mode '" + mode_arg + "'");
        cfg.mode = *m;
      }
      const auto res = dshm::run_scenario(cfg);
      dshm::write_run(res, out_dir);
      std::cout << ordered_json{{"status", "ok"},
                                {"out", out_dir},
                                {"summary", dshm::summary_json(res.summary)}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (*compare) {
      const auto cfg = dshm::load_config(config_path);
      std::vector<dshm::Mode> modes;
      for (const auto& name : split(modes_arg, ',')) {
        const auto m = dshm::parse_mode(name);
        if (!m) {
          std::string list;
          for (const auto& k : dshm::mode_names()) list += (list.empty() ? "" : ", ") + k;
          throw dshm::Error("usage.mode", "unknown mode '" + name + "'; available: " + list);
        }
        modes.push_back(*m);
      }
      const auto seeds = seeds_arg.empty() ? std::vector<std::uint64_t>{cfg.seed} : parse_seeds(seeds_arg);
      const auto rows = dshm::compare_schemes(cfg, modes, seeds);
      const std::string table = dshm::render_comparison(rows);
      std::filesystem::create_directories(out_dir);
      std::ofstream(std::filesystem::path(out_dir) / "comparison.csv", std::ios::binary) << table;
      std::cout << table;
      return 0;
    }
    if (*plot) {
      const auto path = dshm::emit_plotdata(run_dir, which);
      std::cout << ordered_json{{"status", "ok"}, {"file", path.string()}}.dump(2) << "\n";
      return 0;
    }
  } catch (const dshm::ConfigError& e) {
    return fail(e.code(), e.what(), e.issues(), 2);
  } catch (const dshm::Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
