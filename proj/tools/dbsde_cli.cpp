// Experiment front-end: run, converge, validate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "dbsde/experiment.hpp"

namespace {

enum Exit { kOk = 0, kValidation = 1, kNumerical = 2 };

int fail(const std::exception& e) {
  std::cerr << dbsde::error_record(e).dump() << "\n";
  if (const auto* de = dynamic_cast<const dbsde::Error*>(&e))
    return de->kind() == dbsde::ErrorKind::Validation ? kValidation : kNumerical;
  return kNumerical;
}

int cmd_run(const std::string& config, const std::string& out_dir) {
  const auto cfg = dbsde::load_config(config);
  const auto art = dbsde::run_experiment(cfg);
  const auto dir = dbsde::resolve_output_dir(cfg, out_dir);
  dbsde::Json report{{"name", cfg.name}, {"y0", art.summary["y0"]}, {"files", dbsde::Json::array()}};
  if (art.summary["oracle"]["available"].get<bool>()) report["oracle_match"] = art.summary["oracle"]["match"];
  for (const auto& f : dbsde::write_artifacts(cfg, art, dir)) report["files"].push_back(f.string());
  std::cout << report.dump(2) << "\n";
  return kOk;
}

int cmd_converge(const std::string& config, const std::string& schedule, const std::string& out_dir) {
  const auto cfg = dbsde::load_config(config);
  const auto rows = dbsde::load_schedule(schedule, cfg.paths);
  const auto table = dbsde::convergence_study(cfg, rows);
  const auto csv = dbsde::convergence_csv(table);
  const auto dir = dbsde::resolve_output_dir(cfg, out_dir);
  std::filesystem::create_directories(dir);
  const auto file = dir / (cfg.name + ".convergence.csv");
  std::ofstream(file, std::ios::binary) << csv;
  std::cout << csv;
  std::cout << dbsde::Json{{"oracle_y0", table.oracle_y0}, {"monotone", table.monotone}, {"file", file.string()}}.dump()
            << "\n";
  return kOk;
}

int cmd_validate(const std::string& config) {
  const auto cfg = dbsde::load_config(config);
  std::cout << dbsde::Json{{"valid", true}, {"name", cfg.name}, {"oracle", dbsde::oracle_case(cfg).has_value()}}.dump()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hedging of defaultable claims by BSDEs with random horizon"};
  app.require_subcommand(1);
  std::string config, schedule, out_dir;

  auto* run = app.add_subcommand("run", "solve one configuration and write its summary");
  run->add_option("config", config, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (default: config, then $DBSDE_OUTPUT_DIR, then ./results)");

  auto* converge = app.add_subcommand("converge", "grid/path refinement study against the closed form");
  converge->add_option("config", config, "experiment config (JSON)")->required();
  converge->add_option("--schedule", schedule, "JSON list of {N, paths}")->required();
  converge->add_option("--out", out_dir, "output directory");

  auto* check = app.add_subcommand("validate", "check a configuration without running it");
  check->add_option("config", config, "experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*run) return cmd_run(config, out_dir);
    if (*converge) return cmd_converge(config, schedule, out_dir);
    return cmd_validate(config);
  } catch (const std::exception& e) {
    return fail(e);
  }
}
