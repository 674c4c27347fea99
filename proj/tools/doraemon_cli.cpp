// Command-line front end: run, sweep, eval and grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "doraemon/harness.hpp"

namespace fs = std::filesystem;
using namespace doraemon;

namespace {

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

void print_run(const RunLog& log) {
  std::printf("seed %llu: %s  best global success %.3f at iter %d, final entropy %.4f\n",
              static_cast<unsigned long long>(log.seed), log.failed ? ("FAILED (" + log.error + ")").c_str() : "ok",
              log.best_global_success(), log.summary.value("best_iteration", -1), log.final_entropy());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-maximizing domain randomization experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run every seed of an experiment config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "Run a config once per value of one axis");
  sweep->add_option("--config", config_path, "Base experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", axis, "alpha | epsilon | J_LB | family")->required();
  sweep->add_option("--values", values, "Comma-separated axis values")->required();

  std::string snapshot_path;
  int n_eval = 500;
  std::uint64_t seed = 0;
  auto* eval = app.add_subcommand("eval", "Global success rate of a policy snapshot");
  eval->add_option("--snapshot", snapshot_path, "Snapshot JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--n", n_eval, "Evaluation episodes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "Evaluation seed");

  std::string dims, out_prefix;
  int size = 20, repeats = 0;
  auto* grid = app.add_subcommand("grid", "Evaluate a snapshot on a 1-D or 2-D dynamics grid");
  grid->add_option("--snapshot", snapshot_path, "Snapshot JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--dims", dims, "Dimension indices, e.g. 0,1 (a single index for 1-D)")->required();
  grid->add_option("--size", size, "Points per grid axis")->check(CLI::PositiveNumber);
  grid->add_option("--repeats", repeats, "Episodes per cell (default from the snapshot)");
  grid->add_option("--seed", seed, "Evaluation seed");
  grid->add_option("--out", out_prefix, "Output prefix for <prefix>_return.csv and <prefix>_success.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = load_config(config_path);
      const auto logs = run_experiment(cfg);
      bool failed = false;
      for (const auto& log : logs) {
        print_run(log);
        failed |= log.failed;
      }
      std::printf("logs in %s\n", cfg.output_dir.c_str());
      return failed ? 1 : 0;
    }
    if (*sweep) {
      const auto cfg = load_config(config_path);
      const auto res = run_sweep(cfg, axis, split(values));
      bool failed = false;
      for (const auto& p : res.points) {
        const auto& h = p.aggregate["final_entropy"];
        std::printf("%s=%s: final entropy median %.4f (IQR %.4f .. %.4f)\n", axis.c_str(), p.value.c_str(),
                    h.value("median", std::nan("")), h.value("q1", std::nan("")), h.value("q3", std::nan("")));
        for (const auto& r : p.runs) failed |= r.failed;
      }
      std::printf("summary in %s\n", (fs::path(cfg.output_dir) / ("sweep_" + axis + ".json")).c_str());
      return failed ? 1 : 0;
    }
    const auto snap = read_json(snapshot_path);
    const auto trainer = trainer_from_snapshot(snap);
    const auto support = support_from_json(snap.at("support"));
    const auto indicator = indicator_from_json(snap.at("indicator"));
    Rng rng = stream(seed, kEvaluation);
    if (*eval) {
      const auto g = global_success_rate(*trainer, support, indicator, n_eval, rng);
      std::cout << nlohmann::json{{"global_success", g.rate}, {"half_width", g.half_width}, {"episodes", g.episodes}}.dump()
                << '\n';
      return 0;
    }
    std::vector<std::size_t> idx;
    for (const auto& d : split(dims)) idx.push_back(std::stoul(d));
    const int reps = repeats > 0 ? repeats : snap.value("grid_repeats", 5);
    const auto g = evaluate_grid(*trainer, support, idx, std::vector<int>(idx.size(), size), indicator, reps, rng);
    if (out_prefix.empty()) {
      std::string tag = "grid";
      for (auto d : idx) tag += "_" + std::to_string(d);
      out_prefix = (fs::path(snapshot_path).parent_path() / tag).string();
    }
    std::ofstream(out_prefix + "_return.csv") << grid_csv(g, false);
    std::ofstream(out_prefix + "_success.csv") << grid_csv(g, true);
    std::size_t hits = 0, cells = 0;
    for (const auto& row : g.success)
      for (bool s : row) {
        hits += s;
        ++cells;
      }
    std::printf("%zu of %zu cells successful; wrote %s_return.csv and %s_success.csv\n", hits, cells, out_prefix.c_str(),
                out_prefix.c_str());
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
