// hiershift: synthetic subpopulation-shift experiments with conditional
// hierarchical training.
//
//   hiershift gen      --config FILE [--seed N] [--out DIR]
//   hiershift split    --config FILE [--seed N] [--out DIR]
//   hiershift train    --config FILE [--seed N] [--out DIR] [--mode conditional|flat|branch]
//   hiershift eval     --config FILE [--seed N] [--out DIR] [--mode ...]
//   hiershift distance HIERARCHY NODE_A NODE_B
//   hiershift collapse HIERARCHY FROM TO [-o FILE]
//   hiershift report   RUN_DIR... --out DIR

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hiershift/hiershift.hpp"

namespace fs = std::filesystem;
using namespace hiershift;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config is required for this command");
  ExperimentConfig cfg = load_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.out_dir = g.out;
  if (!g.mode.empty()) cfg.train.mode = parse_mode(g.mode);
  return cfg;
}

Hierarchy read_hierarchy(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("hierarchy file '" + path + "' does not exist");
  return parse_hierarchy(detail::read_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchy-aware conditional training under subpopulation shift"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config file");
  app.add_option("--seed", g.seed, "Run a single seed instead of the configured list");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--mode", g.mode, "Training mode")->check(CLI::IsMember({"conditional", "flat", "branch"}));

  auto* gen = app.add_subcommand("gen", "Generate training and test manifests");
  auto* split = app.add_subcommand("split", "Draw the seen/unseen subpopulation split");
  auto* train = app.add_subcommand("train", "Train one mode on the seen domain");
  auto* eval = app.add_subcommand("eval", "Evaluate a trained mode (s-s and s-u)");

  std::string hier_path, node_a, node_b;
  auto* distance = app.add_subcommand("distance", "Tree distance between two nodes");
  distance->add_option("hierarchy", hier_path)->required();
  distance->add_option("a", node_a)->required();
  distance->add_option("b", node_b)->required();

  int from_level = 0, to_level = 0;
  std::string collapse_out;
  auto* collapse = app.add_subcommand("collapse", "Merge a band of upper levels into one");
  collapse->add_option("hierarchy", hier_path)->required();
  collapse->add_option("from", from_level)->required();
  collapse->add_option("to", to_level)->required();
  collapse->add_option("-o,--output", collapse_out, "Write to a file instead of standard output");

  std::vector<std::string> run_dirs;
  auto* report = app.add_subcommand("report", "Aggregate eval records over runs");
  report->add_option("runs", run_dirs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfigError);
  }

  try {
    if (gen->parsed()) {
      auto cfg = resolve(g);
      for (auto seed : cfg.seeds) cmd_gen(cfg, seed);
    } else if (split->parsed()) {
      auto cfg = resolve(g);
      for (auto seed : cfg.seeds) cmd_split(cfg, seed);
    } else if (train->parsed()) {
      auto cfg = resolve(g);
      for (auto seed : cfg.seeds) {
        auto stats = cmd_train(cfg, seed, cfg.train.mode);
        const auto& last = stats.back();
        std::cerr << "seed " << seed << " " << mode_name(cfg.train.mode) << ": " << last.to_json().dump() << "\n";
      }
    } else if (eval->parsed()) {
      auto cfg = resolve(g);
      for (auto seed : cfg.seeds)
        for (const auto& r : cmd_eval(cfg, seed, cfg.train.mode))
          std::cout << "seed " << seed << " " << r.mode << " " << tag_name(r.domain_tag) << " " << r.hierarchy_id
                    << " accuracy=" << r.accuracy << " cat=" << r.catastrophic_coefficient << "\n";
    } else if (distance->parsed()) {
      std::cout << cmd_distance(read_hierarchy(hier_path), node_a, node_b) << "\n";
    } else if (collapse->parsed()) {
      const std::string text = cmd_collapse(read_hierarchy(hier_path), from_level, to_level);
      if (collapse_out.empty())
        std::cout << text;
      else
        detail::write_file(collapse_out, text);
    } else if (report->parsed()) {
      if (g.out.empty()) throw ConfigError("report needs --out DIR");
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      cmd_report(dirs, g.out);
      std::cout << detail::read_file(fs::path(g.out) / "report.txt");
    }
  } catch (const Error& e) {
    std::cerr << "hiershift: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "hiershift: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kDataError);
  }
  return 0;
}
