#pragma once
// Experiment orchestration behind the command-line tool: configuration files,
// per-seed run directories and the gen -> split -> train -> eval -> report
// pipeline.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "hiershift/conditional.hpp"
#include "hiershift/datagen.hpp"
#include "hiershift/error.hpp"
#include "hiershift/eval.hpp"
#include "hiershift/hierarchy.hpp"
#include "hiershift/network.hpp"

namespace hiershift {

namespace fs = std::filesystem;

/// "original" or "collapse:FROM-TO".
struct HierarchyVariant {
  std::optional<std::pair<int, int>> collapse;

  static HierarchyVariant parse(std::string_view s) {
    if (s == "original") return {};
    constexpr std::string_view prefix = "collapse:";
    if (s.substr(0, prefix.size()) == prefix) {
      auto body = s.substr(prefix.size());
      auto dash = body.find('-');
      int from = 0, to = 0;
      if (dash != std::string_view::npos) {
        auto a = std::from_chars(body.data(), body.data() + dash, from);
        auto b = std::from_chars(body.data() + dash + 1, body.data() + body.size(), to);
        if (a.ec == std::errc() && a.ptr == body.data() + dash && b.ec == std::errc() && b.ptr == body.data() + body.size())
          return {std::pair{from, to}};
      }
    }
    throw ConfigError("bad hierarchy variant '" + std::string(s) + "' (original | collapse:FROM-TO)");
  }

  std::string spec() const {
    return collapse ? "collapse:" + std::to_string(collapse->first) + "-" + std::to_string(collapse->second) : "original";
  }
  /// Filesystem-friendly tag.
  std::string tag() const {
    return collapse ? "collapse-" + std::to_string(collapse->first) + "-" + std::to_string(collapse->second) : "original";
  }
  std::string id(const std::string& base) const {
    return collapse ? base + "/collapse(" + std::to_string(collapse->first) + "," + std::to_string(collapse->second) + ")" : base;
  }
  Hierarchy apply(const Hierarchy& h) const { return collapse ? collapse_levels(h, collapse->first, collapse->second) : h; }
};

struct ExperimentConfig {
  fs::path hierarchy_file;
  HierarchyVariant train_variant;
  std::vector<HierarchyVariant> eval_variants;  // empty: the training variant
  GenParams gen;
  std::size_t test_samples_per_leaf = 100;
  std::size_t seen_count = 2;
  std::size_t unseen_count = 1;
  NetConfig net;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  fs::path out_dir = "runs";

  std::vector<HierarchyVariant> effective_eval_variants() const {
    return eval_variants.empty() ? std::vector<HierarchyVariant>{train_variant} : eval_variants;
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, std::string_view s) {
  s = trim(s);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("config key '" + key + "': cannot parse '" + std::string(s) + "' as a number");
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, std::string_view s) {
  std::vector<T> out;
  if (trim(s).empty()) return out;
  for (auto f : split_fields(s, ',')) out.push_back(parse_number<T>(key, f));
  return out;
}

template <typename T>
std::string join_list(const std::vector<T>& v, std::string_view sep = ",") {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? std::string(sep) : "") << v[i];
  return out.str();
}

inline std::map<int, std::size_t> parse_attachment(const std::string& key, std::string_view s) {
  std::map<int, std::size_t> out;
  if (trim(s).empty()) return out;
  for (auto item : split_fields(s, ',')) {
    auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ConfigError("config key '" + key + "': expected LEVEL:BLOCK pairs");
    out[parse_number<int>(key, item.substr(0, colon))] = parse_number<std::size_t>(key, item.substr(colon + 1));
  }
  return out;
}

inline std::vector<BranchPhase> parse_schedule(const std::string& key, std::string_view s) {
  std::vector<BranchPhase> out;
  if (trim(s).empty()) return out;
  for (auto phase : split_fields(s, ';')) {
    auto colon = phase.find(':');
    if (colon == std::string_view::npos) throw ConfigError("config key '" + key + "': expected EPOCH:w1,w2,... phases");
    out.push_back({parse_number<int>(key, phase.substr(0, colon)), parse_list<double>(key, phase.substr(colon + 1))});
  }
  return out;
}

}  // namespace detail

/// Parses the sectioned key-value config. Unknown sections and keys are errors.
inline ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  ExperimentConfig cfg;
  bool have_hierarchy = false;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside of a section");
    for (const auto& [key, node] : body) {
      const std::string name = section + "." + key;
      const std::string value(detail::trim(node.data()));
      if (name == "hierarchy.file") {
        cfg.hierarchy_file = fs::path(value).is_absolute() || base_dir.empty() ? fs::path(value) : base_dir / value;
        have_hierarchy = true;
      } else if (name == "hierarchy.train_variant") {
        cfg.train_variant = HierarchyVariant::parse(value);
      } else if (name == "hierarchy.eval_variants") {
        for (auto v : detail::split_fields(value, ',')) cfg.eval_variants.push_back(HierarchyVariant::parse(detail::trim(v)));
      } else if (name == "generate.feature_dim") {
        cfg.gen.feature_dim = detail::parse_number<std::size_t>(name, value);
      } else if (name == "generate.samples_per_leaf") {
        cfg.gen.samples_per_leaf = detail::parse_number<std::size_t>(name, value);
      } else if (name == "generate.test_samples_per_leaf") {
        cfg.test_samples_per_leaf = detail::parse_number<std::size_t>(name, value);
      } else if (name == "generate.level_scales") {
        cfg.gen.level_scales = detail::parse_list<double>(name, value);
      } else if (name == "generate.noise_scale") {
        cfg.gen.noise_scale = detail::parse_number<double>(name, value);
      } else if (name == "split.seen") {
        cfg.seen_count = detail::parse_number<std::size_t>(name, value);
      } else if (name == "split.unseen") {
        cfg.unseen_count = detail::parse_number<std::size_t>(name, value);
      } else if (name == "network.width") {
        cfg.net.width = detail::parse_number<std::size_t>(name, value);
      } else if (name == "network.blocks") {
        cfg.net.blocks = detail::parse_number<std::size_t>(name, value);
      } else if (name == "network.attachment") {
        cfg.net.attachment = detail::parse_attachment(name, value);
      } else if (name == "train.mode") {
        cfg.train.mode = parse_mode(value);
      } else if (name == "train.epochs") {
        cfg.train.epochs = detail::parse_number<int>(name, value);
      } else if (name == "train.batch_size") {
        cfg.train.batch_size = detail::parse_number<std::size_t>(name, value);
      } else if (name == "train.learning_rate") {
        cfg.train.learning_rate = detail::parse_number<double>(name, value);
      } else if (name == "train.momentum") {
        cfg.train.momentum = detail::parse_number<double>(name, value);
      } else if (name == "train.drop_factor") {
        cfg.train.drop_factor = detail::parse_number<double>(name, value);
      } else if (name == "train.drop_every") {
        cfg.train.drop_every = detail::parse_number<int>(name, value);
      } else if (name == "train.branch_schedule") {
        cfg.train.branch_schedule = detail::parse_schedule(name, value);
      } else if (name == "experiment.seeds") {
        cfg.seeds = detail::parse_list<std::uint64_t>(name, value);
      } else if (name == "experiment.out") {
        cfg.out_dir = value;
      } else {
        throw ConfigError("config: unknown key '" + name + "'");
      }
    }
  }
  if (!have_hierarchy) throw ConfigError("config: missing hierarchy.file");
  if (cfg.seeds.empty()) throw ConfigError("config: experiment.seeds must not be empty");
  if (cfg.train.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
  if (cfg.gen.samples_per_leaf < 1 || cfg.test_samples_per_leaf < 1) throw ConfigError("config: samples per leaf must be >= 1");
  OptimState::make(cfg.train.learning_rate, cfg.train.momentum, cfg.train.drop_factor, cfg.train.drop_every);
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
  return parse_config(detail::read_file(path), path.parent_path());
}

/// The fully resolved configuration, defaults included.
inline std::string config_text(const ExperimentConfig& cfg, const Hierarchy& h) {
  std::ostringstream out;
  out.precision(17);
  std::vector<std::string> evals;
  for (const auto& v : cfg.effective_eval_variants()) evals.push_back(v.spec());
  std::vector<std::string> attach;
  const auto& levels_src = cfg.net.attachment;
  for (auto [l, b] : levels_src) attach.push_back(std::to_string(l) + ":" + std::to_string(b));
  out << "[hierarchy]\nfile = " << cfg.hierarchy_file.filename().string() << "\ntrain_variant = " << cfg.train_variant.spec()
      << "\neval_variants = " << detail::join_list(evals) << "\n\n";
  out << "[generate]\nfeature_dim = " << cfg.gen.feature_dim << "\nsamples_per_leaf = " << cfg.gen.samples_per_leaf
      << "\ntest_samples_per_leaf = " << cfg.test_samples_per_leaf << "\nlevel_scales = "
      << detail::join_list(cfg.gen.level_scales.empty() ? default_level_scales(h.depth()) : cfg.gen.level_scales)
      << "\nnoise_scale = " << cfg.gen.noise_scale << "\n\n";
  out << "[split]\nseen = " << cfg.seen_count << "\nunseen = " << cfg.unseen_count << "\n\n";
  out << "[network]\nwidth = " << cfg.net.width << "\nblocks = " << cfg.net.blocks << "\nattachment = "
      << (attach.empty() ? "" : detail::join_list(attach)) << "\n\n";
  std::vector<std::string> phases;
  for (const auto& p : cfg.train.branch_schedule) phases.push_back(std::to_string(p.start_epoch) + ":" + detail::join_list(p.weights));
  out << "[train]\nmode = " << mode_name(cfg.train.mode) << "\nepochs = " << cfg.train.epochs
      << "\nbatch_size = " << cfg.train.batch_size << "\nlearning_rate = " << cfg.train.learning_rate
      << "\nmomentum = " << cfg.train.momentum << "\ndrop_factor = " << cfg.train.drop_factor
      << "\ndrop_every = " << cfg.train.drop_every << "\nbranch_schedule = " << detail::join_list(phases, ";") << "\n\n";
  out << "[experiment]\nseeds = " << detail::join_list(cfg.seeds) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Run directories

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw ConfigError("run directory '" + dir.string() + "' is locked (remove " + path_.string() + " if stale)");
    std::fclose(f);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

struct RunContext {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  fs::path dir;
  std::shared_ptr<const Hierarchy> hierarchy;  // as generated
  std::string hierarchy_name;

  static RunContext make(const ExperimentConfig& cfg, std::uint64_t seed) {
    RunContext ctx;
    ctx.cfg = cfg;
    ctx.seed = seed;
    ctx.dir = cfg.out_dir / ("seed-" + std::to_string(seed));
    if (!fs::exists(cfg.hierarchy_file))
      throw ConfigError("hierarchy file '" + cfg.hierarchy_file.string() + "' does not exist");
    ctx.hierarchy = std::make_shared<const Hierarchy>(parse_hierarchy(detail::read_file(cfg.hierarchy_file)));
    ctx.hierarchy_name = cfg.hierarchy_file.stem().string();
    ctx.cfg.gen.seed = seed;
    ctx.cfg.train.seed = seed;
    return ctx;
  }

  fs::path train_manifest() const { return dir / "train.csv"; }
  fs::path test_manifest() const { return dir / "test.csv"; }
  fs::path split_file() const { return dir / "split.txt"; }
  fs::path checkpoint(TrainMode m) const { return dir / ("model-" + std::string(mode_name(m)) + ".ckpt"); }
  fs::path stats_file(TrainMode m) const { return dir / ("stats-" + std::string(mode_name(m)) + ".jsonl"); }

  void require(const fs::path& p, std::string_view produced_by) const {
    if (!fs::exists(p)) throw ConfigError("missing '" + p.string() + "' (run '" + std::string(produced_by) + "' first)");
  }
};

inline void write_resolved_config(const RunContext& ctx) {
  detail::write_file(ctx.cfg.out_dir / "config.resolved.ini", config_text(ctx.cfg, *ctx.hierarchy));
}

/// Training and test manifests for one seed.
inline void cmd_gen(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto ctx = RunContext::make(cfg, seed);
  RunLock lock(ctx.dir);
  write_resolved_config(ctx);
  save_manifest(generate_synthetic(ctx.hierarchy, ctx.cfg.gen, "train"), ctx.train_manifest());
  GenParams test = ctx.cfg.gen;
  test.samples_per_leaf = cfg.test_samples_per_leaf;
  save_manifest(generate_synthetic(ctx.hierarchy, test, "test"), ctx.test_manifest());
}

inline void cmd_split(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto ctx = RunContext::make(cfg, seed);
  RunLock lock(ctx.dir);
  write_resolved_config(ctx);
  save_split(make_split(*ctx.hierarchy, cfg.seen_count, cfg.unseen_count, seed), ctx.split_file());
}

/// Trains one mode on the seen domain of the training manifest; writes a
/// checkpoint and one stats record per epoch.
inline std::vector<EpochStats> cmd_train(const ExperimentConfig& cfg, std::uint64_t seed, TrainMode mode) {
  auto ctx = RunContext::make(cfg, seed);
  ctx.require(ctx.train_manifest(), "gen");
  ctx.require(ctx.split_file(), "split");
  RunLock lock(ctx.dir);
  write_resolved_config(ctx);

  const Hierarchy h_train = cfg.train_variant.apply(*ctx.hierarchy);
  const Dataset data = load_manifest(ctx.train_manifest(), ctx.hierarchy);
  const SplitSpec split = load_split(ctx.split_file());
  const TrainData td = TrainData::from(materialize(data, split, Domain::kSeen, h_train), h_train.class_level());

  TrainConfig tc = ctx.cfg.train;
  tc.mode = mode;
  NetConfig nc = cfg.net;
  nc.input_dim = data.feature_dim;
  MultiHeadNet net = build_network(h_train, mode, nc, seed);
  if (mode == TrainMode::kBranchWeighted && tc.branch_schedule.empty())
    tc.branch_schedule = default_branch_schedule(tc.epochs, net.heads().size());
  OptimState opt = OptimState::make(tc.learning_rate, tc.momentum, tc.drop_factor, tc.drop_every);

  std::vector<EpochStats> all;
  std::string log;
  for (int e = 0; e < tc.epochs; ++e) {
    all.push_back(train_epoch(net, td, tc, opt, e));
    log += all.back().to_json().dump() + "\n";
  }
  save_checkpoint(net, ctx.checkpoint(mode));
  detail::write_file(ctx.stats_file(mode), log);
  return all;
}

inline std::string eval_basename(TrainMode mode, DomainTag tag, const HierarchyVariant& v) {
  return "eval-" + std::string(mode_name(mode)) + "-" + std::string(tag_name(tag)) + "-" + v.tag();
}

/// Scores a trained mode on held-out samples: s-s on the seen domain, s-u on
/// the unseen domain (when the split has one), for every evaluation hierarchy.
inline std::vector<EvalReport> cmd_eval(const ExperimentConfig& cfg, std::uint64_t seed, TrainMode mode) {
  auto ctx = RunContext::make(cfg, seed);
  ctx.require(ctx.test_manifest(), "gen");
  ctx.require(ctx.split_file(), "split");
  ctx.require(ctx.checkpoint(mode), "train");
  RunLock lock(ctx.dir);
  write_resolved_config(ctx);

  const Hierarchy h_train = cfg.train_variant.apply(*ctx.hierarchy);
  const Dataset data = load_manifest(ctx.test_manifest(), ctx.hierarchy);
  const SplitSpec split = load_split(ctx.split_file());
  NetConfig nc = cfg.net;
  nc.input_dim = data.feature_dim;
  MultiHeadNet net = build_network(h_train, mode, nc, seed);
  load_checkpoint(net, ctx.checkpoint(mode));

  bool has_unseen = true;
  for (const auto& c : split.classes) has_unseen = has_unseen && !c.unseen.empty();

  std::vector<EvalReport> reports;
  for (DomainTag tag : {DomainTag::kSeenSeen, DomainTag::kSeenUnseen}) {
    if (tag == DomainTag::kSeenUnseen && !has_unseen) continue;
    const auto m = materialize(data, split, tag == DomainTag::kSeenSeen ? Domain::kSeen : Domain::kUnseen, h_train);
    for (const auto& variant : cfg.effective_eval_variants()) {
      const Hierarchy h_eval = variant.apply(*ctx.hierarchy);
      EvalReport r = evaluate(net, m, h_train, h_eval, tag, variant.id(ctx.hierarchy_name));
      r.mode = std::string(mode_name(mode));
      const auto base = ctx.dir / eval_basename(mode, tag, variant);
      detail::write_file(base.string() + ".txt", report_text(r));
      detail::write_file(base.string() + ".json", report_json(r).dump(2) + "\n");
      detail::write_file(base.string() + ".hist.csv", histogram_csv(r));
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

inline int cmd_distance(const Hierarchy& h, std::string_view a, std::string_view b) { return graph_distance(h, a, b); }

inline std::string cmd_collapse(const Hierarchy& h, int from_level, int to_level) {
  return serialize_hierarchy(collapse_levels(h, from_level, to_level));
}

struct ReportRow {
  std::string mode;
  std::string tag;
  std::string hierarchy;
  std::vector<double> accuracy;
  std::vector<double> catastrophic;

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

/// Aggregates eval records from the named run directories, averaging in the
/// order given. Writes report.txt, report.csv and runs.csv into `out_dir`.
inline std::vector<ReportRow> cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::map<std::tuple<std::string, std::string, std::string>, ReportRow> groups;
  std::string runs_csv = "run,mode,domain_tag,hierarchy,accuracy,catastrophic_coefficient\n";
  std::ostringstream num;
  auto fmt = [&](double v) {
    num.str("");
    num << std::setprecision(17) << v;
    return num.str();
  };
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw ConfigError("report: '" + dir.string() + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("eval-", 0) == 0 && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    if (files.empty()) throw DataError("report: no eval records in '" + dir.string() + "'");
    std::sort(files.begin(), files.end());
    const std::string run_name = fs::path(dir).lexically_normal().filename().string().empty()
                                     ? fs::path(dir).lexically_normal().parent_path().filename().string()
                                     : fs::path(dir).lexically_normal().filename().string();
    for (const auto& f : files) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(detail::read_file(f));
      } catch (const nlohmann::json::parse_error& e) {
        throw DataError("report: cannot parse '" + f.string() + "': " + e.what());
      }
      const EvalReport r = report_from_json(j);
      const std::string tag(tag_name(r.domain_tag));
      auto& row = groups[{r.hierarchy_id, tag, r.mode}];
      row.mode = r.mode;
      row.tag = tag;
      row.hierarchy = r.hierarchy_id;
      row.accuracy.push_back(r.accuracy);
      row.catastrophic.push_back(r.catastrophic_coefficient);
      runs_csv += run_name + "," + r.mode + "," + tag + "," + r.hierarchy_id + "," + fmt(r.accuracy) + "," +
                  fmt(r.catastrophic_coefficient) + "\n";
    }
  }

  std::vector<ReportRow> rows;
  for (auto& [key, row] : groups) rows.push_back(std::move(row));

  std::ostringstream table;
  table << std::left << std::setw(13) << "mode" << std::setw(6) << "tag" << std::setw(28) << "hierarchy" << std::right
        << std::setw(6) << "runs" << std::setw(12) << "accuracy" << std::setw(14) << "catastrophic" << '\n';
  std::string csv = "mode,domain_tag,hierarchy,runs,accuracy,catastrophic_coefficient\n";
  for (const auto& r : rows) {
    const double acc = ReportRow::mean(r.accuracy);
    const double cat = ReportRow::mean(r.catastrophic);
    table << std::left << std::setw(13) << r.mode << std::setw(6) << r.tag << std::setw(28) << r.hierarchy << std::right
          << std::setw(6) << r.accuracy.size() << std::fixed << std::setprecision(6) << std::setw(12) << acc
          << std::setw(14) << cat << '\n'
          << std::defaultfloat;
    csv += r.mode + "," + r.tag + "," + r.hierarchy + "," + std::to_string(r.accuracy.size()) + "," + fmt(acc) + "," +
           fmt(cat) + "\n";
  }
  detail::write_file(out_dir / "report.txt", table.str());
  detail::write_file(out_dir / "report.csv", csv);
  detail::write_file(out_dir / "runs.csv", runs_csv);
  return rows;
}

}  // namespace hiershift
