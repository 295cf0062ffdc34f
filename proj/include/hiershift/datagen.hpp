#pragma once
// Synthetic hierarchical datasets and seen/unseen subpopulation splits.
//
// Every node below the root carries a Gaussian offset whose scale depends on
// its level; a leaf's cluster mean is the sum of the offsets along its path,
// so sibling subpopulations sit closer together than cousins.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hiershift/error.hpp"
#include "hiershift/hierarchy.hpp"
#include "hiershift/rng.hpp"
#include "hiershift/tensor.hpp"

namespace hiershift {

struct GenParams {
  std::size_t feature_dim = 32;
  std::size_t samples_per_leaf = 200;
  /// Offset scale per level 1..depth. Empty selects default_level_scales().
  std::vector<double> level_scales;
  double noise_scale = 0.5;
  std::uint64_t seed = 0;
};

/// 4, 2, 1, 0.5, ... for levels 1..depth.
inline std::vector<double> default_level_scales(int depth) {
  std::vector<double> s;
  for (int l = 1; l <= depth; ++l) s.push_back(4.0 * std::ldexp(1.0, -(l - 1)));
  return s;
}

struct Sample {
  std::vector<double> features;
  NodeIndex leaf;
  LabelPath path;
  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::shared_ptr<const Hierarchy> hierarchy;
  std::vector<Sample> samples;
  std::size_t feature_dim = 0;

  bool operator==(const Dataset& other) const {
    return feature_dim == other.feature_dim && samples == other.samples &&
           (hierarchy == other.hierarchy || (hierarchy && other.hierarchy && *hierarchy == *other.hierarchy));
  }
};

namespace detail {

inline void fill_normal(RandomStream& rng, double scale, std::span<double> out) {
  for (double& v : out) v = scale * rng.normal();
}

}  // namespace detail

/// Cluster mean of every leaf, in leaf order. Offsets are keyed by node id,
/// so they do not depend on which partition is being sampled.
inline std::vector<std::vector<double>> leaf_means(const Hierarchy& h, const GenParams& p) {
  std::vector<double> scales = p.level_scales.empty() ? default_level_scales(h.depth()) : p.level_scales;
  if (scales.size() != static_cast<std::size_t>(h.depth()))
    throw ConfigError("level_scales needs " + std::to_string(h.depth()) + " entries, got " + std::to_string(scales.size()));
  for (double s : scales)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("level scales must be finite and non-negative");

  std::vector<std::vector<double>> offset(h.size());
  for (std::uint32_t i = 1; i < h.size(); ++i) {
    NodeIndex n{i};
    offset[i].resize(p.feature_dim);
    RandomStream rng(stream_key(p.seed, "offset", h.id(n)));
    detail::fill_normal(rng, scales[static_cast<std::size_t>(h.level(n) - 1)], offset[i]);
  }
  std::vector<std::vector<double>> means;
  for (NodeIndex leaf : h.leaves()) {
    std::vector<double> mu(p.feature_dim, 0.0);
    for (NodeIndex n = leaf; n != h.root(); n = *h.parent(n))
      for (std::size_t j = 0; j < p.feature_dim; ++j) mu[j] += offset[n.value][j];
    means.push_back(std::move(mu));
  }
  return means;
}

/// Draws samples_per_leaf samples around each leaf mean. `partition` selects an
/// independent noise stream (e.g. "train" vs "test") over the same cluster means.
inline Dataset generate_synthetic(std::shared_ptr<const Hierarchy> h, const GenParams& p,
                                  std::string_view partition = "train") {
  if (p.samples_per_leaf < 1) throw ConfigError("samples_per_leaf must be >= 1");
  if (!(p.noise_scale >= 0.0) || !std::isfinite(p.noise_scale)) throw ConfigError("noise_scale must be finite and non-negative");
  Dataset d;
  d.hierarchy = h;
  d.feature_dim = p.feature_dim;
  auto means = leaf_means(*h, p);
  const std::string tag = "samples/" + std::string(partition);
  for (std::size_t li = 0; li < h->leaves().size(); ++li) {
    NodeIndex leaf = h->leaves()[li];
    LabelPath path = label_path(*h, leaf);
    RandomStream rng(stream_key(p.seed, tag, h->id(leaf)));
    for (std::size_t k = 0; k < p.samples_per_leaf; ++k) {
      Sample s{means[li], leaf, path};
      for (double& v : s.features) v += p.noise_scale * rng.normal();
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Splits

enum class Domain { kSeen, kUnseen };

inline std::string_view domain_name(Domain d) { return d == Domain::kSeen ? "seen" : "unseen"; }

struct ClassSplit {
  std::string class_id;
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  bool operator==(const ClassSplit&) const = default;
};

/// Per-class partition of subpopulation leaves, in class order.
struct SplitSpec {
  std::vector<ClassSplit> classes;
  bool operator==(const SplitSpec&) const = default;
};

inline SplitSpec make_split(const Hierarchy& h, std::size_t seen_count, std::size_t unseen_count, std::uint64_t seed) {
  if (seen_count == 0) throw ConfigError("seen_count must be >= 1");
  SplitSpec s;
  for (NodeIndex c : h.classes()) {
    auto kids = h.children(c);
    if (kids.size() < seen_count + unseen_count)
      throw DataError("class '" + h.id(c) + "' has " + std::to_string(kids.size()) + " subpopulations, split needs " +
                      std::to_string(seen_count + unseen_count));
    std::vector<NodeIndex> order(kids.begin(), kids.end());
    RandomStream rng(stream_key(seed, "split", h.id(c)));
    rng.shuffle(order);
    auto by_position = [&](NodeIndex a, NodeIndex b) { return a < b; };
    std::vector<NodeIndex> seen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(seen_count));
    std::vector<NodeIndex> unseen(order.begin() + static_cast<std::ptrdiff_t>(seen_count),
                                  order.begin() + static_cast<std::ptrdiff_t>(seen_count + unseen_count));
    std::sort(seen.begin(), seen.end(), by_position);
    std::sort(unseen.begin(), unseen.end(), by_position);
    ClassSplit cs{h.id(c), {}, {}};
    for (NodeIndex n : seen) cs.seen.push_back(h.id(n));
    for (NodeIndex n : unseen) cs.unseen.push_back(h.id(n));
    s.classes.push_back(std::move(cs));
  }
  return s;
}

/// The companion split with seen and unseen exchanged for every class.
inline SplitSpec flip_split(const SplitSpec& s) {
  SplitSpec out = s;
  for (auto& c : out.classes) {
    std::swap(c.seen, c.unseen);
    if (c.seen.empty()) throw DataError("cannot flip split: class '" + c.class_id + "' has no unseen subpopulations");
  }
  return out;
}

/// Checks the split against `h`: known classes, leaves under their class,
/// disjoint domains, nonempty seen sets.
inline void validate_split(const Hierarchy& h, const SplitSpec& s) {
  for (const auto& c : s.classes) {
    auto cls = h.find(c.class_id);
    if (!cls || h.level(*cls) != h.class_level()) throw DataError("split names unknown class '" + c.class_id + "'");
    if (c.seen.empty()) throw DataError("class '" + c.class_id + "' has an empty seen set");
    std::set<std::string> seen(c.seen.begin(), c.seen.end());
    for (const auto& group : {c.seen, c.unseen})
      for (const auto& leaf_id : group) {
        auto leaf = h.find(leaf_id);
        if (!leaf || !h.is_leaf(*leaf) || *h.parent(*leaf) != *cls)
          throw DataError("split lists '" + leaf_id + "' which is not a subpopulation of class '" + c.class_id + "'");
      }
    for (const auto& leaf_id : c.unseen)
      if (seen.count(leaf_id)) throw DataError("class '" + c.class_id + "': '" + leaf_id + "' is both seen and unseen");
  }
}

/// Features and class-level supervision for one domain.
struct Materialized {
  Tensor features;
  std::vector<LabelPath> paths;
};

/// Samples whose leaf lies in `domain`. Paths are computed in `labels`, which
/// must contain the dataset's leaves (the generating hierarchy or a collapse of it).
inline Materialized materialize(const Dataset& d, const SplitSpec& s, Domain domain, const Hierarchy& labels) {
  const Hierarchy& h = *d.hierarchy;
  validate_split(h, s);
  std::vector<std::uint8_t> in_domain(h.size(), 0);
  for (const auto& c : s.classes) {
    const auto& group = domain == Domain::kSeen ? c.seen : c.unseen;
    if (group.empty())
      throw DataError("class '" + c.class_id + "' has no " + std::string(domain_name(domain)) + " subpopulations");
    for (const auto& leaf_id : group) in_domain[h.at(leaf_id).value] = 1;
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    if (in_domain[d.samples[i].leaf.value]) rows.push_back(i);

  Materialized m;
  m.features = Tensor::matrix(rows.size(), d.feature_dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Sample& smp = d.samples[rows[r]];
    std::copy(smp.features.begin(), smp.features.end(), m.features.row(r).begin());
    m.paths.push_back(&labels == &h ? smp.path : label_path(labels, labels.at(h.id(smp.leaf))));
  }
  return m;
}

inline Materialized materialize(const Dataset& d, const SplitSpec& s, Domain domain) {
  return materialize(d, s, domain, *d.hierarchy);
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t p = line.find(sep, start);
    out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << contents;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline std::string format_path(const LabelPath& p) {
  std::string s;
  for (std::size_t i = 0; i < p.indices.size(); ++i) {
    if (i) s += '/';
    s += std::to_string(p.indices[i]);
  }
  return s;
}

}  // namespace detail

/// CSV with header `leaf_id,path,f_0,...,f_{d-1}`; floats in shortest round-trip form.
inline std::string manifest_text(const Dataset& d) {
  std::string out = "leaf_id,path";
  for (std::size_t j = 0; j < d.feature_dim; ++j) out += ",f_" + std::to_string(j);
  out += '\n';
  for (const auto& s : d.samples) {
    const std::string& id = d.hierarchy->id(s.leaf);
    if (id.find(',') != std::string::npos) throw DataError("leaf id '" + id + "' contains a comma");
    out += id;
    out += ',';
    out += detail::format_path(s.path);
    for (double v : s.features) {
      out += ',';
      out += detail::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline Dataset parse_manifest(std::string_view text, std::shared_ptr<const Hierarchy> h) {
  Dataset d;
  d.hierarchy = h;
  std::size_t line_no = 0, pos = 0;
  bool header = true;
  while (pos < text.size()) {
    ++line_no;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) throw ParseError(line_no, "truncated row (missing line terminator)");
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto fields = detail::split_fields(line, ',');
    if (header) {
      if (fields.size() < 2 || fields[0] != "leaf_id" || fields[1] != "path")
        throw ParseError(line_no, "expected header 'leaf_id,path,f_0,...'");
      for (std::size_t j = 2; j < fields.size(); ++j)
        if (fields[j] != "f_" + std::to_string(j - 2)) throw ParseError(line_no, "unexpected column '" + std::string(fields[j]) + "'");
      d.feature_dim = fields.size() - 2;
      header = false;
      continue;
    }
    if (fields.size() != d.feature_dim + 2)
      throw ParseError(line_no, "expected " + std::to_string(d.feature_dim + 2) + " fields, found " + std::to_string(fields.size()) +
                                    " (dimension mismatch or truncated row)");
    auto leaf = h->find(fields[0]);
    if (!leaf || !h->is_leaf(*leaf)) throw ParseError(line_no, "unknown leaf '" + std::string(fields[0]) + "'");
    Sample s;
    s.leaf = *leaf;
    s.path = label_path(*h, *leaf);
    if (detail::format_path(s.path) != fields[1])
      throw ParseError(line_no, "path '" + std::string(fields[1]) + "' does not match hierarchy path " + detail::format_path(s.path));
    s.features.resize(d.feature_dim);
    for (std::size_t j = 0; j < d.feature_dim; ++j) {
      std::string_view f = fields[j + 2];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), s.features[j]);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw ParseError(line_no, "bad number '" + std::string(f) + "' in column f_" + std::to_string(j));
    }
    d.samples.push_back(std::move(s));
  }
  if (header) throw ParseError(line_no, "missing header");
  return d;
}

inline void save_manifest(const Dataset& d, const std::filesystem::path& path) { detail::write_file(path, manifest_text(d)); }

inline Dataset load_manifest(const std::filesystem::path& path, std::shared_ptr<const Hierarchy> h) {
  return parse_manifest(detail::read_file(path), std::move(h));
}

/// One line per class: `class_id|seen:a,b|unseen:c`.
inline std::string split_text(const SplitSpec& s) {
  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
  };
  std::string out;
  for (const auto& c : s.classes) out += c.class_id + "|seen:" + join(c.seen) + "|unseen:" + join(c.unseen) + "\n";
  return out;
}

inline SplitSpec parse_split(std::string_view text) {
  SplitSpec s;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    auto parts = detail::split_fields(line, '|');
    if (parts.size() != 3) throw ParseError(line_no, "expected 'class|seen:...|unseen:...'");
    ClassSplit c;
    c.class_id = std::string(detail::trim(parts[0]));
    auto read_group = [&](std::string_view part, std::string_view key, std::vector<std::string>& out) {
      part = detail::trim(part);
      if (part.substr(0, key.size()) != key) throw ParseError(line_no, "expected '" + std::string(key) + "'");
      part.remove_prefix(key.size());
      if (detail::trim(part).empty()) return;
      for (auto id : detail::split_fields(part, ',')) {
        id = detail::trim(id);
        if (id.empty()) throw ParseError(line_no, "empty leaf id");
        out.emplace_back(id);
      }
    };
    read_group(parts[1], "seen:", c.seen);
    read_group(parts[2], "unseen:", c.unseen);
    s.classes.push_back(std::move(c));
  }
  return s;
}

inline void save_split(const SplitSpec& s, const std::filesystem::path& path) { detail::write_file(path, split_text(s)); }
inline SplitSpec load_split(const std::filesystem::path& path) { return parse_split(detail::read_file(path)); }

}  // namespace hiershift
