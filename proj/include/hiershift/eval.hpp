#pragma once
// Accuracy and catastrophic coefficient.
//
// The catastrophic coefficient is the mean tree distance between predicted
// and true class nodes; a correct prediction costs 0 and the worst case is
// 2 * (depth - 1), a path through the root.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiershift/conditional.hpp"
#include "hiershift/datagen.hpp"
#include "hiershift/error.hpp"
#include "hiershift/hierarchy.hpp"

namespace hiershift {

enum class DomainTag { kSeenSeen, kSeenUnseen };

inline std::string_view tag_name(DomainTag t) { return t == DomainTag::kSeenSeen ? "s-s" : "s-u"; }

struct EvalReport {
  DomainTag domain_tag = DomainTag::kSeenSeen;
  std::string mode;
  std::string hierarchy_id;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double catastrophic_coefficient = 0.0;
  std::map<int, double> per_level_accuracy;
  std::map<int, std::size_t> distance_histogram;
  bool operator==(const EvalReport&) const = default;
};

inline double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> truths) {
  if (preds.empty()) throw DataError("accuracy of an empty prediction set");
  if (preds.size() != truths.size()) throw DataError("accuracy: prediction and truth lengths differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truths[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

namespace detail {

inline void check_class_nodes(const Hierarchy& h, std::span<const NodeIndex> preds, std::span<const NodeIndex> truths) {
  if (preds.empty()) throw DataError("empty prediction set");
  if (preds.size() != truths.size()) throw DataError("prediction and truth lengths differ");
  for (auto group : {preds, truths})
    for (NodeIndex n : group) {
      if (n.value >= h.size()) throw DataError("node index out of range");
      if (h.level(n) != h.class_level()) throw DataError("node '" + h.id(n) + "' is not at the class level");
    }
}

}  // namespace detail

inline double catastrophic_coefficient(const Hierarchy& h, std::span<const NodeIndex> preds, std::span<const NodeIndex> truths) {
  detail::check_class_nodes(h, preds, truths);
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) total += static_cast<std::uint64_t>(graph_distance(h, preds[k], truths[k]));
  return static_cast<double>(total) / static_cast<double>(preds.size());
}

/// Fraction of samples whose predicted and true classes share their ancestor
/// at each level 1..class_level.
inline std::map<int, double> per_level_accuracy(const Hierarchy& h, std::span<const NodeIndex> preds,
                                                std::span<const NodeIndex> truths) {
  detail::check_class_nodes(h, preds, truths);
  std::map<int, double> out;
  for (int l = 1; l <= h.class_level(); ++l) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k < preds.size(); ++k) hits += h.ancestor_at(preds[k], l) == h.ancestor_at(truths[k], l);
    out[l] = static_cast<double>(hits) / static_cast<double>(preds.size());
  }
  return out;
}

/// Scores class-index predictions made in `h_train`'s index space, measuring
/// distances in `h_eval`. Both hierarchies must have the same class nodes.
inline EvalReport score(std::span<const std::size_t> preds, std::span<const std::size_t> truths, const Hierarchy& h_train,
                        const Hierarchy& h_eval, DomainTag tag, std::string hierarchy_id) {
  std::set<std::string> train_classes, eval_classes;
  for (NodeIndex c : h_train.classes()) train_classes.insert(h_train.id(c));
  for (NodeIndex c : h_eval.classes()) eval_classes.insert(h_eval.id(c));
  if (train_classes != eval_classes) throw DataError("evaluation hierarchy has a different class set than the training hierarchy");
  if (preds.size() != truths.size()) throw DataError("prediction and truth lengths differ");

  auto to_eval = [&](std::size_t index) {
    if (index >= h_train.classes().size()) throw DataError("class index " + std::to_string(index) + " out of range");
    return h_eval.at(h_train.id(h_train.class_node(index)));
  };
  std::vector<NodeIndex> p, t;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(to_eval(preds[i]));
    t.push_back(to_eval(truths[i]));
  }

  EvalReport r;
  r.domain_tag = tag;
  r.hierarchy_id = std::move(hierarchy_id);
  r.n_samples = preds.size();
  r.accuracy = accuracy(preds, truths);
  r.catastrophic_coefficient = catastrophic_coefficient(h_eval, p, t);
  r.per_level_accuracy = per_level_accuracy(h_eval, p, t);
  for (std::size_t k = 0; k < p.size(); ++k) ++r.distance_histogram[graph_distance(h_eval, p[k], t[k])];
  return r;
}

/// Runs the class-level head of `net` over `data` and scores it on `h_eval`.
inline EvalReport evaluate(const MultiHeadNet& net, const Materialized& data, const Hierarchy& h_train, const Hierarchy& h_eval,
                           DomainTag tag, std::string hierarchy_id) {
  const int cl = h_train.class_level();
  if (net.final_head().level != cl) throw ConfigError("network's final head does not predict the class level");
  std::vector<std::size_t> truths;
  truths.reserve(data.paths.size());
  for (const auto& path : data.paths) truths.push_back(path.indices.at(static_cast<std::size_t>(cl - 1)));
  const auto preds = predict(net, data.features);
  return score(preds, truths, h_train, h_eval, tag, std::move(hierarchy_id));
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "domain_tag = " << tag_name(r.domain_tag) << '\n';
  if (!r.mode.empty()) out << "mode = " << r.mode << '\n';
  out << "hierarchy = " << r.hierarchy_id << '\n';
  out << "n_samples = " << r.n_samples << '\n';
  out << "accuracy = " << r.accuracy << '\n';
  out << "catastrophic_coefficient = " << r.catastrophic_coefficient << '\n';
  for (auto [l, a] : r.per_level_accuracy) out << "accuracy_level_" << l << " = " << a << '\n';
  for (auto [d, c] : r.distance_histogram) out << "distance_" << d << " = " << c << '\n';
  return out.str();
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["domain_tag"] = std::string(tag_name(r.domain_tag));
  j["mode"] = r.mode;
  j["hierarchy"] = r.hierarchy_id;
  j["n_samples"] = r.n_samples;
  j["accuracy"] = r.accuracy;
  j["catastrophic_coefficient"] = r.catastrophic_coefficient;
  auto& lv = j["per_level_accuracy"] = nlohmann::ordered_json::object();
  for (auto [l, a] : r.per_level_accuracy) lv[std::to_string(l)] = a;
  auto& hist = j["distance_histogram"] = nlohmann::ordered_json::object();
  for (auto [d, c] : r.distance_histogram) hist[std::to_string(d)] = c;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    const auto tag = j.at("domain_tag").get<std::string>();
    if (tag != "s-s" && tag != "s-u") throw DataError("unknown domain tag '" + tag + "'");
    r.domain_tag = tag == "s-s" ? DomainTag::kSeenSeen : DomainTag::kSeenUnseen;
    r.mode = j.at("mode").get<std::string>();
    r.hierarchy_id = j.at("hierarchy").get<std::string>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.catastrophic_coefficient = j.at("catastrophic_coefficient").get<double>();
    for (auto& [k, v] : j.at("per_level_accuracy").items()) r.per_level_accuracy[std::stoi(k)] = v.get<double>();
    for (auto& [k, v] : j.at("distance_histogram").items()) r.distance_histogram[std::stoi(k)] = v.get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report record: ") + e.what());
  }
}

/// Two columns, `distance,count`.
inline std::string histogram_csv(const EvalReport& r) {
  std::string out = "distance,count\n";
  for (auto [d, c] : r.distance_histogram) out += std::to_string(d) + "," + std::to_string(c) + "\n";
  return out;
}

}  // namespace hiershift
