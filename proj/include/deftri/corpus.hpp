#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "deftri/common.hpp"

namespace deftri {

// Ordered list of team-label names; the position of a name is its canonical id.
class TeamLabelRegistry {
 public:
  TeamLabelRegistry() = default;

  explicit TeamLabelRegistry(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) throw DataError("registry needs at least 2 labels");
    std::unordered_set<std::string> seen;
    for (const auto& name : labels_) {
      if (name.empty()) throw DataError("registry label names must be non-empty");
      if (!seen.insert(name).second) throw DataError("duplicate registry label: " + name);
    }
  }

  std::size_t size() const { return labels_.size(); }
  const std::string& name(std::size_t id) const { return labels_.at(id); }
  const std::vector<std::string>& names() const { return labels_; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = std::find(labels_.begin(), labels_.end(), name);
    if (it == labels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels_.begin());
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& name : labels_) {
      h = fnv1a64(name, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }

 private:
  std::vector<std::string> labels_;
};

enum class Provenance { real, synthetic, weak, augmented, mlsmote };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::real: return "real";
    case Provenance::synthetic: return "synthetic";
    case Provenance::weak: return "weak";
    case Provenance::augmented: return "augmented";
    case Provenance::mlsmote: return "mlsmote";
  }
  throw InternalError("unreachable provenance");
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "real") return Provenance::real;
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "weak") return Provenance::weak;
  if (s == "augmented") return Provenance::augmented;
  if (s == "mlsmote") return Provenance::mlsmote;
  throw DataError("unknown provenance: " + s);
}

struct Defect {
  std::string id;
  std::string title;
  std::string description;
  std::set<std::size_t> labels;
  Provenance provenance = Provenance::synthetic;
};

enum class Split { train, dev, test };

struct Dataset {
  TeamLabelRegistry registry;
  std::vector<Defect> defects;
  Split split = Split::train;

  std::size_t size() const { return defects.size(); }

  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& d : defects) {
      if (d.title.empty() && d.description.empty())
        throw DataError("defect " + d.id + ": title and description both empty");
      if (!ids.insert(d.id).second) throw DataError("duplicate defect id: " + d.id);
      for (std::size_t t : d.labels) {
        if (t >= registry.size())
          throw DataError("defect " + d.id + ": label id out of range");
      }
    }
  }
};

// Defect text as the models see it: title, one " . " separator, description.
inline std::string build_text(const Defect& d) {
  return d.title + " . " + d.description;
}

// Producing-command provenance embedded as a '#' header line in JSONL artifacts.
// `root` identifies the corpus family; pipeline stages preserve it so the
// experiment runner can refuse mixed-lineage inputs.
struct Lineage {
  std::string command;
  std::string config_hash;
  std::string root_hash;
};

inline std::string lineage_header_line(const Lineage& lineage) {
  nlohmann::ordered_json j;
  j["cmd"] = lineage.command;
  j["config"] = lineage.config_hash;
  j["root"] = lineage.root_hash;
  return "# deftri " + j.dump();
}

inline std::optional<Lineage> parse_lineage_line(const std::string& line) {
  const std::string prefix = "# deftri ";
  if (line.rfind(prefix, 0) != 0) return std::nullopt;
  const auto j = nlohmann::json::parse(line.substr(prefix.size()), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  Lineage lineage;
  lineage.command = j.value("cmd", "");
  lineage.config_hash = j.value("config", "");
  lineage.root_hash = j.value("root", "");
  return lineage;
}

inline std::optional<Lineage> read_lineage(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto lineage = parse_lineage_line(line);
      if (lineage) return lineage;
      continue;
    }
    break;
  }
  return std::nullopt;
}

inline Dataset load_dataset(const std::string& path, const TeamLabelRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  Dataset ds;
  ds.registry = registry;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed record");
    for (const char* key : {"id", "title", "description", "labels", "provenance"}) {
      if (!j.contains(key))
        throw DataError(path + ":" + std::to_string(line_no) + ": missing key '" + key + "'");
    }
    Defect d;
    try {
      d.id = j.at("id").get<std::string>();
      d.title = j.at("title").get<std::string>();
      d.description = j.at("description").get<std::string>();
      for (const auto& name : j.at("labels")) {
        const auto label_name = name.get<std::string>();
        const auto id = registry.find(label_name);
        if (!id)
          throw DataError(path + ":" + std::to_string(line_no) + ": unknown label \"" +
                          label_name + "\"");
        d.labels.insert(*id);
      }
      d.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    } catch (const nlohmann::json::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed record");
    }
    if (d.title.empty() && d.description.empty())
      throw DataError(path + ":" + std::to_string(line_no) + ": title and description both empty");
    if (!ids.insert(d.id).second)
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate id \"" + d.id + "\"");
    ds.defects.push_back(std::move(d));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path,
                         const std::optional<Lineage>& lineage = std::nullopt) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file: " + path);
  if (lineage) out << lineage_header_line(*lineage) << "\n";
  for (const auto& d : ds.defects) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["title"] = d.title;
    j["description"] = d.description;
    auto labels = nlohmann::json::array();
    for (std::size_t t : d.labels) labels.push_back(ds.registry.name(t));
    j["labels"] = std::move(labels);
    j["provenance"] = to_string(d.provenance);
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("I/O failure writing " + path);
}

inline TeamLabelRegistry load_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open registry file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw DataError("registry file is not valid JSON: " + path);
  }
  if (!j.is_array()) throw DataError("registry file must be a JSON array of label names");
  std::vector<std::string> names;
  for (const auto& item : j) names.push_back(item.get<std::string>());
  return TeamLabelRegistry(std::move(names));
}

inline void save_registry(const TeamLabelRegistry& registry, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write registry file: " + path);
  out << nlohmann::json(registry.names()).dump(2) << "\n";
}

// Per-label positive counts; shared by the balancing stats and reports.
inline std::vector<std::size_t> label_counts(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.registry.size(), 0);
  for (const auto& d : ds.defects)
    for (std::size_t t : d.labels) ++counts[t];
  return counts;
}

}  // namespace deftri
