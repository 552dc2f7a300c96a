#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"
#include "deftri/tokenizer.hpp"

namespace deftri {

// A single heuristic rule: fires on a defect text and emits a fixed label set,
// or abstains. Keyword triggers match case-insensitive whole words; pattern
// triggers are unanchored case-insensitive globs where '*' spans anything.
struct LabelingFunction {
  enum class Kind { keyword, pattern };

  std::string id;
  Kind kind = Kind::keyword;
  std::vector<std::string> keywords;  // kind == keyword
  std::string pattern;                // kind == pattern
  std::set<std::size_t> emits;

  void validate(const TeamLabelRegistry& registry) const {
    if (emits.empty()) throw DataError("LF " + id + ": emits must be nonempty");
    for (std::size_t t : emits)
      if (t >= registry.size()) throw DataError("LF " + id + ": label id out of range");
    if (kind == Kind::keyword && keywords.empty())
      throw DataError("LF " + id + ": keyword trigger must be nonempty");
    if (kind == Kind::pattern && pattern.empty())
      throw DataError("LF " + id + ": pattern trigger must be nonempty");
  }
};

namespace detail {

// Unanchored glob: the pieces between '*'s must occur in order as substrings.
inline bool glob_contains(const std::string& text, const std::string& pattern) {
  std::vector<std::string> pieces;
  std::string piece;
  for (char c : pattern) {
    if (c == '*') {
      if (!piece.empty()) pieces.push_back(piece);
      piece.clear();
    } else {
      piece.push_back(c);
    }
  }
  if (!piece.empty()) pieces.push_back(piece);
  std::size_t pos = 0;
  for (const auto& p : pieces) {
    const auto found = text.find(p, pos);
    if (found == std::string::npos) return false;
    pos = found + p.size();
  }
  return true;
}

}  // namespace detail

inline bool lf_fires(const LabelingFunction& lf, const std::string& text) {
  if (lf.kind == LabelingFunction::Kind::keyword) {
    const auto tokens = tokenize(text);
    const std::unordered_set<std::string> token_set(tokens.begin(), tokens.end());
    for (const auto& kw : lf.keywords)
      if (token_set.count(lowercase_ascii(kw))) return true;
    return false;
  }
  return detail::glob_contains(lowercase_ascii(text), lowercase_ascii(lf.pattern));
}

// cell(i, f) is either ABSTAIN or exactly lfs[f].emits; stored as a fired bit.
struct LabelMatrix {
  std::size_t num_defects = 0;
  std::size_t num_functions = 0;
  std::vector<std::uint8_t> fired;  // row-major num_defects x num_functions

  bool cell_fired(std::size_t i, std::size_t f) const { return fired[i * num_functions + f] != 0; }
};

inline LabelMatrix apply_lfs(const Dataset& ds, const std::vector<LabelingFunction>& lfs) {
  if (lfs.empty()) throw DataError("apply_lfs: LF list is empty");
  for (const auto& lf : lfs) lf.validate(ds.registry);
  LabelMatrix m;
  m.num_defects = ds.size();
  m.num_functions = lfs.size();
  m.fired.assign(m.num_defects * m.num_functions, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string text = build_text(ds.defects[i]);
    for (std::size_t f = 0; f < lfs.size(); ++f)
      m.fired[i * m.num_functions + f] = lf_fires(lfs[f], text) ? 1 : 0;
  }
  return m;
}

struct LabelModelParams {
  std::vector<double> weights;    // per-LF, in [0, 1]
  double assign_threshold = 0.5;  // tau_v

  void validate() const {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0 || w > 1.0) throw DataError("LF weight outside [0, 1]");
      total += w;
    }
    if (total <= 0.0) throw DataError("label model has no positive-weight LFs");
    if (assign_threshold <= 0.0 || assign_threshold > 1.0)
      throw ConfigError("assign threshold must be in (0, 1]");
  }
};

// Weight per LF = empirical precision on the annotated dev set; a firing is
// correct when the emitted set is contained in the defect's gold labels. LFs
// that never fire get the uninformative prior 0.5.
inline LabelModelParams fit_label_model(const std::vector<LabelingFunction>& lfs,
                                        const Dataset& dev, double assign_threshold = 0.5) {
  if (dev.defects.empty()) throw DataError("fit_label_model: dev set is empty");
  const LabelMatrix m = apply_lfs(dev, lfs);
  LabelModelParams params;
  params.assign_threshold = assign_threshold;
  params.weights.resize(lfs.size(), 0.5);
  for (std::size_t f = 0; f < lfs.size(); ++f) {
    std::size_t fires = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
      if (!m.cell_fired(i, f)) continue;
      ++fires;
      const auto& gold = dev.defects[i].labels;
      bool subset = true;
      for (std::size_t t : lfs[f].emits)
        if (!gold.count(t)) {
          subset = false;
          break;
        }
      if (subset) ++correct;
    }
    if (fires > 0) params.weights[f] = static_cast<double>(correct) / static_cast<double>(fires);
  }
  params.validate();
  return params;
}

struct WeakLabels {
  std::vector<std::set<std::size_t>> labels;  // one entry per defect
  std::vector<std::uint8_t> covered;          // 0 = no LF fired (or all firing weight 0)

  std::size_t coverage() const {
    std::size_t n = 0;
    for (auto c : covered) n += c;
    return n;
  }
};

// Per-label score = firing weight emitting the label / total firing weight;
// the label is assigned when the score reaches tau_v.
inline WeakLabels aggregate(const LabelMatrix& m, const std::vector<LabelingFunction>& lfs,
                            const LabelModelParams& params) {
  params.validate();
  if (m.num_functions != lfs.size() || params.weights.size() != lfs.size())
    throw InternalError("aggregate: matrix, LF list, and params disagree on size");
  WeakLabels out;
  out.labels.resize(m.num_defects);
  out.covered.assign(m.num_defects, 0);
  for (std::size_t i = 0; i < m.num_defects; ++i) {
    double total = 0.0;
    std::map<std::size_t, double> per_label;
    for (std::size_t f = 0; f < lfs.size(); ++f) {
      if (!m.cell_fired(i, f)) continue;
      total += params.weights[f];
      for (std::size_t t : lfs[f].emits) per_label[t] += params.weights[f];
    }
    if (total <= 0.0) continue;  // abstained everywhere, or only zero-weight LFs fired
    out.covered[i] = 1;
    for (const auto& [t, mass] : per_label)
      if (mass / total >= params.assign_threshold) out.labels[i].insert(t);
  }
  return out;
}

inline std::vector<LabelingFunction> load_labeling_functions(const std::string& path,
                                                             const TeamLabelRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open LF file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw DataError("LF file is not valid JSON: " + path);
  }
  if (!j.is_array()) throw DataError("LF file must be a JSON array");
  std::vector<LabelingFunction> lfs;
  for (const auto& item : j) {
    LabelingFunction lf;
    lf.id = item.at("id").get<std::string>();
    const auto kind = item.at("kind").get<std::string>();
    if (kind == "keyword") {
      lf.kind = LabelingFunction::Kind::keyword;
      lf.keywords = item.at("trigger").get<std::vector<std::string>>();
    } else if (kind == "pattern") {
      lf.kind = LabelingFunction::Kind::pattern;
      lf.pattern = item.at("trigger").get<std::string>();
    } else {
      throw DataError("LF " + lf.id + ": unknown kind \"" + kind + "\"");
    }
    for (const auto& name : item.at("emits")) {
      const auto label = registry.find(name.get<std::string>());
      if (!label) throw DataError("LF " + lf.id + ": unknown label \"" +
                                  name.get<std::string>() + "\"");
      lf.emits.insert(*label);
    }
    lf.validate(registry);
    lfs.push_back(std::move(lf));
  }
  return lfs;
}

inline void save_labeling_functions(const std::vector<LabelingFunction>& lfs,
                                    const TeamLabelRegistry& registry, const std::string& path) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& lf : lfs) {
    nlohmann::ordered_json j;
    j["id"] = lf.id;
    j["kind"] = lf.kind == LabelingFunction::Kind::keyword ? "keyword" : "pattern";
    if (lf.kind == LabelingFunction::Kind::keyword)
      j["trigger"] = lf.keywords;
    else
      j["trigger"] = lf.pattern;
    auto emits = nlohmann::json::array();
    for (std::size_t t : lf.emits) emits.push_back(registry.name(t));
    j["emits"] = std::move(emits);
    arr.push_back(std::move(j));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write LF file: " + path);
  out << arr.dump(2) << "\n";
}

// One keyword LF per label, keyed to its signature pool. This is the bundled
// lexicon used by the synthetic pipeline.
inline std::vector<LabelingFunction> pool_keyword_lfs(
    const std::vector<std::vector<std::string>>& pools, const TeamLabelRegistry& registry) {
  std::vector<LabelingFunction> lfs;
  for (std::size_t t = 0; t < pools.size(); ++t) {
    LabelingFunction lf;
    lf.id = "kw_" + registry.name(t);
    lf.kind = LabelingFunction::Kind::keyword;
    lf.keywords = pools[t];
    lf.emits = {t};
    lfs.push_back(std::move(lf));
  }
  return lfs;
}

}  // namespace deftri
