#pragma once

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"
#include "deftri/tokenizer.hpp"

namespace deftri {

// Per-label imbalance: IRLbl(t) = max count / count(t), MeanIR over labels
// that actually occur. Zero-count labels are tracked separately since their
// ratio is undefined.
struct ImbalanceStats {
  std::vector<std::size_t> counts;
  std::vector<double> irlbl;  // 0 for zero-count labels (flagged below)
  std::vector<std::size_t> zero_count_labels;
  double mean_ir = 0.0;
};

inline ImbalanceStats imbalance_stats(const Dataset& ds) {
  if (ds.defects.empty()) throw DataError("imbalance_stats: dataset is empty");
  ImbalanceStats stats;
  stats.counts = label_counts(ds);
  const std::size_t max_count = *std::max_element(stats.counts.begin(), stats.counts.end());
  if (max_count == 0) throw DataError("imbalance_stats: no label occurs in the dataset");
  stats.irlbl.assign(stats.counts.size(), 0.0);
  double sum = 0.0;
  std::size_t populated = 0;
  for (std::size_t t = 0; t < stats.counts.size(); ++t) {
    if (stats.counts[t] == 0) {
      stats.zero_count_labels.push_back(t);
      continue;
    }
    stats.irlbl[t] = static_cast<double>(max_count) / static_cast<double>(stats.counts[t]);
    sum += stats.irlbl[t];
    ++populated;
  }
  stats.mean_ir = sum / static_cast<double>(populated);
  return stats;
}

inline std::set<std::size_t> minority_labels(const ImbalanceStats& stats) {
  std::set<std::size_t> out;
  for (std::size_t t = 0; t < stats.irlbl.size(); ++t)
    if (stats.counts[t] > 0 && stats.irlbl[t] > stats.mean_ir) out.insert(t);
  return out;
}

struct RebalanceReport {
  std::vector<std::size_t> counts_before;
  std::vector<std::size_t> counts_after;
  double mean_ir_before = 0.0;
  double mean_ir_after = 0.0;
  std::set<std::size_t> minority;
  std::vector<std::size_t> skipped_labels;  // minority labels with < k+1 samples
  std::size_t synthesized = 0;
};

namespace detail {

// Bag-of-token features over the dataset's own token inventory, with enough
// ordering information to realize synthetic text again.
struct FeatureSpace {
  std::unordered_map<std::string, std::size_t> token_ids;
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> features;            // per sample, dense counts
  std::vector<std::vector<std::size_t>> token_order;    // per sample, distinct first-occurrence order

  explicit FeatureSpace(const Dataset& ds) {
    std::vector<std::vector<std::string>> streams;
    streams.reserve(ds.size());
    for (const auto& d : ds.defects) streams.push_back(tokenize(build_text(d)));
    // Lexicographic token ids keep the space independent of sample order.
    std::set<std::string> sorted;
    for (const auto& stream : streams)
      for (const auto& tok : stream) sorted.insert(tok);
    for (const auto& tok : sorted) {
      token_ids[tok] = tokens.size();
      tokens.push_back(tok);
    }
    if (tokens.empty()) throw DataError("mlsmote: empty vocabulary");
    features.assign(ds.size(), std::vector<double>(tokens.size(), 0.0));
    token_order.resize(ds.size());
    for (std::size_t i = 0; i < streams.size(); ++i) {
      std::set<std::size_t> seen;
      for (const auto& tok : streams[i]) {
        const std::size_t id = token_ids.at(tok);
        features[i][id] += 1.0;
        if (seen.insert(id).second) token_order[i].push_back(id);
      }
    }
  }
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline std::string realize_text(const std::vector<double>& synth,
                                const std::vector<std::size_t>& order_s,
                                const std::vector<std::size_t>& order_n,
                                const FeatureSpace& space) {
  std::vector<std::size_t> order = order_s;
  std::set<std::size_t> in_s(order_s.begin(), order_s.end());
  for (const std::size_t id : order_n)
    if (!in_s.count(id)) order.push_back(id);
  std::string text;
  for (const std::size_t id : order) {
    const auto reps = static_cast<long>(synth[id]);
    for (long r = 0; r < reps; ++r) {
      if (!text.empty()) text.push_back(' ');
      text += space.tokens[id];
    }
  }
  return text;
}

}  // namespace detail

// MLSMOTE with the ranking labelset strategy: for every sample of a minority
// label, interpolate its bag-of-token features toward one of its k nearest
// same-label neighbors and keep each label that appears in more than half of
// the k+1 contributing labelsets. Originals are never modified.
inline RebalanceReport mlsmote(Dataset& ds, std::size_t k = 5, std::uint64_t seed = 13) {
  if (k < 1) throw ConfigError("mlsmote: k must be >= 1");
  const ImbalanceStats before = imbalance_stats(ds);
  RebalanceReport report;
  report.counts_before = before.counts;
  report.mean_ir_before = before.mean_ir;
  report.minority = minority_labels(before);

  const detail::FeatureSpace space(ds);
  const std::size_t original_count = ds.defects.size();
  Rng rng(seed);

  std::vector<Defect> synthesized;
  for (const std::size_t t : report.minority) {
    std::vector<std::size_t> bag;
    for (std::size_t i = 0; i < original_count; ++i)
      if (ds.defects[i].labels.count(t)) bag.push_back(i);
    if (bag.size() < k + 1) {
      report.skipped_labels.push_back(t);
      continue;
    }
    for (std::size_t bi = 0; bi < bag.size(); ++bi) {
      const std::size_t s = bag[bi];
      if (space.token_order[s].empty()) continue;  // no tokens to interpolate
      // k nearest same-label neighbors, ties broken by sample index.
      std::vector<std::pair<double, std::size_t>> dists;
      for (const std::size_t other : bag) {
        if (other == s) continue;
        dists.emplace_back(detail::squared_distance(space.features[s], space.features[other]),
                           other);
      }
      std::sort(dists.begin(), dists.end());
      dists.resize(k);

      const std::size_t n = dists[rng.uniform_index(k)].second;
      const double r = rng.uniform();

      std::vector<double> synth(space.tokens.size());
      for (std::size_t j = 0; j < synth.size(); ++j) {
        const double interp =
            space.features[s][j] + r * (space.features[n][j] - space.features[s][j]);
        synth[j] = std::nearbyint(interp);  // nearest integer, ties to even
      }

      // Ranking rule over the k+1 member labelsets.
      std::map<std::size_t, std::size_t> votes;
      for (const std::size_t label : ds.defects[s].labels) ++votes[label];
      for (const auto& [dist, idx] : dists)
        for (const std::size_t label : ds.defects[idx].labels) ++votes[label];
      std::set<std::size_t> labels;
      for (const auto& [label, count] : votes)
        if (2 * count > k + 1) labels.insert(label);

      Defect d;
      d.id = "mls-" + ds.registry.name(t) + "-" + std::to_string(bi);
      d.title = detail::realize_text(synth, space.token_order[s], space.token_order[n], space);
      d.description = "";
      d.labels = std::move(labels);
      d.provenance = Provenance::mlsmote;
      if (d.title.empty()) d.title = space.tokens[space.token_order[s].front()];
      synthesized.push_back(std::move(d));
    }
  }

  report.synthesized = synthesized.size();
  for (auto& d : synthesized) ds.defects.push_back(std::move(d));
  ds.validate();
  const ImbalanceStats after = imbalance_stats(ds);
  report.counts_after = after.counts;
  report.mean_ir_after = after.mean_ir;
  return report;
}

}  // namespace deftri
