#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"
#include "deftri/embedding.hpp"

namespace deftri {

struct AugmentConfig {
  double sample_fraction = 0.30;
  std::size_t copies_per_defect = 2;
  double perturb_rate = 0.10;
  double min_cosine = 0.8;
  std::size_t neighbor_k = 10;
  std::uint64_t seed = 11;

  void validate() const {
    if (sample_fraction <= 0.0 || sample_fraction > 1.0)
      throw ConfigError("sample_fraction must be in (0, 1]");
    if (perturb_rate <= 0.0 || perturb_rate > 1.0)
      throw ConfigError("perturb_rate must be in (0, 1]");
    if (min_cosine < -1.0 || min_cosine > 1.0) throw ConfigError("min_cosine must be in [-1, 1]");
    if (copies_per_defect < 1) throw ConfigError("copies_per_defect must be >= 1");
    if (neighbor_k < 1) throw ConfigError("neighbor_k must be >= 1");
  }
};

struct SwapRecord {
  std::string copy_id;
  std::size_t position = 0;
  std::string original;
  std::string replacement;
  double cosine = 0.0;
};

struct AugmentOutcome {
  std::vector<Defect> copies;
  std::vector<SwapRecord> swaps;
  std::size_t shortfall = 0;  // copies that had fewer qualifying positions than the budget
  bool skipped = false;       // no position qualified at all
};

namespace detail {

struct WordSlot {
  std::string prefix;  // leading punctuation, preserved verbatim
  std::string core;
  std::string suffix;  // trailing punctuation
  bool in_title = false;
};

inline bool is_word_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

inline std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!current.empty()) {
        words.push_back(current);
        current.clear();
      }
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

inline WordSlot split_word(const std::string& word, bool in_title) {
  WordSlot slot;
  slot.in_title = in_title;
  std::size_t start = 0;
  std::size_t end = word.size();
  while (start < end && !is_word_char(static_cast<unsigned char>(word[start]))) ++start;
  while (end > start && !is_word_char(static_cast<unsigned char>(word[end - 1]))) --end;
  slot.prefix = word.substr(0, start);
  slot.core = word.substr(start, end - start);
  slot.suffix = word.substr(end);
  return slot;
}

inline std::string restore_case(const std::string& replacement, const std::string& original) {
  if (original.empty() || replacement.empty()) return replacement;
  const char first = original.front();
  if (first >= 'A' && first <= 'Z') {
    std::string out = replacement;
    if (out.front() >= 'a' && out.front() <= 'z')
      out.front() = static_cast<char>(out.front() - 'a' + 'A');
    return out;
  }
  return replacement;
}

inline std::string join_words(const std::vector<WordSlot>& slots, bool title_part) {
  std::string out;
  for (const auto& slot : slots) {
    if (slot.in_title != title_part) continue;
    if (!out.empty()) out.push_back(' ');
    out += slot.prefix + slot.core + slot.suffix;
  }
  return out;
}

}  // namespace detail

// Produces copies_per_defect perturbed copies of one defect. The per-copy
// budget is max(1, ceil(perturb_rate * word_count)); only positions whose word
// has a qualifying embedding neighbor can be altered, and labels are copied
// verbatim.
inline AugmentOutcome augment_defect(const Defect& d, const AugmentConfig& cfg,
                                     const EmbeddingTable& table, Rng& rng) {
  cfg.validate();
  std::vector<detail::WordSlot> slots;
  for (const auto& w : detail::whitespace_words(d.title))
    slots.push_back(detail::split_word(w, true));
  for (const auto& w : detail::whitespace_words(d.description))
    slots.push_back(detail::split_word(w, false));
  if (slots.empty()) throw DataError("augment_defect: defect " + d.id + " has no words");

  std::vector<std::size_t> qualifying;
  std::vector<std::vector<Neighbor>> neighbor_lists(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].core.empty()) continue;
    auto neighbors = nearest_neighbors(slots[i].core, table, cfg.neighbor_k, cfg.min_cosine);
    if (!neighbors.empty()) {
      qualifying.push_back(i);
      neighbor_lists[i] = std::move(neighbors);
    }
  }

  AugmentOutcome outcome;
  if (qualifying.empty()) {
    outcome.skipped = true;
    return outcome;
  }

  const std::size_t word_count = slots.size();
  const std::size_t budget = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.perturb_rate * static_cast<double>(word_count))));

  for (std::size_t copy = 0; copy < cfg.copies_per_defect; ++copy) {
    const std::size_t altered = std::min(budget, qualifying.size());
    if (altered < budget) ++outcome.shortfall;
    const auto picks = rng.sample_without_replacement(qualifying.size(), altered);

    auto mutated = slots;
    Defect out = d;
    out.id = d.id + "-aug" + std::to_string(copy);
    out.provenance = Provenance::augmented;
    for (const auto pick : picks) {
      const std::size_t pos = qualifying[pick];
      const auto& candidates = neighbor_lists[pos];
      const auto& choice = candidates[rng.uniform_index(candidates.size())];
      SwapRecord swap;
      swap.copy_id = out.id;
      swap.position = pos;
      swap.original = mutated[pos].core;
      swap.replacement = choice.word;
      swap.cosine = choice.cosine;
      mutated[pos].core = detail::restore_case(choice.word, mutated[pos].core);
      outcome.swaps.push_back(std::move(swap));
    }
    out.title = detail::join_words(mutated, true);
    out.description = detail::join_words(mutated, false);
    outcome.copies.push_back(std::move(out));
  }
  return outcome;
}

struct AugmentReport {
  std::size_t sampled = 0;
  std::size_t produced = 0;
  std::size_t skipped = 0;
  std::size_t shortfall = 0;
  std::vector<SwapRecord> swaps;
};

// Samples floor(sample_fraction * N) defects without replacement and appends
// all produced copies. Each source defect gets its own substream derived from
// (seed, source index) so output is independent of sampling order.
inline AugmentReport augment_dataset(Dataset& ds, const AugmentConfig& cfg,
                                     const EmbeddingTable& table) {
  cfg.validate();
  if (ds.defects.empty()) throw DataError("augment_dataset: dataset is empty");
  const std::size_t n = ds.defects.size();
  const auto take = static_cast<std::size_t>(std::floor(cfg.sample_fraction * static_cast<double>(n)));

  Rng sampler(cfg.seed);
  auto picks = sampler.sample_without_replacement(n, take);
  std::sort(picks.begin(), picks.end());

  AugmentReport report;
  report.sampled = picks.size();
  std::vector<Defect> appended;
  for (const std::size_t idx : picks) {
    Rng rng(cfg.seed, idx + 1);
    auto outcome = augment_defect(ds.defects[idx], cfg, table, rng);
    if (outcome.skipped) {
      ++report.skipped;
      continue;
    }
    report.shortfall += outcome.shortfall;
    for (auto& swap : outcome.swaps) report.swaps.push_back(std::move(swap));
    for (auto& copy : outcome.copies) appended.push_back(std::move(copy));
  }
  report.produced = appended.size();
  for (auto& copy : appended) ds.defects.push_back(std::move(copy));
  ds.validate();
  return report;
}

}  // namespace deftri
