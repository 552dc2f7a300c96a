#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"
#include "deftri/tokenizer.hpp"

namespace deftri {

// Stand-in for a real defect tracker export: every generated defect plants at
// least one signature word per ground-truth label, so weak supervision and
// end-to-end runs have a constructible oracle.
struct SyntheticCorpusSpec {
  std::size_t size = 2000;
  std::size_t labels_lo = 1;
  std::size_t labels_hi = 3;
  std::vector<std::vector<std::string>> keyword_pool;  // indexed by label id
  std::vector<std::string> noise_vocab;
  std::vector<std::string> sentence_templates;  // clauses with {kw} and {n} slots
  std::vector<double> label_weights;            // empty = uniform
  std::uint64_t seed = 7;
  std::string id_prefix = "syn";
};

inline std::vector<std::vector<std::string>> default_keyword_pools() {
  return {
      {"search", "query", "autocomplete", "typeahead", "relevance", "lookup"},
      {"pricing", "price", "discount", "coupon", "markdown", "surcharge"},
      {"cart", "basket", "trolley", "subtotal", "lineitem", "quantity"},
      {"checkout", "purchase", "ordering", "confirmation", "placement", "buying"},
      {"payments", "payment", "card", "wallet", "transaction", "giftcard"},
      {"delivery", "shipping", "courier", "dispatch", "tracking", "shipment"},
      {"returns", "return", "refund", "exchange", "rma", "restocking"},
      {"account", "login", "password", "signup", "profile", "authentication"},
      {"catalog", "listing", "taxonomy", "attribute", "variant", "sku"},
      {"mobile", "android", "ios", "app", "device", "tablet"},
      {"loyalty", "points", "rewards", "membership", "tier", "redemption"},
      {"reviews", "review", "rating", "stars", "feedback", "comment"},
      {"notifications", "notification", "email", "sms", "push", "alert"},
      {"inventory", "stock", "warehouse", "availability", "backorder", "replenishment"},
      {"support", "chat", "helpdesk", "agent", "ticket", "escalation"},
  };
}

inline std::vector<std::string> default_noise_vocab() {
  return {"showing",     "displaying", "cost",       "prices",     "nutrition",
          "nourishment", "large",      "big",        "small",      "tiny",
          "wrong",       "incorrect",  "slow",       "sluggish",   "missing",
          "absent",      "broken",     "faulty",     "page",       "screen",
          "button",      "banner",     "spacing",    "layout",     "image",
          "text",        "user",       "customer",   "error",      "issue",
          "glitch",      "crash",      "freeze",     "blank",      "overlap",
          "duplicate",   "stale",      "outdated",   "random",     "intermittent",
          "persistent",  "minor",      "major",      "critical",   "visible",
          "hidden",      "clicking",   "tapping",    "scrolling",  "loading",
          "saving",      "opening",    "closing",    "refresh",    "session",
          "timeout",     "header",     "footer",     "modal",      "popup",
          "tooltip",     "dropdown",   "checkbox",   "toggle",     "widget",
          "tile",        "grid",       "detail",     "summary",    "total",
          "amount",      "value",      "number",     "count",      "date",
          "time",        "today",      "yesterday",  "twice",      "once",
          "again",       "still",      "sometimes",  "always",     "inconsistently",
          "unexpectedly", "incorrectly", "properly", "correctly",  "weekly",
          "daily",       "empty",      "full",       "partial",    "extra"};
}

inline std::vector<std::string> default_sentence_templates() {
  return {"the {kw} is {n} on the {n} page",
          "{kw} {n} when {n}",
          "{kw} looks {n} after {n} refresh",
          "users see {n} {kw} during {n}",
          "the {n} {kw} appears {n}",
          "{kw} fails with {n} {n}",
          "tapping the {kw} causes {n} {n}",
          "{kw} section shows {n} data",
          "the {kw} banner is {n}",
          "{n} {kw} not updating"};
}

// Synonym groups used by the bundled embedding table: words inside a group get
// near-parallel vectors, so each is the others' qualifying neighbor. Keyword
// pools are added as groups too, keeping substitutions label-safe.
inline std::vector<std::vector<std::string>> curated_synonym_groups() {
  return {{"showing", "displaying"}, {"cost", "prices"},   {"nutrition", "nourishment"},
          {"large", "big"},          {"small", "tiny"},    {"wrong", "incorrect"},
          {"slow", "sluggish"},      {"missing", "absent"}, {"broken", "faulty"},
          {"page", "screen"},        {"clicking", "tapping"}};
}

inline SyntheticCorpusSpec default_corpus_spec() {
  SyntheticCorpusSpec spec;
  spec.keyword_pool = default_keyword_pools();
  spec.noise_vocab = default_noise_vocab();
  spec.sentence_templates = default_sentence_templates();
  return spec;
}

inline TeamLabelRegistry default_registry() {
  std::vector<std::string> names;
  for (const auto& pool : default_keyword_pools()) names.push_back(pool.front());
  return TeamLabelRegistry(std::move(names));
}

inline void validate_spec(const SyntheticCorpusSpec& spec, const TeamLabelRegistry& registry) {
  if (spec.keyword_pool.size() != registry.size())
    throw ConfigError("keyword_pool must have one pool per registry label");
  std::unordered_set<std::string> seen;
  for (const auto& pool : spec.keyword_pool) {
    if (pool.empty()) throw ConfigError("empty signature-word pool");
    for (const auto& word : pool)
      if (!seen.insert(word).second)
        throw ConfigError("signature-word pools overlap on \"" + word + "\"");
  }
  for (const auto& word : spec.noise_vocab)
    if (seen.count(word)) throw ConfigError("noise word \"" + word + "\" collides with a pool");
  for (const auto& tmpl : spec.sentence_templates)
    for (const auto& tok : tokenize(tmpl))
      if (tok != "kw" && tok != "n" && seen.count(tok))
        throw ConfigError("template word \"" + tok + "\" collides with a pool");
  if (spec.labels_lo < 1 || spec.labels_lo > spec.labels_hi ||
      spec.labels_hi > registry.size())
    throw ConfigError("labels_per_defect range is invalid");
  if (!spec.label_weights.empty() && spec.label_weights.size() != registry.size())
    throw ConfigError("label_weights must have one entry per label");
  if (spec.noise_vocab.empty() || spec.sentence_templates.empty())
    throw ConfigError("noise vocabulary and sentence templates must be nonempty");
}

namespace detail {

inline std::size_t weighted_pick(const std::vector<double>& cumulative, Rng& rng) {
  const double total = cumulative.back();
  const double x = rng.uniform() * total;
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
  std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
  return idx >= cumulative.size() ? cumulative.size() - 1 : idx;
}

inline std::string instantiate_template(const std::string& tmpl, const std::string& keyword,
                                        const SyntheticCorpusSpec& spec, Rng& rng) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    if (tmpl.compare(pos, 4, "{kw}") == 0) {
      out += keyword;
      pos += 4;
    } else if (tmpl.compare(pos, 3, "{n}") == 0) {
      out += spec.noise_vocab[rng.uniform_index(spec.noise_vocab.size())];
      pos += 3;
    } else {
      out.push_back(tmpl[pos]);
      ++pos;
    }
  }
  return out;
}

}  // namespace detail

inline Dataset generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                         const TeamLabelRegistry& registry) {
  validate_spec(spec, registry);
  const std::size_t T = registry.size();
  if (spec.size == 0 && spec.labels_lo > 0)
    throw ConfigError("size 0 with nonzero labels requested");

  std::vector<double> weights = spec.label_weights;
  if (weights.empty()) weights.assign(T, 1.0);
  std::size_t usable_labels = 0;
  std::vector<double> cumulative(T, 0.0);
  double running = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (weights[t] < 0.0) throw ConfigError("label weights must be nonnegative");
    if (weights[t] > 0.0) ++usable_labels;
    running += weights[t];
    cumulative[t] = running;
  }
  if (usable_labels < spec.labels_hi)
    throw ConfigError("not enough positive-weight labels for labels_per_defect range");

  Rng rng(spec.seed);
  Dataset ds;
  ds.registry = registry;
  ds.split = Split::train;
  ds.defects.reserve(spec.size);

  char idbuf[64];
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t want =
        spec.labels_lo + rng.uniform_index(spec.labels_hi - spec.labels_lo + 1);

    // Draw-ordered distinct labels. In uniform mode, defect i always carries
    // label i mod T, so any corpus of size >= k*T covers each label >= k
    // times. Weighted mode draws freely to preserve the requested skew.
    std::vector<std::size_t> chosen;
    std::set<std::size_t> chosen_set;
    if (spec.label_weights.empty()) {
      chosen.push_back(i % T);
      chosen_set.insert(i % T);
    }
    while (chosen.size() < want) {
      const std::size_t t = detail::weighted_pick(cumulative, rng);
      if (weights[t] <= 0.0 || chosen_set.count(t)) continue;
      chosen.push_back(t);
      chosen_set.insert(t);
    }

    const auto pick_word = [&](std::size_t label) -> const std::string& {
      const auto& pool = spec.keyword_pool[label];
      return pool[rng.uniform_index(pool.size())];
    };
    const auto pick_template = [&]() -> const std::string& {
      return spec.sentence_templates[rng.uniform_index(spec.sentence_templates.size())];
    };

    Defect d;
    std::snprintf(idbuf, sizeof(idbuf), "%s-%06zu", spec.id_prefix.c_str(), i);
    d.id = idbuf;
    d.title = detail::instantiate_template(pick_template(), pick_word(chosen.front()), spec, rng);
    std::string desc;
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      if (j > 0) desc += " . ";
      desc += detail::instantiate_template(pick_template(), pick_word(chosen[j]), spec, rng);
    }
    if (rng.uniform() < 0.3) {
      desc += " . ";
      desc += detail::instantiate_template(
          pick_template(), spec.noise_vocab[rng.uniform_index(spec.noise_vocab.size())], spec,
          rng);
    }
    d.description = desc;
    d.labels = std::move(chosen_set);
    d.provenance = Provenance::synthetic;
    ds.defects.push_back(std::move(d));
  }
  ds.validate();
  return ds;
}

inline std::uint64_t corpus_family_hash(const SyntheticCorpusSpec& spec,
                                        const TeamLabelRegistry& registry) {
  std::uint64_t h = registry.hash();
  for (const auto& pool : spec.keyword_pool)
    for (const auto& w : pool) h = fnv1a64(w, fnv1a64("|", h));
  for (const auto& w : spec.noise_vocab) h = fnv1a64(w, fnv1a64(";", h));
  for (const auto& t : spec.sentence_templates) h = fnv1a64(t, fnv1a64("~", h));
  return h;
}

inline nlohmann::ordered_json spec_to_json(const SyntheticCorpusSpec& spec) {
  nlohmann::ordered_json j;
  j["size"] = spec.size;
  j["labels_per_defect"] = {spec.labels_lo, spec.labels_hi};
  j["keyword_pool"] = spec.keyword_pool;
  j["noise_vocab"] = spec.noise_vocab;
  j["sentence_templates"] = spec.sentence_templates;
  if (!spec.label_weights.empty()) j["label_weights"] = spec.label_weights;
  j["seed"] = spec.seed;
  j["id_prefix"] = spec.id_prefix;
  return j;
}

inline SyntheticCorpusSpec spec_from_json(const nlohmann::json& j) {
  SyntheticCorpusSpec spec;
  spec.size = j.value("size", spec.size);
  if (j.contains("labels_per_defect")) {
    spec.labels_lo = j["labels_per_defect"].at(0).get<std::size_t>();
    spec.labels_hi = j["labels_per_defect"].at(1).get<std::size_t>();
  }
  if (j.contains("keyword_pool"))
    spec.keyword_pool = j["keyword_pool"].get<std::vector<std::vector<std::string>>>();
  if (j.contains("noise_vocab")) spec.noise_vocab = j["noise_vocab"].get<std::vector<std::string>>();
  if (j.contains("sentence_templates"))
    spec.sentence_templates = j["sentence_templates"].get<std::vector<std::string>>();
  if (j.contains("label_weights"))
    spec.label_weights = j["label_weights"].get<std::vector<double>>();
  spec.seed = j.value("seed", spec.seed);
  spec.id_prefix = j.value("id_prefix", spec.id_prefix);
  return spec;
}

}  // namespace deftri
