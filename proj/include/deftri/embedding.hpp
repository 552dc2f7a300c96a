#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"
#include "deftri/synthetic.hpp"
#include "deftri/tokenizer.hpp"

namespace deftri {

// Word vectors for constrained synonym substitution. Lookup is
// case-insensitive; vectors are unit-normalized on insert so cosine is a dot
// product.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  void insert(const std::string& word, std::vector<double> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_) throw DataError("embedding dim mismatch for \"" + word + "\"");
    double norm = 0.0;
    for (double x : vec) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DataError("zero embedding vector for \"" + word + "\"");
    for (double& x : vec) x /= norm;
    const std::string key = lowercase_ascii(word);
    auto it = index_.find(key);
    if (it != index_.end()) {
      vectors_[it->second] = std::move(vec);
      return;
    }
    index_[key] = words_.size();
    words_.push_back(key);
    vectors_.push_back(std::move(vec));
  }

  const std::vector<double>* find(const std::string& word) const {
    auto it = index_.find(lowercase_ascii(word));
    return it == index_.end() ? nullptr : &vectors_[it->second];
  }

  static double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;  // vectors are unit-normalized
  }

  double cosine_between(const std::string& a, const std::string& b) const {
    const auto* va = find(a);
    const auto* vb = find(b);
    if (!va || !vb) return -2.0;
    return cosine(*va, *vb);
  }

  // First line "<count> <dim>", then one word and dim floats per line.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write embedding file: " + path);
    out << words_.size() << " " << dim_ << "\n";
    out.precision(9);
    for (std::size_t i = 0; i < words_.size(); ++i) {
      out << words_[i];
      for (double x : vectors_[i]) out << " " << x;
      out << "\n";
    }
    if (!out) throw DataError("I/O failure writing " + path);
  }

  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embedding file: " + path);
    std::size_t count = 0;
    std::size_t dim = 0;
    if (!(in >> count >> dim) || dim == 0)
      throw DataError("embedding file has a malformed header: " + path);
    EmbeddingTable table(dim);
    for (std::size_t i = 0; i < count; ++i) {
      std::string word;
      if (!(in >> word)) throw DataError("embedding file truncated: " + path);
      std::vector<double> vec(dim);
      for (auto& x : vec)
        if (!(in >> x)) throw DataError("embedding file truncated: " + path);
      table.insert(word, std::move(vec));
    }
    return table;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::vector<std::vector<double>> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Neighbor {
  std::string word;
  double cosine;
};

// Up to k distinct words (never the query itself) with cosine >= min_cos,
// sorted by descending cosine, ties lexicographic. Absent words yield [].
inline std::vector<Neighbor> nearest_neighbors(const std::string& word,
                                               const EmbeddingTable& table, std::size_t k,
                                               double min_cos) {
  if (k < 1) throw ConfigError("nearest_neighbors: k must be >= 1");
  const auto* query = table.find(word);
  if (!query) return {};
  const std::string key = lowercase_ascii(word);
  std::vector<Neighbor> candidates;
  for (const auto& other : table.words()) {
    if (other == key) continue;
    const double cos = EmbeddingTable::cosine(*query, *table.find(other));
    if (cos >= min_cos) candidates.push_back({other, cos});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.word < b.word;
  });
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

namespace detail {

// Deterministic unit vector for words with no usable co-occurrence signal.
inline std::vector<double> hashed_unit_vector(const std::string& word, std::size_t dim) {
  Rng rng(fnv1a64(word));
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace detail

// Desk-scale embedding table: PPMI co-occurrence factorization over the corpus
// provides vectors for ordinary words; synonym groups (curated pairs plus the
// signature pools) are overridden with tight cones so that group members are
// mutual qualifying neighbors and nothing outside the group comes close.
inline EmbeddingTable build_embedding_table(const Dataset& corpus,
                                            const std::vector<std::vector<std::string>>& groups,
                                            std::size_t dim = 50, std::uint64_t seed = 17,
                                            double min_group_cos = 0.9) {
  // Co-occurrence counts in a +/-2 token window.
  std::unordered_map<std::string, std::size_t> word_ids;
  std::vector<std::string> words;
  const auto intern = [&](const std::string& w) {
    auto it = word_ids.find(w);
    if (it != word_ids.end()) return it->second;
    word_ids[w] = words.size();
    words.push_back(w);
    return words.size() - 1;
  };
  for (const auto& group : groups)
    for (const auto& w : group) intern(lowercase_ascii(w));

  std::vector<std::vector<std::size_t>> docs;
  for (const auto& d : corpus.defects) {
    std::vector<std::size_t> ids;
    for (const auto& tok : tokenize(build_text(d))) ids.push_back(intern(tok));
    docs.push_back(std::move(ids));
  }

  const std::size_t V = words.size();
  std::vector<double> counts(V * V, 0.0);
  std::vector<double> row_sum(V, 0.0);
  double total = 0.0;
  for (const auto& ids : docs) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t off = 1; off <= 2 && i + off < ids.size(); ++off) {
        const std::size_t a = ids[i];
        const std::size_t b = ids[i + off];
        counts[a * V + b] += 1.0;
        counts[b * V + a] += 1.0;
        row_sum[a] += 1.0;
        row_sum[b] += 1.0;
        total += 2.0;
      }
    }
  }

  // PPMI transform in place.
  if (total > 0.0) {
    for (std::size_t a = 0; a < V; ++a) {
      for (std::size_t b = 0; b < V; ++b) {
        const double c = counts[a * V + b];
        if (c <= 0.0 || row_sum[a] <= 0.0 || row_sum[b] <= 0.0) {
          counts[a * V + b] = 0.0;
          continue;
        }
        const double pmi = std::log(c * total / (row_sum[a] * row_sum[b]));
        counts[a * V + b] = pmi > 0.0 ? pmi : 0.0;
      }
    }
  }

  // Rank-dim factorization by subspace iteration with Gram-Schmidt.
  const std::size_t rank = std::min(dim, V);
  Rng rng(seed);
  std::vector<double> basis(V * rank);
  for (auto& x : basis) x = rng.normal();
  std::vector<double> next(V * rank);
  for (int iter = 0; iter < 20; ++iter) {
    for (std::size_t a = 0; a < V; ++a) {
      for (std::size_t r = 0; r < rank; ++r) {
        double acc = 0.0;
        for (std::size_t b = 0; b < V; ++b) acc += counts[a * V + b] * basis[b * rank + r];
        next[a * rank + r] = acc;
      }
    }
    // Modified Gram-Schmidt over columns.
    for (std::size_t r = 0; r < rank; ++r) {
      for (std::size_t p = 0; p < r; ++p) {
        double dot = 0.0;
        for (std::size_t a = 0; a < V; ++a) dot += next[a * rank + r] * next[a * rank + p];
        for (std::size_t a = 0; a < V; ++a) next[a * rank + r] -= dot * next[a * rank + p];
      }
      double norm = 0.0;
      for (std::size_t a = 0; a < V; ++a) norm += next[a * rank + r] * next[a * rank + r];
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        // Degenerate direction; reseed deterministically.
        for (std::size_t a = 0; a < V; ++a) next[a * rank + r] = rng.normal();
        norm = 0.0;
        for (std::size_t a = 0; a < V; ++a) norm += next[a * rank + r] * next[a * rank + r];
        norm = std::sqrt(norm);
      }
      for (std::size_t a = 0; a < V; ++a) next[a * rank + r] /= norm;
    }
    basis.swap(next);
  }

  EmbeddingTable table(dim);
  for (std::size_t a = 0; a < V; ++a) {
    std::vector<double> vec(dim, 0.0);
    double norm = 0.0;
    for (std::size_t r = 0; r < rank; ++r) {
      // Project the PPMI row onto the basis.
      double acc = 0.0;
      for (std::size_t b = 0; b < V; ++b) acc += counts[a * V + b] * basis[b * rank + r];
      vec[r] = acc;
      norm += acc * acc;
    }
    if (std::sqrt(norm) < 1e-9) vec = detail::hashed_unit_vector(words[a], dim);
    table.insert(words[a], std::move(vec));
  }

  // Cone override: one random axis per group, small per-word jitter. The
  // jitter vector norm is ~0.17, keeping within-group cosine near
  // 1/(1+0.17^2) ~ 0.97, comfortably above min_group_cos.
  Rng cone_rng(seed ^ 0x5e1ec7ed5e1ec7edULL);
  const double jitter = 0.17 / std::sqrt(static_cast<double>(dim));
  std::vector<std::vector<std::string>> cone_words;
  for (const auto& group : groups) {
    std::vector<double> axis(dim);
    double norm = 0.0;
    for (auto& x : axis) {
      x = cone_rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : axis) x /= norm;
    std::vector<std::string> members;
    for (const auto& w : group) {
      std::vector<double> vec(dim);
      for (std::size_t i = 0; i < dim; ++i) vec[i] = axis[i] + jitter * cone_rng.normal();
      table.insert(w, std::move(vec));
      members.push_back(lowercase_ascii(w));
    }
    cone_words.push_back(std::move(members));
  }

  // Group members must be neighbors of each other and of nothing outside.
  std::unordered_map<std::string, std::size_t> group_of;
  for (std::size_t g = 0; g < cone_words.size(); ++g)
    for (const auto& w : cone_words[g]) group_of[w] = g;
  for (std::size_t g = 0; g < cone_words.size(); ++g) {
    for (const auto& w : cone_words[g]) {
      for (const auto& other : cone_words[g])
        if (w != other && table.cosine_between(w, other) < min_group_cos)
          throw InternalError("synonym group too loose at \"" + w + "\"/\"" + other + "\"");
      for (const auto& any : table.words()) {
        auto it = group_of.find(any);
        if (it != group_of.end() && it->second == g) continue;
        if (table.cosine_between(w, any) >= 0.8)
          throw InternalError("cross-group neighbor leak: \"" + w + "\" vs \"" + any + "\"");
      }
    }
  }
  return table;
}

}  // namespace deftri
