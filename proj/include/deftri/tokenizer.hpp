#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "deftri/common.hpp"
#include "deftri/corpus.hpp"

namespace deftri {

// Lowercase word tokenization: split on whitespace and punctuation, drop the
// punctuation. Bytes >= 0x80 are kept as word characters so UTF-8 text passes
// through unmangled.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    const bool word_char =
        (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
    if (word_char) {
      current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a')
                                             : static_cast<char>(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

class Vocab {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kUnk = 1;
  static constexpr std::uint32_t kCls = 2;
  static constexpr std::uint32_t kSep = 3;
  static constexpr std::size_t kNumReserved = 4;

  Vocab() { init_reserved(); }

  // Tokens must already be lowercase; ids are assigned densely from 4.
  explicit Vocab(const std::vector<std::string>& corpus_tokens) : Vocab() {
    for (const auto& tok : corpus_tokens) add(tok);
  }

  std::size_t size() const { return id_to_token_.size(); }

  std::uint32_t encode_token(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  const std::string& token(std::uint32_t id) const { return id_to_token_.at(id); }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& tok : id_to_token_) {
      h = fnv1a64(tok, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }

  void save(const std::string& path) const {
    nlohmann::ordered_json j;
    for (std::size_t id = 0; id < id_to_token_.size(); ++id) j[id_to_token_[id]] = id;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write vocab file: " + path);
    out << j.dump(2) << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      throw DataError("vocab file is not valid JSON: " + path);
    }
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::size_t>();
      if (id >= by_id.size()) throw DataError("vocab ids are not dense in " + path);
      by_id[id] = it.key();
    }
    Vocab v;
    const std::vector<std::string> reserved = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    for (std::size_t i = 0; i < reserved.size(); ++i)
      if (i >= by_id.size() || by_id[i] != reserved[i])
        throw DataError("vocab file is missing reserved tokens: " + path);
    for (std::size_t id = kNumReserved; id < by_id.size(); ++id) v.add(by_id[id]);
    return v;
  }

 private:
  friend Vocab build_vocab(const Dataset&, std::size_t, std::size_t);

  void init_reserved() {
    id_to_token_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    for (std::size_t i = 0; i < id_to_token_.size(); ++i)
      token_to_id_[id_to_token_[i]] = static_cast<std::uint32_t>(i);
  }

  void add(const std::string& token) {
    if (token_to_id_.count(token)) return;
    token_to_id_[token] = static_cast<std::uint32_t>(id_to_token_.size());
    id_to_token_.push_back(token);
  }

  std::unordered_map<std::string, std::uint32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Frequency-ordered vocabulary (ties broken lexicographically), capped so the
// whole map, reserved ids included, never exceeds max_size.
inline Vocab build_vocab(const Dataset& ds, std::size_t min_freq = 1,
                         std::size_t max_size = 30000) {
  if (ds.defects.empty()) throw DataError("cannot build vocab from an empty corpus");
  if (max_size <= Vocab::kNumReserved) throw ConfigError("vocab max_size too small");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& d : ds.defects)
    for (auto& tok : tokenize(build_text(d))) ++freq[tok];

  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  const std::size_t cap = max_size - Vocab::kNumReserved;
  for (const auto& [tok, count] : entries) {
    if (count < min_freq) break;
    if (v.size() - Vocab::kNumReserved >= cap) break;
    v.add(tok);
  }
  return v;
}

enum class InputVariant { baseline, fuse_nosep, fuse_sep };

inline const char* to_string(InputVariant v) {
  switch (v) {
    case InputVariant::baseline: return "baseline";
    case InputVariant::fuse_nosep: return "fuse_nosep";
    case InputVariant::fuse_sep: return "fuse_sep";
  }
  throw InternalError("unreachable variant");
}

inline InputVariant variant_from_string(const std::string& s) {
  if (s == "baseline") return InputVariant::baseline;
  if (s == "fuse_nosep") return InputVariant::fuse_nosep;
  if (s == "fuse_sep") return InputVariant::fuse_sep;
  throw ConfigError("unknown input variant: " + s);
}

struct EncodedInput {
  std::vector<std::uint32_t> token_ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;
  InputVariant variant = InputVariant::baseline;

  std::size_t real_length() const {
    std::size_t n = 0;
    for (auto m : attention_mask) n += m;
    return n;
  }
};

namespace detail {

inline EncodedInput finish_encoding(std::vector<std::uint32_t> ids,
                                    std::size_t segment1_from, std::size_t max_len,
                                    InputVariant variant) {
  EncodedInput enc;
  enc.variant = variant;
  const std::size_t real = ids.size();
  ids.resize(max_len, Vocab::kPad);
  enc.token_ids = std::move(ids);
  enc.segment_ids.assign(max_len, 0);
  enc.attention_mask.assign(max_len, 0);
  for (std::size_t i = 0; i < real; ++i) {
    enc.attention_mask[i] = 1;
    if (i >= segment1_from) enc.segment_ids[i] = 1;
  }
  return enc;
}

inline std::vector<std::uint32_t> encode_tokens(const std::vector<std::string>& tokens,
                                                const Vocab& vocab) {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(vocab.encode_token(tok));
  return ids;
}

}  // namespace detail

// [CLS] d_1 ... d_K [SEP], all segment 0. Defect tokens are truncated from the
// end when they do not fit.
inline EncodedInput encode_baseline(const std::string& defect_text, const Vocab& vocab,
                                    std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  auto ids = detail::encode_tokens(tokenize(defect_text), vocab);
  if (ids.size() > max_len - 2) ids.resize(max_len - 2);
  std::vector<std::uint32_t> out;
  out.reserve(ids.size() + 2);
  out.push_back(Vocab::kCls);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Vocab::kSep);
  return detail::finish_encoding(std::move(out), max_len, max_len, InputVariant::baseline);
}

// [CLS] L_1 ... L_T d_1 ... d_K [SEP] as a single segment-0 sentence. Label
// tokens are never truncated.
inline EncodedInput encode_fuse_nosep(const std::vector<std::string>& label_texts,
                                      const std::string& defect_text, const Vocab& vocab,
                                      std::size_t max_len) {
  std::vector<std::uint32_t> out;
  out.push_back(Vocab::kCls);
  for (const auto& label : label_texts)
    for (auto id : detail::encode_tokens(tokenize(label), vocab)) out.push_back(id);
  if (out.size() + 1 >= max_len)
    throw ConfigError("label tokens plus specials do not fit in max_len");
  auto ids = detail::encode_tokens(tokenize(defect_text), vocab);
  const std::size_t room = max_len - out.size() - 1;
  if (ids.size() > room) ids.resize(room);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Vocab::kSep);
  return detail::finish_encoding(std::move(out), max_len, max_len, InputVariant::fuse_nosep);
}

// [CLS] L_1 ... L_T [SEP] d_1 ... d_K [SEP]; segment 1 starts after the first
// [SEP], padding stays segment 0.
inline EncodedInput encode_fuse_sep(const std::vector<std::string>& label_texts,
                                    const std::string& defect_text, const Vocab& vocab,
                                    std::size_t max_len) {
  std::vector<std::uint32_t> out;
  out.push_back(Vocab::kCls);
  for (const auto& label : label_texts)
    for (auto id : detail::encode_tokens(tokenize(label), vocab)) out.push_back(id);
  out.push_back(Vocab::kSep);
  if (out.size() + 1 >= max_len)
    throw ConfigError("label tokens plus specials do not fit in max_len");
  const std::size_t segment1_from = out.size();
  auto ids = detail::encode_tokens(tokenize(defect_text), vocab);
  const std::size_t room = max_len - out.size() - 1;
  if (ids.size() > room) ids.resize(room);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Vocab::kSep);
  return detail::finish_encoding(std::move(out), segment1_from, max_len, InputVariant::fuse_sep);
}

inline EncodedInput encode_variant(InputVariant variant, const std::vector<std::string>& label_texts,
                                   const std::string& defect_text, const Vocab& vocab,
                                   std::size_t max_len) {
  switch (variant) {
    case InputVariant::baseline: return encode_baseline(defect_text, vocab, max_len);
    case InputVariant::fuse_nosep: return encode_fuse_nosep(label_texts, defect_text, vocab, max_len);
    case InputVariant::fuse_sep: return encode_fuse_sep(label_texts, defect_text, vocab, max_len);
  }
  throw InternalError("unreachable variant");
}

}  // namespace deftri
