#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "deftri/autodiff.hpp"
#include "deftri/common.hpp"
#include "deftri/optimizer.hpp"
#include "deftri/tensor.hpp"
#include "deftri/tokenizer.hpp"

namespace deftri {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;  // 4 * hidden
  std::size_t max_positions = 128;
  std::size_t segment_types = 2;
  double dropout = 0.1;

  void validate() const {
    if (vocab_size == 0) throw ConfigError("encoder vocab_size must be set");
    if (hidden == 0 || hidden % heads != 0)
      throw ConfigError("hidden size must be a positive multiple of heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (layers == 0 || max_positions == 0) throw ConfigError("layers/max_positions must be > 0");
  }
};

struct HeadConfig {
  enum class Kind { linear, bilstm };
  Kind kind = Kind::linear;
  std::size_t num_labels = 0;
  std::size_t lstm_hidden = 0;  // per direction; 0 means hidden/2

  std::size_t effective_lstm_hidden(std::size_t hidden) const {
    return lstm_hidden > 0 ? lstm_hidden : hidden / 2;
  }
};

inline const char* to_string(HeadConfig::Kind k) {
  return k == HeadConfig::Kind::linear ? "linear" : "bilstm";
}

inline HeadConfig::Kind head_kind_from_string(const std::string& s) {
  if (s == "linear") return HeadConfig::Kind::linear;
  if (s == "bilstm") return HeadConfig::Kind::bilstm;
  throw ConfigError("unknown head kind: " + s);
}

// Named parameter store with a stable iteration order (init order), which the
// optimizer state and the checkpoint payload both rely on.
template <typename T>
class ModelParams {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw InternalError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t)});
    return entries_.back().tensor;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InternalError("unknown parameter: " + name);
    return entries_[it->second].tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ModelParams*>(this)->at(name);
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor<T>& tensor(std::size_t i) { return entries_[i].tensor; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_[i].tensor; }

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for (auto& e : entries_) out.push_back(&e.tensor);
    return out;
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>());
    return out;
  }

 private:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Wire format for one forward pass; sequences may be trimmed to the longest
// real sequence in the batch (logits are invariant to removed pad columns).
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::uint32_t> token_ids;    // batch_size * seq_len
  std::vector<std::uint32_t> segment_ids;  // batch_size * seq_len
  std::vector<std::uint8_t> mask;          // batch_size * seq_len
};

inline Batch make_batch(const std::vector<const EncodedInput*>& inputs, bool trim = true) {
  if (inputs.empty()) throw InternalError("make_batch: empty input list");
  const std::size_t full_len = inputs[0]->token_ids.size();
  std::size_t seq_len = full_len;
  if (trim) {
    std::size_t longest = 1;
    for (const auto* enc : inputs) {
      if (enc->token_ids.size() != full_len)
        throw InternalError("make_batch: inconsistent encoded lengths");
      longest = std::max(longest, enc->real_length());
    }
    seq_len = longest;
  }
  Batch b;
  b.batch_size = inputs.size();
  b.seq_len = seq_len;
  b.token_ids.reserve(b.batch_size * seq_len);
  b.segment_ids.reserve(b.batch_size * seq_len);
  b.mask.reserve(b.batch_size * seq_len);
  for (const auto* enc : inputs) {
    for (std::size_t l = 0; l < seq_len; ++l) {
      b.token_ids.push_back(enc->token_ids[l]);
      b.segment_ids.push_back(enc->segment_ids[l]);
      b.mask.push_back(enc->attention_mask[l]);
    }
  }
  return b;
}

template <typename T>
struct ForwardProbe {
  // Attention probabilities per layer, rows ordered [batch][head][query].
  std::vector<Tensor<T>> attention;
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(EncoderConfig enc, HeadConfig head) : enc_(enc), head_(head) {
    enc_.validate();
    if (head_.num_labels == 0) throw ConfigError("head num_labels must be set");
  }

  const EncoderConfig& encoder_config() const { return enc_; }
  const HeadConfig& head_config() const { return head_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  // BERT-style init: N(0, 0.02) weights, zero biases, identity layer norms.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    const auto normal_fill = [&](Tensor<T>& t) {
      for (auto& x : t.data) x = static_cast<T>(rng.normal() * 0.02);
    };
    const auto weight = [&](const std::string& name, std::size_t r, std::size_t c) {
      normal_fill(params_.add(name, Tensor<T>(r, c)));
    };
    const auto zeros = [&](const std::string& name, std::size_t r, std::size_t c) {
      params_.add(name, Tensor<T>(r, c, T(0)));
    };
    const auto ln = [&](const std::string& prefix) {
      params_.add(prefix + ".gamma", Tensor<T>(1, enc_.hidden, T(1)));
      params_.add(prefix + ".beta", Tensor<T>(1, enc_.hidden, T(0)));
    };

    weight("embed.token", enc_.vocab_size, enc_.hidden);
    weight("embed.pos", enc_.max_positions, enc_.hidden);
    weight("embed.seg", enc_.segment_types, enc_.hidden);
    ln("embed.ln");
    for (std::size_t l = 0; l < enc_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        weight(p + ".attn." + w, enc_.hidden, enc_.hidden);
        zeros(p + ".attn.b" + std::string(w).substr(1), 1, enc_.hidden);
      }
      ln(p + ".ln1");
      weight(p + ".ffn.w1", enc_.hidden, enc_.ffn_dim);
      zeros(p + ".ffn.b1", 1, enc_.ffn_dim);
      weight(p + ".ffn.w2", enc_.ffn_dim, enc_.hidden);
      zeros(p + ".ffn.b2", 1, enc_.hidden);
      ln(p + ".ln2");
    }
    if (head_.kind == HeadConfig::Kind::linear) {
      weight("head.dense.w", enc_.hidden, enc_.hidden);
      zeros("head.dense.b", 1, enc_.hidden);
      weight("head.out.w", enc_.hidden, head_.num_labels);
      zeros("head.out.b", 1, head_.num_labels);
    } else {
      const std::size_t s = head_.effective_lstm_hidden(enc_.hidden);
      for (const char* dir : {"fwd", "bwd"}) {
        const std::string p = std::string("head.lstm.") + dir;
        weight(p + ".wx", enc_.hidden, 4 * s);
        weight(p + ".uh", s, 4 * s);
        zeros(p + ".b", 1, 4 * s);
      }
      weight("head.out.w", 2 * s, head_.num_labels);
      zeros("head.out.b", 1, head_.num_labels);
    }
  }

  // Builds the full forward graph on the caller's tape and returns the logits
  // node (batch_size x num_labels). Leaves for every parameter are registered
  // in `leaves` (init order) so gradients can be read back after backward().
  Value build_forward(Tape<T>& tape, const Batch& batch, std::vector<Value>* leaves = nullptr,
                      ForwardProbe<T>* probe = nullptr, Value* hidden_out = nullptr) const {
    const std::size_t B = batch.batch_size;
    const std::size_t L = batch.seq_len;
    const std::size_t H = enc_.hidden;
    if (L > enc_.max_positions) throw DataError("sequence longer than max_positions");

    std::unordered_map<std::string, Value> p;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Value v = tape.leaf(params_.tensor(i), true);
      p[params_.name(i)] = v;
      if (leaves) leaves->push_back(v);
    }
    const auto linear = [&](Value x, const std::string& w, const std::string& b) {
      return tape.add_rowvec(tape.matmul(x, p.at(w)), p.at(b));
    };

    // Embeddings: token + position + segment, then layer norm and dropout.
    std::vector<std::uint32_t> pos_ids(B * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t l = 0; l < L; ++l) pos_ids[b * L + l] = static_cast<std::uint32_t>(l);
    Value x = tape.embedding_lookup(p.at("embed.token"), batch.token_ids);
    x = tape.add(x, tape.embedding_lookup(p.at("embed.pos"), pos_ids));
    x = tape.add(x, tape.embedding_lookup(p.at("embed.seg"), batch.segment_ids));
    x = tape.layer_norm(x, p.at("embed.ln.gamma"), p.at("embed.ln.beta"), kLnEps);
    x = tape.dropout(x, enc_.dropout);

    // Shared attention mask: every query row sees exactly the real keys.
    const std::size_t heads = enc_.heads;
    const std::size_t dh = H / heads;
    Tensor<T> attn_mask(B * heads * L, L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t q = 0; q < L; ++q)
          for (std::size_t key = 0; key < L; ++key)
            attn_mask.at((b * heads + h) * L + q, key) = static_cast<T>(batch.mask[b * L + key]);

    for (std::size_t layer = 0; layer < enc_.layers; ++layer) {
      const std::string lp = "layer" + std::to_string(layer);
      const Value q = tape.split_heads(linear(x, lp + ".attn.wq", lp + ".attn.bq"), B, L, heads);
      const Value k = tape.split_heads(linear(x, lp + ".attn.wk", lp + ".attn.bk"), B, L, heads);
      const Value v = tape.split_heads(linear(x, lp + ".attn.wv", lp + ".attn.bv"), B, L, heads);
      Value scores = tape.bmm(q, k, B * heads, /*transpose_b=*/true);
      scores = tape.scale(scores, T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh))));
      Value attn = tape.masked_softmax_rows(scores, attn_mask);
      if (probe) probe->attention.push_back(tape.value(attn));
      attn = tape.dropout(attn, enc_.dropout);
      Value ctx = tape.merge_heads(tape.bmm(attn, v, B * heads), B, L, heads);
      ctx = tape.dropout(linear(ctx, lp + ".attn.wo", lp + ".attn.bo"), enc_.dropout);
      x = tape.layer_norm(tape.add(x, ctx), p.at(lp + ".ln1.gamma"), p.at(lp + ".ln1.beta"),
                          kLnEps);
      Value ffn = tape.gelu(linear(x, lp + ".ffn.w1", lp + ".ffn.b1"));
      ffn = tape.dropout(tape.add_rowvec(tape.matmul(ffn, p.at(lp + ".ffn.w2")),
                                         p.at(lp + ".ffn.b2")),
                         enc_.dropout);
      x = tape.layer_norm(tape.add(x, ffn), p.at(lp + ".ln2.gamma"), p.at(lp + ".ln2.beta"),
                          kLnEps);
    }
    if (hidden_out) *hidden_out = x;

    if (head_.kind == HeadConfig::Kind::linear) {
      // Classify from the [CLS] position of the last layer.
      std::vector<std::size_t> cls_rows(B);
      for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * L;
      const Value pooled = tape.gather_rows(x, cls_rows);
      const Value hidden = tape.tanh_op(linear(pooled, "head.dense.w", "head.dense.b"));
      return linear(hidden, "head.out.w", "head.out.b");
    }

    // BiLSTM head over the (pad-masked) last-layer sequence: concatenate the
    // final forward state with the position-0 backward state.
    const std::size_t S = head_.effective_lstm_hidden(H);
    const auto run_direction = [&](const char* dir, bool reverse) {
      const std::string lp = std::string("head.lstm.") + dir;
      const Value xw = tape.add_rowvec(tape.matmul(x, p.at(lp + ".wx")), p.at(lp + ".b"));
      Value h_prev = tape.leaf(Tensor<T>(B, S, T(0)));
      Value c_prev = tape.leaf(Tensor<T>(B, S, T(0)));
      for (std::size_t step = 0; step < L; ++step) {
        const std::size_t t = reverse ? L - 1 - step : step;
        std::vector<std::size_t> rows(B);
        for (std::size_t b = 0; b < B; ++b) rows[b] = b * L + t;
        const Value gates = tape.add(tape.gather_rows(xw, rows), tape.matmul(h_prev, p.at(lp + ".uh")));
        const Value gi = tape.sigmoid(tape.slice_cols(gates, 0, S));
        const Value gf = tape.sigmoid(tape.slice_cols(gates, S, S));
        const Value gg = tape.tanh_op(tape.slice_cols(gates, 2 * S, S));
        const Value go = tape.sigmoid(tape.slice_cols(gates, 3 * S, S));
        const Value c_new = tape.add(tape.mul(gf, c_prev), tape.mul(gi, gg));
        const Value h_new = tape.mul(go, tape.tanh_op(c_new));
        // Pad steps keep the previous state exactly.
        Tensor<T> m(B, S);
        Tensor<T> inv(B, S);
        for (std::size_t b = 0; b < B; ++b) {
          const T mb = static_cast<T>(batch.mask[b * L + t]);
          for (std::size_t c = 0; c < S; ++c) {
            m.at(b, c) = mb;
            inv.at(b, c) = T(1) - mb;
          }
        }
        const Value vm = tape.leaf(std::move(m));
        const Value vinv = tape.leaf(std::move(inv));
        c_prev = tape.add(tape.mul(c_new, vm), tape.mul(c_prev, vinv));
        h_prev = tape.add(tape.mul(h_new, vm), tape.mul(h_prev, vinv));
      }
      return h_prev;
    };
    const Value h_fwd = run_direction("fwd", false);
    const Value h_bwd = run_direction("bwd", true);
    const Value combined = tape.relu(tape.concat_cols(h_fwd, h_bwd));
    return linear(combined, "head.out.w", "head.out.b");
  }

  // Convenience eval-mode forward; returns plain logits.
  Tensor<T> logits(const Batch& batch) const {
    Tape<T> tape(/*train_mode=*/false);
    return tape.value(build_forward(tape, batch));
  }

  // Last-layer hidden states (batch*seq_len x hidden), eval mode.
  Tensor<T> encoder_hidden(const Batch& batch, ForwardProbe<T>* probe = nullptr) const {
    Tape<T> tape(/*train_mode=*/false);
    Value hidden;
    build_forward(tape, batch, nullptr, probe, &hidden);
    return tape.value(hidden);
  }

  static constexpr T kLnEps = T(1e-12);

 private:
  EncoderConfig enc_;
  HeadConfig head_;
  ModelParams<T> params_;
};

// Sequence summary for the linear head: the hidden state at position 0 ([CLS]).
template <typename T>
Tensor<T> pool_cls(const Tensor<T>& hidden) {
  if (hidden.rows == 0) throw InternalError("pool_cls: empty hidden sequence");
  Tensor<T> out(1, hidden.cols);
  for (std::size_t c = 0; c < hidden.cols; ++c) out.at(0, c) = hidden.at(0, c);
  return out;
}

// sigmoid(logit) >= threshold, per label.
template <typename T>
std::vector<std::uint8_t> predict_row(const T* logits, std::size_t n, double threshold) {
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(logits[i]);
    const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    bits[i] = p >= threshold ? 1 : 0;
  }
  return bits;
}

template <typename T>
std::vector<std::vector<std::uint8_t>> predict(const Tensor<T>& logits, double threshold = 0.55) {
  if (threshold <= 0.0 || threshold >= 1.0) throw ConfigError("threshold must be in (0, 1)");
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r)
    out.push_back(predict_row(logits.row_ptr(r), logits.cols, threshold));
  return out;
}

}  // namespace deftri
