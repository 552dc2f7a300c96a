#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deftri/autodiff.hpp"
#include "deftri/corpus.hpp"
#include "deftri/metrics.hpp"
#include "deftri/model.hpp"
#include "deftri/optimizer.hpp"
#include "deftri/tokenizer.hpp"

namespace deftri {

// Hyper-parameter keys mirror the run configuration schema.
struct TrainHyperParams {
  double dropout = 0.1;
  std::size_t max_seq_length = 128;
  std::size_t batch_size = 16;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  double adam_epsilon = 1e-6;
  std::size_t epochs = 10;
};

struct TrainConfig {
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 0;  // 0 -> 4 * hidden
  InputVariant variant = InputVariant::baseline;
  HeadConfig::Kind head_kind = HeadConfig::Kind::linear;
  TrainHyperParams hparams;
  std::uint64_t seed = 42;
  double threshold = 0.55;

  EncoderConfig encoder_config(std::size_t vocab_size) const {
    EncoderConfig enc;
    enc.vocab_size = vocab_size;
    enc.hidden = hidden;
    enc.layers = layers;
    enc.heads = heads;
    enc.ffn_dim = ffn_dim > 0 ? ffn_dim : 4 * hidden;
    enc.max_positions = hparams.max_seq_length;
    enc.dropout = hparams.dropout;
    return enc;
  }
};

struct EpochStats {
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double dev_macro_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based
};

template <typename T>
struct Checkpoint {
  Model<T> model;
  InputVariant variant = InputVariant::baseline;
  std::vector<std::string> label_names;
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;
  TrainHistory history;
};

struct EncodedDataset {
  std::vector<EncodedInput> inputs;
  std::vector<BitRow> targets;
};

inline EncodedDataset encode_dataset(const Dataset& ds, const Vocab& vocab, InputVariant variant,
                                     std::size_t max_len) {
  EncodedDataset out;
  out.inputs.reserve(ds.size());
  out.targets = gold_bit_rows(ds);
  for (const auto& d : ds.defects)
    out.inputs.push_back(
        encode_variant(variant, ds.registry.names(), build_text(d), vocab, max_len));
  return out;
}

template <typename T>
Tensor<T> batch_targets(const EncodedDataset& data, const std::vector<std::size_t>& idx,
                        std::size_t num_labels) {
  Tensor<T> out(idx.size(), num_labels);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t t = 0; t < num_labels; ++t)
      out.at(r, t) = static_cast<T>(data.targets[idx[r]][t]);
  return out;
}

// Eval-mode predictions over a dataset, batched with pad trimming.
template <typename T>
std::vector<BitRow> predict_dataset(const Model<T>& model, const EncodedDataset& data,
                                    double threshold, std::size_t batch_size = 32) {
  std::vector<BitRow> preds;
  preds.reserve(data.inputs.size());
  for (std::size_t start = 0; start < data.inputs.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, data.inputs.size());
    std::vector<const EncodedInput*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&data.inputs[i]);
    const Tensor<T> logits = model.logits(make_batch(chunk));
    for (std::size_t r = 0; r < logits.rows; ++r)
      preds.push_back(predict_row(logits.row_ptr(r), logits.cols, threshold));
  }
  return preds;
}

template <typename T>
struct TrainResult {
  Checkpoint<T> checkpoint;
  TrainHistory history;
};

// Epochs of Adam on BCE-with-logits; deterministic shuffling per (seed, epoch);
// the returned checkpoint is the epoch with the best dev accuracy.
template <typename T>
TrainResult<T> train(const Dataset& train_ds, const Dataset& dev_ds, const TrainConfig& cfg,
                     const Vocab& vocab) {
  if (train_ds.defects.empty()) throw DataError("train: empty training set");
  if (dev_ds.defects.empty()) throw DataError("train: empty dev set");
  const std::size_t T_labels = train_ds.registry.size();
  const TrainHyperParams& hp = cfg.hparams;

  const EncodedDataset train_enc =
      encode_dataset(train_ds, vocab, cfg.variant, hp.max_seq_length);
  const EncodedDataset dev_enc = encode_dataset(dev_ds, vocab, cfg.variant, hp.max_seq_length);

  HeadConfig head;
  head.kind = cfg.head_kind;
  head.num_labels = T_labels;
  Model<T> model(cfg.encoder_config(vocab.size()), head);
  model.init(cfg.seed);

  AdamHyperParams adam;
  adam.learning_rate = hp.learning_rate;
  adam.epsilon = hp.adam_epsilon;
  adam.weight_decay = hp.weight_decay;
  AdamOptimizer<T> optimizer(adam);

  const Tensor<T> pos_weight(1, T_labels, T(1));

  TrainHistory history;
  ModelParams<T> best_params;
  double best_dev_accuracy = -1.0;

  std::vector<std::size_t> order(train_enc.inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, 1000 + epoch);
    shuffle_rng.shuffle(order);
    Rng dropout_rng(cfg.seed, 2000 + epoch);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(start + hp.batch_size, order.size());
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      std::vector<const EncodedInput*> chunk;
      for (const auto i : idx) chunk.push_back(&train_enc.inputs[i]);
      const Batch batch = make_batch(chunk);
      const Tensor<T> targets = batch_targets<T>(train_enc, idx, T_labels);
      const Tensor<T> sample_weight(idx.size(), T_labels, T(1));

      Tape<T> tape(/*train_mode=*/true, &dropout_rng);
      std::vector<Value> leaves;
      const Value logits = model.build_forward(tape, batch, &leaves);
      const Value loss = tape.bce_with_logits(logits, targets, pos_weight, sample_weight);
      tape.backward(loss);
      loss_sum += static_cast<double>(tape.value(loss).data[0]) * static_cast<double>(idx.size());

      std::vector<Tensor<T>*> params = model.params().tensors();
      std::vector<const Tensor<T>*> grads;
      grads.reserve(leaves.size());
      for (const Value v : leaves) grads.push_back(&tape.grad(v));
      optimizer.step(params, grads);
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    const auto preds = predict_dataset(model, dev_enc, cfg.threshold);
    const auto counts = confusion(preds, dev_enc.targets);
    stats.dev_accuracy = accuracy(counts);
    stats.dev_macro_f1 = macro_f1(counts);
    history.epochs.push_back(stats);

    if (stats.dev_accuracy > best_dev_accuracy) {
      best_dev_accuracy = stats.dev_accuracy;
      history.best_epoch = epoch;
      best_params = model.params();
    }
  }

  TrainResult<T> result;
  result.history = history;
  result.checkpoint.model = Model<T>(cfg.encoder_config(vocab.size()), head);
  result.checkpoint.model.params() = std::move(best_params);
  result.checkpoint.variant = cfg.variant;
  result.checkpoint.label_names = train_ds.registry.names();
  result.checkpoint.vocab_hash = vocab.hash();
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.history = history;
  return result;
}

// ---- checkpoint file format -------------------------------------------------
// Line 1: header JSON (configs, tensor directory, metadata). Then raw
// little-endian scalar payload, tensors in header order.

template <typename T>
constexpr const char* precision_name() {
  if constexpr (sizeof(T) == 4)
    return "f32";
  else
    return "f64";
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::string& path) {
  nlohmann::ordered_json header;
  header["format"] = "deftri-checkpoint-v1";
  header["precision"] = precision_name<T>();
  const auto& enc = ckpt.model.encoder_config();
  header["encoder"] = {{"vocab_size", enc.vocab_size}, {"hidden", enc.hidden},
                       {"layers", enc.layers},         {"heads", enc.heads},
                       {"ffn_dim", enc.ffn_dim},       {"max_positions", enc.max_positions},
                       {"segment_types", enc.segment_types}, {"dropout", enc.dropout}};
  const auto& head = ckpt.model.head_config();
  header["head"] = {{"kind", to_string(head.kind)},
                    {"num_labels", head.num_labels},
                    {"lstm_hidden", head.lstm_hidden}};
  header["variant"] = to_string(ckpt.variant);
  header["labels"] = ckpt.label_names;
  header["vocab_hash"] = to_hex(ckpt.vocab_hash);
  nlohmann::ordered_json meta;
  meta["seed"] = ckpt.seed;
  meta["best_epoch"] = ckpt.history.best_epoch;
  auto loss = nlohmann::json::array();
  auto dev_acc = nlohmann::json::array();
  auto dev_f1 = nlohmann::json::array();
  for (const auto& e : ckpt.history.epochs) {
    loss.push_back(e.train_loss);
    dev_acc.push_back(e.dev_accuracy);
    dev_f1.push_back(e.dev_macro_f1);
  }
  meta["train_loss"] = std::move(loss);
  meta["dev_accuracy"] = std::move(dev_acc);
  meta["dev_macro_f1"] = std::move(dev_f1);
  header["metadata"] = std::move(meta);

  auto tensors = nlohmann::ordered_json::array();
  const auto& params = ckpt.model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", params.name(i)},
                       {"rows", params.tensor(i).rows},
                       {"cols", params.tensor(i).cols}});
  }
  header["tensors"] = std::move(tensors);

  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << header.dump() << "\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  }
  if (!out) throw DataError("I/O failure writing checkpoint: " + path);
}

inline std::string read_checkpoint_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("corrupt checkpoint (no header): " + path);
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "deftri-checkpoint-v1")
    throw DataError("corrupt checkpoint (bad header): " + path);
  return header.at("precision").get<std::string>();
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("corrupt checkpoint (no header): " + path);
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "deftri-checkpoint-v1")
    throw DataError("corrupt checkpoint (bad header): " + path);
  if (header.at("precision").get<std::string>() != precision_name<T>())
    throw DataError("checkpoint precision mismatch: expected " +
                    std::string(precision_name<T>()));

  EncoderConfig enc;
  const auto& je = header.at("encoder");
  enc.vocab_size = je.at("vocab_size").get<std::size_t>();
  enc.hidden = je.at("hidden").get<std::size_t>();
  enc.layers = je.at("layers").get<std::size_t>();
  enc.heads = je.at("heads").get<std::size_t>();
  enc.ffn_dim = je.at("ffn_dim").get<std::size_t>();
  enc.max_positions = je.at("max_positions").get<std::size_t>();
  enc.segment_types = je.at("segment_types").get<std::size_t>();
  enc.dropout = je.at("dropout").get<double>();

  HeadConfig head;
  head.kind = head_kind_from_string(header.at("head").at("kind").get<std::string>());
  head.num_labels = header.at("head").at("num_labels").get<std::size_t>();
  head.lstm_hidden = header.at("head").at("lstm_hidden").get<std::size_t>();

  Checkpoint<T> ckpt;
  ckpt.model = Model<T>(enc, head);
  ckpt.variant = variant_from_string(header.at("variant").get<std::string>());
  ckpt.label_names = header.at("labels").get<std::vector<std::string>>();
  ckpt.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);

  const auto& meta = header.at("metadata");
  ckpt.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.history.best_epoch = meta.at("best_epoch").get<std::size_t>();
  const auto& loss = meta.at("train_loss");
  const auto& dev_acc = meta.at("dev_accuracy");
  const auto& dev_f1 = meta.at("dev_macro_f1");
  for (std::size_t i = 0; i < loss.size(); ++i) {
    EpochStats e;
    e.train_loss = loss[i].get<double>();
    e.dev_accuracy = dev_acc[i].get<double>();
    e.dev_macro_f1 = dev_f1[i].get<double>();
    ckpt.history.epochs.push_back(e);
  }

  for (const auto& jt : header.at("tensors")) {
    const auto name = jt.at("name").get<std::string>();
    const auto rows = jt.at("rows").get<std::size_t>();
    const auto cols = jt.at("cols").get<std::size_t>();
    Tensor<T> t(rows, cols);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (static_cast<std::size_t>(in.gcount()) != t.data.size() * sizeof(T))
      throw DataError("corrupt checkpoint (truncated payload): " + path);
    ckpt.model.params().add(name, std::move(t));
  }
  char extra;
  if (in.read(&extra, 1))
    throw DataError("corrupt checkpoint (trailing bytes): " + path);
  if (ckpt.model.params().size() == 0)
    throw DataError("corrupt checkpoint (no tensors): " + path);
  return ckpt;
}

// Full test-set evaluation against a checkpoint; the vocab hash must match.
template <typename T>
MetricsReport evaluate(const Checkpoint<T>& ckpt, const Dataset& test_ds, const Vocab& vocab,
                       double threshold) {
  if (vocab.hash() != ckpt.vocab_hash)
    throw DataError("vocab hash mismatch between checkpoint and supplied vocab");
  if (test_ds.registry.names() != ckpt.label_names)
    throw DataError("registry labels differ from the checkpoint's labels");
  const EncodedDataset enc = encode_dataset(test_ds, vocab, ckpt.variant,
                                            ckpt.model.encoder_config().max_positions);
  const auto preds = predict_dataset(ckpt.model, enc, threshold);
  return make_report(confusion(preds, enc.targets), threshold, ckpt.label_names);
}

}  // namespace deftri
