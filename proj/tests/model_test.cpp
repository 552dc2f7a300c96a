#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "deftri/model.hpp"
#include "deftri/tokenizer.hpp"
#include "deftri/train.hpp"

using namespace deftri;

namespace {

struct Fixture {
  TeamLabelRegistry registry{std::vector<std::string>{"cart", "checkout"}};
  Vocab vocab;
  Fixture() {
    Dataset ds;
    ds.registry = registry;
    Defect d;
    d.id = "d0";
    d.title = "price showing wrong cart checkout alpha beta gamma delta epsilon";
    ds.defects.push_back(d);
    vocab = build_vocab(ds, 1, 100);
  }
};

template <typename T>
Model<T> make_model(const Fixture& fx, HeadConfig::Kind kind, std::size_t hidden = 16,
                    std::size_t layers = 2, std::size_t heads = 2, std::size_t max_len = 16,
                    double dropout = 0.0, std::uint64_t seed = 3) {
  EncoderConfig enc;
  enc.vocab_size = fx.vocab.size();
  enc.hidden = hidden;
  enc.layers = layers;
  enc.heads = heads;
  enc.ffn_dim = 4 * hidden;
  enc.max_positions = max_len;
  enc.dropout = dropout;
  HeadConfig head;
  head.kind = kind;
  head.num_labels = fx.registry.size();
  Model<T> model(enc, head);
  model.init(seed);
  return model;
}

Batch encode_one(const Fixture& fx, const std::string& text, InputVariant variant,
                 std::size_t max_len = 16, bool trim = false) {
  const EncodedInput enc =
      encode_variant(variant, fx.registry.names(), text, fx.vocab, max_len);
  return make_batch({&enc}, trim);
}

}  // namespace

TEST_CASE("logits have shape (batch, labels) for both heads") {
  const Fixture fx;
  for (const auto kind : {HeadConfig::Kind::linear, HeadConfig::Kind::bilstm}) {
    const auto model = make_model<double>(fx, kind);
    const Batch batch = encode_one(fx, "price showing wrong", InputVariant::fuse_sep);
    const auto logits = model.logits(batch);
    REQUIRE(logits.rows == 1);
    REQUIRE(logits.cols == 2);
  }
}

TEST_CASE("zero parameters give zero logits in both heads") {
  const Fixture fx;
  for (const auto kind : {HeadConfig::Kind::linear, HeadConfig::Kind::bilstm}) {
    auto model = make_model<double>(fx, kind);
    for (auto* t : model.params().tensors())
      for (auto& x : t->data) x = 0.0;
    const Batch batch = encode_one(fx, "price showing wrong", InputVariant::baseline);
    const auto logits = model.logits(batch);
    for (const auto v : logits.data) REQUIRE(v == 0.0);
  }
}

TEST_CASE("real positions give exactly zero attention to pads") {
  const Fixture fx;
  const auto model = make_model<double>(fx, HeadConfig::Kind::linear);
  // [CLS] + 3 tokens + [SEP] = 5 real positions, 11 pads.
  const Batch batch = encode_one(fx, "price showing wrong", InputVariant::baseline);
  ForwardProbe<double> probe;
  model.encoder_hidden(batch, &probe);
  REQUIRE(probe.attention.size() == 2);  // one per layer
  for (const auto& attn : probe.attention) {
    REQUIRE(attn.cols == 16);
    for (std::size_t row = 0; row < attn.rows; ++row) {
      double pad_mass = 0.0;
      double real_mass = 0.0;
      for (std::size_t key = 0; key < attn.cols; ++key)
        (key < 5 ? real_mass : pad_mass) += attn.at(row, key);
      REQUIRE(pad_mass == 0.0);
      REQUIRE(real_mass == Catch::Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("hidden states at real positions ignore pad-region token ids") {
  const Fixture fx;
  const auto model = make_model<double>(fx, HeadConfig::Kind::linear);
  const EncodedInput enc = encode_variant(InputVariant::baseline, fx.registry.names(),
                                          "price showing wrong", fx.vocab, 16);
  EncodedInput tampered = enc;
  for (std::size_t i = enc.real_length(); i < 16; ++i)
    tampered.token_ids[i] = 5;  // junk ids under mask 0
  const auto h1 = model.encoder_hidden(make_batch({&enc}, false));
  const auto h2 = model.encoder_hidden(make_batch({&tampered}, false));
  for (std::size_t pos = 0; pos < enc.real_length(); ++pos)
    for (std::size_t c = 0; c < h1.cols; ++c)
      REQUIRE(h1.at(pos, c) == h2.at(pos, c));  // bitwise
}

TEST_CASE("logits are bitwise invariant to pads for both heads, trimmed or not") {
  const Fixture fx;
  for (const auto kind : {HeadConfig::Kind::linear, HeadConfig::Kind::bilstm}) {
    const auto model = make_model<double>(fx, kind);
    const EncodedInput enc = encode_variant(InputVariant::fuse_sep, fx.registry.names(),
                                            "price showing wrong", fx.vocab, 16);
    EncodedInput tampered = enc;
    for (std::size_t i = enc.real_length(); i < 16; ++i) tampered.token_ids[i] = 7;
    const auto full = model.logits(make_batch({&enc}, false));
    const auto tampered_logits = model.logits(make_batch({&tampered}, false));
    const auto trimmed = model.logits(make_batch({&enc}, true));
    REQUIRE(full.data == tampered_logits.data);
    REQUIRE(full.data == trimmed.data);
  }
}

TEST_CASE("pool_cls selects exactly row zero") {
  Tensor<double> hidden(4, 3);
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data[i] = static_cast<double>(i);
  const auto pooled = pool_cls(hidden);
  REQUIRE(pooled.rows == 1);
  REQUIRE(pooled.cols == 3);
  for (std::size_t c = 0; c < 3; ++c) REQUIRE(pooled.at(0, c) == hidden.at(0, c));
}

TEST_CASE("end-to-end gradients match finite differences for both heads") {
  const Fixture fx;
  for (const auto kind : {HeadConfig::Kind::linear, HeadConfig::Kind::bilstm}) {
    auto model = make_model<double>(fx, kind, /*hidden=*/8, /*layers=*/2, /*heads=*/2,
                                    /*max_len=*/8, /*dropout=*/0.0);
    const EncodedInput e1 = encode_variant(InputVariant::fuse_sep, fx.registry.names(),
                                           "price showing wrong", fx.vocab, 8);
    const EncodedInput e2 = encode_variant(InputVariant::fuse_sep, fx.registry.names(),
                                           "alpha beta gamma delta epsilon", fx.vocab, 8);
    const Batch batch = make_batch({&e1, &e2}, false);
    Tensor<double> targets(2, 2);
    targets.data = {1.0, 0.0, 0.0, 1.0};
    const Tensor<double> pos_w(1, 2, 1.0);
    const Tensor<double> sample_w(2, 2, 1.0);

    std::vector<Tensor<double>> grads;
    const auto run = [&](bool with_grads) {
      Tape<double> tape(false);
      std::vector<Value> leaves;
      const Value logits = model.build_forward(tape, batch, &leaves);
      const Value loss = tape.bce_with_logits(logits, targets, pos_w, sample_w);
      const double v = tape.value(loss).data[0];
      if (with_grads) {
        tape.backward(loss);
        grads.clear();
        for (const Value lv : leaves) grads.push_back(tape.grad(lv));
      }
      return v;
    };
    run(true);
    std::vector<Tensor<double>*> pptr = model.params().tensors();
    std::vector<const Tensor<double>*> gptr;
    for (const auto& g : grads) gptr.push_back(&g);
    const auto result = finite_diff_check([&] { return run(false); }, pptr, gptr, 1e-5);
    INFO("head " << to_string(kind) << " worst rel err " << result.max_rel_error);
    REQUIRE(result.checked == model.params().total_elements());
    REQUIRE(result.max_rel_error < 1e-3);
  }
}

namespace {

Dataset separable_toy(std::size_t per_label, const std::string& prefix) {
  Dataset ds;
  ds.registry = TeamLabelRegistry({"redteam", "blueteam"});
  for (std::size_t i = 0; i < per_label; ++i) {
    Defect a;
    a.id = prefix + "r" + std::to_string(i);
    a.title = "crimson issue number " + std::to_string(i % 3);
    a.labels = {0};
    ds.defects.push_back(a);
    Defect b;
    b.id = prefix + "b" + std::to_string(i);
    b.title = "azure problem number " + std::to_string(i % 3);
    b.labels = {1};
    ds.defects.push_back(b);
  }
  return ds;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.hidden = 32;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.variant = InputVariant::baseline;
  cfg.head_kind = HeadConfig::Kind::linear;
  cfg.hparams.max_seq_length = 16;
  cfg.hparams.batch_size = 8;
  cfg.hparams.learning_rate = 1e-3;
  cfg.hparams.epochs = 50;
  cfg.hparams.dropout = 0.1;
  cfg.seed = 12;
  return cfg;
}

}  // namespace

TEST_CASE("training drives a separable toy set below 0.05 loss") {
  const Dataset train_ds = separable_toy(16, "t");
  const Dataset dev_ds = separable_toy(4, "d");
  const Vocab vocab = build_vocab(train_ds);
  const TrainConfig cfg = toy_config();
  const auto result = train<double>(train_ds, dev_ds, cfg, vocab);
  const auto& history = result.history.epochs;
  REQUIRE(history.size() == 50);
  REQUIRE(history.back().train_loss < 0.05);
  REQUIRE(history[9].train_loss < history[0].train_loss);

  // Best epoch is the argmax of dev accuracy (earliest on ties).
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].dev_accuracy > history[best].dev_accuracy) best = i;
  REQUIRE(result.history.best_epoch == best + 1);

  // A converged model memorizes its own training set.
  const EncodedDataset enc = encode_dataset(train_ds, vocab, cfg.variant, 16);
  const auto preds = predict_dataset(result.checkpoint.model, enc, 0.55);
  const auto counts = confusion(preds, enc.targets);
  REQUIRE(accuracy(counts) > 0.95);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  const Dataset train_ds = separable_toy(8, "t");
  const Dataset dev_ds = separable_toy(2, "d");
  const Vocab vocab = build_vocab(train_ds);
  TrainConfig cfg = toy_config();
  cfg.hparams.epochs = 5;
  const auto r1 = train<double>(train_ds, dev_ds, cfg, vocab);
  const auto r2 = train<double>(train_ds, dev_ds, cfg, vocab);
  REQUIRE(r1.history.epochs.size() == r2.history.epochs.size());
  for (std::size_t i = 0; i < r1.history.epochs.size(); ++i) {
    REQUIRE(r1.history.epochs[i].train_loss == r2.history.epochs[i].train_loss);
    REQUIRE(r1.history.epochs[i].dev_accuracy == r2.history.epochs[i].dev_accuracy);
  }
  const EncodedDataset enc = encode_dataset(dev_ds, vocab, cfg.variant, 16);
  const Batch batch = make_batch({&enc.inputs[0], &enc.inputs[1]});
  REQUIRE(r1.checkpoint.model.logits(batch).data == r2.checkpoint.model.logits(batch).data);
}

TEST_CASE("checkpoint round-trip reproduces logits bitwise") {
  const Dataset train_ds = separable_toy(8, "t");
  const Dataset dev_ds = separable_toy(2, "d");
  const Vocab vocab = build_vocab(train_ds);
  TrainConfig cfg = toy_config();
  cfg.hparams.epochs = 2;
  cfg.head_kind = HeadConfig::Kind::bilstm;
  const auto result = train<double>(train_ds, dev_ds, cfg, vocab);

  const auto path = (std::filesystem::temp_directory_path() / "deftri_model.ckpt").string();
  save_checkpoint(result.checkpoint, path);
  const auto back = load_checkpoint<double>(path);
  REQUIRE(back.vocab_hash == vocab.hash());
  REQUIRE(back.variant == cfg.variant);
  REQUIRE(back.history.best_epoch == result.history.best_epoch);

  Rng rng(7);
  const EncodedDataset enc = encode_dataset(train_ds, vocab, cfg.variant, 16);
  for (int trial = 0; trial < 10; ++trial) {
    const auto& input = enc.inputs[rng.uniform_index(enc.inputs.size())];
    const Batch batch = make_batch({&input});
    REQUIRE(result.checkpoint.model.logits(batch).data == back.model.logits(batch).data);
  }
}

TEST_CASE("truncated checkpoints are rejected without a partial model") {
  const Dataset train_ds = separable_toy(4, "t");
  const Dataset dev_ds = separable_toy(2, "d");
  const Vocab vocab = build_vocab(train_ds);
  TrainConfig cfg = toy_config();
  cfg.hparams.epochs = 1;
  const auto result = train<double>(train_ds, dev_ds, cfg, vocab);
  const auto path = (std::filesystem::temp_directory_path() / "deftri_trunc.ckpt").string();
  save_checkpoint(result.checkpoint, path);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 10);
  REQUIRE_THROWS_AS(load_checkpoint<double>(path), DataError);

  // Wrong precision is refused too.
  REQUIRE_THROWS_AS(load_checkpoint<float>(path), DataError);
}

TEST_CASE("evaluate rejects a vocabulary with a different hash") {
  const Dataset train_ds = separable_toy(4, "t");
  const Dataset dev_ds = separable_toy(2, "d");
  const Vocab vocab = build_vocab(train_ds);
  TrainConfig cfg = toy_config();
  cfg.hparams.epochs = 1;
  const auto result = train<double>(train_ds, dev_ds, cfg, vocab);

  Dataset other = train_ds;
  Defect extra;
  extra.id = "x";
  extra.title = "entirely new words here";
  extra.labels = {0};
  other.defects.push_back(extra);
  const Vocab wrong = build_vocab(other);
  REQUIRE_THROWS_AS(evaluate(result.checkpoint, dev_ds, wrong, 0.55), DataError);
  REQUIRE_NOTHROW(evaluate(result.checkpoint, dev_ds, vocab, 0.55));
}

TEST_CASE("predict applies the sigmoid threshold rule") {
  Tensor<double> logits(1, 2);
  logits.data = {0.3, -0.5};  // sigmoids 0.5744 and 0.3775
  REQUIRE(predict(logits, 0.55) == std::vector<BitRow>{{1, 0}});

  Tensor<double> zeros(1, 3, 0.0);
  REQUIRE(predict(zeros, 0.55) == std::vector<BitRow>{{0, 0, 0}});
  REQUIRE(predict(zeros, 0.5) == std::vector<BitRow>{{1, 1, 1}});  // >= at the boundary
  REQUIRE_THROWS_AS(predict(zeros, 1.0), ConfigError);
}

TEST_CASE("train validates inputs") {
  const Dataset train_ds = separable_toy(4, "t");
  const Dataset dev_ds = separable_toy(2, "d");
  const Vocab vocab = build_vocab(train_ds);
  Dataset empty;
  empty.registry = train_ds.registry;
  TrainConfig cfg = toy_config();
  cfg.hparams.epochs = 1;
  REQUIRE_THROWS_AS(train<double>(empty, dev_ds, cfg, vocab), DataError);
  REQUIRE_THROWS_AS(train<double>(train_ds, empty, cfg, vocab), DataError);
}
