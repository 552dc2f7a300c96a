// deftri: data pipeline, training, and experiment runner for multi-team
// defect triage on synthetic corpora.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "deftri/augmentation.hpp"
#include "deftri/balancing.hpp"
#include "deftri/corpus.hpp"
#include "deftri/embedding.hpp"
#include "deftri/metrics.hpp"
#include "deftri/pipeline.hpp"
#include "deftri/synthetic.hpp"
#include "deftri/tokenizer.hpp"
#include "deftri/train.hpp"
#include "deftri/weak_supervision.hpp"

namespace fs = std::filesystem;
using namespace deftri;

namespace {

void write_json_file(const nlohmann::ordered_json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write: " + path);
  out << j.dump(2) << "\n";
}

Lineage stage_lineage(const std::string& input_path, const std::string& command,
                      const std::string& stage_hash) {
  std::optional<Lineage> parent = read_lineage(input_path);
  Lineage lineage;
  lineage.command = command;
  lineage.config_hash =
      to_hex(fnv1a64(stage_hash + (parent ? parent->config_hash : std::string())));
  lineage.root_hash = parent ? parent->root_hash : lineage.config_hash;
  return lineage;
}

struct GenCorpusArgs {
  std::string out_dir;
  std::string out;
  std::string registry_out;
  std::string spec_path;
  std::size_t size = 2000;
  std::size_t test_size = 200;
  std::size_t dev_size = 75;
  std::size_t emb_dim = 50;
  std::uint64_t seed = 7;
};

int cmd_gen_corpus(const GenCorpusArgs& args) {
  SyntheticCorpusSpec spec = default_corpus_spec();
  if (!args.spec_path.empty()) {
    std::ifstream in(args.spec_path);
    if (!in) throw DataError("cannot open spec file: " + args.spec_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      throw DataError("spec file is not valid JSON: " + args.spec_path);
    }
    spec = spec_from_json(j);
    if (spec.keyword_pool.empty()) spec.keyword_pool = default_keyword_pools();
    if (spec.noise_vocab.empty()) spec.noise_vocab = default_noise_vocab();
    if (spec.sentence_templates.empty()) spec.sentence_templates = default_sentence_templates();
  }
  std::vector<std::string> names;
  for (const auto& pool : spec.keyword_pool) names.push_back(pool.front());
  const TeamLabelRegistry registry{names};

  const std::string family = to_hex(corpus_family_hash(spec, registry));
  const auto make_lineage = [&](const std::string& cmd, std::uint64_t seed) {
    Lineage lineage;
    lineage.command = cmd;
    lineage.config_hash = to_hex(fnv1a64(spec_to_json(spec).dump() + std::to_string(seed)));
    lineage.root_hash = family;
    return lineage;
  };
  const auto generate = [&](std::size_t size, std::uint64_t seed, const std::string& prefix) {
    SyntheticCorpusSpec s = spec;
    s.size = size;
    s.seed = seed;
    s.id_prefix = prefix;
    return generate_synthetic_corpus(s, registry);
  };

  if (!args.out.empty()) {
    SyntheticCorpusSpec s = spec;
    s.size = args.size;
    s.seed = args.seed;
    const Dataset ds = generate_synthetic_corpus(s, registry);
    save_dataset(ds, args.out, make_lineage("gen-corpus", args.seed));
    if (!args.registry_out.empty()) save_registry(registry, args.registry_out);
    std::cout << "wrote " << ds.size() << " defects to " << args.out << "\n";
    return 0;
  }

  if (args.out_dir.empty()) throw ConfigError("gen-corpus needs --out or --out-dir");
  fs::create_directories(args.out_dir);
  const fs::path dir(args.out_dir);

  const Dataset train = generate(args.size, args.seed, "tr");
  const Dataset dev = generate(args.dev_size, args.seed + 1, "dev");
  const Dataset test = generate(args.test_size, args.seed + 2, "te");

  save_registry(registry, (dir / "registry.json").string());
  save_labeling_functions(pool_keyword_lfs(spec.keyword_pool, registry), registry,
                          (dir / "lfs.json").string());

  auto groups = spec.keyword_pool;
  for (auto& g : curated_synonym_groups()) groups.push_back(g);
  const EmbeddingTable table =
      build_embedding_table(train, groups, args.emb_dim, args.seed ^ 0xe3b0u);
  table.save((dir / "embeddings.txt").string());

  save_dataset(train, (dir / "train.jsonl").string(), make_lineage("gen-corpus", args.seed));
  save_dataset(dev, (dir / "dev.jsonl").string(), make_lineage("gen-corpus", args.seed + 1));
  save_dataset(test, (dir / "test.jsonl").string(), make_lineage("gen-corpus", args.seed + 2));

  std::cout << "corpus family " << family << ": train=" << train.size()
            << " dev=" << dev.size() << " test=" << test.size() << " vocabulary dim "
            << table.dim() << " (" << table.size() << " words) in " << args.out_dir << "\n";
  return 0;
}

int cmd_weak_label(const std::string& in, const std::string& registry_path,
                   const std::string& lf_path, const std::string& dev_path, double tau,
                   const std::string& out, const std::string& report_path) {
  const TeamLabelRegistry registry = load_registry(registry_path);
  const Dataset ds = load_dataset(in, registry);
  const Dataset dev = load_dataset(dev_path, registry);
  const auto lfs = load_labeling_functions(lf_path, registry);
  const LabelMatrix matrix = apply_lfs(ds, lfs);
  const LabelModelParams params = fit_label_model(lfs, dev, tau);
  const WeakLabels weak = aggregate(matrix, lfs, params);

  Dataset labeled;
  labeled.registry = registry;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!weak.covered[i]) continue;
    Defect d = ds.defects[i];
    d.labels = weak.labels[i];
    d.provenance = Provenance::weak;
    labeled.defects.push_back(std::move(d));
  }
  save_dataset(labeled, out,
               stage_lineage(in, "weak-label", to_hex(fnv1a64(lf_path + std::to_string(tau)))));

  nlohmann::ordered_json report;
  report["input_records"] = ds.size();
  report["covered"] = weak.coverage();
  report["excluded"] = ds.size() - weak.coverage();
  report["tau"] = tau;
  auto weights = nlohmann::ordered_json::object();
  for (std::size_t f = 0; f < lfs.size(); ++f) weights[lfs[f].id] = params.weights[f];
  report["lf_weights"] = std::move(weights);
  if (!report_path.empty()) write_json_file(report, report_path);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_augment(const std::string& in, const std::string& registry_path,
                const std::string& table_path, const AugmentConfig& cfg, const std::string& out,
                const std::string& report_path) {
  const TeamLabelRegistry registry = load_registry(registry_path);
  Dataset ds = load_dataset(in, registry);
  const EmbeddingTable table = EmbeddingTable::load(table_path);
  const AugmentReport rep = augment_dataset(ds, cfg, table);
  save_dataset(ds, out,
               stage_lineage(in, "augment", to_hex(fnv1a64(std::to_string(cfg.seed) + ":" +
                                                           std::to_string(cfg.sample_fraction)))));
  nlohmann::ordered_json report;
  report["sampled"] = rep.sampled;
  report["produced"] = rep.produced;
  report["skipped"] = rep.skipped;
  report["shortfall"] = rep.shortfall;
  report["swaps"] = rep.swaps.size();
  if (!report_path.empty()) write_json_file(report, report_path);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_balance(const std::string& in, const std::string& registry_path, std::size_t k,
                std::uint64_t seed, const std::string& out, const std::string& report_path) {
  const TeamLabelRegistry registry = load_registry(registry_path);
  Dataset ds = load_dataset(in, registry);
  const RebalanceReport rep = mlsmote(ds, k, seed);
  save_dataset(ds, out,
               stage_lineage(in, "balance",
                             to_hex(fnv1a64(std::to_string(k) + ":" + std::to_string(seed)))));
  nlohmann::ordered_json report;
  report["k"] = k;
  report["synthesized"] = rep.synthesized;
  report["mean_ir_before"] = rep.mean_ir_before;
  report["mean_ir_after"] = rep.mean_ir_after;
  auto before = nlohmann::ordered_json::object();
  auto after = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < registry.size(); ++t) {
    before[registry.name(t)] = rep.counts_before[t];
    after[registry.name(t)] = rep.counts_after[t];
  }
  report["counts_before"] = std::move(before);
  report["counts_after"] = std::move(after);
  auto skipped = nlohmann::json::array();
  for (const auto t : rep.skipped_labels) skipped.push_back(registry.name(t));
  report["skipped_labels"] = std::move(skipped);
  if (!report_path.empty()) write_json_file(report, report_path);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_build_vocab(const std::string& in, const std::string& registry_path, std::size_t min_freq,
                    std::size_t max_size, const std::string& out) {
  const TeamLabelRegistry registry = load_registry(registry_path);
  const Dataset ds = load_dataset(in, registry);
  const Vocab vocab = build_vocab(ds, min_freq, max_size);
  vocab.save(out);
  std::cout << "vocab size " << vocab.size() << " hash " << to_hex(vocab.hash()) << "\n";
  return 0;
}

struct TrainArgs {
  std::string train_path, dev_path, registry_path, vocab_path, out, history_path;
  std::string variant = "baseline";
  std::string head = "linear";
  std::string precision = "f32";
  TrainConfig cfg;
};

template <typename T>
int run_train(const TrainArgs& args, const TeamLabelRegistry& registry, const Vocab& vocab) {
  const Dataset train_ds = load_dataset(args.train_path, registry);
  const Dataset dev_ds = load_dataset(args.dev_path, registry);
  const TrainResult<T> result = train<T>(train_ds, dev_ds, args.cfg, vocab);
  save_checkpoint(result.checkpoint, args.out);
  if (!args.history_path.empty()) {
    nlohmann::ordered_json h;
    h["best_epoch"] = result.history.best_epoch;
    auto epochs = nlohmann::ordered_json::array();
    for (const auto& e : result.history.epochs)
      epochs.push_back({{"train_loss", e.train_loss},
                        {"dev_accuracy", e.dev_accuracy},
                        {"dev_macro_f1", e.dev_macro_f1}});
    h["epochs"] = std::move(epochs);
    write_json_file(h, args.history_path);
  }
  std::cout << "checkpoint " << args.out << " (best epoch " << result.history.best_epoch << ", "
            << result.history.epochs.size() << " epochs)\n";
  return 0;
}

int cmd_train(TrainArgs& args) {
  args.cfg.variant = variant_from_string(args.variant);
  args.cfg.head_kind = head_kind_from_string(args.head);
  const TeamLabelRegistry registry = load_registry(args.registry_path);
  const Vocab vocab = Vocab::load(args.vocab_path);
  if (args.precision == "f32") return run_train<float>(args, registry, vocab);
  if (args.precision == "f64") return run_train<double>(args, registry, vocab);
  throw ConfigError("precision must be f32 or f64");
}

template <typename T>
int run_eval(const std::string& ckpt_path, const std::string& test_path,
             const std::string& registry_path, const std::string& vocab_path, double threshold) {
  const Checkpoint<T> ckpt = load_checkpoint<T>(ckpt_path);
  const TeamLabelRegistry registry = load_registry(registry_path);
  const Vocab vocab = Vocab::load(vocab_path);
  const Dataset test_ds = load_dataset(test_path, registry);
  const MetricsReport report = evaluate(ckpt, test_ds, vocab, threshold);
  std::cout << report_to_json(report).dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& test_path,
             const std::string& registry_path, const std::string& vocab_path, double threshold) {
  const std::string precision = read_checkpoint_precision(ckpt_path);
  if (precision == "f32")
    return run_eval<float>(ckpt_path, test_path, registry_path, vocab_path, threshold);
  return run_eval<double>(ckpt_path, test_path, registry_path, vocab_path, threshold);
}

int cmd_pipeline(const std::string& config_path) {
  const PipelineConfig cfg = PipelineConfig::load(config_path);
  const PipelineOutcome outcome = run_pipeline(cfg);
  nlohmann::ordered_json j;
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : outcome.stages)
    stages.push_back({{"stage", s.name}, {"artifact", s.artifact_path}, {"report", s.report_path}});
  j["stages"] = std::move(stages);
  j["final"] = outcome.final_path;
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct ExperimentArgs {
  std::string config_path, train_path, dev_path, test_path, out_dir;
  std::string precision = "f32";
};

template <typename T>
int run_experiment_cmd(const ExperimentArgs& args) {
  const PipelineConfig cfg = PipelineConfig::load(args.config_path);
  const fs::path dir(cfg.data_dir);
  const std::string train_path =
      args.train_path.empty() ? (dir / "train.final.jsonl").string() : args.train_path;
  const std::string dev_path =
      args.dev_path.empty() ? (dir / "dev.jsonl").string() : args.dev_path;
  const std::string test_path =
      args.test_path.empty() ? (dir / "test.jsonl").string() : args.test_path;
  require_same_lineage({train_path, dev_path, test_path});

  const TeamLabelRegistry registry = load_registry(cfg.registry_path);
  const Dataset train_ds = load_dataset(train_path, registry);
  const Dataset dev_ds = load_dataset(dev_path, registry);
  const Dataset test_ds = load_dataset(test_path, registry);

  const std::string out_dir = args.out_dir.empty() ? cfg.data_dir : args.out_dir;
  fs::create_directories(out_dir);
  const ExperimentResult result =
      run_experiments<T>(train_ds, dev_ds, test_ds, cfg.model, out_dir);

  const std::string tsv = results_tsv(result.cells);
  const std::string text = results_text(result.cells);
  const std::string deltas = deltas_text(result);
  {
    std::ofstream t((fs::path(out_dir) / "results.tsv").string(), std::ios::trunc);
    t << tsv;
    std::ofstream p((fs::path(out_dir) / "results.txt").string(), std::ios::trunc);
    p << text;
    std::ofstream d((fs::path(out_dir) / "deltas.txt").string(), std::ios::trunc);
    d << deltas;
  }
  std::cout << text << "\n" << deltas;
  for (const auto& cell : result.cells)
    if (!cell.ok) std::cout << "FAILED " << cell.name << ": " << cell.error << "\n";
  return 0;
}

int cmd_experiment(const ExperimentArgs& args) {
  if (args.precision == "f32") return run_experiment_cmd<float>(args);
  if (args.precision == "f64") return run_experiment_cmd<double>(args);
  throw ConfigError("precision must be f32 or f64");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"defect-triage data pipeline and label-fused classifier experiments"};
  app.require_subcommand(1);

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic defect corpus");
  gen_cmd->add_option("--out-dir", gen.out_dir, "write the full corpus bundle here");
  gen_cmd->add_option("--out", gen.out, "write a single train JSONL instead of a bundle");
  gen_cmd->add_option("--registry-out", gen.registry_out, "registry path (with --out)");
  gen_cmd->add_option("--spec", gen.spec_path, "corpus spec JSON overriding the built-in world");
  gen_cmd->add_option("--size", gen.size, "train set size");
  gen_cmd->add_option("--test-size", gen.test_size, "test set size");
  gen_cmd->add_option("--dev-size", gen.dev_size, "annotated dev set size");
  gen_cmd->add_option("--emb-dim", gen.emb_dim, "embedding dimension");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");

  std::string in, out, registry_path, lf_path, dev_path, report_path, table_path, vocab_path;
  double tau = 0.5;
  auto* weak_cmd = app.add_subcommand("weak-label", "apply labeling functions and aggregate");
  weak_cmd->add_option("--in", in)->required();
  weak_cmd->add_option("--registry", registry_path)->required();
  weak_cmd->add_option("--lfs", lf_path)->required();
  weak_cmd->add_option("--dev", dev_path)->required();
  weak_cmd->add_option("--tau", tau, "assignment threshold");
  weak_cmd->add_option("--out", out)->required();
  weak_cmd->add_option("--report", report_path);

  AugmentConfig acfg;
  auto* aug_cmd = app.add_subcommand("augment", "embedding-neighbor adversarial augmentation");
  aug_cmd->add_option("--in", in)->required();
  aug_cmd->add_option("--registry", registry_path)->required();
  aug_cmd->add_option("--table", table_path)->required();
  aug_cmd->add_option("--fraction", acfg.sample_fraction);
  aug_cmd->add_option("--copies", acfg.copies_per_defect);
  aug_cmd->add_option("--perturb", acfg.perturb_rate);
  aug_cmd->add_option("--min-cos", acfg.min_cosine);
  aug_cmd->add_option("--neighbor-k", acfg.neighbor_k);
  aug_cmd->add_option("--seed", acfg.seed);
  aug_cmd->add_option("--out", out)->required();
  aug_cmd->add_option("--report", report_path);

  std::size_t mlk = 5;
  std::uint64_t mls_seed = 13;
  auto* bal_cmd = app.add_subcommand("balance", "MLSMOTE oversampling of minority labels");
  bal_cmd->add_option("--in", in)->required();
  bal_cmd->add_option("--registry", registry_path)->required();
  bal_cmd->add_option("--k", mlk, "neighbor count");
  bal_cmd->add_option("--seed", mls_seed);
  bal_cmd->add_option("--out", out)->required();
  bal_cmd->add_option("--report", report_path);

  std::size_t min_freq = 1;
  std::size_t max_size = 30000;
  auto* vocab_cmd = app.add_subcommand("build-vocab", "build the word vocabulary");
  vocab_cmd->add_option("--in", in)->required();
  vocab_cmd->add_option("--registry", registry_path)->required();
  vocab_cmd->add_option("--min-freq", min_freq);
  vocab_cmd->add_option("--max-size", max_size);
  vocab_cmd->add_option("--out", out)->required();

  TrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "train one classifier");
  train_cmd->add_option("--train", targs.train_path)->required();
  train_cmd->add_option("--dev", targs.dev_path)->required();
  train_cmd->add_option("--registry", targs.registry_path)->required();
  train_cmd->add_option("--vocab", targs.vocab_path)->required();
  train_cmd->add_option("--variant", targs.variant, "baseline|fuse_nosep|fuse_sep");
  train_cmd->add_option("--head", targs.head, "linear|bilstm");
  train_cmd->add_option("--epochs", targs.cfg.hparams.epochs);
  train_cmd->add_option("--batch-size", targs.cfg.hparams.batch_size);
  train_cmd->add_option("--lr", targs.cfg.hparams.learning_rate);
  train_cmd->add_option("--weight-decay", targs.cfg.hparams.weight_decay);
  train_cmd->add_option("--adam-eps", targs.cfg.hparams.adam_epsilon);
  train_cmd->add_option("--dropout", targs.cfg.hparams.dropout);
  train_cmd->add_option("--max-len", targs.cfg.hparams.max_seq_length);
  train_cmd->add_option("--hidden", targs.cfg.hidden);
  train_cmd->add_option("--layers", targs.cfg.layers);
  train_cmd->add_option("--heads", targs.cfg.heads);
  train_cmd->add_option("--seed", targs.cfg.seed);
  train_cmd->add_option("--threshold", targs.cfg.threshold);
  train_cmd->add_option("--precision", targs.precision, "f32|f64");
  train_cmd->add_option("--out", targs.out)->required();
  train_cmd->add_option("--history", targs.history_path);

  std::string ckpt_path;
  double threshold = 0.55;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
  eval_cmd->add_option("--ckpt", ckpt_path)->required();
  eval_cmd->add_option("--test", in)->required();
  eval_cmd->add_option("--registry", registry_path)->required();
  eval_cmd->add_option("--vocab", vocab_path)->required();
  eval_cmd->add_option("--threshold", threshold);

  std::string config_path;
  auto* pipe_cmd = app.add_subcommand("pipeline", "run enabled data stages in order");
  pipe_cmd->add_option("--config", config_path)->required();

  ExperimentArgs eargs;
  auto* exp_cmd = app.add_subcommand("experiment", "train and evaluate the 6-cell matrix");
  exp_cmd->add_option("--config", eargs.config_path)->required();
  exp_cmd->add_option("--train", eargs.train_path);
  exp_cmd->add_option("--dev", eargs.dev_path);
  exp_cmd->add_option("--test", eargs.test_path);
  exp_cmd->add_option("--out-dir", eargs.out_dir);
  exp_cmd->add_option("--precision", eargs.precision, "f32|f64");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_corpus(gen);
    if (weak_cmd->parsed())
      return cmd_weak_label(in, registry_path, lf_path, dev_path, tau, out, report_path);
    if (aug_cmd->parsed())
      return cmd_augment(in, registry_path, table_path, acfg, out, report_path);
    if (bal_cmd->parsed())
      return cmd_balance(in, registry_path, mlk, mls_seed, out, report_path);
    if (vocab_cmd->parsed()) return cmd_build_vocab(in, registry_path, min_freq, max_size, out);
    if (train_cmd->parsed()) return cmd_train(targs);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, in, registry_path, vocab_path, threshold);
    if (pipe_cmd->parsed()) return cmd_pipeline(config_path);
    if (exp_cmd->parsed()) return cmd_experiment(eargs);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
