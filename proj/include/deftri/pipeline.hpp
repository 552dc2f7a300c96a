#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deftri/augmentation.hpp"
#include "deftri/balancing.hpp"
#include "deftri/common.hpp"
#include "deftri/corpus.hpp"
#include "deftri/embedding.hpp"
#include "deftri/metrics.hpp"
#include "deftri/tokenizer.hpp"
#include "deftri/train.hpp"
#include "deftri/weak_supervision.hpp"

namespace deftri {

struct PipelineConfig {
  std::string registry_path;
  std::string lf_path;
  std::string embedding_path;
  std::string data_dir;
  bool stage_weak = true;
  bool stage_augment = true;
  bool stage_balance = true;
  double weak_tau = 0.5;
  AugmentConfig augment;
  std::size_t mlsmote_k = 5;
  TrainConfig model;
  std::uint64_t seed = 42;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["paths"] = {{"registry", registry_path},
                  {"lfs", lf_path},
                  {"embedding", embedding_path},
                  {"data_dir", data_dir}};
    j["stages"] = {{"weak", stage_weak}, {"augment", stage_augment}, {"balance", stage_balance}};
    j["weak"] = {{"tau", weak_tau}};
    j["augment"] = {{"fraction", augment.sample_fraction}, {"copies", augment.copies_per_defect},
                    {"perturb", augment.perturb_rate},     {"min_cos", augment.min_cosine},
                    {"neighbor_k", augment.neighbor_k}};
    j["balance"] = {{"k", mlsmote_k}};
    j["model"] = {{"dropout", model.hparams.dropout},
                  {"max_seq_length", model.hparams.max_seq_length},
                  {"batch_size", model.hparams.batch_size},
                  {"learning_rate", model.hparams.learning_rate},
                  {"weight_decay", model.hparams.weight_decay},
                  {"adam_epsilon", model.hparams.adam_epsilon},
                  {"epochs", model.hparams.epochs},
                  {"hidden", model.hidden},
                  {"layers", model.layers},
                  {"heads", model.heads}};
    j["variant"] = to_string(model.variant);
    j["head"] = to_string(model.head_kind);
    j["seed"] = seed;
    j["threshold"] = model.threshold;
    return j;
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      cfg.registry_path = p.value("registry", "");
      cfg.lf_path = p.value("lfs", "");
      cfg.embedding_path = p.value("embedding", "");
      cfg.data_dir = p.value("data_dir", "");
    }
    if (j.contains("stages")) {
      const auto& s = j["stages"];
      cfg.stage_weak = s.value("weak", cfg.stage_weak);
      cfg.stage_augment = s.value("augment", cfg.stage_augment);
      cfg.stage_balance = s.value("balance", cfg.stage_balance);
    }
    if (j.contains("weak")) cfg.weak_tau = j["weak"].value("tau", cfg.weak_tau);
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      cfg.augment.sample_fraction = a.value("fraction", cfg.augment.sample_fraction);
      cfg.augment.copies_per_defect = a.value("copies", cfg.augment.copies_per_defect);
      cfg.augment.perturb_rate = a.value("perturb", cfg.augment.perturb_rate);
      cfg.augment.min_cosine = a.value("min_cos", cfg.augment.min_cosine);
      cfg.augment.neighbor_k = a.value("neighbor_k", cfg.augment.neighbor_k);
    }
    if (j.contains("balance")) cfg.mlsmote_k = j["balance"].value("k", cfg.mlsmote_k);
    if (j.contains("model")) {
      const auto& m = j["model"];
      cfg.model.hparams.dropout = m.value("dropout", cfg.model.hparams.dropout);
      cfg.model.hparams.max_seq_length =
          m.value("max_seq_length", cfg.model.hparams.max_seq_length);
      cfg.model.hparams.batch_size = m.value("batch_size", cfg.model.hparams.batch_size);
      cfg.model.hparams.learning_rate = m.value("learning_rate", cfg.model.hparams.learning_rate);
      cfg.model.hparams.weight_decay = m.value("weight_decay", cfg.model.hparams.weight_decay);
      cfg.model.hparams.adam_epsilon = m.value("adam_epsilon", cfg.model.hparams.adam_epsilon);
      cfg.model.hparams.epochs = m.value("epochs", cfg.model.hparams.epochs);
      cfg.model.hidden = m.value("hidden", cfg.model.hidden);
      cfg.model.layers = m.value("layers", cfg.model.layers);
      cfg.model.heads = m.value("heads", cfg.model.heads);
    }
    if (j.contains("variant")) cfg.model.variant = variant_from_string(j["variant"]);
    if (j.contains("head")) cfg.model.head_kind = head_kind_from_string(j["head"]);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.model.threshold = j.value("threshold", cfg.model.threshold);
    cfg.model.seed = cfg.seed;
    // CI override for the data directory.
    if (const char* env = std::getenv("DEFTRI_DATA_DIR"); env && *env) cfg.data_dir = env;
    return cfg;
  }

  static PipelineConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      throw DataError("config file is not valid JSON: " + path);
    }
    return from_json(j);
  }

  std::string config_hash() const { return to_hex(fnv1a64(to_json().dump())); }
};

struct StageOutcome {
  std::string name;
  std::string artifact_path;
  std::string report_path;
};

struct PipelineOutcome {
  std::vector<StageOutcome> stages;
  std::string final_path;
};

namespace detail {

inline void write_json_file(const nlohmann::ordered_json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

inline Lineage chain_lineage(const std::optional<Lineage>& parent, const std::string& command,
                             const std::string& stage_hash) {
  Lineage lineage;
  lineage.command = command;
  lineage.config_hash =
      to_hex(fnv1a64(stage_hash + (parent ? parent->config_hash : std::string())));
  lineage.root_hash = parent ? parent->root_hash : lineage.config_hash;
  return lineage;
}

}  // namespace detail

// Stage order is fixed: weak labeling, then augmentation, then balancing.
// Each enabled stage writes its artifact plus a JSON report; the final
// artifact is written even when every stage is disabled (input copy).
inline PipelineOutcome run_pipeline(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.data_dir);
  if (!fs::exists(dir)) throw DataError("data dir does not exist: " + cfg.data_dir);
  const std::string train_path = (dir / "train.jsonl").string();
  if (!fs::exists(train_path)) throw DataError("missing pipeline input: " + train_path);
  if (!fs::exists(cfg.registry_path)) throw DataError("missing registry: " + cfg.registry_path);

  const TeamLabelRegistry registry = load_registry(cfg.registry_path);
  Dataset current = load_dataset(train_path, registry);
  std::optional<Lineage> lineage = read_lineage(train_path);

  PipelineOutcome outcome;
  const auto emit_stage = [&](const std::string& stage, const Dataset& ds,
                              const nlohmann::ordered_json& report) {
    StageOutcome so;
    so.name = stage;
    so.artifact_path = (dir / ("train." + stage + ".jsonl")).string();
    so.report_path = (dir / ("train." + stage + ".report.json")).string();
    lineage = detail::chain_lineage(lineage, "pipeline:" + stage, cfg.config_hash());
    save_dataset(ds, so.artifact_path, lineage);
    detail::write_json_file(report, so.report_path);
    outcome.stages.push_back(so);
  };

  if (cfg.stage_weak) {
    try {
      if (!fs::exists(cfg.lf_path)) throw DataError("missing LF file: " + cfg.lf_path);
      const std::string dev_path = (dir / "dev.jsonl").string();
      if (!fs::exists(dev_path)) throw DataError("missing dev set: " + dev_path);
      const Dataset dev = load_dataset(dev_path, registry);
      const auto lfs = load_labeling_functions(cfg.lf_path, registry);
      const LabelMatrix matrix = apply_lfs(current, lfs);
      const LabelModelParams params = fit_label_model(lfs, dev, cfg.weak_tau);
      const WeakLabels weak = aggregate(matrix, lfs, params);

      Dataset labeled;
      labeled.registry = registry;
      for (std::size_t i = 0; i < current.size(); ++i) {
        if (!weak.covered[i]) continue;
        Defect d = current.defects[i];
        d.labels = weak.labels[i];
        d.provenance = Provenance::weak;
        labeled.defects.push_back(std::move(d));
      }
      nlohmann::ordered_json report;
      report["stage"] = "weak";
      report["input_records"] = current.size();
      report["covered"] = weak.coverage();
      report["excluded"] = current.size() - weak.coverage();
      report["tau"] = cfg.weak_tau;
      auto weights = nlohmann::ordered_json::object();
      for (std::size_t f = 0; f < lfs.size(); ++f) weights[lfs[f].id] = params.weights[f];
      report["lf_weights"] = std::move(weights);
      current = std::move(labeled);
      emit_stage("weak", current, report);
    } catch (const DeftriError& e) {
      throw DataError("stage weak: " + std::string(e.what()));
    }
  }

  if (cfg.stage_augment) {
    try {
      if (!fs::exists(cfg.embedding_path))
        throw DataError("missing embedding table: " + cfg.embedding_path);
      const EmbeddingTable table = EmbeddingTable::load(cfg.embedding_path);
      AugmentConfig acfg = cfg.augment;
      acfg.seed = cfg.seed ^ 0xa46d0000u;
      const AugmentReport rep = augment_dataset(current, acfg, table);
      nlohmann::ordered_json report;
      report["stage"] = "augment";
      report["sampled"] = rep.sampled;
      report["produced"] = rep.produced;
      report["skipped"] = rep.skipped;
      report["shortfall"] = rep.shortfall;
      report["swaps"] = rep.swaps.size();
      emit_stage("augment", current, report);
    } catch (const DeftriError& e) {
      throw DataError("stage augment: " + std::string(e.what()));
    }
  }

  if (cfg.stage_balance) {
    try {
      const RebalanceReport rep = mlsmote(current, cfg.mlsmote_k, cfg.seed ^ 0xb41a0000u);
      nlohmann::ordered_json report;
      report["stage"] = "balance";
      report["k"] = cfg.mlsmote_k;
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
      emit_stage("balance", current, report);
    } catch (const DeftriError& e) {
      throw DataError("stage balance: " + std::string(e.what()));
    }
  }

  outcome.final_path = (dir / "train.final.jsonl").string();
  lineage = detail::chain_lineage(lineage, "pipeline:final", cfg.config_hash());
  save_dataset(current, outcome.final_path, lineage);
  return outcome;
}

// Artifacts fed to one experiment must descend from the same corpus family.
// Files without a lineage header are accepted (hand-made fixtures).
inline void require_same_lineage(const std::vector<std::string>& paths) {
  std::optional<Lineage> reference;
  std::string reference_path;
  for (const auto& path : paths) {
    const auto lineage = read_lineage(path);
    if (!lineage) continue;
    if (!reference) {
      reference = lineage;
      reference_path = path;
      continue;
    }
    if (lineage->root_hash != reference->root_hash)
      throw DataError("mixed-lineage inputs: " + reference_path + " and " + path +
                      " come from different corpus roots");
  }
}

// ---- experiment matrix ------------------------------------------------------

struct ExperimentCell {
  std::string name;
  InputVariant variant;
  HeadConfig::Kind head;
  bool ok = false;
  std::string error;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<ExperimentCell> cells;       // 6 rows, fixed order
  std::vector<ExperimentCell> ablation;    // same cells without augmented records
  bool ablation_ran = false;
  double ablation_delta = 0.0;             // mean accuracy (with aug) - (without aug)
};

inline std::vector<ExperimentCell> experiment_matrix_cells() {
  return {
      {"Encoder+Linear", InputVariant::baseline, HeadConfig::Kind::linear},
      {"Encoder+BiLSTM", InputVariant::baseline, HeadConfig::Kind::bilstm},
      {"Encoder+LabelFuse w/o [SEP]+Linear", InputVariant::fuse_nosep, HeadConfig::Kind::linear},
      {"Encoder+LabelFuse w/o [SEP]+BiLSTM", InputVariant::fuse_nosep, HeadConfig::Kind::bilstm},
      {"Encoder+LabelFuse w [SEP]+Linear", InputVariant::fuse_sep, HeadConfig::Kind::linear},
      {"Encoder+LabelFuse w [SEP]+BiLSTM", InputVariant::fuse_sep, HeadConfig::Kind::bilstm},
  };
}

template <typename T>
std::vector<ExperimentCell> run_matrix(const Dataset& train_ds, const Dataset& dev_ds,
                                       const Dataset& test_ds, const TrainConfig& base,
                                       const Vocab& vocab, const std::string& ckpt_dir = "") {
  auto cells = experiment_matrix_cells();
  for (auto& cell : cells) {
    try {
      TrainConfig cfg = base;
      cfg.variant = cell.variant;
      cfg.head_kind = cell.head;
      const TrainResult<T> result = train<T>(train_ds, dev_ds, cfg, vocab);
      const MetricsReport report = evaluate(result.checkpoint, test_ds, vocab, cfg.threshold);
      cell.macro_f1 = report.macro_f1;
      cell.accuracy = report.accuracy;
      cell.ok = true;
      if (!ckpt_dir.empty()) {
        const auto path = std::filesystem::path(ckpt_dir) /
                          (std::string(to_string(cell.variant)) + "_" + to_string(cell.head) +
                           ".ckpt");
        save_checkpoint(result.checkpoint, path.string());
      }
    } catch (const DeftriError& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  }
  return cells;
}

// Trains and evaluates the 6-cell matrix. When the training artifact contains
// augmented records, the same matrix is rerun without them and the mean
// accuracy delta is reported (the augmentation ablation).
template <typename T>
ExperimentResult run_experiments(const Dataset& train_ds, const Dataset& dev_ds,
                                 const Dataset& test_ds, const TrainConfig& base,
                                 const std::string& ckpt_dir = "") {
  const Vocab vocab = build_vocab(train_ds);
  ExperimentResult result;
  result.cells = run_matrix<T>(train_ds, dev_ds, test_ds, base, vocab, ckpt_dir);

  Dataset no_aug;
  no_aug.registry = train_ds.registry;
  for (const auto& d : train_ds.defects)
    if (d.provenance != Provenance::augmented) no_aug.defects.push_back(d);

  if (no_aug.size() < train_ds.size() && !no_aug.defects.empty()) {
    result.ablation_ran = true;
    result.ablation = run_matrix<T>(no_aug, dev_ds, test_ds, base, vocab, "");
    double with_aug = 0.0;
    double without_aug = 0.0;
    std::size_t ok_pairs = 0;
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
      if (!result.cells[i].ok || !result.ablation[i].ok) continue;
      with_aug += result.cells[i].accuracy;
      without_aug += result.ablation[i].accuracy;
      ++ok_pairs;
    }
    if (ok_pairs > 0) result.ablation_delta = (with_aug - without_aug) / ok_pairs;
  }
  return result;
}

inline std::string cell_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string results_tsv(const std::vector<ExperimentCell>& cells) {
  std::string out = "Model\tMacro-F1\tAccuracy\n";
  for (const auto& c : cells) {
    out += c.name;
    out += "\t";
    out += c.ok ? cell_number(c.macro_f1) : "FAILED";
    out += "\t";
    out += c.ok ? cell_number(c.accuracy) : "FAILED";
    out += "\n";
  }
  return out;
}

inline std::string results_text(const std::vector<ExperimentCell>& cells) {
  std::size_t width = std::string("Model").size();
  for (const auto& c : cells) width = std::max(width, c.name.size());
  std::string out;
  const auto pad = [&](const std::string& s, std::size_t w) {
    std::string p = s;
    p.resize(w, ' ');
    return p;
  };
  out += pad("Model", width) + "  Macro-F1  Accuracy\n";
  for (const auto& c : cells) {
    out += pad(c.name, width) + "  ";
    out += c.ok ? pad(cell_number(c.macro_f1), 8) : pad("FAILED", 8);
    out += "  ";
    out += c.ok ? cell_number(c.accuracy) : "FAILED";
    out += "\n";
  }
  return out;
}

// The directional readout: label-fused vs baseline per head, plus the
// augmentation ablation. No margins are asserted here; this is a report.
inline std::string deltas_text(const ExperimentResult& result) {
  const auto& c = result.cells;
  std::string out;
  const auto line = [&](const std::string& name, double delta) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-44s %+.4f\n", name.c_str(), delta);
    out += buf;
  };
  if (c.size() == 6 && c[0].ok && c[2].ok && c[4].ok) {
    line("accuracy: fuse w/o [SEP] vs baseline (Linear)", c[2].accuracy - c[0].accuracy);
    line("accuracy: fuse w   [SEP] vs baseline (Linear)", c[4].accuracy - c[0].accuracy);
  }
  if (c.size() == 6 && c[1].ok && c[3].ok && c[5].ok) {
    line("accuracy: fuse w/o [SEP] vs baseline (BiLSTM)", c[3].accuracy - c[1].accuracy);
    line("accuracy: fuse w   [SEP] vs baseline (BiLSTM)", c[5].accuracy - c[1].accuracy);
  }
  if (result.ablation_ran) {
    line("mean accuracy: with augmentation vs without", result.ablation_delta);
  } else {
    out += "augmentation ablation: no augmented records in the training artifact\n";
  }
  return out;
}

}  // namespace deftri
