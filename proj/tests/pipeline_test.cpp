#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "deftri/pipeline.hpp"
#include "deftri/synthetic.hpp"

using namespace deftri;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct World {
  fs::path dir;
  TeamLabelRegistry registry;
  SyntheticCorpusSpec spec;
  PipelineConfig cfg;

  explicit World(const std::string& name, std::size_t train_size = 80) {
    dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    registry = default_registry();
    spec = default_corpus_spec();
    spec.size = train_size;
    spec.seed = 31;
    spec.id_prefix = "tr";
    const Dataset train = generate_synthetic_corpus(spec, registry);

    auto dev_spec = spec;
    dev_spec.size = 45;
    dev_spec.seed = 32;
    dev_spec.id_prefix = "dev";
    const Dataset dev = generate_synthetic_corpus(dev_spec, registry);

    const std::string family = to_hex(corpus_family_hash(spec, registry));
    const Lineage train_lineage{"gen-corpus", "cfg1", family};
    const Lineage dev_lineage{"gen-corpus", "cfg2", family};
    save_registry(registry, (dir / "registry.json").string());
    save_labeling_functions(pool_keyword_lfs(spec.keyword_pool, registry), registry,
                            (dir / "lfs.json").string());
    auto groups = spec.keyword_pool;
    for (auto& g : curated_synonym_groups()) groups.push_back(g);
    build_embedding_table(train, groups, 50, 77).save((dir / "embeddings.txt").string());
    save_dataset(train, (dir / "train.jsonl").string(), train_lineage);
    save_dataset(dev, (dir / "dev.jsonl").string(), dev_lineage);

    cfg.registry_path = (dir / "registry.json").string();
    cfg.lf_path = (dir / "lfs.json").string();
    cfg.embedding_path = (dir / "embeddings.txt").string();
    cfg.data_dir = dir.string();
    cfg.weak_tau = 0.3;  // up to 3 labels vote with equal weight
    cfg.mlsmote_k = 3;
    cfg.seed = 5;
  }
};

}  // namespace

TEST_CASE("pipeline runs stages in order and is byte-deterministic") {
  World world("deftri_pipe_a");
  const PipelineOutcome first = run_pipeline(world.cfg);
  REQUIRE(first.stages.size() == 3);
  REQUIRE(first.stages[0].name == "weak");
  REQUIRE(first.stages[1].name == "augment");
  REQUIRE(first.stages[2].name == "balance");
  for (const auto& stage : first.stages) {
    REQUIRE(fs::exists(stage.artifact_path));
    REQUIRE(fs::exists(stage.report_path));
  }
  REQUIRE(fs::exists(first.final_path));
  const std::string once = slurp(first.final_path);
  const PipelineOutcome second = run_pipeline(world.cfg);
  REQUIRE(slurp(second.final_path) == once);

  // Weak labels recover the planted ground truth on this corpus.
  const Dataset input = load_dataset((world.dir / "train.jsonl").string(), world.registry);
  const Dataset weak = load_dataset(first.stages[0].artifact_path, world.registry);
  REQUIRE(weak.size() == input.size());
  for (std::size_t i = 0; i < weak.size(); ++i) {
    REQUIRE(weak.defects[i].labels == input.defects[i].labels);
    REQUIRE(weak.defects[i].provenance == Provenance::weak);
  }

  // Augment stage appended copies; final artifact preserves the root lineage.
  const Dataset final_ds = load_dataset(first.final_path, world.registry);
  REQUIRE(final_ds.size() > weak.size());
  const auto lineage = read_lineage(first.final_path);
  REQUIRE(lineage.has_value());
  REQUIRE(lineage->root_hash == to_hex(corpus_family_hash(world.spec, world.registry)));
}

TEST_CASE("pipeline with all stages off copies the input") {
  World world("deftri_pipe_b");
  world.cfg.stage_weak = false;
  world.cfg.stage_augment = false;
  world.cfg.stage_balance = false;
  const PipelineOutcome outcome = run_pipeline(world.cfg);
  REQUIRE(outcome.stages.empty());
  const Dataset input = load_dataset((world.dir / "train.jsonl").string(), world.registry);
  const Dataset output = load_dataset(outcome.final_path, world.registry);
  REQUIRE(output.size() == input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    REQUIRE(output.defects[i].id == input.defects[i].id);
    REQUIRE(output.defects[i].labels == input.defects[i].labels);
  }
}

TEST_CASE("a failing stage aborts and names itself") {
  World world("deftri_pipe_c");
  world.cfg.lf_path = (world.dir / "missing_lfs.json").string();
  try {
    run_pipeline(world.cfg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()).find("stage weak") != std::string::npos);
  }
}

TEST_CASE("mixed-lineage inputs are refused, matching roots pass") {
  World world("deftri_pipe_d", 30);
  Dataset ds = load_dataset((world.dir / "train.jsonl").string(), world.registry);
  const std::string other = (world.dir / "other.jsonl").string();
  save_dataset(ds, other, Lineage{"gen-corpus", "zzz", "differentroot"});
  REQUIRE_THROWS_AS(
      require_same_lineage({(world.dir / "train.jsonl").string(), other}), DataError);
  REQUIRE_NOTHROW(require_same_lineage(
      {(world.dir / "train.jsonl").string(), (world.dir / "dev.jsonl").string()}));
  // Files without lineage are accepted.
  const std::string bare = (world.dir / "bare.jsonl").string();
  save_dataset(ds, bare);
  REQUIRE_NOTHROW(require_same_lineage({(world.dir / "train.jsonl").string(), bare}));
}

TEST_CASE("pipeline config survives a JSON round-trip and honors the env override") {
  World world("deftri_pipe_e", 30);
  world.cfg.stage_balance = false;
  world.cfg.model.hparams.epochs = 3;
  world.cfg.model.variant = InputVariant::fuse_sep;
  world.cfg.model.head_kind = HeadConfig::Kind::bilstm;
  const auto j = world.cfg.to_json();
  const PipelineConfig back = PipelineConfig::from_json(j);
  REQUIRE(back.registry_path == world.cfg.registry_path);
  REQUIRE(back.stage_balance == false);
  REQUIRE(back.model.hparams.epochs == 3);
  REQUIRE(back.model.variant == InputVariant::fuse_sep);
  REQUIRE(back.model.head_kind == HeadConfig::Kind::bilstm);
  REQUIRE(back.config_hash() == world.cfg.config_hash());

  setenv("DEFTRI_DATA_DIR", "/tmp/deftri_override", 1);
  const PipelineConfig overridden = PipelineConfig::from_json(j);
  REQUIRE(overridden.data_dir == "/tmp/deftri_override");
  unsetenv("DEFTRI_DATA_DIR");
}

TEST_CASE("experiment matrix has 6 fixed rows and deterministic numbers") {
  World world("deftri_pipe_f", 60);
  world.cfg.stage_balance = false;  // keep the micro run small
  const PipelineOutcome pipe = run_pipeline(world.cfg);
  const Dataset train = load_dataset(pipe.final_path, world.registry);
  const Dataset dev = load_dataset((world.dir / "dev.jsonl").string(), world.registry);
  auto test_spec = world.spec;
  test_spec.size = 30;
  test_spec.seed = 33;
  test_spec.id_prefix = "te";
  const Dataset test = generate_synthetic_corpus(test_spec, world.registry);

  TrainConfig base;
  base.hidden = 16;
  base.layers = 1;
  base.heads = 2;
  base.hparams.max_seq_length = 64;
  base.hparams.batch_size = 8;
  base.hparams.learning_rate = 1e-3;
  base.hparams.epochs = 1;
  base.seed = 9;

  const ExperimentResult r1 = run_experiments<float>(train, dev, test, base);
  REQUIRE(r1.cells.size() == 6);
  REQUIRE(r1.cells[0].name == "Encoder+Linear");
  REQUIRE(r1.cells[1].name == "Encoder+BiLSTM");
  REQUIRE(r1.cells[2].name == "Encoder+LabelFuse w/o [SEP]+Linear");
  REQUIRE(r1.cells[3].name == "Encoder+LabelFuse w/o [SEP]+BiLSTM");
  REQUIRE(r1.cells[4].name == "Encoder+LabelFuse w [SEP]+Linear");
  REQUIRE(r1.cells[5].name == "Encoder+LabelFuse w [SEP]+BiLSTM");
  for (const auto& cell : r1.cells) {
    REQUIRE(cell.ok);
    REQUIRE(cell.accuracy >= 0.0);
    REQUIRE(cell.accuracy <= 1.0);
  }
  REQUIRE(r1.ablation_ran);  // augment stage added records

  const ExperimentResult r2 = run_experiments<float>(train, dev, test, base);
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(r1.cells[i].accuracy == r2.cells[i].accuracy);
    REQUIRE(r1.cells[i].macro_f1 == r2.cells[i].macro_f1);
  }
  REQUIRE(r1.ablation_delta == r2.ablation_delta);

  const std::string tsv = results_tsv(r1.cells);
  REQUIRE(tsv.rfind("Model\tMacro-F1\tAccuracy\n", 0) == 0);
  REQUIRE(std::count(tsv.begin(), tsv.end(), '\n') == 7);
  const std::string text = results_text(r1.cells);
  REQUIRE(text.find("Encoder+LabelFuse w [SEP]+BiLSTM") != std::string::npos);
  const std::string deltas = deltas_text(r1);
  REQUIRE(deltas.find("baseline") != std::string::npos);
  REQUIRE(deltas.find("augmentation") != std::string::npos);
}

TEST_CASE("experiment without augmented records skips the ablation") {
  World world("deftri_pipe_g", 40);
  const Dataset train = load_dataset((world.dir / "train.jsonl").string(), world.registry);
  const Dataset dev = load_dataset((world.dir / "dev.jsonl").string(), world.registry);
  TrainConfig base;
  base.hidden = 16;
  base.layers = 1;
  base.heads = 2;
  base.hparams.max_seq_length = 64;
  base.hparams.batch_size = 8;
  base.hparams.epochs = 1;
  base.hparams.learning_rate = 1e-3;
  const ExperimentResult r = run_experiments<float>(train, dev, train, base);
  REQUIRE_FALSE(r.ablation_ran);
  REQUIRE(deltas_text(r).find("no augmented records") != std::string::npos);
}
