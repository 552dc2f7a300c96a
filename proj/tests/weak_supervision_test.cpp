#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "deftri/synthetic.hpp"
#include "deftri/weak_supervision.hpp"

using namespace deftri;

namespace {

TeamLabelRegistry abc_registry() { return TeamLabelRegistry({"a", "b", "c"}); }

Defect make_defect(const std::string& id, const std::string& title,
                   std::set<std::size_t> labels = {}) {
  Defect d;
  d.id = id;
  d.title = title;
  d.labels = std::move(labels);
  return d;
}

LabelingFunction keyword_lf(const std::string& id, std::vector<std::string> words,
                            std::set<std::size_t> emits) {
  LabelingFunction lf;
  lf.id = id;
  lf.kind = LabelingFunction::Kind::keyword;
  lf.keywords = std::move(words);
  lf.emits = std::move(emits);
  return lf;
}

LabelingFunction pattern_lf(const std::string& id, std::string pattern,
                            std::set<std::size_t> emits) {
  LabelingFunction lf;
  lf.id = id;
  lf.kind = LabelingFunction::Kind::pattern;
  lf.pattern = std::move(pattern);
  lf.emits = std::move(emits);
  return lf;
}

}  // namespace

TEST_CASE("keyword LFs match case-insensitive whole words") {
  const auto lf = keyword_lf("mobile", {"android", "ios"}, {0});
  REQUIRE(lf_fires(lf, "Using ios XXX"));
  REQUIRE(lf_fires(lf, "ANDROID crash"));
  REQUIRE_FALSE(lf_fires(lf, "androids everywhere"));
  REQUIRE_FALSE(lf_fires(lf, "bios update"));
}

TEST_CASE("pattern LFs match unanchored case-insensitive globs") {
  const auto lf = pattern_lf("search", "*search*", {1, 2});
  REQUIRE(lf_fires(lf, "not showing on search tiles"));
  REQUIRE(lf_fires(lf, "Searching never ends"));
  REQUIRE_FALSE(lf_fires(lf, "sear ch tiles"));

  const auto multi = pattern_lf("combo", "add*cart", {0});
  REQUIRE(lf_fires(multi, "cannot ADD item to CART today"));
  REQUIRE_FALSE(lf_fires(multi, "cart add"));  // pieces must appear in order
}

TEST_CASE("apply_lfs fills the matrix deterministically") {
  Dataset ds;
  ds.registry = abc_registry();
  ds.defects.push_back(make_defect("d0", "Using ios XXX"));
  ds.defects.push_back(make_defect("d1", "not showing on search tiles"));
  ds.defects.push_back(make_defect("d2", "nothing relevant"));
  const std::vector<LabelingFunction> lfs = {keyword_lf("kw", {"android", "ios"}, {0}),
                                             pattern_lf("pat", "*search*", {1, 2})};
  const LabelMatrix m = apply_lfs(ds, lfs);
  REQUIRE(m.cell_fired(0, 0));
  REQUIRE_FALSE(m.cell_fired(0, 1));
  REQUIRE(m.cell_fired(1, 1));
  REQUIRE_FALSE(m.cell_fired(1, 0));
  REQUIRE_FALSE(m.cell_fired(2, 0));
  REQUIRE_FALSE(m.cell_fired(2, 1));

  const LabelMatrix again = apply_lfs(ds, lfs);
  REQUIRE(again.fired == m.fired);

  REQUIRE_THROWS_AS(apply_lfs(ds, {}), DataError);
}

TEST_CASE("fit_label_model computes empirical precision") {
  Dataset dev;
  dev.registry = abc_registry();
  // LF fires on 4 defects, correct on 3 of them.
  dev.defects.push_back(make_defect("d0", "ios broken", {0}));
  dev.defects.push_back(make_defect("d1", "ios again", {0}));
  dev.defects.push_back(make_defect("d2", "ios here too", {0, 1}));
  dev.defects.push_back(make_defect("d3", "ios wrong team", {2}));
  dev.defects.push_back(make_defect("d4", "unrelated", {1}));
  const std::vector<LabelingFunction> lfs = {keyword_lf("kw", {"ios"}, {0}),
                                             keyword_lf("never", {"zzz"}, {1})};
  const LabelModelParams params = fit_label_model(lfs, dev);
  REQUIRE(params.weights[0] == Catch::Approx(0.75));
  REQUIRE(params.weights[1] == Catch::Approx(0.5));  // never fires -> prior
}

TEST_CASE("fit_label_model separates perfect and useless LFs") {
  Dataset dev;
  dev.registry = abc_registry();
  dev.defects.push_back(make_defect("d0", "alpha signal", {0}));
  dev.defects.push_back(make_defect("d1", "alpha noise", {0}));
  const std::vector<LabelingFunction> lfs = {keyword_lf("good", {"alpha"}, {0}),
                                             keyword_lf("bad", {"alpha"}, {1})};
  const LabelModelParams params = fit_label_model(lfs, dev);
  REQUIRE(params.weights[0] == 1.0);
  REQUIRE(params.weights[1] == 0.0);

  Dataset empty;
  empty.registry = abc_registry();
  REQUIRE_THROWS_AS(fit_label_model(lfs, empty), DataError);
}

TEST_CASE("aggregate follows the normalized voting rule") {
  Dataset ds;
  ds.registry = abc_registry();
  ds.defects.push_back(make_defect("d0", "x y z"));
  const std::vector<LabelingFunction> lfs = {keyword_lf("f1", {"x"}, {0}),
                                             keyword_lf("f2", {"y"}, {0}),
                                             keyword_lf("f3", {"z"}, {1})};
  LabelModelParams params;
  params.weights = {1.0, 1.0, 1.0};
  params.assign_threshold = 0.5;
  const LabelMatrix m = apply_lfs(ds, lfs);
  const WeakLabels weak = aggregate(m, lfs, params);
  // score(a) = 2/3 >= 0.5, score(b) = 1/3 < 0.5
  REQUIRE(weak.covered[0] == 1);
  REQUIRE(weak.labels[0] == std::set<std::size_t>{0});
}

TEST_CASE("aggregate handles abstention and unanimous multi-label emission") {
  Dataset ds;
  ds.registry = abc_registry();
  ds.defects.push_back(make_defect("d0", "nothing fires"));
  ds.defects.push_back(make_defect("d1", "searchable"));
  const std::vector<LabelingFunction> lfs = {pattern_lf("pat", "*search*", {1, 2})};
  LabelModelParams params;
  params.weights = {0.9};
  const LabelMatrix m = apply_lfs(ds, lfs);
  const WeakLabels weak = aggregate(m, lfs, params);
  REQUIRE(weak.covered[0] == 0);
  REQUIRE(weak.labels[0].empty());
  REQUIRE(weak.covered[1] == 1);
  REQUIRE(weak.labels[1] == std::set<std::size_t>{1, 2});
  REQUIRE(weak.coverage() == 1);
}

TEST_CASE("defects where only zero-weight LFs fire are excluded") {
  Dataset ds;
  ds.registry = abc_registry();
  ds.defects.push_back(make_defect("d0", "x"));
  const std::vector<LabelingFunction> lfs = {keyword_lf("f1", {"x"}, {0}),
                                             keyword_lf("f2", {"q"}, {1})};
  LabelModelParams params;
  params.weights = {0.0, 1.0};
  const WeakLabels weak = aggregate(apply_lfs(ds, lfs), lfs, params);
  REQUIRE(weak.covered[0] == 0);
}

TEST_CASE("score is nondecreasing in the number of emitting LFs (uniform weights)") {
  // With e of f firing LFs emitting label t, the label is kept iff e/f >= tau.
  // Adding one more emitting LF can only raise e/f.
  Dataset ds;
  ds.registry = abc_registry();
  ds.defects.push_back(make_defect("d0", "w1 w2 w3 w4"));
  for (std::size_t emitting = 1; emitting <= 4; ++emitting) {
    std::vector<LabelingFunction> lfs;
    for (std::size_t f = 0; f < 4; ++f) {
      lfs.push_back(keyword_lf("f" + std::to_string(f), {"w" + std::to_string(f + 1)},
                               f < emitting ? std::set<std::size_t>{0}
                                            : std::set<std::size_t>{1}));
    }
    LabelModelParams params;
    params.weights = {1.0, 1.0, 1.0, 1.0};
    params.assign_threshold = 0.5;
    const WeakLabels weak = aggregate(apply_lfs(ds, lfs), lfs, params);
    const bool has_label = weak.labels[0].count(0) > 0;
    REQUIRE(has_label == (emitting >= 2));  // 2/4 hits the 0.5 threshold exactly
  }
}

TEST_CASE("params validation rejects degenerate weights") {
  LabelModelParams params;
  params.weights = {0.0, 0.0};
  REQUIRE_THROWS_AS(params.validate(), DataError);
  params.weights = {1.2};
  REQUIRE_THROWS_AS(params.validate(), DataError);
}

TEST_CASE("pool-keyed LFs recover planted ground truth on the synthetic corpus") {
  const auto registry = default_registry();
  auto spec = default_corpus_spec();
  spec.size = 300;
  spec.seed = 5;
  const Dataset ds = generate_synthetic_corpus(spec, registry);
  const Dataset dev = [&] {
    auto s = spec;
    s.size = 75;
    s.seed = 6;
    s.id_prefix = "dev";
    return generate_synthetic_corpus(s, registry);
  }();

  const auto lfs = pool_keyword_lfs(spec.keyword_pool, registry);
  const LabelMatrix m = apply_lfs(ds, lfs);
  // Up to 3 labels per defect, so a weight share of 1/3 must clear the bar.
  const LabelModelParams params = fit_label_model(lfs, dev, 0.3);
  for (const double w : params.weights) REQUIRE(w == 1.0);  // pools are disjoint
  const WeakLabels weak = aggregate(m, lfs, params);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    REQUIRE(weak.covered[i] == 1);
    REQUIRE(weak.labels[i] == ds.defects[i].labels);
  }
}

TEST_CASE("LF file round-trip") {
  const auto registry = abc_registry();
  const std::vector<LabelingFunction> lfs = {keyword_lf("kw", {"android", "ios"}, {0}),
                                             pattern_lf("pat", "*search*", {1, 2})};
  const auto path = (std::filesystem::temp_directory_path() / "deftri_lfs.json").string();
  save_labeling_functions(lfs, registry, path);
  const auto back = load_labeling_functions(path, registry);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].kind == LabelingFunction::Kind::keyword);
  REQUIRE(back[0].keywords == std::vector<std::string>{"android", "ios"});
  REQUIRE(back[0].emits == std::set<std::size_t>{0});
  REQUIRE(back[1].kind == LabelingFunction::Kind::pattern);
  REQUIRE(back[1].pattern == "*search*");
  REQUIRE(back[1].emits == std::set<std::size_t>{1, 2});
}
