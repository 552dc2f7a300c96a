#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "deftri/corpus.hpp"
#include "deftri/tokenizer.hpp"

using namespace deftri;

namespace {

Dataset tiny_dataset(const std::string& text) {
  Dataset ds;
  ds.registry = TeamLabelRegistry({"a", "b"});
  Defect d;
  d.id = "d0";
  d.title = text;
  ds.defects.push_back(d);
  return ds;
}

Vocab fixture_vocab() {
  // price=4 showing=5 wrong=6 cart=7 checkout=8 (frequency then lex order)
  Dataset ds;
  ds.registry = TeamLabelRegistry({"a", "b"});
  Defect d;
  d.id = "d0";
  d.title = "price price price price price showing showing showing showing";
  d.description = "wrong wrong wrong cart cart checkout";
  ds.defects.push_back(d);
  return build_vocab(ds, 1, 100);
}

}  // namespace

TEST_CASE("tokenize lowercases and drops punctuation") {
  REQUIRE(tokenize("Price showing inconsistently") ==
          std::vector<std::string>{"price", "showing", "inconsistently"});
  REQUIRE(tokenize("").empty());
  REQUIRE(tokenize("add-to-cart CTA!") == std::vector<std::string>{"add", "to", "cart", "cta"});
}

TEST_CASE("build_vocab orders by frequency then lexicographically") {
  const Dataset ds = tiny_dataset("a a b");
  const Vocab v = build_vocab(ds, 1, 100);
  REQUIRE(v.encode_token("a") == 4);
  REQUIRE(v.encode_token("b") == 5);

  const Vocab v2 = build_vocab(ds, 2, 100);
  REQUIRE(v2.encode_token("a") == 4);
  REQUIRE(v2.encode_token("b") == Vocab::kUnk);

  const Vocab v3 = build_vocab(ds, 1, 100);
  REQUIRE(v3.hash() == v.hash());
}

TEST_CASE("build_vocab respects max_size including reserved slots") {
  const Dataset ds = tiny_dataset("a a b b c c d d e e");
  const Vocab v = build_vocab(ds, 1, 6);
  REQUIRE(v.size() == 6);  // 4 reserved + 2 corpus tokens
  REQUIRE(v.contains("a"));
  REQUIRE(v.contains("b"));
  REQUIRE_FALSE(v.contains("e"));
}

TEST_CASE("vocab file round-trip preserves ids and hash") {
  const Vocab v = fixture_vocab();
  const auto path = (std::filesystem::temp_directory_path() / "deftri_vocab.json").string();
  v.save(path);
  const Vocab back = Vocab::load(path);
  REQUIRE(back.size() == v.size());
  REQUIRE(back.hash() == v.hash());
  REQUIRE(back.encode_token("price") == v.encode_token("price"));
}

TEST_CASE("encode_baseline layout matches the worked example") {
  const Vocab v = fixture_vocab();
  const EncodedInput enc = encode_baseline("price showing wrong", v, 8);
  REQUIRE(enc.token_ids == std::vector<std::uint32_t>{2, 4, 5, 6, 3, 0, 0, 0});
  REQUIRE(enc.attention_mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0});
  for (const auto s : enc.segment_ids) REQUIRE(s == 0);
}

TEST_CASE("encode_baseline degenerate and truncation cases") {
  const Vocab v = fixture_vocab();
  const EncodedInput empty = encode_baseline("", v, 6);
  REQUIRE(empty.token_ids[0] == Vocab::kCls);
  REQUIRE(empty.token_ids[1] == Vocab::kSep);
  REQUIRE(empty.real_length() == 2);

  const EncodedInput longtext =
      encode_baseline("price showing wrong cart checkout price showing", v, 6);
  REQUIRE(longtext.token_ids.size() == 6);
  REQUIRE(longtext.real_length() == 6);
  REQUIRE(longtext.token_ids[5] == Vocab::kSep);  // last real token is [SEP]
}

TEST_CASE("encode_fuse_nosep layout matches the worked example") {
  const Vocab v = fixture_vocab();
  const EncodedInput enc =
      encode_fuse_nosep({"cart", "checkout"}, "price showing wrong", v, 10);
  REQUIRE(enc.token_ids == std::vector<std::uint32_t>{2, 7, 8, 4, 5, 6, 3, 0, 0, 0});
  for (const auto s : enc.segment_ids) REQUIRE(s == 0);
  std::size_t seps = 0;
  for (const auto id : enc.token_ids) seps += id == Vocab::kSep ? 1 : 0;
  REQUIRE(seps == 1);

  const EncodedInput empty = encode_fuse_nosep({"cart", "checkout"}, "", v, 10);
  REQUIRE(empty.token_ids[0] == Vocab::kCls);
  REQUIRE(empty.token_ids[1] == 7);
  REQUIRE(empty.token_ids[2] == 8);
  REQUIRE(empty.token_ids[3] == Vocab::kSep);
}

TEST_CASE("encode_fuse_sep layout, segments, and double separator") {
  const Vocab v = fixture_vocab();
  const EncodedInput enc = encode_fuse_sep({"cart", "checkout"}, "price showing wrong", v, 10);
  REQUIRE(enc.token_ids == std::vector<std::uint32_t>{2, 7, 8, 3, 4, 5, 6, 3, 0, 0});
  REQUIRE(enc.segment_ids ==
          std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 1, 0, 0});
  std::size_t seps = 0;
  for (const auto id : enc.token_ids) seps += id == Vocab::kSep ? 1 : 0;
  REQUIRE(seps == 2);
}

TEST_CASE("label tokens survive truncation in fused variants") {
  const Vocab v = fixture_vocab();
  const std::string long_defect =
      "price showing wrong price showing wrong price showing wrong price showing wrong";
  const EncodedInput enc = encode_fuse_sep({"cart", "checkout"}, long_defect, v, 12);
  REQUIRE(enc.token_ids[1] == 7);
  REQUIRE(enc.token_ids[2] == 8);
  REQUIRE(enc.real_length() == 12);
  REQUIRE(enc.token_ids[11] == Vocab::kSep);
}

TEST_CASE("fused encoding errors when labels cannot fit") {
  const Vocab v = fixture_vocab();
  REQUIRE_THROWS_AS(encode_fuse_nosep({"cart", "checkout"}, "price", v, 4), ConfigError);
  REQUIRE_THROWS_AS(encode_fuse_sep({"cart", "checkout"}, "price", v, 5), ConfigError);
}

TEST_CASE("unknown words map to [UNK]") {
  const Vocab v = fixture_vocab();
  const EncodedInput enc = encode_baseline("zebra price", v, 6);
  REQUIRE(enc.token_ids[1] == Vocab::kUnk);
  REQUIRE(enc.token_ids[2] == 4);
}

TEST_CASE("encoding is a pure function of its inputs") {
  const Vocab v = fixture_vocab();
  const auto a = encode_fuse_sep({"cart"}, "price wrong", v, 16);
  const auto b = encode_fuse_sep({"cart"}, "price wrong", v, 16);
  REQUIRE(a.token_ids == b.token_ids);
  REQUIRE(a.segment_ids == b.segment_ids);
  REQUIRE(a.attention_mask == b.attention_mask);
}

TEST_CASE("swapping label order permutes ids but keeps the multiset") {
  const Vocab v = fixture_vocab();
  const auto a = encode_fuse_sep({"cart", "checkout"}, "price", v, 12);
  const auto b = encode_fuse_sep({"checkout", "cart"}, "price", v, 12);
  REQUIRE(a.token_ids != b.token_ids);
  auto sa = a.token_ids;
  auto sb = b.token_ids;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  REQUIRE(sa == sb);
}
