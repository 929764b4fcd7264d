#include <algorithm>
#include <cstring>
#include <random>

#include "doctest.h"
#include "fke/checkpoint.hpp"
#include "fke/knowledge_base.hpp"
#include "fke/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fke;
using fke::testing::TempDir;

namespace {

bool bit_equal(const std::vector<const ad::Parameter*>& a, const std::vector<const ad::Parameter*>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || a[i]->value.shape != b[i]->value.shape) return false;
    if (std::memcmp(a[i]->value.data.data(), b[i]->value.data.data(), a[i]->value.data.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

std::string flip_byte(std::string bytes, std::size_t at) {
  bytes[at] = static_cast<char>(bytes[at] ^ 0x40);
  return bytes;
}

FashionTriplet triplet(const std::string& post, const std::string& region, const std::string& occ,
                       const std::string& gender, const std::string& cat, const std::string& color,
                       const std::string& fit) {
  return {occ, gender, cat, {{"color", color}, {"fit", fit}}, {post, region}};
}

PostMeta meta(const std::string& id, std::int64_t likes = 0) {
  PostMeta m;
  m.post_id = id;
  m.likes = likes;
  return m;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir dir;
  const auto vocab = fke::testing::reference_vocab();
  ModelDims dims;
  dims.image_dim = 6;
  dims.region_dim = 5;
  dims.garment_hidden = dims.slot_hidden = 4;
  dims.slot_embedding = 3;
  for (auto mode : {EncoderMode::kContextual, EncoderMode::kNoContext}) {
    ConceptModel model(vocab, dims, mode, 7);
    NoiseModel noise(vocab);
    // Odd values: subnormals, negative zero, non-terminating decimals.
    auto params = model.parameters();
    params[0]->value.data[0] = 4.9e-324;
    params[0]->value.data[1] = -0.0;
    params[1]->value.data[0] = 1.0 / 3.0;
    noise.parameters()[0]->value.data[3] = -2.5e-7;
    save_checkpoint(model, noise, dir / "m.fkcm");
    const auto back = load_checkpoint(dir / "m.fkcm");
    CHECK(back.model.mode() == mode);
    CHECK(back.model.dims() == dims);
    CHECK(back.model.vocabulary() == vocab);
    CHECK(bit_equal(std::as_const(model).parameters(), std::as_const(back.model).parameters()));
    CHECK(bit_equal(std::as_const(noise).parameters(), std::as_const(back.noise).parameters()));
    save_checkpoint(back.model, back.noise, dir / "m2.fkcm");
    CHECK(fke::testing::read_text(dir / "m.fkcm") == fke::testing::read_text(dir / "m2.fkcm"));
  }
}

TEST_CASE("checkpoint corruption is detected") {
  TempDir dir;
  const auto vocab = fke::testing::tiny_vocab();
  ModelDims dims;
  dims.image_dim = dims.region_dim = 3;
  dims.garment_hidden = dims.slot_hidden = dims.slot_embedding = 2;
  save_checkpoint(ConceptModel(vocab, dims, EncoderMode::kContextual, 1), NoiseModel(vocab), dir / "m.fkcm");
  const auto bytes = fke::testing::read_text(dir / "m.fkcm");
  fke::testing::write_text(dir / "t.fkcm", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.fkcm"), CheckpointError);
  fke::testing::write_text(dir / "f.fkcm", flip_byte(bytes, bytes.size() - 20));
  CHECK_THROWS_AS(load_checkpoint(dir / "f.fkcm"), CheckpointError);
  fke::testing::write_text(dir / "v.fkcm", flip_byte(bytes, 4));
  CHECK_THROWS_AS(load_checkpoint(dir / "v.fkcm"), CheckpointError);
  fke::testing::write_text(dir / "g.fkcm", "garbage");
  CHECK_THROWS_AS(load_checkpoint(dir / "g.fkcm"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.fkcm"), CheckpointError);
}

TEST_CASE("insert maintains counts and indexes") {
  KnowledgeBase kb(fke::testing::tiny_vocab());
  const std::vector<FashionTriplet> a = {triplet("a", "r0", "prom", "female", "dress", "red", "slim"),
                                         triplet("a", "r1", "prom", "female", "coat", "black", "loose")};
  const std::vector<FashionTriplet> b = {triplet("b", "r0", "prom", "female", "dress", "blue", "slim")};
  kb.insert(meta("a", 5), a);
  kb.insert(meta("b", 9), b);
  kb.insert(meta("c", 1), {});
  CHECK(kb.instances().size() == 3);
  CHECK(kb.counts().at({"prom", "female", "dress"}) == 2);
  CHECK(kb.counts().at({"prom", "female", "coat"}) == 1);
  CHECK(kb.posts().size() == 3);
  CHECK(kb.by_post().at("a").size() == 2);
  CHECK(kb.attribute_index().at("slim").size() == 2);
  CHECK(kb.likes_index().at(9) == std::vector<std::string>{"b"});
}

TEST_CASE("invalid inserts leave the knowledge base unchanged") {
  KnowledgeBase kb(fke::testing::tiny_vocab());
  kb.insert(meta("a"), std::vector<FashionTriplet>{triplet("a", "r0", "prom", "female", "dress", "red", "slim")});
  const auto before = kb.to_json();
  auto attempt = [&](const PostMeta& m, std::vector<FashionTriplet> ts) {
    CHECK_THROWS_AS(kb.insert(m, ts), KnowledgeBaseError);
    CHECK(kb.to_json() == before);
  };
  attempt(meta("a"), {triplet("a", "r0", "prom", "female", "dress", "red", "slim")});
  attempt(meta("b"), {triplet("b", "r0", "prom", "female", "dress", "red", "slim"),
                      triplet("b", "r0", "beach", "male", "coat", "red", "slim")});
  attempt(meta("b"), {triplet("b", "r0", "gala", "female", "dress", "red", "slim")});
  attempt(meta("b"), {triplet("b", "r0", "prom", "female", "hat", "red", "slim")});
  attempt(meta("b"), {triplet("b", "r0", "prom", "other", "dress", "red", "slim")});
  attempt(meta("b"), {triplet("b", "r0", "prom", "female", "dress", "slim", "slim")});
  attempt(meta("b"), {triplet("c", "r0", "prom", "female", "dress", "red", "slim")});
  attempt(meta("a", 99), {});
}

TEST_CASE("count consistency and index completeness on a synthetic extraction") {
  const auto vocab = fke::testing::reference_vocab();
  const auto fx = fke::testing::make_kb_fixture(vocab, 400, 3);
  const auto& kb = fx.kb;
  REQUIRE(kb.instances().size() > 300);
  std::map<TripletKey, std::size_t> recount;
  for (const auto& t : kb.instances()) ++recount[key_of(t)];
  CHECK(recount == kb.counts());

  auto contains = [&](const PostingList& list, InstanceId id) { return std::binary_search(
      list.begin(), list.end(), id, [&](InstanceId x, InstanceId y) {
        return kb.instance(x).provenance < kb.instance(y).provenance;
      }); };
  for (InstanceId id = 0; id < kb.instances().size(); ++id) {
    const auto& t = kb.instance(id);
    CHECK(contains(kb.occasion_index().at(t.occasion), id));
    CHECK(contains(kb.gender_index().at(t.gender), id));
    CHECK(contains(kb.category_index().at(t.category), id));
    for (const auto& [type, value] : t.attributes) CHECK(contains(kb.attribute_index().at(value), id));
  }
  std::size_t postings = 0;
  for (const auto& [k, list] : kb.occasion_index()) {
    for (InstanceId id : list) CHECK(kb.instance(id).occasion == k);
    CHECK(std::is_sorted(list.begin(), list.end(), [&](InstanceId x, InstanceId y) {
      return kb.instance(x).provenance < kb.instance(y).provenance;
    }));
    postings += list.size();
  }
  CHECK(postings == kb.instances().size());
}

TEST_CASE("insertion order does not matter") {
  const auto vocab = fke::testing::reference_vocab();
  const auto fx = fke::testing::make_kb_fixture(vocab, 150, 4);
  std::vector<std::string> ids;
  for (const auto& [id, m] : fx.kb.posts()) ids.push_back(id);
  std::mt19937_64 rng(1);
  std::shuffle(ids.begin(), ids.end(), rng);
  KnowledgeBase shuffled(vocab);
  for (const auto& id : ids) {
    std::vector<FashionTriplet> ts;
    for (InstanceId i : fx.kb.by_post().at(id)) ts.push_back(fx.kb.instance(i));
    std::reverse(ts.begin(), ts.end());
    shuffled.insert(fx.kb.posts().at(id), ts);
  }
  CHECK(shuffled == fx.kb);
  CHECK(shuffled.counts() == fx.kb.counts());
  CHECK(shuffled.to_json().dump() == fx.kb.to_json().dump());
  auto names = [&](const KnowledgeBase& kb, const PostingList& list) {
    std::vector<Provenance> out;
    for (InstanceId id : list) out.push_back(kb.instance(id).provenance);
    return out;
  };
  for (const auto& [k, list] : fx.kb.category_index())
    CHECK(names(fx.kb, list) == names(shuffled, shuffled.category_index().at(k)));
}

TEST_CASE("snapshot round trip and corruption") {
  TempDir dir;
  const auto vocab = fke::testing::reference_vocab();
  const auto fx = fke::testing::make_kb_fixture(vocab, 120, 5);
  kb_save(fx.kb, dir / "kb.fkkb");
  const auto back = kb_load(dir / "kb.fkkb");
  CHECK(back == fx.kb);
  CHECK(back.hashtag_index() == fx.kb.hashtag_index());
  CHECK(back.timestamp_index() == fx.kb.timestamp_index());
  kb_save(back, dir / "kb2.fkkb");
  const auto bytes = fke::testing::read_text(dir / "kb.fkkb");
  CHECK(bytes == fke::testing::read_text(dir / "kb2.fkkb"));
  CHECK(bytes.substr(0, 4) == "FKKB");
  CHECK(bytes[4] == 1);

  auto expect_error = [&](const std::string& content, const std::string& needle) {
    fke::testing::write_text(dir / "bad.fkkb", content);
    try {
      kb_load(dir / "bad.fkkb");
      FAIL("expected an error");
    } catch (const KnowledgeBaseError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_error(bytes.substr(0, bytes.size() / 2), "truncated");
  expect_error(bytes.substr(0, 10), "truncated header");
  expect_error(bytes + "x", "padded");
  expect_error(flip_byte(bytes, 40), "checksum");
  expect_error(flip_byte(bytes, 4), "version");
  expect_error("", "bad magic");
  CHECK_THROWS_AS(kb_load(dir / "missing.fkkb"), KnowledgeBaseError);
}

TEST_CASE("empty knowledge base snapshot") {
  TempDir dir;
  kb_save(KnowledgeBase(fke::testing::tiny_vocab()), dir / "e.fkkb");
  const auto kb = kb_load(dir / "e.fkkb");
  CHECK(kb.instances().empty());
  CHECK(kb.counts().empty());
  CHECK(kb.posts().empty());
  CHECK(kb.occasion_index().empty());
  CHECK(kb.attribute_index().empty());
  CHECK(kb.hashtag_index().empty());
  CHECK(kb.vocabulary() == fke::testing::tiny_vocab());
}

TEST_CASE("triplet gender is the pair majority") {
  const auto vocab = fke::testing::tiny_vocab();
  Post p;
  p.post_id = "g";
  p.garments = {{"r0", {}, std::nullopt, {}}, {"r1", {}, std::nullopt, {}}};
  DecodedPrediction d{1, {{0, {0, 1}}, {3, {2, 0}}}};
  auto gender_with = [&](std::vector<std::optional<Gender>> gs) {
    std::vector<PersonPair> pairs;
    for (auto g : gs) pairs.push_back({{}, {}, 1.0, g});
    p.person_pairs = pairs;
    return build_triplets(p, d, vocab).at(0).gender;
  };
  CHECK(gender_with({Gender::kFemale}) == "female");
  CHECK(gender_with({Gender::kMale, Gender::kMale, Gender::kFemale}) == "male");
  CHECK(gender_with({Gender::kMale, Gender::kFemale}) == "unknown");
  CHECK(gender_with({std::nullopt}) == "unknown");
  const auto ts = build_triplets(p, d, vocab);
  REQUIRE(ts.size() == 2);
  CHECK(ts[1].occasion == "beach");
  CHECK(ts[1].category == "coat");
  CHECK(ts[1].attributes.at("color") == "black");
  CHECK(ts[1].attributes.at("fit") == "slim");
  CHECK(ts[1].provenance == Provenance{"g", "r1"});
  d.garments.pop_back();
  CHECK_THROWS_AS(build_triplets(p, d, vocab), KnowledgeBaseError);
}
