#include <chrono>

#include "doctest.h"
#include "fke/ingest.hpp"
#include "test_util.hpp"

using namespace fke;
using fke::testing::TempDir;

namespace {

HashtagMap tiny_map() {
  return HashtagMap({{"prom", {"prom", "promnight"}}, {"beach", {"beach"}}, {"work", {"officestyle"}}},
                    fke::testing::tiny_vocab());
}

std::string record(const std::string& id, std::vector<std::string> tags) {
  Post p;
  p.post_id = id;
  p.image_width = p.image_height = 100;
  p.hashtags = std::move(tags);
  p.image_feature = {0.5};
  return format_record({p, std::nullopt});
}

}  // namespace

TEST_CASE("hashtag map validation") {
  const auto vocab = fke::testing::tiny_vocab();
  CHECK_THROWS_AS(HashtagMap({{"prom", {"prom"}}, {"beach", {"beach"}}}, vocab), IngestError);
  CHECK_THROWS_AS(HashtagMap({{"prom", {"x"}}, {"beach", {"x"}}, {"work", {"w"}}}, vocab), IngestError);
  CHECK_THROWS_AS(HashtagMap({{"prom", {}}, {"beach", {"b"}}, {"work", {"w"}}}, vocab), IngestError);
  CHECK_THROWS_AS(HashtagMap({{"prom", {"p"}}, {"beach", {"b"}}, {"work", {"w"}}, {"gala", {"g"}}}, vocab),
                  IngestError);
  const auto map = tiny_map();
  CHECK(map.occasion_for("#PROM") == "prom");
  CHECK(map.occasion_for("PromNight") == "prom");
  CHECK_FALSE(map.occasion_for("promdress"));
  CHECK_FALSE(map.occasion_for("pro"));
}

TEST_CASE("reference hashtag map covers every occasion") {
  const auto vocab = fke::testing::reference_vocab();
  const auto map = load_hashtag_map(fke::testing::source_dir() / "data" / "hashtags.json", vocab);
  for (const auto& occ : vocab.occasions()) CHECK(map.tags().at(occ).size() >= 1);
}

TEST_CASE("tagged post kept, duplicate dropped") {
  TempDir dir;
  fke::testing::write_text(dir / "a.jsonl", record("a", {"#prom"}) + "\n" + record("a", {"prom"}) + "\n");
  const auto r = ingest_archive(dir / "a.jsonl", tiny_map());
  REQUIRE(r.posts.size() == 1);
  CHECK(r.posts[0].post_id == "a");
  CHECK(r.report.dropped_duplicate == 1);
  CHECK(r.report.consistent());
}

TEST_CASE("archive of 100 posts with 40 mapped, 5 duplicated") {
  // 35 distinct mapped posts, 5 of them repeated later, plus 60 unmapped.
  TempDir dir;
  std::string text;
  std::vector<std::string> expected;
  std::size_t mapped = 0;
  for (int i = 0; i < 95; ++i) {
    const bool is_mapped = i % 19 < 7;
    const std::string id = "p" + std::to_string(i);
    if (is_mapped) {
      text += record(id, {"ootd", i % 2 ? "#Beach" : "PROMNIGHT"}) + "\n";
      expected.push_back(id);
      ++mapped;
    } else {
      text += record(id, {"ootd", "prom2019"}) + "\n";
    }
  }
  REQUIRE(mapped == 35);
  for (int k = 0; k < 5; ++k) text += record(expected[static_cast<std::size_t>(k * 3)], {"beach"}) + "\n";
  fke::testing::write_text(dir / "a.jsonl", text);

  const auto r = ingest_archive(dir / "a.jsonl", tiny_map());
  CHECK(r.report.read_count == 100);
  CHECK(r.report.kept_count == 35);
  CHECK(r.report.dropped_no_hashtag == 60);
  CHECK(r.report.dropped_duplicate == 5);
  CHECK(r.report.consistent());
  std::vector<std::string> got;
  for (const auto& p : r.posts) got.push_back(p.post_id);
  CHECK(got == expected);
}

TEST_CASE("malformed lines are skipped and counted") {
  TempDir dir;
  fke::testing::write_text(dir / "a.jsonl",
                           record("a", {"beach"}) + "\n{not json\n\n{\"post_id\": 3}\n" + record("b", {"beach"}) + "\n");
  std::vector<std::size_t> lines;
  IngestOptions options;
  options.on_malformed = [&](std::size_t line, const std::string&) { lines.push_back(line); };
  const auto r = ingest_archive(dir / "a.jsonl", tiny_map(), options);
  CHECK(r.posts.size() == 2);
  CHECK(r.report.malformed == 2);
  CHECK(r.report.read_count == 2);
  CHECK(lines == std::vector<std::size_t>{2, 4});
  CHECK_THROWS_AS(ingest_archive(dir / "none.jsonl", tiny_map()), IngestError);
}

TEST_CASE("rate limit hook spaces emitted posts") {
  TempDir dir;
  std::string text;
  for (int i = 0; i < 5; ++i) text += record("p" + std::to_string(i), {"beach"}) + "\n";
  fke::testing::write_text(dir / "a.jsonl", text);
  std::size_t sleeps = 0;
  std::chrono::nanoseconds slept{0};
  IngestOptions options;
  options.max_posts_per_second = 10;
  options.sleep = [&](std::chrono::nanoseconds d) {
    ++sleeps;
    slept += d;
  };
  const auto r = ingest_archive(dir / "a.jsonl", tiny_map(), options);
  CHECK(r.posts.size() == 5);
  CHECK(sleeps == 4);
  CHECK(slept > std::chrono::milliseconds(300));
}

TEST_CASE("stream re-presenting a kept post yields a duplicate drop") {
  TempDir dir;
  fke::testing::write_text(dir / "a.jsonl", record("x", {"officestyle"}) + "\n" + record("y", {"beach"}) + "\n" +
                                                record("x", {"officestyle"}) + "\n");
  const auto map = tiny_map();
  ArchiveStream s(dir / "a.jsonl", map);
  CHECK(s.next()->post_id == "x");
  CHECK(s.next()->post_id == "y");
  CHECK_FALSE(s.next());
  CHECK(s.report().dropped_duplicate == 1);
  CHECK(s.report().consistent());
}
