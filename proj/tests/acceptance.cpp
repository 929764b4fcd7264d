// One PASS/FAIL line per acceptance criterion. Optional arguments select
// criteria by name.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "fke/pipeline.hpp"
#include "fke/search.hpp"
#include "fke/server.hpp"
#include "fke/synthetic.hpp"
#include "fke/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fke;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Contextual model against the same model with both encoders removed,
// 2,000 posts per seed, 1,600 train and 400 held out.
Outcome context_gain() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vocab = fke::testing::reference_vocab();
  const std::size_t tasks = vocab.num_tasks();
  std::vector<std::vector<double>> diffs(tasks);
  double worst = 1e9;
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto cfg = default_synthetic_config(vocab, 2000, 100 + s);
    cfg.image_dim = cfg.region_dim = 16;
    const auto posts = generate_synthetic(cfg).posts;
    const std::vector<LabeledPost> train_set(posts.begin(), posts.begin() + 1600), held(posts.begin() + 1600, posts.end());
    std::vector<double> acc[2];
    for (int ctx = 1; ctx >= 0; --ctx) {
      TrainConfig tc;
      tc.epochs = 20;
      tc.learning_rate = 0.05;
      tc.batch_size = 16;
      tc.seed = s;
      tc.mode = ctx ? EncoderMode::kContextual : EncoderMode::kNoContext;
      tc.dims.image_dim = tc.dims.region_dim = 16;
      tc.dims.garment_hidden = tc.dims.slot_hidden = 32;
      tc.dims.slot_embedding = 16;
      ConceptModel model(vocab, tc.dims, tc.mode, s);
      NoiseModel noise(vocab);
      train(model, noise, train_set, {}, tc);
      acc[ctx] = evaluate(model, held).per_task;
    }
    for (std::size_t k = 0; k < tasks; ++k) {
      diffs[k].push_back(100 * (acc[1][k] - acc[0][k]));
      worst = std::min(worst, diffs[k].back());
    }
  }
  const double occ = median(diffs[0]);
  double worst_median = 1e9;
  for (const auto& d : diffs) worst_median = std::min(worst_median, median(d));
  const double secs = seconds_since(t0);
  return {occ >= 3.0 && worst >= -0.5 && secs <= 600,
          fmt("median occasion gain %+.2f pts (need >= 3); worst task drop over all seeds %+.2f pts, worst task "
              "median %+.2f (need >= -0.5); %.0fs",
              occ, worst, worst_median, secs)};
}

// Pair-flip noise with 0.30 off-diagonal mass on every task, 300 clean posts.
Outcome noise_recovery() {
  const auto vocab = fke::testing::reference_vocab();
  auto world = [&](std::size_t n, std::uint64_t seed, bool weak, const std::string& prefix) {
    auto cfg = default_synthetic_config(vocab, n, seed);
    cfg.image_dim = cfg.region_dim = 64;
    cfg.image_signal = 0.5;
    cfg.id_prefix = prefix;
    if (weak) {
      cfg.weak_fraction = 1.0;
      for (std::size_t k = 0; k < vocab.num_tasks(); ++k)
        cfg.transitions.push_back(pair_flip_transition(vocab.task_size(k), 0.3));
    }
    return generate_synthetic(cfg);
  };
  std::vector<double> gains;
  double worst_l1 = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto clean = world(300, 1000 + s, false, "c").posts;
    const auto weak = world(2000, 2000 + s, true, "w");
    const auto test = world(1000, 3000 + s, false, "t").posts;
    double acc[2] = {0, 0};
    for (int layer = 1; layer >= 0; --layer) {
      TrainConfig tc;
      tc.optimizer = OptimizerKind::kAdam;
      tc.learning_rate = 0.003;
      tc.noise_learning_rate = 0.05;
      tc.epochs = 20;
      tc.seed = s;
      tc.noise_layer = layer;
      tc.dims.image_dim = tc.dims.region_dim = 64;
      ConceptModel model(vocab, tc.dims, EncoderMode::kContextual, s);
      NoiseModel noise(vocab);
      train(model, noise, clean, weak.posts, tc);
      acc[layer] = evaluate(model, test).mean();
      if (!layer) continue;
      for (std::size_t k = 0; k < vocab.num_tasks(); ++k) {
        const auto learned = noise.transition(k);
        const auto& planted = weak.truth.transitions[k];
        double l1 = 0;
        for (std::size_t i = 0; i < learned.size(); ++i)
          for (std::size_t j = 0; j < learned.size(); ++j) l1 += std::abs(learned[i][j] - planted[i][j]);
        worst_l1 = std::max(worst_l1, l1 / static_cast<double>(learned.size()));
      }
    }
    gains.push_back(100 * (acc[1] - acc[0]));
  }
  const double gain = median(gains);
  return {worst_l1 <= 0.15 && gain >= 2.0,
          fmt("worst mean row L1 over all tasks and seeds %.3f (need <= 0.15); median clean-test gain %+.2f pts "
              "(need >= 2)",
              worst_l1, gain)};
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vocab = fke::testing::reference_vocab();
  auto cfg = default_synthetic_config(vocab, 12, 5);
  cfg.image_dim = cfg.region_dim = 8;
  cfg.weak_fraction = 0.5;
  for (std::size_t k = 0; k < vocab.num_tasks(); ++k)
    cfg.transitions.push_back(pair_flip_transition(vocab.task_size(k), 0.3));
  const auto posts = generate_synthetic(cfg).posts;
  ModelDims dims;
  dims.image_dim = dims.region_dim = 8;
  dims.garment_hidden = dims.slot_hidden = dims.slot_embedding = 8;
  ConceptModel model(vocab, dims, EncoderMode::kContextual, 3);
  NoiseModel noise(vocab, 0.8);
  LossOptions options;
  options.lambda_weak = 0.7;
  options.trace_weight = 0.05;
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<const LabeledPost*> batch;
    for (std::size_t i = b * 4; i < b * 4 + 4; ++i) batch.push_back(&posts[i]);
    for (const auto& c : fke::testing::gradient_check(model, noise, batch, options, 1e-4)) {
      ++checked;
      if (c.rel_error > worst) {
        worst = c.rel_error;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs <= 30,
          fmt("%zu tensor checks over 3 batches, worst rel err %.2e (%s); %.1fs", checked, worst, worst_name.c_str(), secs)};
}

Outcome filter_exactness() {
  const FilterThresholds t;
  std::size_t table_mismatch = 0;
  const auto table = fke::testing::ratio_boundary_table();
  for (const auto& c : table) {
    const PersonPair pair{{0, 0, 1, static_cast<double>(c.face)}, {0, 0, 1, static_cast<double>(c.body)}, 1.0, {}};
    table_mismatch += ratio_check(pair, c.image, t) != c.expected;
  }
  const auto vocab = fke::testing::reference_vocab();
  const auto posts = fke::testing::mixed_filter_posts(vocab, 1000, 2024);
  const auto clf = default_ad_classifier();
  std::size_t post_mismatch = 0, kept = 0;
  for (const auto& p : posts) {
    const auto o = run_filters(p, t, clf);
    const auto want = fke::testing::oracle_filter(p, t, clf);
    post_mismatch += o.keep != want.keep || o.reason != want.reason || o.pairs.size() != want.pairs;
    kept += o.keep;
  }
  return {table.size() == 200 && table_mismatch == 0 && post_mismatch == 0,
          fmt("boundary table %zu cases, %zu mismatches; %zu posts (%zu kept), %zu mismatches", table.size(),
              table_mismatch, posts.size(), kept, post_mismatch)};
}

Outcome kb_search_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vocab = fke::testing::reference_vocab();
  const auto fx = fke::testing::make_kb_fixture(vocab, 1000, 99);
  const auto& kb = fx.kb;
  std::map<TripletKey, std::size_t> recount;
  for (const auto& t : kb.instances()) ++recount[key_of(t)];
  const bool counts_ok = recount == kb.counts();

  const SearchServer server(kb, {});
  std::mt19937_64 rng(4242);
  std::size_t mismatches = 0, nonempty = 0;
  for (int i = 0; i < 200; ++i) {
    const auto mode = i < 100 ? QueryMode::kTriplets : QueryMode::kPosts;
    const auto q = fke::testing::random_query(kb, rng, mode);
    const auto params = parse_query_string(to_query_string(q));
    nlohmann::json want, got_direct;
    if (mode == QueryMode::kTriplets) {
      const auto page = fke::testing::oracle_triplets(kb, q);
      nonempty += !page.results.empty();
      want = to_json(page);
      got_direct = to_json(query_triplets(kb, q));
    } else {
      const auto page = fke::testing::oracle_posts(kb, q);
      nonempty += !page.results.empty();
      want = to_json(page);
      got_direct = to_json(query_posts(kb, q));
    }
    const auto api = server.handle(mode == QueryMode::kTriplets ? "/api/triplets" : "/api/posts", params);
    mismatches += api.status != 200 || api.body != want || got_direct != want;
  }
  const double secs = seconds_since(t0);
  return {counts_ok && mismatches == 0 && secs <= 60,
          fmt("%zu posts, %zu instances, counts %s; 200 queries (100 per mode, %zu non-empty), %zu mismatches; %.1fs",
              kb.posts().size(), kb.instances().size(), counts_ok ? "match" : "DIFFER", nonempty, mismatches, secs)};
}

Outcome determinism() {
  fke::testing::TempDir dir;
  const auto vocab = fke::testing::reference_vocab();
  std::ifstream tags_in(fke::testing::source_dir() / "data" / "hashtags.json");
  const auto tags = nlohmann::json::parse(tags_in).get<std::map<std::string, std::vector<std::string>>>();
  auto write = [&](const std::string& name, std::size_t n, std::uint64_t seed, double weak, double defects) {
    auto cfg = default_synthetic_config(vocab, n, seed);
    cfg.image_dim = cfg.region_dim = 8;
    cfg.id_prefix = name.substr(0, 1);
    cfg.occasion_hashtags = tags;
    cfg.no_pair_fraction = cfg.ratio_violation_fraction = cfg.ad_fraction = cfg.untagged_fraction = defects;
    cfg.weak_fraction = weak;
    if (weak > 0)
      for (std::size_t k = 0; k < vocab.num_tasks(); ++k)
        cfg.transitions.push_back(pair_flip_transition(vocab.task_size(k), 0.3));
    write_corpus(std::span<const LabeledPost>(generate_synthetic(cfg).posts), dir / name);
  };
  write("archive.jsonl", 400, 1, 0.0, 0.05);
  write("clean.jsonl", 100, 2, 0.0, 0.0);
  write("weak.jsonl", 200, 3, 1.0, 0.0);
  nlohmann::json j = {{"vocabulary", (fke::testing::source_dir() / "data" / "vocab.json").string()},
                      {"hashtags", (fke::testing::source_dir() / "data" / "hashtags.json").string()},
                      {"archive", "archive.jsonl"},
                      {"checkpoint", "model.fkcm"},
                      {"clean", "clean.jsonl"},
                      {"weak", "weak.jsonl"},
                      {"train", {{"epochs", 3}, {"seed", 9}, {"dims", {{"garment_hidden", 8}, {"slot_hidden", 8}}}}},
                      {"stages", {{"train", true}}}};
  std::string snapshots[2];
  for (int run = 0; run < 2; ++run) {
    j["work_dir"] = "work" + std::to_string(run);
    const auto config = PipelineConfig::from_json(j, dir.path());
    const auto result = run_pipeline(config);
    if (result.exit_code != kExitOk) return {false, "pipeline failed: " + result.message};
    snapshots[run] = fke::testing::read_text(config.kb);
  }
  return {!snapshots[0].empty() && snapshots[0] == snapshots[1],
          fmt("two full runs (train enabled), kb snapshots of %zu and %zu bytes %s", snapshots[0].size(),
              snapshots[1].size(), snapshots[0] == snapshots[1] ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"context_gain", context_gain},
      {"noise_recovery", noise_recovery},
      {"gradient_correctness", gradient_correctness},
      {"filter_exactness", filter_exactness},
      {"kb_search_oracle", kb_search_oracle},
      {"determinism", determinism},
  };
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
