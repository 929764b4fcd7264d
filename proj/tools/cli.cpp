#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <optional>

#include "fke/pipeline.hpp"
#include "fke/search.hpp"
#include "fke/server.hpp"
#include "fke/synthetic.hpp"

#ifndef FKE_DATA_DIR
#define FKE_DATA_DIR "data"
#endif

namespace fke {
namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

nlohmann::json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
}

ConceptVocabulary vocab_from(const std::string& path) {
  require_file(path, "vocabulary");
  try {
    return load_vocabulary(path);
  } catch (const VocabularyError& e) {
    throw ConfigError(e.what());
  }
}

void emit_report(const nlohmann::json& report, const std::string& report_path, std::ostream& out) {
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + report_path);
    f << report.dump(2) << '\n';
  }
  out << report.dump() << '\n';
}

std::vector<Post> read_posts(const std::string& path) {
  require_file(path);
  std::vector<Post> posts;
  for (auto& r : read_corpus(path)) posts.push_back(std::move(r.post));
  return posts;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fashion knowledge extraction: pipeline stages, knowledge base and search service", "fke"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Configuration file for the subcommand (JSON)");
  app.add_option("--seed", g.seed, "Overrides every seed in the configuration");
  app.add_flag("-v,--verbose", g.verbose, "Log progress to standard error");
  const std::string default_vocab = std::string(FKE_DATA_DIR) + "/vocab.json";
  const std::string default_hashtags = std::string(FKE_DATA_DIR) + "/hashtags.json";

  std::function<void()> action;

  // gen-synthetic
  std::string syn_out, syn_truth, syn_vocab = default_vocab;
  std::optional<std::size_t> syn_posts;
  auto* gen = app.add_subcommand("gen-synthetic", "Generate a labeled synthetic corpus");
  gen->add_option("--out", syn_out, "Corpus output (JSONL)")->required();
  gen->add_option("--truth", syn_truth, "Ground-truth output (JSON)");
  gen->add_option("--posts", syn_posts, "Number of posts");
  gen->add_option("--vocab", syn_vocab, "Vocabulary file")->capture_default_str();
  gen->callback([&] {
    action = [&] {
      const auto vocab = vocab_from(syn_vocab);
      SyntheticConfig c;
      try {
        nlohmann::json j = g.config.empty() ? nlohmann::json::object() : read_config(g.config);
        if (syn_posts) j["n_posts"] = *syn_posts;
        if (g.seed) j["seed"] = *g.seed;
        c = synthetic_config_from_json(j, vocab);
      } catch (const SyntheticConfigError& e) {
        throw ConfigError(e.what());
      }
      const auto corpus = generate_synthetic(c);
      write_corpus(std::span<const LabeledPost>(corpus.posts), syn_out);
      if (!syn_truth.empty()) {
        std::ofstream f(syn_truth, std::ios::trunc);
        f << corpus.truth.to_json(vocab).dump() << '\n';
      }
      out << nlohmann::json{{"posts", corpus.posts.size()}, {"out", syn_out}}.dump() << '\n';
    };
  });

  // ingest
  std::string ing_archive, ing_hashtags = default_hashtags, ing_out, ing_report, ing_vocab = default_vocab;
  double ing_rate = 0;
  auto* ingest = app.add_subcommand("ingest", "Select posts by occasion hashtag and drop duplicates");
  ingest->add_option("--archive", ing_archive, "Raw post archive (JSONL)")->required();
  ingest->add_option("--hashtags", ing_hashtags, "Occasion hashtag map")->capture_default_str();
  ingest->add_option("--out", ing_out, "Corpus output")->required();
  ingest->add_option("--report", ing_report, "Report output (JSON)");
  ingest->add_option("--vocab", ing_vocab, "Vocabulary file")->capture_default_str();
  ingest->add_option("--max-rate", ing_rate, "Maximum posts per second, 0 for unlimited");
  ingest->callback([&] {
    action = [&] {
      IngestOptions options;
      options.max_posts_per_second = ing_rate;
      if (g.verbose)
        options.on_malformed = [&](std::size_t line, const std::string& e) {
          err << "line " << line << ": " << e << '\n';
        };
      emit_report(stage_ingest(ing_archive, vocab_from(ing_vocab), ing_hashtags, ing_out, options), ing_report,
                  out);
    };
  });

  // filter
  std::string fil_in, fil_out, fil_report, fil_ad;
  FilterThresholds thresholds;
  auto* filter = app.add_subcommand("filter", "Apply the face/body, ratio and advertisement filters");
  filter->add_option("--in", fil_in, "Corpus input")->required();
  filter->add_option("--out", fil_out, "Corpus output")->required();
  filter->add_option("--report", fil_report, "Report output (JSON)");
  filter->add_option("--max-face-body", thresholds.max_face_body_ratio)->capture_default_str();
  filter->add_option("--min-body-image", thresholds.min_body_image_ratio)->capture_default_str();
  filter->add_option("--ad-threshold", thresholds.ad_threshold)->capture_default_str();
  filter->add_option("--ad-classifier", fil_ad, "Advertisement classifier weights (JSON)");
  filter->callback([&] {
    action = [&] {
      try {
        thresholds.validate();
      } catch (const FilterError& e) {
        throw ConfigError(e.what());
      }
      const AdClassifier clf = fil_ad.empty() ? default_ad_classifier() : load_ad_classifier(fil_ad);
      emit_report(stage_filter(fil_in, fil_out, thresholds, clf), fil_report, out);
    };
  });

  // train
  std::string tr_clean, tr_weak, tr_out, tr_vocab = default_vocab;
  auto* train_cmd = app.add_subcommand("train", "Train the concept model (with --config as the training config)");
  train_cmd->add_option("--clean", tr_clean, "Clean labeled corpus")->required();
  train_cmd->add_option("--weak", tr_weak, "Weakly labeled corpus");
  train_cmd->add_option("--out", tr_out, "Checkpoint output")->required();
  train_cmd->add_option("--vocab", tr_vocab, "Vocabulary file")->capture_default_str();
  train_cmd->callback([&] {
    action = [&] {
      TrainConfig c;
      try {
        if (!g.config.empty()) c = TrainConfig::from_json(read_config(g.config));
        if (g.seed) c.seed = *g.seed;
        c.validate();
      } catch (const TrainingError& e) {
        throw ConfigError(e.what());
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed training config: ") + e.what());
      }
      std::optional<fs::path> weak;
      if (!tr_weak.empty()) weak = tr_weak;
      const auto report = stage_train(tr_clean, weak, vocab_from(tr_vocab), c, tr_out);
      if (g.verbose)
        for (const auto& e : report["history"]) err << e.dump() << '\n';
      out << nlohmann::json{{"clean_posts", report["clean_posts"]}, {"weak_posts", report["weak_posts"]},
                            {"final", report["history"].back()}}
                 .dump()
          << '\n';
    };
  });

  // predict
  std::string pr_ckpt, pr_in, pr_out;
  auto* predict = app.add_subcommand("predict", "Decode concept labels for a corpus");
  predict->add_option("--ckpt", pr_ckpt, "Model checkpoint")->required();
  predict->add_option("--in", pr_in, "Corpus input")->required();
  predict->add_option("--out", pr_out, "Predictions output (JSONL)")->required();
  predict->callback([&] { action = [&] { out << stage_predict(pr_ckpt, pr_in, pr_out).dump() << '\n'; }; });

  // extract
  std::string ex_ckpt, ex_in, ex_kb, ex_pred, ex_vocab = default_vocab;
  auto* extract = app.add_subcommand("extract", "Build the knowledge base from a filtered corpus");
  extract->add_option("--ckpt", ex_ckpt, "Model checkpoint");
  extract->add_option("--predictions", ex_pred, "Precomputed predictions, instead of --ckpt");
  extract->add_option("--in", ex_in, "Filtered corpus")->required();
  extract->add_option("--kb", ex_kb, "Knowledge base output")->required();
  extract->add_option("--vocab", ex_vocab, "Vocabulary, used with --predictions")->capture_default_str();
  extract->callback([&] {
    action = [&] {
      if (ex_ckpt.empty() == ex_pred.empty()) throw ConfigError("extract needs exactly one of --ckpt or --predictions");
      const auto posts = read_posts(ex_in);
      nlohmann::json report;
      if (!ex_ckpt.empty()) {
        require_file(ex_ckpt, "checkpoint");
        const auto ck = load_checkpoint(ex_ckpt);
        report = stage_extract(posts, predict_posts(ck.model, posts), ck.model.vocabulary(), ex_kb);
      } else {
        const auto vocab = vocab_from(ex_vocab);
        report = stage_extract(posts, read_predictions(ex_pred, vocab), vocab, ex_kb);
      }
      out << report.dump() << '\n';
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Run the configured pipeline (with --config as the pipeline config)");
  run->callback([&] {
    action = [&] {
      if (g.config.empty()) throw ConfigError("run needs --config");
      auto c = load_pipeline_config(g.config);
      if (g.seed) c.train.seed = *g.seed;
      const auto result = run_pipeline(c, g.verbose ? &err : nullptr);
      if (result.exit_code != kExitOk) {
        err << "stage " << result.failed_stage << " failed: " << result.message << '\n';
        throw std::system_error(result.exit_code, std::generic_category());
      }
      out << result.reports.dump() << '\n';
    };
  });

  // serve
  std::string sv_kb, sv_corpus, sv_addr = "127.0.0.1:8080", sv_static;
  auto* serve = app.add_subcommand("serve", "Serve the search API over HTTP");
  serve->add_option("--kb", sv_kb, "Knowledge base snapshot")->required();
  serve->add_option("--corpus", sv_corpus, "Corpus for post captions and image sizes");
  serve->add_option("--addr", sv_addr, "Bind address host:port")->capture_default_str();
  serve->add_option("--static", sv_static, "Directory served under /");
  serve->callback([&] {
    action = [&] {
      const auto [host, port] = [&] {
        try {
          return parse_address(sv_addr);
        } catch (const ServerError& e) {
          throw ConfigError(e.what());
        }
      }();
      require_file(sv_kb, "knowledge base");
      std::map<std::string, Post> corpus;
      if (!sv_corpus.empty()) {
        require_file(sv_corpus, "corpus");
        corpus = load_corpus_map(sv_corpus);
      }
      std::optional<fs::path> static_dir;
      if (!sv_static.empty()) static_dir = sv_static;
      SearchServer server(kb_load(sv_kb), std::move(corpus), static_dir);
      const int bound = server.bind(host, port);
      out << "listening on " << host << ':' << bound << std::endl;
      server.run();
    };
  });

  // query
  std::string q_kb, q_mode = "triplets", q_string, q_corpus;
  auto* query = app.add_subcommand("query", "Run one query and print the JSON response");
  query->add_option("--kb", q_kb, "Knowledge base snapshot")->required();
  query->add_option("--mode", q_mode, "triplets or posts")
      ->check(CLI::IsMember({"triplets", "posts"}))
      ->capture_default_str();
  query->add_option("--corpus", q_corpus, "Corpus for post captions and image sizes");
  query->add_option("query", q_string, "Query string, e.g. occasion=prom&gender=female");
  query->callback([&] {
    action = [&] {
      require_file(q_kb, "knowledge base");
      const auto kb = kb_load(q_kb);
      const auto mode = q_mode == "posts" ? QueryMode::kPosts : QueryMode::kTriplets;
      try {
        const Query q = parse_query(parse_query_string(q_string), mode);
        if (mode == QueryMode::kTriplets) {
          out << to_json(query_triplets(kb, q)).dump(2) << '\n';
        } else {
          std::map<std::string, Post> corpus;
          if (!q_corpus.empty()) corpus = load_corpus_map(q_corpus);
          out << to_json(query_posts(kb, q), q_corpus.empty() ? nullptr : &corpus).dump(2) << '\n';
        }
      } catch (const SearchError& e) {
        out << e.to_json().dump(2) << '\n';
        throw ConfigError(e.what());
      }
    };
  });

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    action();
    return kExitOk;
  } catch (const MissingInputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingInput;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::system_error& e) {
    return e.code().value();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitStageFailure;
  }
}

}  // namespace fke
