#include "fke/pipeline.hpp"

#include <fstream>
#include <set>

namespace fke {
namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::vector<Post> read_posts(const fs::path& path) {
  require_file(path);
  std::vector<Post> posts;
  for (auto& r : read_corpus(path)) posts.push_back(std::move(r.post));
  return posts;
}

std::vector<LabeledPost> read_labeled(const fs::path& path, LabelSource source) {
  require_file(path);
  auto posts = read_labeled_corpus(path);
  for (auto& lp : posts) lp.labels.source = source;
  return posts;
}

}  // namespace

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw MissingInputError(path, what);
}

void write_predictions(std::span<const PostPrediction> predictions, const ConceptVocabulary& vocab,
                       const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : predictions) {
    nlohmann::json garments = nlohmann::json::array();
    for (const auto& g : p.decoded.garments) {
      nlohmann::json attrs = nlohmann::json::object();
      for (std::size_t a = 0; a < g.attributes.size(); ++a)
        attrs[vocab.attributes()[a].name] = vocab.attributes()[a].values.at(g.attributes[a]);
      garments.push_back({{"category", vocab.categories().at(g.category)}, {"attributes", attrs}});
    }
    out << nlohmann::json{{"post_id", p.post_id},
                          {"occasion", vocab.occasions().at(p.decoded.occasion)},
                          {"garments", garments}}
               .dump()
        << '\n';
  }
}

std::vector<PostPrediction> read_predictions(const fs::path& path, const ConceptVocabulary& vocab) {
  require_file(path, "predictions");
  std::ifstream in(path);
  std::vector<PostPrediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      PostPrediction p;
      p.post_id = j.at("post_id");
      auto occ = vocab.occasion_index(j.at("occasion").get<std::string>());
      if (!occ) throw std::runtime_error("unknown occasion");
      p.decoded.occasion = *occ;
      for (const auto& jg : j.at("garments")) {
        DecodedGarment g;
        auto cat = vocab.category_index(jg.at("category").get<std::string>());
        if (!cat) throw std::runtime_error("unknown category");
        g.category = *cat;
        for (const auto& attr : vocab.attributes()) {
          const std::string value = jg.at("attributes").at(attr.name);
          auto it = std::find(attr.values.begin(), attr.values.end(), value);
          if (it == attr.values.end()) throw std::runtime_error("unknown value '" + value + "'");
          g.attributes.push_back(static_cast<std::size_t>(it - attr.values.begin()));
        }
        p.decoded.garments.push_back(std::move(g));
      }
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw CorpusError(where + ": " + e.what());
    }
  }
  return out;
}

std::vector<PostPrediction> predict_posts(const ConceptModel& model, std::span<const Post> posts) {
  std::vector<PostPrediction> out;
  for (const auto& post : posts) {
    if (post.garments.empty()) continue;
    out.push_back({post.post_id, decode(model.forward(post))});
  }
  return out;
}

nlohmann::json stage_ingest(const fs::path& archive, const ConceptVocabulary& vocab, const fs::path& hashtags,
                            const fs::path& out, const IngestOptions& options) {
  require_file(archive, "archive");
  require_file(hashtags, "hashtag map");
  const HashtagMap map = load_hashtag_map(hashtags, vocab);
  auto result = ingest_archive(archive, map, options);
  ensure_parent(out);
  write_corpus(std::span<const Post>(result.posts), out);
  return result.report.to_json();
}

nlohmann::json stage_filter(const fs::path& in, const fs::path& out, const FilterThresholds& thresholds,
                            const AdClassifier& classifier) {
  thresholds.validate();
  const auto posts = read_posts(in);
  FilterReport report;
  std::vector<Post> kept;
  for (const auto& post : posts) {
    auto outcome = run_filters(post, thresholds, classifier);
    report.add(outcome);
    if (outcome.keep) {
      Post p = post;
      p.person_pairs = std::move(outcome.pairs);
      kept.push_back(std::move(p));
    }
  }
  ensure_parent(out);
  write_corpus(std::span<const Post>(kept), out);
  return report.to_json();
}

nlohmann::json stage_train(const fs::path& clean, const std::optional<fs::path>& weak, const ConceptVocabulary& vocab,
                           const TrainConfig& config, const fs::path& checkpoint) {
  config.validate();
  const auto clean_set = read_labeled(clean, LabelSource::kClean);
  std::vector<LabeledPost> weak_set;
  if (weak) weak_set = read_labeled(*weak, LabelSource::kWeak);
  ModelDims dims = config.dims;
  for (const auto& lp : clean_set) {
    if (lp.post.garments.empty()) continue;
    dims.image_dim = lp.post.image_feature.size();
    dims.region_dim = lp.post.garments[0].feature.size();
    break;
  }
  ConceptModel model(vocab, dims, config.mode, config.seed);
  NoiseModel noise(vocab);
  const auto result = train(model, noise, clean_set, weak_set, config);
  ensure_parent(checkpoint);
  save_checkpoint(model, noise, checkpoint);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& m : result.history)
    history.push_back({{"epoch", m.epoch}, {"loss", m.loss}, {"clean_ce", m.clean_ce}, {"weak_ce", m.weak_ce}});
  return {{"clean_posts", clean_set.size()}, {"weak_posts", weak_set.size()}, {"history", history}};
}

nlohmann::json stage_predict(const fs::path& checkpoint, const fs::path& in, const fs::path& out) {
  require_file(checkpoint, "checkpoint");
  const auto ck = load_checkpoint(checkpoint);
  const auto posts = read_posts(in);
  const auto predictions = predict_posts(ck.model, posts);
  write_predictions(predictions, ck.model.vocabulary(), out);
  std::size_t garments = 0;
  for (const auto& p : predictions) garments += p.decoded.garments.size();
  return {{"posts", posts.size()}, {"predicted_posts", predictions.size()}, {"garments", garments}};
}

nlohmann::json stage_extract(std::span<const Post> posts, std::span<const PostPrediction> predictions,
                             const ConceptVocabulary& vocab, const fs::path& kb_path) {
  std::map<std::string, const DecodedPrediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.post_id, &p.decoded).second)
      throw std::runtime_error("duplicate prediction for post " + p.post_id);
  }
  KnowledgeBase kb(vocab);
  std::size_t triplets = 0;
  for (const auto& post : posts) {
    auto it = by_id.find(post.post_id);
    std::vector<FashionTriplet> ts;
    if (it != by_id.end()) {
      ts = build_triplets(post, *it->second, vocab);
      by_id.erase(it);
    }
    kb.insert(post_meta(post), ts);
    triplets += ts.size();
  }
  if (!by_id.empty()) throw std::runtime_error("prediction for unknown post " + by_id.begin()->first);
  ensure_parent(kb_path);
  kb_save(kb, kb_path);
  return {{"posts", kb.posts().size()}, {"triplets", triplets}, {"keys", kb.counts().size()}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base) {
  PipelineConfig c;
  auto path = [&](const char* key, bool required) -> std::optional<fs::path> {
    if (!j.contains(key)) {
      if (required) throw ConfigError(std::string("pipeline config lacks \"") + key + "\"");
      return std::nullopt;
    }
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  try {
    c.vocabulary = *path("vocabulary", true);
    c.hashtags = *path("hashtags", true);
    c.archive = *path("archive", true);
    c.work_dir = *path("work_dir", true);
    c.checkpoint = *path("checkpoint", true);
    c.kb = path("kb", false).value_or(c.work_dir / "kb.fkkb");
    c.clean = path("clean", false);
    c.weak = path("weak", false);
    c.ad_classifier = path("ad_classifier", false);
    if (j.contains("filters")) {
      const auto& f = j["filters"];
      c.thresholds.max_face_body_ratio = f.value("max_face_body_ratio", c.thresholds.max_face_body_ratio);
      c.thresholds.min_body_image_ratio = f.value("min_body_image_ratio", c.thresholds.min_body_image_ratio);
      c.thresholds.ad_threshold = f.value("ad_threshold", c.thresholds.ad_threshold);
      c.thresholds.validate();
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    c.max_posts_per_second = j.value("max_posts_per_second", 0.0);
    if (j.contains("stages")) {
      const auto& s = j["stages"];
      for (const auto& [key, value] : s.items()) {
        if (key != "ingest" && key != "filter" && key != "train" && key != "predict" && key != "extract")
          throw ConfigError("unknown stage \"" + key + "\"");
      }
      c.stages.ingest = s.value("ingest", c.stages.ingest);
      c.stages.filter = s.value("filter", c.stages.filter);
      c.stages.train = s.value("train", c.stages.train);
      c.stages.predict = s.value("predict", c.stages.predict);
      c.stages.extract = s.value("extract", c.stages.extract);
    }
    if (c.stages.train && !c.clean) throw ConfigError("train stage enabled but no \"clean\" corpus given");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed pipeline config: ") + e.what());
  } catch (const FilterError& e) {
    throw ConfigError(e.what());
  } catch (const TrainingError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open pipeline config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse pipeline config " + path.string() + ": " + e.what());
  }
  return PipelineConfig::from_json(j, path.parent_path());
}

AdClassifier load_ad_classifier(const fs::path& path) {
  const auto j = read_json_file(path);
  try {
    return AdClassifier::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed ad classifier " + path.string() + ": " + e.what());
  }
}

PipelineResult run_pipeline(const PipelineConfig& c, std::ostream* log) {
  PipelineResult result;
  std::string stage = "setup";
  auto note = [&](const std::string& name, const nlohmann::json& report) {
    result.reports[name] = report;
    if (log) *log << name << ": " << report.dump() << '\n';
  };
  try {
    require_file(c.vocabulary, "vocabulary");
    const auto vocab = load_vocabulary(c.vocabulary);
    const AdClassifier classifier = c.ad_classifier ? load_ad_classifier(*c.ad_classifier) : default_ad_classifier();
    fs::create_directories(c.work_dir);
    if (c.stages.ingest) {
      stage = "ingest";
      IngestOptions options;
      options.max_posts_per_second = c.max_posts_per_second;
      note(stage, stage_ingest(c.archive, vocab, c.hashtags, c.ingested(), options));
    }
    if (c.stages.filter) {
      stage = "filter";
      note(stage, stage_filter(c.ingested(), c.filtered(), c.thresholds, classifier));
    }
    if (c.stages.train) {
      stage = "train";
      note(stage, stage_train(*c.clean, c.weak, vocab, c.train, c.checkpoint));
    }
    if (c.stages.predict) {
      stage = "predict";
      note(stage, stage_predict(c.checkpoint, c.filtered(), c.predictions()));
    }
    if (c.stages.extract) {
      stage = "extract";
      const auto posts = read_posts(c.filtered());
      note(stage, stage_extract(posts, read_predictions(c.predictions(), vocab), vocab, c.kb));
    }
    stage = "report";
    write_json_file(result.reports, c.report());
  } catch (const MissingInputError& e) {
    result.exit_code = kExitMissingInput;
    result.failed_stage = stage;
    result.message = e.what();
  } catch (const ConfigError& e) {
    result.exit_code = stage == "setup" ? kExitConfig : kExitStageFailure;
    result.failed_stage = stage;
    result.message = e.what();
  } catch (const std::exception& e) {
    result.exit_code = kExitStageFailure;
    result.failed_stage = stage;
    result.message = e.what();
  }
  if (log && result.exit_code != kExitOk)
    *log << "stage " << result.failed_stage << " failed: " << result.message << '\n';
  return result;
}

}  // namespace fke
