#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fke/checkpoint.hpp"
#include "fke/filters.hpp"
#include "fke/ingest.hpp"
#include "fke/knowledge_base.hpp"
#include "fke/trainer.hpp"

namespace fke {

namespace fs = std::filesystem;

// Process exit codes shared by run_pipeline and the CLI.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitMissingInput = 2, kExitStageFailure = 3 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingInputError : public std::runtime_error {
 public:
  explicit MissingInputError(const fs::path& path, const std::string& what = "input")
      : std::runtime_error("missing " + what + ": " + path.string()), path_(path) {}
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void require_file(const fs::path& path, const std::string& what = "input");

// Decoded labels for one post, by name.
struct PostPrediction {
  std::string post_id;
  DecodedPrediction decoded;
};

void write_predictions(std::span<const PostPrediction> predictions, const ConceptVocabulary& vocab,
                       const fs::path& path);
std::vector<PostPrediction> read_predictions(const fs::path& path, const ConceptVocabulary& vocab);

// Posts without garment regions are skipped; the model needs at least one.
std::vector<PostPrediction> predict_posts(const ConceptModel& model, std::span<const Post> posts);

// Stage entry points. Each reads and writes plain files and returns its report.
nlohmann::json stage_ingest(const fs::path& archive, const ConceptVocabulary& vocab, const fs::path& hashtags,
                            const fs::path& out, const IngestOptions& options = {});
nlohmann::json stage_filter(const fs::path& in, const fs::path& out, const FilterThresholds& thresholds,
                            const AdClassifier& classifier);
nlohmann::json stage_train(const fs::path& clean, const std::optional<fs::path>& weak, const ConceptVocabulary& vocab,
                           const TrainConfig& config, const fs::path& checkpoint);
nlohmann::json stage_predict(const fs::path& checkpoint, const fs::path& in, const fs::path& out);
// Builds the knowledge base from a filtered corpus and its predictions. Every
// post is indexed; posts without a prediction contribute no triplets.
nlohmann::json stage_extract(std::span<const Post> posts, std::span<const PostPrediction> predictions,
                             const ConceptVocabulary& vocab, const fs::path& kb_path);

struct StageToggles {
  bool ingest = true;
  bool filter = true;
  bool train = false;
  bool predict = true;
  bool extract = true;
};

struct PipelineConfig {
  fs::path vocabulary;
  fs::path hashtags;
  fs::path archive;
  fs::path work_dir;
  fs::path checkpoint;
  fs::path kb;
  // Training corpora, used when the train stage is enabled.
  std::optional<fs::path> clean;
  std::optional<fs::path> weak;
  // Ad classifier weights; the built-in default when absent.
  std::optional<fs::path> ad_classifier;
  FilterThresholds thresholds;
  TrainConfig train;
  double max_posts_per_second = 0;
  StageToggles stages;

  fs::path ingested() const { return work_dir / "ingested.jsonl"; }
  fs::path filtered() const { return work_dir / "filtered.jsonl"; }
  fs::path predictions() const { return work_dir / "predictions.jsonl"; }
  fs::path report() const { return work_dir / "report.json"; }

  // Relative paths resolve against `base`. Throws ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base);
};

PipelineConfig load_pipeline_config(const fs::path& path);

struct PipelineResult {
  int exit_code = kExitOk;
  std::string failed_stage;
  std::string message;
  nlohmann::json reports = nlohmann::json::object();
};

// ingest -> filter -> [train] -> predict -> extract; halts at the first failing stage.
PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

AdClassifier load_ad_classifier(const fs::path& path);

}  // namespace fke
