#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tripspeed/config.hpp"
#include "tripspeed/evaluate.hpp"
#include "tripspeed/explain.hpp"
#include "tripspeed/extract.hpp"
#include "tripspeed/hotspot.hpp"
#include "tripspeed/learn.hpp"

namespace tripspeed {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitStageFailure = 2;

/// A fatal error inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageRecord {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  std::map<std::string, std::size_t> rejected;
  double seconds = 0.0;
  std::vector<std::string> artifacts;  // relative to the output directory

  nlohmann::json to_json(bool with_time = true) const;
};

/// Tracks every file written under one output directory so a failed run can
/// be rolled back.
class ArtifactSet {
 public:
  explicit ArtifactSet(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  /// Creates parent directories and records the file. Returns the full path.
  std::filesystem::path claim(const std::string& relative);
  const std::vector<std::string>& files() const { return files_; }
  /// Content hashes of every claimed file, keyed by relative path.
  nlohmann::json hashes() const;
  /// Deletes claimed files and any directories this set created.
  void remove_all() noexcept;

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
  std::vector<std::filesystem::path> made_dirs_;
};

/// FNV-1a of a file's bytes, hex encoded.
std::string hash_file(const std::filesystem::path& p);

// ---------------------------------------------------------------------------
// stage building blocks, shared by the subcommands and run_pipeline

struct SplitArtifact {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  bool stratified = true;

  nlohmann::json to_json() const;
  static SplitArtifact from_json(const nlohmann::json& j);
};

struct SplitData {
  FeatureMatrix train;
  FeatureMatrix test;
  SplitArtifact artifact;
};

SplitData split_features(const FeatureMatrix& all, const PipelineConfig& cfg);
/// Re-applies a stored split by journey id. Throws StageError on unknown ids.
SplitData apply_split(const FeatureMatrix& all, const SplitArtifact& split);

struct TrainOutput {
  TrainedModel model;
  std::optional<TuneResult> tuning;
};

/// Trains one model; tree models are tuned first when cfg.tune is set.
TrainOutput train_one(ModelKind kind, const FeatureMatrix& train, const PipelineConfig& cfg);

EvaluationReport evaluate_model(const TrainedModel& model, const FeatureMatrix& test);
nlohmann::json evaluation_json(const std::vector<EvaluationReport>& reports);

struct ExplainOutput {
  std::vector<ImportanceRow> importance;  // empty for linear models
  ShapMatrix shap;
  std::vector<std::string> sample_ids;
  std::vector<int> sample_truth;
  std::vector<int> sample_pred;
  std::vector<double> sample_scores;  // rows x K
  Embedding2D embedding;
  std::vector<DependenceCurve> dependence;
};

/// SHAP on a seeded sample of `rows`, covers from a seeded sample of
/// `background`, t-SNE of the per-class SHAP vectors, dependence fits for the
/// features with the largest mean |SHAP|.
ExplainOutput explain_model(const TrainedModel& model, const FeatureMatrix& background, const FeatureMatrix& rows,
                            const ExplainConfig& cfg);
/// Writes importance.csv, shap_level_<k>.csv, tsne.csv and dependence.json
/// under `dir`.
void write_explain(const ExplainOutput& out, const std::string& dir, ArtifactSet& files);

/// hotspots.geojson and hotspots.csv.
void write_hotspots(const std::vector<SegmentStats>& hotspots, const Network& net, const HotspotParams& params,
                    const std::string& dir, ArtifactSet& files);

// ---------------------------------------------------------------------------

struct RunResult {
  int exit_code = kExitOk;
  std::string failed_stage;
  std::string error;
  std::vector<StageRecord> stages;
  nlohmann::json manifest;
};

/// Runs every stage from raw points to hotspots and writes the artifacts plus
/// manifest.json into cfg.output_dir. Never throws: validation problems yield
/// exit code 1 with nothing written, stage failures exit code 2 with the
/// partial artifacts removed.
RunResult run_pipeline(const PipelineConfig& cfg, std::ostream& log);

/// Manifest with every timing and timestamp field removed.
nlohmann::json manifest_without_times(const nlohmann::json& manifest);

}  // namespace tripspeed
