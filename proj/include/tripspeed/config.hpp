#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tripspeed/explain.hpp"
#include "tripspeed/extract.hpp"
#include "tripspeed/learn.hpp"

namespace tripspeed {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExplainConfig {
  ModelKind model = ModelKind::XGB;
  std::size_t sample_rows = 500;
  std::size_t background_rows = 200;
  std::uint64_t seed = 3;
  TsneParams tsne;
  std::size_t dependence_features = 4;
};

/// The single run configuration. Every key has a default; unknown keys are
/// rejected so typos fail loudly.
struct PipelineConfig {
  std::string points;
  std::string network;
  std::string output_dir = "tripspeed_out";
  int threads = 0;
  NetworkSchema network_schema;

  ExtractParams extract;
  FeatureSelection selection;

  double test_ratio = 0.3;
  std::uint64_t split_seed = 7;
  bool stratified = true;

  std::vector<ModelKind> models = {ModelKind::LDA, ModelKind::LinearSVM, ModelKind::RF, ModelKind::GBM,
                                   ModelKind::XGB};
  nlohmann::json model_params = nlohmann::json::object();  // keyed by model name

  bool tune = false;
  TuneGrid grid;
  double tune_holdout = 0.2;
  std::uint64_t tune_seed = 11;

  ExplainConfig explain;
  HotspotParams hotspot;

  /// Throws ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
  /// Parameters for one model: model_params[name] over the model's defaults.
  nlohmann::json params_for(ModelKind k) const;
};

/// Parses a config file; // and /* */ comments are allowed.
nlohmann::json read_config_json(const std::string& path);

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when it is
/// valid JSON, otherwise taken as a string.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

/// Documented defaults, the same object PipelineConfig{}.to_json() returns.
nlohmann::json default_config_json();

}  // namespace tripspeed
