#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tripspeed/config.hpp"
#include "tripspeed/extract.hpp"
#include "tripspeed/pipeline.hpp"
#include "tripspeed/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tripspeed;

namespace {

// Options every stage subcommand understands. Explicit flags are applied as
// overrides after --config and before --set.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  int threads = -1;
  std::vector<std::string> flag_overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON config file");
    app->add_option("--set", sets, "Override a config key, e.g. --set roadnet.match_radius_m=25");
    app->add_option("-j,--threads", threads, "Worker threads (0 = all cores)");
  }

  void flag(const std::string& key, const std::string& value) {
    if (!value.empty()) flag_overrides.push_back(key + "=" + json(value).dump());
  }

  PipelineConfig load() {
    json j = config_path.empty() ? json::object() : read_config_json(config_path);
    if (threads >= 0) flag_overrides.push_back("threads=" + std::to_string(threads));
    apply_overrides(j, flag_overrides);
    apply_overrides(j, sets);
    return PipelineConfig::from_json(j);
  }
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p);
  return in;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

FeatureMatrix load_features(const std::string& path, const PipelineConfig& cfg) {
  auto in = open_in(path);
  return assemble_dataset(read_features_csv(in), cfg.selection);
}

TrainedModel load_model(const fs::path& p) {
  auto in = open_in(p.string());
  return TrainedModel::from_json(json::parse(in));
}

SplitArtifact load_split(const fs::path& run_dir) {
  auto in = open_in((run_dir / "split.json").string());
  return SplitArtifact::from_json(json::parse(in));
}

std::vector<ModelKind> trained_models(const fs::path& run_dir, const PipelineConfig& cfg) {
  std::vector<ModelKind> out;
  for (ModelKind k : cfg.models)
    if (fs::exists(run_dir / "models" / (std::string(to_string(k)) + ".json"))) out.push_back(k);
  if (out.empty()) throw std::runtime_error("no trained models under " + (run_dir / "models").string());
  return out;
}

void print_report(const ExtractReport& r) { std::cerr << r.to_json(true).dump(2) << '\n'; }

// Runs one stage body, mapping configuration problems to exit 1 and anything
// else to exit 2 with the stage name.
template <class F>
int guarded(const std::string& stage, F&& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "stage '" << stage << "' failed: " << e.what() << '\n';
    return kExitStageFailure;
  }
}

void require_path(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string(what) + " is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Journey speeding-level pipeline: ingest, enrich, feature extraction, models, explanations, hotspots"};
  app.require_subcommand(1);
  int code = kExitOk;

  // generate ----------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Write a seeded synthetic network, point stream and ground truth");
  std::string gen_out, gen_cfg, gen_mix;
  std::size_t gen_journeys = 0, gen_corrupt = 0;
  int gen_grid = 0;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("--synth-config", gen_cfg, "JSON generator config");
  gen->add_option("-n,--journeys", gen_journeys, "Number of journeys");
  gen->add_option("--grid", gen_grid, "Grid nodes per side");
  gen->add_option("--seed", gen_seed, "Generator seed")->each([&](const std::string&) { gen_seed_set = true; });
  gen->add_option("--mix", gen_mix, "Six comma-separated weights for the target speeding levels");
  gen->add_option("--corrupt", gen_corrupt, "Extra malformed lines to mix in");
  gen->callback([&] {
    code = guarded("generate", [&] {
      SynthConfig c;
      if (!gen_cfg.empty()) {
        std::ifstream in(gen_cfg);
        if (!in) throw ConfigError("cannot open " + gen_cfg);
        c = SynthConfig::from_json(json::parse(in, nullptr, true, true));
      }
      if (gen_journeys) c.n_journeys = gen_journeys;
      if (gen_grid) c.grid_size = gen_grid;
      if (gen_seed_set) c.seed = gen_seed;
      if (gen_corrupt) c.corrupt_lines = gen_corrupt;
      if (!gen_mix.empty()) {
        std::stringstream ss(gen_mix);
        std::string tok;
        std::size_t i = 0;
        while (std::getline(ss, tok, ',')) {
          if (i >= c.behavior_mix.size()) throw ConfigError("--mix takes six weights");
          c.behavior_mix[i++] = std::stod(tok);
        }
        if (i != c.behavior_mix.size()) throw ConfigError("--mix takes six weights");
      }
      try {
        SyntheticGenerator check(c);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      fs::create_directories(gen_out);
      const SyntheticBundle b = generate_synthetic(c, gen_out);
      write_json(fs::path(gen_out) / "synth_config.json", c.to_json());
      std::cout << "journeys " << b.truth.journeys.size() << ", points " << b.truth.total_points << '\n'
                << "network  " << b.network.string() << '\n'
                << "points   " << b.points.string() << '\n'
                << "truth    " << b.truth_features.string() << ", " << b.truth_segments.string() << '\n';
    });
  });

  // ingest ------------------------------------------------------------------
  auto* ing = app.add_subcommand("ingest", "Parse, group and validate points into journeys");
  Common ing_c;
  std::string ing_points, ing_out, ing_report;
  ing_c.attach(ing);
  ing->add_option("-p,--points", ing_points, "Point file (CSV or NDJSON)");
  ing->add_option("-o,--out", ing_out, "Validated journeys CSV")->required();
  ing->add_option("--report", ing_report, "Write the stage report as JSON");
  ing->callback([&] {
    code = guarded("ingest", [&] {
      ing_c.flag("input.points", ing_points);
      const PipelineConfig cfg = ing_c.load();
      require_path(cfg.points, "input.points (--points)");
      auto in = open_in(cfg.points);
      ArtifactSet files(".");
      try {
        auto out = open_out(files.claim(ing_out));
        bool header = true;
        ExtractSinks sinks;
        sinks.on_journey = [&](const Journey& j) {
          write_journeys_csv(out, std::vector<Journey>{j}, header);
          header = false;
        };
        const auto r = extract_parallel(in, nullptr, cfg.extract, sinks);
        if (!ing_report.empty()) write_json(files.claim(ing_report), r.report.to_json(true));
        print_report(r.report);
      } catch (...) {
        files.remove_all();
        throw;
      }
    });
  });

  // enrich ------------------------------------------------------------------
  auto* enr = app.add_subcommand("enrich", "Match validated journeys to the road network");
  Common enr_c;
  std::string enr_points, enr_network, enr_out, enr_report;
  enr_c.attach(enr);
  enr->add_option("-p,--points", enr_points, "Point or journey file");
  enr->add_option("-n,--network", enr_network, "GeoJSON road network");
  enr->add_option("-o,--out", enr_out, "Enriched points CSV")->required();
  enr->add_option("--report", enr_report, "Write the stage report as JSON");
  enr->callback([&] {
    code = guarded("enrich", [&] {
      enr_c.flag("input.points", enr_points);
      enr_c.flag("input.network", enr_network);
      const PipelineConfig cfg = enr_c.load();
      require_path(cfg.points, "input.points (--points)");
      require_path(cfg.network, "input.network (--network)");
      const Network net = load_network_file(cfg.network, cfg.network_schema);
      const NetworkIndex index(net);
      auto in = open_in(cfg.points);
      ArtifactSet files(".");
      try {
        auto out = open_out(files.claim(enr_out));
        write_enriched_header(out);
        ExtractSinks sinks;
        sinks.on_enriched = [&](const MatchedJourney& mj) { write_enriched_csv(out, mj, net); };
        const auto r = extract_parallel(in, &index, cfg.extract, sinks);
        if (!enr_report.empty()) write_json(files.claim(enr_report), r.report.to_json(true));
        print_report(r.report);
      } catch (...) {
        files.remove_all();
        throw;
      }
    });
  });

  // features ----------------------------------------------------------------
  auto* fea = app.add_subcommand("features", "Per-journey kinematic and contextual features");
  Common fea_c;
  std::string fea_points, fea_network, fea_enriched, fea_out, fea_report;
  bool fea_serial = false;
  fea_c.attach(fea);
  fea->add_option("-p,--points", fea_points, "Raw point file");
  fea->add_option("-n,--network", fea_network, "GeoJSON road network");
  fea->add_option("-e,--enriched", fea_enriched, "Enriched points CSV instead of raw points");
  fea->add_option("-o,--out", fea_out, "Feature table CSV")->required();
  fea->add_option("--report", fea_report, "Write the stage report as JSON");
  fea->add_flag("--serial", fea_serial, "Use the single-threaded reference path");
  fea->callback([&] {
    code = guarded("features", [&] {
      fea_c.flag("input.points", fea_points);
      fea_c.flag("input.network", fea_network);
      const PipelineConfig cfg = fea_c.load();
      require_path(cfg.network, "input.network (--network)");
      if (fea_enriched.empty()) require_path(cfg.points, "input.points (--points) or --enriched");
      const Network net = load_network_file(cfg.network, cfg.network_schema);
      ExtractReport report;
      ArtifactSet files(".");
      try {
        auto out = open_out(files.claim(fea_out));
        write_features_header(out);
        if (!fea_enriched.empty()) {
          auto in = open_in(fea_enriched);
          const auto rows =
              features_from_enriched(read_enriched_csv(in, net, cfg.extract.min_coverage), cfg.extract, &report);
          for (const auto& r : rows) write_features_row(out, r);
        } else {
          // rows go out in emission order so memory stays flat in journey count
          const NetworkIndex index(net);
          auto in = open_in(cfg.points);
          ExtractSinks sinks;
          sinks.on_features = [&](const JourneyFeatures& f) { write_features_row(out, f); };
          report = (fea_serial ? extract_serial : extract_parallel)(in, &index, cfg.extract, sinks).report;
        }
        if (!fea_report.empty()) write_json(files.claim(fea_report), report.to_json(true));
      } catch (...) {
        files.remove_all();
        throw;
      }
      print_report(report);
    });
  });

  // train -------------------------------------------------------------------
  auto* trn = app.add_subcommand("train", "Split the feature table and train the configured models");
  Common trn_c;
  std::string trn_features, trn_out;
  std::vector<std::string> trn_models;
  trn_c.attach(trn);
  trn->add_option("-f,--features", trn_features, "Feature table CSV")->required();
  trn->add_option("-o,--out", trn_out, "Run directory for split.json and models/")->required();
  trn->add_option("-m,--models", trn_models, "Models to train (lda svm rf gbm xgb)");
  trn->callback([&] {
    code = guarded("train", [&] {
      if (!trn_models.empty()) trn_c.sets.insert(trn_c.sets.begin(), "models=" + json(trn_models).dump());
      if (!trn_models.empty() &&
          std::find(trn_models.begin(), trn_models.end(), "xgb") == trn_models.end() &&
          std::none_of(trn_c.sets.begin(), trn_c.sets.end(), [](const std::string& s) { return s.rfind("explain.model=", 0) == 0; }))
        trn_c.sets.insert(trn_c.sets.begin() + 1, "explain.model=" + json(trn_models.front()).dump());
      const PipelineConfig cfg = trn_c.load();
      const FeatureMatrix all = load_features(trn_features, cfg);
      const SplitData data = split_features(all, cfg);
      ArtifactSet files(trn_out);
      try {
        write_json(files.claim("split.json"), data.artifact.to_json());
        for (ModelKind k : cfg.models) {
          const TrainOutput t = train_one(k, data.train, cfg);
          const std::string name(to_string(k));
          write_json(files.claim("models/" + name + ".json"), t.model.to_json());
          if (t.tuning) {
            auto f = open_out(files.claim("models/tune_" + name + ".csv"));
            write_tune_log(f, t.tuning->cells);
          }
          std::cerr << name << ": " << t.model.trees.size() << " trees, train rows " << data.train.rows() << '\n';
        }
      } catch (...) {
        files.remove_all();
        throw;
      }
    });
  });

  // evaluate ----------------------------------------------------------------
  auto* evl = app.add_subcommand("evaluate", "Per-level precision, recall and F1 on the held-out split");
  Common evl_c;
  std::string evl_features, evl_run, evl_out;
  evl_c.attach(evl);
  evl->add_option("-f,--features", evl_features, "Feature table CSV")->required();
  evl->add_option("-r,--run-dir", evl_run, "Directory written by train")->required();
  evl->add_option("-o,--out", evl_out, "Report CSV; a JSON twin is written alongside")->required();
  evl->callback([&] {
    code = guarded("evaluate", [&] {
      const PipelineConfig cfg = evl_c.load();
      const SplitData data = apply_split(load_features(evl_features, cfg), load_split(evl_run));
      std::vector<EvaluationReport> reports;
      for (ModelKind k : trained_models(evl_run, cfg))
        reports.push_back(
            evaluate_model(load_model(fs::path(evl_run) / "models" / (std::string(to_string(k)) + ".json")), data.test));
      ArtifactSet files(".");
      try {
        {
          auto out = open_out(files.claim(evl_out));
          write_report_csv(out, reports);
        }
        write_json(files.claim(fs::path(evl_out).replace_extension(".json").string()), evaluation_json(reports));
      } catch (...) {
        files.remove_all();
        throw;
      }
      write_report_csv(std::cout, reports);
    });
  });

  // explain -----------------------------------------------------------------
  auto* exp = app.add_subcommand("explain", "Importance, SHAP values, t-SNE map and dependence curves");
  Common exp_c;
  std::string exp_features, exp_run, exp_out, exp_model;
  exp_c.attach(exp);
  exp->add_option("-f,--features", exp_features, "Feature table CSV")->required();
  exp->add_option("-r,--run-dir", exp_run, "Directory written by train")->required();
  exp->add_option("-o,--out", exp_out, "Output directory")->required();
  exp->add_option("-m,--model", exp_model, "Model to explain");
  exp->callback([&] {
    code = guarded("explain", [&] {
      exp_c.flag("explain.model", exp_model);
      const PipelineConfig cfg = exp_c.load();
      const SplitData data = apply_split(load_features(exp_features, cfg), load_split(exp_run));
      const TrainedModel model =
          load_model(fs::path(exp_run) / "models" / (std::string(to_string(cfg.explain.model)) + ".json"));
      const ExplainOutput out = explain_model(model, data.train, data.test, cfg.explain);
      ArtifactSet files(exp_out);
      try {
        write_explain(out, "", files);
      } catch (...) {
        files.remove_all();
        throw;
      }
      std::cerr << "explained " << out.sample_ids.size() << " rows, t-SNE KL " << out.embedding.kl_initial << " -> "
                << out.embedding.kl_final << '\n';
    });
  });

  // hotspots ----------------------------------------------------------------
  auto* hot = app.add_subcommand("hotspots", "Per-segment speeding statistics for well-observed segments");
  Common hot_c;
  std::string hot_points, hot_network, hot_enriched, hot_out;
  hot_c.attach(hot);
  hot->add_option("-p,--points", hot_points, "Raw point file");
  hot->add_option("-n,--network", hot_network, "GeoJSON road network");
  hot->add_option("-e,--enriched", hot_enriched, "Enriched points CSV instead of raw points");
  hot->add_option("-o,--out", hot_out, "Output directory")->required();
  hot->callback([&] {
    code = guarded("hotspots", [&] {
      hot_c.flag("input.points", hot_points);
      hot_c.flag("input.network", hot_network);
      const PipelineConfig cfg = hot_c.load();
      require_path(cfg.network, "input.network (--network)");
      if (hot_enriched.empty()) require_path(cfg.points, "input.points (--points) or --enriched");
      const Network net = load_network_file(cfg.network, cfg.network_schema);
      std::vector<SegmentStats> stats;
      if (!hot_enriched.empty()) {
        auto in = open_in(hot_enriched);
        const auto journeys = read_enriched_csv(in, net, cfg.extract.min_coverage);
        stats = aggregate_segments(journeys, net.segments.size(), cfg.hotspot.statistic);
      } else {
        const NetworkIndex index(net);
        auto in = open_in(cfg.points);
        stats = extract_parallel(in, &index, cfg.extract).segments.finalize();
      }
      const auto hotspots = filter_hotspots(stats, cfg.hotspot.min_points);
      ArtifactSet files(hot_out);
      try {
        write_hotspots(hotspots, net, cfg.hotspot, "", files);
      } catch (...) {
        files.remove_all();
        throw;
      }
      std::cerr << hotspots.size() << " of " << stats.size() << " observed segments have at least "
                << cfg.hotspot.min_points << " points\n";
    });
  });

  // run ---------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Every stage from raw points to hotspots, with a manifest");
  Common run_c;
  std::string run_points, run_network, run_out;
  bool print_defaults = false;
  run_c.attach(run);
  run->add_option("-p,--points", run_points, "Raw point file");
  run->add_option("-n,--network", run_network, "GeoJSON road network");
  run->add_option("-o,--out", run_out, "Output directory");
  run->add_flag("--print-default-config", print_defaults, "Print the default config and exit");
  run->callback([&] {
    if (print_defaults) {
      std::cout << default_config_json().dump(2) << '\n';
      return;
    }
    PipelineConfig cfg;
    code = guarded("config", [&] {
      run_c.flag("input.points", run_points);
      run_c.flag("input.network", run_network);
      run_c.flag("output_dir", run_out);
      cfg = run_c.load();
    });
    if (code != kExitOk) return;
    code = run_pipeline(cfg, std::cerr).exit_code;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }
  return code;
}
