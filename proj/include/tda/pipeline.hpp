#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tda/attribution.hpp"
#include "tda/ekfac.hpp"
#include "tda/influence.hpp"
#include "tda/model.hpp"

namespace tda {

struct AnalysisOptions {
  std::vector<GroupKey> group_keys{GroupKey::domain, GroupKey::category, GroupKey::difficulty};
  int math_easy_threshold = 2;
  int code_hard_threshold = 4;
  bool flip_reverse = false;
  std::vector<int> robustness_ns{10, 25, 50, 100};
  bool positive_only = true;
  std::size_t ranking_top_k = 50;
};

struct ReportOptions {
  double top_fraction = kDefaultTopTokenFraction;
  std::size_t heatmap_examples = 8;
};

struct RunConfig {
  std::filesystem::path dataset_path;
  std::filesystem::path eval_path;
  std::filesystem::path pool_path;  // optional; empty disables the flip plan
  std::filesystem::path out_dir;
  ModelConfig model;
  TrainConfig train;
  FactorOptions factors;
  std::size_t query_n = 100;
  ScoreTargets targets{true, true, true};
  AnalysisOptions analysis;
  ReportOptions report;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // semantic knobs only: paths, out_dir and workers stay out of the hash
  std::string config_hash() const;
};

RunConfig load_run_config(const std::filesystem::path& config_file);

// line-delimited {"prompt": ..., "answer": ...}
std::vector<EvalItem> load_eval_items(const std::filesystem::path& path, const Tokenizer& tok);

void save_query_set(const std::filesystem::path& path, const QuerySet& qs, const Tokenizer& tok);
QuerySet load_query_set(const std::filesystem::path& path, const Tokenizer& tok);

struct StageOutcome {
  bool ran = false;
  std::string key;
};

struct PipelineResult {
  std::map<std::string, StageOutcome> stages;
  std::filesystem::path out_dir;
};

inline const char* kStageOrder[] = {"train", "factors", "query", "score", "analyze", "report"};

// Stages run in dependency order with content-hash caching: a stage reruns
// when its key changes, an output is missing or altered, or an upstream
// stage ran in this invocation. `force` reruns the named stages regardless.
PipelineResult run_pipeline(const RunConfig& cfg, const std::vector<std::string>& force = {});

// Single-stage entrypoints behind the CLI subcommands (always run).
PipelineResult run_single_stage(const RunConfig& cfg, const std::string& stage);

// Report emission; returns the files written (paths relative to out_dir).
std::vector<std::filesystem::path> emit_report(const std::vector<InfluenceRecord>& records,
                                               const std::vector<Example>& dataset,
                                               const ReportOptions& options,
                                               const nlohmann::json& analysis,
                                               const std::filesystem::path& out_dir);

}  // namespace tda
