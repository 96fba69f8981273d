#pragma once

#include <optional>
#include <string>

#include "specagent/baselines.hpp"
#include "specagent/core.hpp"
#include "specagent/kb.hpp"
#include "specagent/llm.hpp"
#include "specagent/preprocess.hpp"
#include "specagent/reasoning.hpp"

namespace specagent {

// Batch run description (the `run` command's config file). Exactly one of
// kb_query / plan_file / interactive selects the method plan.
struct RunConfig {
  int version = 1;
  std::string dataset_path;
  DatasetFormat dataset_format = DatasetFormat::Csv;
  std::string kb_query;
  std::string kb_path;
  std::string plan_file;
  bool interactive = false;
  LlmConfig llm;
  ReasoningConfig reasoning;
  bool compare_single_turn = true;  // add an LLM(single) row to the table
  int max_samples = 80;             // dataset cap before splitting; 0 = unlimited
  std::string output_dir;
  std::uint64_t seed = 0;

  static RunConfig from_file(const std::string& path);
  void validate() const;
};

struct RunArtifacts {
  MethodPlan plan;
  SpectralDataset preprocessed;
  QualityReport quality;
  FeatureMatrix features;
  Split split;
  RunReport report;                  // the configured run (multi by default)
  std::optional<RunReport> single;   // LLM(single) companion when requested
  ComparisonTable comparison;
};

// load -> resolve plan -> preprocess -> fit features on train -> reason ->
// compare against the task's default baselines.
RunArtifacts execute_run(const RunConfig& cfg, LlmClient& client, bool single_turn_only);

// Writes plan.json, preprocessed.json, features.json, split.json,
// run_report.json/.csv, single_report.json, comparison.csv/.json into dir.
void write_run_artifacts(const RunArtifacts& artifacts, const std::string& dir);

std::string feature_matrix_to_json(const FeatureMatrix& fm);
FeatureMatrix feature_matrix_from_json(const std::string& text);
std::string split_to_json(const Split& split);
Split split_from_json(const std::string& text);

// MethodPlan candidates for a question, via KB retrieval.
std::vector<MethodPlan> candidates_for_query(const std::vector<KbRecord>& records,
                                             const std::string& query_text, int top_k = 3);

}  // namespace specagent
