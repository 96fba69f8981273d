#include "specagent/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "specagent/features.hpp"

namespace specagent {

using nlohmann::json;

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ConfigError, "cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, "config '" + path + "': " + e.what());
  }

  RunConfig cfg;
  cfg.version = j.value("version", 1);
  cfg.dataset_path = j.value("dataset", std::string{});
  const std::string fmt = j.value("format", std::string{"csv"});
  cfg.dataset_format = fmt == "json" ? DatasetFormat::Json : DatasetFormat::Csv;
  cfg.kb_query = j.value("kb_query", std::string{});
  cfg.kb_path = j.value("kb_path", std::string{});
  cfg.plan_file = j.value("plan_file", std::string{});
  cfg.interactive = j.value("interactive", false);
  cfg.compare_single_turn = j.value("compare_single_turn", true);
  cfg.max_samples = j.value("max_samples", 80);
  cfg.output_dir = j.value("output_dir", std::string{});
  cfg.seed = j.value("seed", std::uint64_t{0});

  if (j.contains("llm")) {
    const json& l = j.at("llm");
    cfg.llm.base_url = l.value("base_url", std::string{});
    cfg.llm.model = l.value("model", std::string{});
    cfg.llm.temperature = l.value("temperature", 0.5);
    cfg.llm.max_tokens = l.value("max_tokens", 2048);
    cfg.llm.timeout_seconds = l.value("timeout_seconds", 60.0);
    cfg.llm.max_retries = l.value("max_retries", 3);
    cfg.llm.context_limit = l.value("context_limit", 8192);
    cfg.llm.budget_margin = l.value("budget_margin", 0.8);
  }
  if (j.contains("reasoning")) {
    const json& r = j.at("reasoning");
    cfg.reasoning.max_rounds = r.value("max_rounds", 5);
    cfg.reasoning.delta = r.value("delta", 0.01);
    cfg.reasoning.absolute_delta = r.value("absolute_delta", false);
    cfg.reasoning.hard_sample_cap = r.value("hard_sample_cap", 10);
    cfg.reasoning.hard_sample_top_k = r.value("hard_sample_top_k", 5);
    cfg.reasoning.temperature = r.value("temperature", 0.5);
    cfg.reasoning.repeats = r.value("repeats", 10);
    cfg.reasoning.max_exemplars = r.value("max_exemplars", 0);
  }
  cfg.reasoning.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (dataset_path.empty()) raise(ErrorCode::ConfigError, "config needs a dataset path");
  int sources = 0;
  if (!kb_query.empty()) ++sources;
  if (!plan_file.empty()) ++sources;
  if (interactive) ++sources;
  if (sources != 1)
    raise(ErrorCode::ConfigError,
          "exactly one plan source (kb_query, plan_file, interactive) must be set");
  if (!kb_query.empty() && kb_path.empty())
    raise(ErrorCode::ConfigError, "kb_query needs kb_path");
  if (!std::filesystem::exists(dataset_path))
    raise(ErrorCode::ConfigError, "dataset '" + dataset_path + "' does not exist");
  if (!plan_file.empty() && !std::filesystem::exists(plan_file))
    raise(ErrorCode::ConfigError, "plan file '" + plan_file + "' does not exist");
  if (!kb_path.empty() && !std::filesystem::exists(kb_path))
    raise(ErrorCode::ConfigError, "kb file '" + kb_path + "' does not exist");
  reasoning.validate();
}

std::vector<MethodPlan> candidates_for_query(const std::vector<KbRecord>& records,
                                             const std::string& query_text, int top_k) {
  const KbIndex index = build_index(records, RetrievalEngine::Bm25);
  const QueryResult result = query(index, query_text, top_k);
  if (result.hits.empty())
    raise(ErrorCode::NoResolvablePlan,
          "no knowledge-base match for query '" + query_text + "'");
  return plan_from_records(result.hits, records);
}

RunArtifacts execute_run(const RunConfig& cfg, LlmClient& client, bool single_turn_only) {
  cfg.validate();
  RunArtifacts artifacts;

  SpectralDataset dataset =
      subsample_dataset(load_dataset(cfg.dataset_path, cfg.dataset_format),
                        cfg.max_samples, cfg.seed);

  if (!cfg.plan_file.empty()) {
    std::ifstream in(cfg.plan_file);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    artifacts.plan = MethodPlan::from_json(text);
  } else if (!cfg.kb_query.empty()) {
    artifacts.plan = candidates_for_query(load_kb_records(cfg.kb_path), cfg.kb_query).front();
  } else {
    raise(ErrorCode::ConfigError, "interactive plan selection runs through the session command");
  }

  ChainDatasetResult chained = apply_chain(dataset, artifacts.plan.steps);
  artifacts.preprocessed = std::move(chained.dataset);
  artifacts.quality = std::move(chained.quality);

  artifacts.split = split_dataset(artifacts.preprocessed, SplitRatio{}, cfg.seed);

  const FittedExtractor extractor =
      fit_extractor(artifacts.plan.feature, artifacts.preprocessed, artifacts.split.train);
  artifacts.features = apply_extractor(extractor, artifacts.preprocessed);

  const std::map<std::string, Label> truth = artifacts.preprocessed.label_map();
  const TaskType task = artifacts.preprocessed.task;

  if (single_turn_only) {
    artifacts.report =
        single_turn(task, artifacts.features, artifacts.split, truth, client, cfg.reasoning);
  } else {
    artifacts.report = run_multi_turn(task, artifacts.features, artifacts.split, truth, client,
                                      cfg.reasoning);
    if (cfg.compare_single_turn)
      artifacts.single =
          single_turn(task, artifacts.features, artifacts.split, truth, client, cfg.reasoning);
  }

  std::vector<const RunReport*> runs;
  std::vector<std::string> names;
  if (artifacts.single) {
    runs.push_back(&*artifacts.single);
    names.push_back("llm(single)");
  }
  runs.push_back(&artifacts.report);
  names.push_back(single_turn_only ? "llm(single)" : "llm(multi)");
  artifacts.comparison = compare(runs, names, default_baselines(task), artifacts.features,
                                 artifacts.split, truth);
  return artifacts;
}

std::string feature_matrix_to_json(const FeatureMatrix& fm) {
  json j;
  j["feature_names"] = fm.feature_names;
  j["ids"] = fm.ids;
  json rows = json::array();
  for (Eigen::Index r = 0; r < fm.rows.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < fm.rows.cols(); ++c) row.push_back(fm.rows(r, c));
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j.dump(2);
}

FeatureMatrix feature_matrix_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "feature matrix: " + std::string(e.what()));
  }
  FeatureMatrix fm;
  fm.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  fm.ids = j.at("ids").get<std::vector<std::string>>();
  const json& rows = j.at("rows");
  fm.rows.resize(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(fm.feature_names.size()));
  for (Eigen::Index r = 0; r < fm.rows.rows(); ++r)
    for (Eigen::Index c = 0; c < fm.rows.cols(); ++c)
      fm.rows(r, c) = rows.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  fm.validate();
  return fm;
}

std::string split_to_json(const Split& split) {
  json j;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  return j.dump(2);
}

Split split_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "split: " + std::string(e.what()));
  }
  Split s;
  s.train = j.at("train").get<std::vector<int>>();
  s.validation = j.at("validation").get<std::vector<int>>();
  s.test = j.at("test").get<std::vector<int>>();
  return s;
}

void write_run_artifacts(const RunArtifacts& artifacts, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(base / name);
    if (!out) raise(ErrorCode::ParseError, "cannot write '" + (base / name).string() + "'");
    out << content;
  };

  write("plan.json", artifacts.plan.to_json() + "\n");
  save_dataset(artifacts.preprocessed, (base / "preprocessed.json").string(),
               DatasetFormat::Json);
  write("features.json", feature_matrix_to_json(artifacts.features) + "\n");
  write("split.json", split_to_json(artifacts.split) + "\n");

  json quality;
  quality["finite"] = artifacts.quality.finite;
  quality["baseline_flatness"] = artifacts.quality.baseline_flatness;
  quality["noise_estimate"] = artifacts.quality.noise_estimate;
  quality["warnings"] = artifacts.quality.warnings;
  write("quality.json", quality.dump(2) + "\n");

  write("run_report.json", artifacts.report.to_json() + "\n");
  write("run_report.csv", artifacts.report.to_csv());
  if (artifacts.single) write("single_report.json", artifacts.single->to_json() + "\n");
  write("comparison.csv", artifacts.comparison.to_csv());
  write("comparison.json", artifacts.comparison.to_json() + "\n");
}

}  // namespace specagent
