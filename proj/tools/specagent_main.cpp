// specagent: knowledge-guided infrared spectral analysis from the command line.
//
// Subcommands: kb build|query|eval, extract, run, session, plot, compare,
// fixtures. Exit codes: 0 success, 1 user/config error, 2 pipeline error,
// 3 provider error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "specagent/baselines.hpp"
#include "specagent/entity.hpp"
#include "specagent/features.hpp"
#include "specagent/kb.hpp"
#include "specagent/pipeline.hpp"
#include "specagent/plots.hpp"
#include "specagent/preprocess.hpp"
#include "specagent/reasoning.hpp"
#include "specagent/synthetic.hpp"
#include "specagent/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace specagent;

namespace {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::ConfigError:
    case ErrorCode::AbortedByUser:
      return 1;
    case ErrorCode::Timeout:
    case ErrorCode::RateLimited:
    case ErrorCode::ProviderError:
    case ErrorCode::BudgetExceeded:
      return 3;
    default:
      return 2;
  }
}

void emit_error(const Error& e, bool json_mode) {
  if (json_mode) {
    json j;
    j["error"] = to_string(e.code());
    j["message"] = e.what();
    std::cerr << j.dump() << '\n';
  } else {
    std::cerr << "error: " << e.what() << '\n';
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ConfigError, "cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

DatasetFormat format_of(const std::string& path) {
  return fs::path(path).extension() == ".json" ? DatasetFormat::Json : DatasetFormat::Csv;
}

// ---- kb ---------------------------------------------------------------

int cmd_kb_build(const std::string& records_path, const std::string& engine,
                 const std::string& out_path, bool json_mode) {
  const KbIndex index = build_index(load_kb_records(records_path), engine_from_string(engine));
  save_index(index, out_path);
  if (json_mode) {
    json j;
    j["index"] = out_path;
    j["documents"] = index.record_ids.size();
    j["vocabulary"] = index.vocabulary.size();
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "indexed " << index.record_ids.size() << " records ("
              << index.vocabulary.size() << " terms) -> " << out_path << '\n';
  }
  return 0;
}

int cmd_kb_query(const std::string& index_path, const std::string& text, int top_k,
                 bool json_mode) {
  const KbIndex index = load_index(index_path);
  const QueryResult result = query(index, text, top_k);
  for (const RetrievalHit& hit : result.hits) {
    if (json_mode) {
      json j;
      j["id"] = hit.record_id;
      j["score"] = hit.score;
      j["rank"] = hit.rank;
      std::cout << j.dump() << '\n';
    } else {
      std::cout << hit.rank << ". " << hit.record_id << "  (score "
                << format_significant(hit.score, 6) << ")\n";
    }
  }
  if (result.empty_query && !json_mode)
    std::cerr << "note: no query token appears in the index vocabulary\n";
  return 0;
}

int cmd_kb_eval(const std::string& records_path, const std::string& queries_path, int top_k,
                bool json_mode) {
  const std::vector<KbRecord> records = load_kb_records(records_path);
  const std::vector<LabeledQuery> queries = load_labeled_queries(queries_path);
  json out;
  for (RetrievalEngine engine :
       {RetrievalEngine::Bow, RetrievalEngine::Bm25, RetrievalEngine::Tfidf}) {
    const double precision = evaluate_retrieval(build_index(records, engine), queries, top_k);
    out[to_string(engine)] = precision;
    if (!json_mode)
      std::cout << to_string(engine) << " mean precision@" << top_k << ": "
                << format_significant(100.0 * precision, 4) << "%\n";
  }
  if (json_mode) std::cout << out.dump() << '\n';
  return 0;
}

// ---- extract -------------------------------------------------------------

std::shared_ptr<LlmBackend> make_backend(bool mock, const std::string& scripted_path) {
  if (!scripted_path.empty())
    return ScriptedBackend::from_transcript(TranscriptLog::load(scripted_path));
  if (mock) return std::make_shared<NearestNeighborBackend>();
  return std::make_shared<HttpChatBackend>();
}

int cmd_extract(const std::string& question, const std::string& eval_path,
                const std::string& scripted_path, bool json_mode) {
  LlmConfig cfg = LlmConfig::from_env();
  if (scripted_path.empty() && cfg.base_url.empty())
    raise(ErrorCode::ConfigError, "set LLM_BASE_URL or pass --scripted");
  LlmClient client(cfg, make_backend(false, scripted_path));

  if (!eval_path.empty()) {
    const ExtractionScores scores = evaluate_extraction(client, load_eval_cases(eval_path));
    if (json_mode) {
      json j;
      j["object_accuracy"] = scores.object_accuracy;
      j["task_accuracy"] = scores.task_accuracy;
      std::cout << j.dump() << '\n';
    } else {
      std::cout << "research object accuracy: " << format_significant(scores.object_accuracy, 4)
                << "%\ntask type accuracy: " << format_significant(scores.task_accuracy, 4)
                << "%\n";
    }
    return 0;
  }

  const ExtractedEntities entities = extract_entities(client, question);
  json j;
  j["research_object"] = entities.research_object;
  j["task"] = to_string(entities.task);
  j["attempts"] = entities.attempts;
  std::cout << j.dump() << '\n';
  return 0;
}

// ---- run ------------------------------------------------------------------

int cmd_run(const std::string& config_path, bool single_turn_flag, bool mock_backend,
            std::optional<int> repeats, std::optional<std::uint64_t> seed,
            const std::string& out_dir, bool json_mode) {
  RunConfig cfg = RunConfig::from_file(config_path);
  if (repeats) cfg.reasoning.repeats = *repeats;
  if (seed) {
    cfg.seed = *seed;
    cfg.reasoning.seed = *seed;
  }
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (cfg.output_dir.empty()) raise(ErrorCode::ConfigError, "no output directory configured");

  std::shared_ptr<LlmBackend> backend;
  if (mock_backend) {
    backend = std::make_shared<NearestNeighborBackend>();
  } else {
    const LlmConfig env = LlmConfig::from_env();
    if (!env.base_url.empty()) cfg.llm.base_url = env.base_url;
    if (!env.model.empty()) cfg.llm.model = env.model;
    cfg.llm.api_key = env.api_key;
    if (cfg.llm.api_key.empty())
      raise(ErrorCode::ConfigError, "LLM_API_KEY is not set (or pass --mock-backend)");
    backend = std::make_shared<HttpChatBackend>();
  }

  fs::create_directories(cfg.output_dir);
  TranscriptLog transcript((fs::path(cfg.output_dir) / "transcript.jsonl").string());
  LlmClient client(cfg.llm, backend, &transcript);

  const std::uint64_t net_before = http_requests_total();
  const RunArtifacts artifacts = execute_run(cfg, client, single_turn_flag);
  write_run_artifacts(artifacts, cfg.output_dir);
  if (mock_backend && http_requests_total() != net_before)
    raise(ErrorCode::ProviderError, "mock run performed network activity");

  if (json_mode) {
    json j;
    j["output_dir"] = cfg.output_dir;
    j["task"] = to_string(artifacts.report.task);
    j["single_turn"] = single_turn_flag;
    j["aggregate_mean"] = artifacts.report.aggregate_mean;
    j["aggregate_std"] = artifacts.report.aggregate_std;
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "run complete -> " << cfg.output_dir << '\n';
    for (const auto& [key, v] : artifacts.report.aggregate_mean)
      std::cout << "  " << key << ": " << format_significant(v, 6) << " +/- "
                << format_significant(artifacts.report.aggregate_std.at(key), 6) << '\n';
  }
  return 0;
}

// ---- session -----------------------------------------------------------------

class AnswerSource {
 public:
  explicit AnswerSource(const std::string& answers_path) {
    if (!answers_path.empty()) {
      file_.open(answers_path);
      if (!file_) raise(ErrorCode::ConfigError, "cannot open answers '" + answers_path + "'");
      scripted_ = true;
    }
  }

  std::string next(const std::string& prompt) {
    std::cout << prompt << std::flush;
    std::string line;
    std::istream& in = scripted_ ? static_cast<std::istream&>(file_) : std::cin;
    if (!std::getline(in, line))
      raise(ErrorCode::AbortedByUser, "input ended before a plan was accepted");
    if (scripted_) std::cout << line << '\n';  // echo for the transcript
    return trim(line);
  }

 private:
  bool scripted_ = false;
  std::ifstream file_;
};

bool apply_param_edit(MethodPlan& plan, const std::string& key, double value) {
  for (PreprocessStep& step : plan.steps) {
    if (step.kind == StepKind::SavitzkyGolay &&
        (key == "m" || key == "degree" || key == "deriv_order")) {
      if (key == "m") step.half_window = static_cast<int>(value);
      if (key == "degree") step.degree = static_cast<int>(value);
      if (key == "deriv_order") step.deriv_order = static_cast<int>(value);
      step.validate();
      return true;
    }
    if (step.kind == StepKind::AsLS && (key == "lambda" || key == "p" || key == "iters")) {
      if (key == "lambda") step.lambda = value;
      if (key == "p") step.asymmetry = value;
      if (key == "iters") step.iters = static_cast<int>(value);
      step.validate();
      return true;
    }
    if (step.kind == StepKind::Detrend && key == "order") {
      step.order = static_cast<int>(value);
      step.validate();
      return true;
    }
  }
  if (key == "n_components") plan.feature.n_components = static_cast<int>(value);
  else if (key == "n_latent") plan.feature.n_latent = static_cast<int>(value);
  else if (key == "n_top") plan.feature.n_top = static_cast<int>(value);
  else if (key == "rank") plan.feature.rank = static_cast<int>(value);
  else return false;
  return true;
}

std::string describe_plan(const MethodPlan& plan) {
  std::string chain;
  for (const PreprocessStep& s : plan.steps) {
    if (!chain.empty()) chain += " -> ";
    chain += s.summary();
  }
  if (chain.empty()) chain = "(identity)";
  std::string out = chain + " -> " + std::string(to_string(plan.feature.kind));
  if (plan.feature.kind == FeatureKind::Pca)
    out += "(" + std::to_string(plan.feature.n_components) + ")";
  if (plan.feature.kind == FeatureKind::LambertBeerPearson)
    out += "(top " + std::to_string(plan.feature.n_top) + ")";
  return out;
}

int cmd_session(const std::string& dataset_path, const std::string& question,
                const std::string& kb_path, const std::string& answers_path,
                const std::string& out_path) {
  const SpectralDataset dataset = load_dataset(dataset_path, format_of(dataset_path));
  const std::vector<KbRecord> records = load_kb_records(kb_path);
  std::vector<MethodPlan> candidates = candidates_for_query(records, question);
  std::map<std::string, const KbRecord*> by_id;
  for (const KbRecord& r : records) by_id[r.id] = &r;

  AnswerSource answers(answers_path);
  std::cout << "retrieved " << candidates.size() << " candidate plan(s) for: " << question
            << '\n';

  while (true) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      std::cout << "  [" << i + 1 << "] " << describe_plan(candidates[i]) << '\n';
      for (const std::string& rec_id : candidates[i].provenance) {
        auto it = by_id.find(rec_id);
        if (it != by_id.end())
          std::cout << "      from: " << it->second->citation << '\n';
      }
    }

    MethodPlan chosen;
    const std::string pick =
        answers.next("select a candidate [1-" + std::to_string(candidates.size()) +
                     "], or 'manual': ");
    if (pick == "manual" || pick == "m") {
      const std::string chain = answers.next("preprocessing chain (e.g. SG+SNV): ");
      const std::string feature = answers.next("feature extractor (e.g. PCA): ");
      chosen.steps = chain_from_string(chain);
      chosen.feature.kind = feature_kind_from_string(feature);
      chosen.provenance = {"manual"};
    } else {
      int index = 0;
      try {
        index = std::stoi(pick);
      } catch (const std::exception&) {
        std::cout << "unrecognized answer '" << pick << "'\n";
        continue;
      }
      if (index < 1 || index > static_cast<int>(candidates.size())) {
        std::cout << "candidate " << index << " does not exist\n";
        continue;
      }
      chosen = candidates[static_cast<std::size_t>(index - 1)];
    }

    // preview/refine loop on the first spectrum
    while (true) {
      const ChainSpectrumResult preview = apply_chain(dataset.spectra.front(), chosen.steps);
      std::cout << "plan: " << describe_plan(chosen) << '\n'
                << "preview on '" << dataset.spectra.front().id()
                << "': finite=" << (preview.quality.finite ? "yes" : "no")
                << ", baseline_flatness="
                << format_significant(preview.quality.baseline_flatness, 4)
                << ", noise_estimate=" << format_significant(preview.quality.noise_estimate, 4)
                << '\n';
      for (const std::string& w : preview.quality.warnings)
        std::cout << "  warning: " << w << '\n';

      const std::string action = answers.next("accept, <param>=<value>, or back: ");
      if (action == "accept") {
        std::ofstream out(out_path);
        if (!out) raise(ErrorCode::ConfigError, "cannot write '" + out_path + "'");
        out << chosen.to_json() << '\n';
        std::cout << "plan written to " << out_path << '\n';
        return 0;
      }
      if (action == "back") break;
      const std::size_t eq = action.find('=');
      if (eq == std::string::npos) {
        std::cout << "unrecognized answer '" << action << "'\n";
        continue;
      }
      try {
        const std::string key = trim(action.substr(0, eq));
        const double value = std::stod(action.substr(eq + 1));
        if (!apply_param_edit(chosen, key, value))
          std::cout << "no step in this plan takes parameter '" << key << "'\n";
      } catch (const Error& e) {
        std::cout << "edit rejected: " << e.what() << '\n';
      } catch (const std::exception&) {
        std::cout << "cannot parse '" << action << "'\n";
      }
    }
  }
}

// ---- plot ----------------------------------------------------------------

int cmd_plot(const std::string& input_path, const std::string& plan_path,
             const std::string& out_dir, bool json_mode) {
  fs::create_directories(out_dir);
  SpectralDataset dataset;
  FeatureMatrix features;
  SpectralDataset processed;

  if (fs::is_directory(input_path)) {
    // a run output directory carries its own preprocessed data and features
    dataset = load_dataset((fs::path(input_path) / "preprocessed.json").string(),
                           DatasetFormat::Json);
    processed = dataset;
    features = feature_matrix_from_json(read_file((fs::path(input_path) / "features.json").string()));
  } else {
    dataset = load_dataset(input_path, format_of(input_path));
    if (dataset.spectra.empty()) {
      std::cerr << "warning: dataset is empty, nothing to plot\n";
      return 0;
    }
    MethodPlan plan;
    if (!plan_path.empty()) {
      plan = MethodPlan::from_json(read_file(plan_path));
    } else {
      plan.steps = {step_from_name("SNV")};
      plan.feature.kind = FeatureKind::Pca;
      plan.feature.n_components = std::min<int>(
          2, static_cast<int>(std::min<Eigen::Index>(dataset.size() - 1, dataset.grid().size())));
    }
    processed = apply_chain(dataset, plan.steps).dataset;
    std::vector<int> all(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) all[i] = static_cast<int>(i);
    features = apply_extractor(fit_extractor(plan.feature, processed, all), processed);
  }

  std::vector<std::string> written;
  for (std::size_t i = 0; i < dataset.spectra.size(); ++i) {
    const std::string name = "spectrum_" + dataset.spectra[i].id() + ".svg";
    std::ofstream out(fs::path(out_dir) / name);
    out << svg_overlay(dataset.spectra[i], processed.spectra[i]);
    written.push_back(name);
  }
  if (features.dim() >= 2) {
    std::ofstream out(fs::path(out_dir) / "features_scatter.svg");
    out << svg_scatter(features, dataset.labels);
    written.push_back("features_scatter.svg");
  }

  if (json_mode) {
    json j;
    j["out_dir"] = out_dir;
    j["files"] = written;
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "wrote " << written.size() << " SVG file(s) to " << out_dir << '\n';
  }
  return 0;
}

// ---- compare -----------------------------------------------------------------

int cmd_compare(const std::string& run_dir, const std::string& out_path, bool json_mode) {
  const fs::path base(run_dir);
  const FeatureMatrix features =
      feature_matrix_from_json(read_file((base / "features.json").string()));
  const Split split = split_from_json(read_file((base / "split.json").string()));
  const SpectralDataset dataset =
      load_dataset((base / "preprocessed.json").string(), DatasetFormat::Json);
  const RunReport report = RunReport::from_json(read_file((base / "run_report.json").string()));

  std::vector<const RunReport*> runs{&report};
  std::vector<std::string> names{report.config.max_rounds == 1 ? "llm(single)" : "llm(multi)"};
  std::optional<RunReport> single;
  if (fs::exists(base / "single_report.json")) {
    single = RunReport::from_json(read_file((base / "single_report.json").string()));
    runs.insert(runs.begin(), &*single);
    names.insert(names.begin(), "llm(single)");
  }

  const ComparisonTable table = compare(runs, names, default_baselines(report.task), features,
                                        split, dataset.label_map());
  const std::string rendered = json_mode ? table.to_json() + "\n" : table.to_csv();
  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    std::ofstream out(out_path);
    out << rendered;
    std::cout << "comparison written to " << out_path << '\n';
  }
  return 0;
}

// ---- fixtures ------------------------------------------------------------------

int cmd_fixtures(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path base(out_dir);

  save_kb_records(table_kb_records(), (base / "kb.jsonl").string());

  const RetrievalFixture retrieval = synthetic_retrieval_corpus(11);
  save_kb_records(retrieval.records, (base / "retrieval_corpus.jsonl").string());
  save_labeled_queries(retrieval.queries, (base / "retrieval_queries.jsonl").string());

  SyntheticSpec spec;
  spec.seed = 21;
  const SpectralDataset ink = synthetic_classification_dataset(spec);
  save_dataset(ink, (base / "synthetic_ink.csv").string(), DatasetFormat::Csv);
  save_dataset(synthetic_regression_dataset(80, 31), (base / "synthetic_cod.csv").string(),
               DatasetFormat::Csv);
  save_dataset(build_anomaly_dataset(ink, "class1", 41).dataset,
               (base / "synthetic_anomaly.csv").string(), DatasetFormat::Csv);

  std::ofstream cases((base / "entity_cases.jsonl").string());
  for (const EntityEvalCase& c : synthetic_entity_cases()) {
    json j;
    j["question"] = c.question;
    j["gold_object"] = c.gold_object;
    j["gold_task"] = to_string(c.gold_task);
    cases << j.dump() << '\n';
  }

  std::cout << "fixtures written to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-guided infrared spectral analysis agent"};
  app.require_subcommand(1);
  bool json_mode = false;
  app.add_flag("--json", json_mode, "machine-readable output");
  std::optional<std::uint64_t> global_seed;
  app.add_option("--seed",
                 [&global_seed](const std::vector<std::string>& v) {
                   global_seed = std::stoull(v.front());
                   return true;
                 },
                 "seed for every seeded stage (run pipeline; other commands are "
                 "deterministic by construction)");

  // kb
  CLI::App* kb = app.add_subcommand("kb", "knowledge-base management");
  kb->require_subcommand(1);
  std::string kb_records, kb_engine = "bm25", kb_out = "kb.idx";
  CLI::App* kb_build = kb->add_subcommand("build", "build an index cache from records");
  kb_build->add_option("records", kb_records, "records JSONL")->required();
  kb_build->add_option("--engine", kb_engine, "bow|bm25|tfidf");
  kb_build->add_option("-o,--out", kb_out, "index cache path");

  std::string kbq_index, kbq_text;
  int kbq_topk = 3;
  CLI::App* kb_query_cmd = kb->add_subcommand("query", "query an index cache");
  kb_query_cmd->add_option("index", kbq_index, "index cache")->required();
  kb_query_cmd->add_option("text", kbq_text, "query text")->required();
  kb_query_cmd->add_option("--top-k", kbq_topk, "hits to return");

  std::string kbe_records, kbe_queries;
  int kbe_topk = 3;
  CLI::App* kb_eval = kb->add_subcommand("eval", "mean precision of all three engines");
  kb_eval->add_option("records", kbe_records, "records JSONL")->required();
  kb_eval->add_option("--queries", kbe_queries, "labeled queries JSONL")->required();
  kb_eval->add_option("--top-k", kbe_topk, "cutoff");

  // extract
  std::string ex_question, ex_eval, ex_scripted;
  CLI::App* extract = app.add_subcommand("extract", "entity extraction from a question");
  extract->add_option("question", ex_question, "natural-language question");
  extract->add_option("--eval", ex_eval, "evaluation cases JSONL");
  extract->add_option("--scripted", ex_scripted, "replay transcript instead of calling out");

  // run
  std::string run_config, run_out;
  bool run_single = false, run_mock = false;
  std::optional<int> run_repeats;
  std::optional<std::uint64_t> run_seed;
  CLI::App* run = app.add_subcommand("run", "execute the full pipeline from a config file");
  run->add_option("--config", run_config, "run config JSON")->required();
  run->add_flag("--single-turn", run_single, "single-turn inference (max_rounds=1)");
  run->add_flag("--mock-backend", run_mock, "deterministic nearest-neighbor responder");
  run->add_option("--repeats", [&run_repeats](const std::vector<std::string>& v) {
        run_repeats = std::stoi(v.front());
        return true;
      }, "override repeat count");
  run->add_option("--seed", [&run_seed](const std::vector<std::string>& v) {
        run_seed = std::stoull(v.front());
        return true;
      }, "override seed");
  run->add_option("-o,--out", run_out, "output directory");

  // session
  std::string se_dataset, se_question, se_kb, se_answers, se_out = "plan.json";
  CLI::App* session = app.add_subcommand("session", "interactive method selection");
  session->add_option("--dataset", se_dataset, "spectra CSV/JSON")->required();
  session->add_option("--question", se_question, "analysis question")->required();
  session->add_option("--kb", se_kb, "knowledge-base records JSONL")->required();
  session->add_option("--answers", se_answers, "scripted answers file (one per line)");
  session->add_option("-o,--out", se_out, "plan output path");

  // plot
  std::string pl_input, pl_plan, pl_out = "plots";
  CLI::App* plot = app.add_subcommand("plot", "emit SVG plots for spectra or a run directory");
  plot->add_option("input", pl_input, "dataset file or run output directory")->required();
  plot->add_option("--plan", pl_plan, "method plan JSON for preprocessing");
  plot->add_option("--out", pl_out, "output directory");

  // compare
  std::string cp_dir, cp_out;
  CLI::App* compare_cmd = app.add_subcommand("compare", "baseline table from a run directory");
  compare_cmd->add_option("run_dir", cp_dir, "run output directory")->required();
  compare_cmd->add_option("-o,--out", cp_out, "write CSV here instead of stdout");

  // fixtures
  std::string fx_out = "data";
  CLI::App* fixtures = app.add_subcommand("fixtures", "regenerate the bundled fixtures");
  fixtures->add_option("--out", fx_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (kb_build->parsed()) return cmd_kb_build(kb_records, kb_engine, kb_out, json_mode);
    if (kb_query_cmd->parsed()) return cmd_kb_query(kbq_index, kbq_text, kbq_topk, json_mode);
    if (kb_eval->parsed()) return cmd_kb_eval(kbe_records, kbe_queries, kbe_topk, json_mode);
    if (extract->parsed()) {
      if (ex_question.empty() && ex_eval.empty())
        raise(ErrorCode::ConfigError, "extract needs a question or --eval");
      return cmd_extract(ex_question, ex_eval, ex_scripted, json_mode);
    }
    if (run->parsed())
      return cmd_run(run_config, run_single, run_mock, run_repeats,
                     run_seed ? run_seed : global_seed, run_out, json_mode);
    if (session->parsed()) return cmd_session(se_dataset, se_question, se_kb, se_answers, se_out);
    if (plot->parsed()) return cmd_plot(pl_input, pl_plan, pl_out, json_mode);
    if (compare_cmd->parsed()) return cmd_compare(cp_dir, cp_out, json_mode);
    if (fixtures->parsed()) return cmd_fixtures(fx_out);
  } catch (const Error& e) {
    emit_error(e, json_mode);
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
