#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "specagent/preprocess.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SPECAGENT_CLI_PATH;
const fs::path kData = SPECAGENT_DATA_DIR;

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_shell(const std::string& command) {
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult result;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) result.output.append(buf, n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

CliResult run_cli(const std::string& args) { return run_shell(kCli + " " + args); }

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "specagent_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_run_config(const fs::path& path, int repeats) {
  json cfg;
  cfg["version"] = 1;
  cfg["dataset"] = (kData / "synthetic_ink.csv").string();
  cfg["format"] = "csv";
  cfg["kb_query"] = "stamp pad ink";
  cfg["kb_path"] = (kData / "kb.jsonl").string();
  cfg["seed"] = 7;
  cfg["reasoning"] = {{"repeats", repeats}, {"max_rounds", 5}};
  std::ofstream out(path);
  out << cfg.dump(2);
}

}  // namespace

TEST_CASE("kb build writes an index cache with the SKB1 magic") {
  const fs::path dir = fresh_dir("kb_build");
  const CliResult r = run_cli("kb build " + (kData / "kb.jsonl").string() +
                              " --engine bm25 -o " + (dir / "kb.idx").string());
  CHECK(r.exit_code == 0);
  std::ifstream idx(dir / "kb.idx", std::ios::binary);
  char magic[4] = {};
  idx.read(magic, 4);
  CHECK(std::string(magic, 4) == "SKB1");
}

TEST_CASE("kb query returns at most top-k hits with descending scores") {
  const fs::path dir = fresh_dir("kb_query");
  run_cli("kb build " + (kData / "kb.jsonl").string() + " -o " + (dir / "kb.idx").string());
  const CliResult r =
      run_cli("--json kb query " + (dir / "kb.idx").string() + " \"pu er tea\" --top-k 3");
  CHECK(r.exit_code == 0);

  std::vector<json> hits;
  std::istringstream lines(r.output);
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty() && line.front() == '{') hits.push_back(json::parse(line));
  REQUIRE(!hits.empty());
  CHECK(hits.size() <= 3);
  CHECK(hits[0].at("id").get<std::string>().rfind("kb_tea", 0) == 0);
  for (std::size_t i = 1; i < hits.size(); ++i)
    CHECK(hits[i].at("score").get<double>() <= hits[i - 1].at("score").get<double>());
}

TEST_CASE("kb eval reports three precisions with bag-of-words lowest") {
  const CliResult r = run_cli("--json kb eval " + (kData / "retrieval_corpus.jsonl").string() +
                              " --queries " + (kData / "retrieval_queries.jsonl").string());
  REQUIRE(r.exit_code == 0);
  const json scores = json::parse(r.output);
  const double bow = scores.at("bow").get<double>();
  CHECK(bow < scores.at("bm25").get<double>());
  CHECK(bow < scores.at("tfidf").get<double>());
}

TEST_CASE("a mock-backend run writes deterministic artifacts") {
  const fs::path dir = fresh_dir("run");
  write_run_config(dir / "config.json", 3);

  const std::string base = "run --config " + (dir / "config.json").string() +
                           " --mock-backend -o ";
  const CliResult first = run_cli(base + (dir / "out1").string());
  CHECK(first.exit_code == 0);
  for (const char* name : {"run_report.json", "run_report.csv", "comparison.csv",
                           "transcript.jsonl", "plan.json", "features.json", "split.json",
                           "preprocessed.json", "single_report.json", "quality.json"})
    CHECK(fs::exists(dir / "out1" / name));

  const CliResult second = run_cli(base + (dir / "out2").string());
  CHECK(second.exit_code == 0);
  CHECK(slurp(dir / "out1" / "run_report.json") == slurp(dir / "out2" / "run_report.json"));
  CHECK(slurp(dir / "out1" / "comparison.csv") == slurp(dir / "out2" / "comparison.csv"));

  // the resolved plan came from the ink fixture records
  const specagent::MethodPlan plan =
      specagent::MethodPlan::from_json(slurp(dir / "out1" / "plan.json"));
  CHECK(specagent::chain_to_string(plan.steps) == "SavitzkyGolay+SNV");
}

TEST_CASE("a run without credentials fails fast unless mocked") {
  const fs::path dir = fresh_dir("run_nokey");
  write_run_config(dir / "config.json", 2);
  const CliResult r = run_shell("env -u LLM_API_KEY " + kCli + " run --config " +
                                (dir / "config.json").string() + " -o " +
                                (dir / "out").string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("LLM_API_KEY") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "run_report.json"));
}

TEST_CASE("--single-turn runs one round and says so in the report") {
  const fs::path dir = fresh_dir("run_single");
  write_run_config(dir / "config.json", 2);
  const CliResult r = run_cli("run --config " + (dir / "config.json").string() +
                              " --mock-backend --single-turn -o " + (dir / "out").string());
  CHECK(r.exit_code == 0);
  const json report = json::parse(slurp(dir / "out" / "run_report.json"));
  CHECK(report.at("single_turn") == true);
  CHECK(report.at("config").at("max_rounds") == 1);
  for (const json& rep : report.at("repeats"))
    CHECK(rep.at("turns").size() == 1);
}

TEST_CASE("scripted sessions accept the first candidate") {
  const fs::path dir = fresh_dir("session");
  {
    std::ofstream answers(dir / "answers.txt");
    answers << "1\naccept\n";
  }
  const CliResult r = run_cli("session --dataset " + (kData / "synthetic_ink.csv").string() +
                              " --question \"classify stamp pad ink\" --kb " +
                              (kData / "kb.jsonl").string() + " --answers " +
                              (dir / "answers.txt").string() + " -o " +
                              (dir / "plan.json").string());
  CHECK(r.exit_code == 0);
  const specagent::MethodPlan plan = specagent::MethodPlan::from_json(slurp(dir / "plan.json"));
  CHECK(specagent::chain_to_string(plan.steps) == "SavitzkyGolay+SNV");
  CHECK(plan.feature.kind == specagent::FeatureKind::Pca);
  CHECK_FALSE(plan.provenance.empty());
  CHECK(plan.provenance[0].rfind("kb_ink", 0) == 0);
}

TEST_CASE("session parameter edits re-run the preview and land in the plan") {
  const fs::path dir = fresh_dir("session_edit");
  {
    std::ofstream answers(dir / "answers.txt");
    answers << "1\nm=7\naccept\n";
  }
  const CliResult r = run_cli("session --dataset " + (kData / "synthetic_ink.csv").string() +
                              " --question \"classify stamp pad ink\" --kb " +
                              (kData / "kb.jsonl").string() + " --answers " +
                              (dir / "answers.txt").string() + " -o " +
                              (dir / "plan.json").string());
  CHECK(r.exit_code == 0);
  // preview line printed once per edit round
  CHECK(std::count(r.output.begin(), r.output.end(), '\n') > 4);
  const specagent::MethodPlan plan = specagent::MethodPlan::from_json(slurp(dir / "plan.json"));
  CHECK(plan.steps[0].half_window == 7);
}

TEST_CASE("rejecting all candidates allows a manual chain") {
  const fs::path dir = fresh_dir("session_manual");
  {
    std::ofstream answers(dir / "answers.txt");
    answers << "manual\nSNV+FD\nPCA\naccept\n";
  }
  const CliResult r = run_cli("session --dataset " + (kData / "synthetic_ink.csv").string() +
                              " --question \"classify stamp pad ink\" --kb " +
                              (kData / "kb.jsonl").string() + " --answers " +
                              (dir / "answers.txt").string() + " -o " +
                              (dir / "plan.json").string());
  CHECK(r.exit_code == 0);
  const specagent::MethodPlan plan = specagent::MethodPlan::from_json(slurp(dir / "plan.json"));
  CHECK(specagent::chain_to_string(plan.steps) == "SNV+FirstDerivative");
  CHECK(plan.provenance == std::vector<std::string>{"manual"});
}

TEST_CASE("an aborted session leaves no plan and exits nonzero") {
  const fs::path dir = fresh_dir("session_abort");
  {
    std::ofstream answers(dir / "answers.txt");
    answers << "1\n";  // input ends before accept
  }
  const CliResult r = run_cli("session --dataset " + (kData / "synthetic_ink.csv").string() +
                              " --question \"classify stamp pad ink\" --kb " +
                              (kData / "kb.jsonl").string() + " --answers " +
                              (dir / "answers.txt").string() + " -o " +
                              (dir / "plan.json").string());
  CHECK(r.exit_code == 1);
  CHECK_FALSE(fs::exists(dir / "plan.json"));
}

TEST_CASE("plot emits one overlay per spectrum plus a scatter, deterministically") {
  const fs::path dir = fresh_dir("plot");
  const std::string cmd = "plot " + (kData / "synthetic_ink.csv").string() + " --out ";
  const CliResult first = run_cli(cmd + (dir / "a").string());
  CHECK(first.exit_code == 0);

  std::size_t svg_count = 0;
  for (const auto& entry : fs::directory_iterator(dir / "a"))
    if (entry.path().extension() == ".svg") ++svg_count;
  CHECK(svg_count == 61);  // 60 spectra + 1 scatter
  CHECK(fs::exists(dir / "a" / "features_scatter.svg"));

  const CliResult second = run_cli(cmd + (dir / "b").string());
  CHECK(second.exit_code == 0);
  CHECK(slurp(dir / "a" / "features_scatter.svg") == slurp(dir / "b" / "features_scatter.svg"));
  CHECK(slurp(dir / "a" / "spectrum_c1s01.svg") == slurp(dir / "b" / "spectrum_c1s01.svg"));
}

TEST_CASE("plot reads preprocessed data and features from a run directory") {
  const fs::path dir = fresh_dir("plot_rundir");
  write_run_config(dir / "config.json", 2);
  REQUIRE(run_cli("run --config " + (dir / "config.json").string() + " --mock-backend -o " +
                  (dir / "out").string())
              .exit_code == 0);
  const CliResult r =
      run_cli("plot " + (dir / "out").string() + " --out " + (dir / "plots").string());
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "plots" / "features_scatter.svg"));
  std::size_t svg_count = 0;
  for (const auto& entry : fs::directory_iterator(dir / "plots"))
    if (entry.path().extension() == ".svg") ++svg_count;
  CHECK(svg_count == 61);  // 60 preprocessed spectra + the scatter
}

TEST_CASE("plotting an empty dataset warns and exits zero") {
  const fs::path dir = fresh_dir("plot_empty");
  {
    std::ofstream empty(dir / "empty.json");
    empty << R"({"material":"none","task":"classification","wavelengths":[],"samples":[]})";
  }
  const CliResult r =
      run_cli("plot " + (dir / "empty.json").string() + " --out " + (dir / "plots").string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("warning") != std::string::npos);
}

TEST_CASE("compare rebuilds the table from a run directory") {
  const fs::path dir = fresh_dir("compare");
  write_run_config(dir / "config.json", 2);
  REQUIRE(run_cli("run --config " + (dir / "config.json").string() + " --mock-backend -o " +
                  (dir / "out").string())
              .exit_code == 0);
  const CliResult r = run_cli("compare " + (dir / "out").string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("method,metric,mean,std") != std::string::npos);
  CHECK(r.output.find("llm(multi),accuracy,") != std::string::npos);
  CHECK(r.output.find("llm(single),accuracy,") != std::string::npos);
  CHECK(r.output.find("knn") != std::string::npos);

  // the regenerated table matches the one the run wrote
  CHECK(r.output == slurp(dir / "out" / "comparison.csv"));
}

TEST_CASE("the regression pipeline runs end to end with its task metrics") {
  const fs::path dir = fresh_dir("run_cod");
  {
    json cfg;
    cfg["version"] = 1;
    cfg["dataset"] = (kData / "synthetic_cod.csv").string();
    cfg["kb_query"] = "waste water cod";
    cfg["kb_path"] = (kData / "kb.jsonl").string();
    cfg["seed"] = 3;
    cfg["reasoning"] = {{"repeats", 2}};
    std::ofstream out(dir / "config.json");
    out << cfg.dump(2);
  }
  const CliResult r = run_cli("--json run --config " + (dir / "config.json").string() +
                              " --mock-backend -o " + (dir / "out").string());
  REQUIRE(r.exit_code == 0);
  const json summary = json::parse(r.output);
  CHECK(summary.at("task") == "regression");
  CHECK(summary.at("aggregate_mean").contains("r2"));
  CHECK(summary.at("aggregate_mean").contains("rmse"));

  const specagent::MethodPlan plan =
      specagent::MethodPlan::from_json(slurp(dir / "out" / "plan.json"));
  CHECK(specagent::chain_to_string(plan.steps) == "AsLS");
  CHECK(plan.feature.kind == specagent::FeatureKind::LambertBeerPearson);

  const std::string comparison = slurp(dir / "out" / "comparison.csv");
  CHECK(comparison.find("lr,r2,") != std::string::npos);
  CHECK(comparison.find("plsr") != std::string::npos);
}

TEST_CASE("the anomaly pipeline runs end to end with auc and precision") {
  const fs::path dir = fresh_dir("run_anomaly");
  {
    json cfg;
    cfg["version"] = 1;
    cfg["dataset"] = (kData / "synthetic_anomaly.csv").string();
    cfg["kb_query"] = "stamp pad ink";
    cfg["kb_path"] = (kData / "kb.jsonl").string();
    cfg["seed"] = 5;
    cfg["reasoning"] = {{"repeats", 2}};
    std::ofstream out(dir / "config.json");
    out << cfg.dump(2);
  }
  const CliResult r = run_cli("--json run --config " + (dir / "config.json").string() +
                              " --mock-backend -o " + (dir / "out").string());
  REQUIRE(r.exit_code == 0);
  const json summary = json::parse(r.output);
  CHECK(summary.at("task") == "anomaly_detection");
  CHECK(summary.at("aggregate_mean").contains("auc"));
  CHECK(summary.at("aggregate_mean").contains("precision"));

  const std::string comparison = slurp(dir / "out" / "comparison.csv");
  CHECK(comparison.find("oc-mahalanobis") != std::string::npos);
  CHECK(comparison.find("oc-knn") != std::string::npos);
}

TEST_CASE("config errors exit with status 1 and a machine-readable payload") {
  const fs::path dir = fresh_dir("bad_config");
  {
    std::ofstream cfg(dir / "config.json");
    cfg << R"({"dataset": "/nonexistent.csv", "kb_query": "x", "kb_path": "/nope.jsonl"})";
  }
  const CliResult r = run_cli("--json run --config " + (dir / "config.json").string() +
                              " --mock-backend -o " + (dir / "out").string());
  CHECK(r.exit_code == 1);
  const json err = json::parse(r.output);
  CHECK(err.at("error") == "ConfigError");
}

TEST_CASE("provider failures exit with status 3") {
  const fs::path dir = fresh_dir("provider_error");
  {
    std::ofstream transcript(dir / "empty.jsonl");  // replay mock with no entries
  }
  const CliResult r = run_cli("--json extract \"classify these inks\" --scripted " +
                              (dir / "empty.jsonl").string());
  CHECK(r.exit_code == 3);
  const json err = json::parse(r.output);
  CHECK(err.at("error") == "ProviderError");
}

TEST_CASE("a --seed override changes the run and is reproducible") {
  const fs::path dir = fresh_dir("seed_override");
  write_run_config(dir / "config.json", 2);
  const std::string base = "run --config " + (dir / "config.json").string() +
                           " --mock-backend -o ";
  REQUIRE(run_cli("--seed 99 " + base + (dir / "a").string()).exit_code == 0);
  REQUIRE(run_cli("--seed 99 " + base + (dir / "b").string()).exit_code == 0);
  CHECK(slurp(dir / "a" / "run_report.json") == slurp(dir / "b" / "run_report.json"));
  const json report = json::parse(slurp(dir / "a" / "run_report.json"));
  CHECK(report.at("config").at("seed") == 99);
}
