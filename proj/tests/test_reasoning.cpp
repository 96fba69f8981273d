#include <doctest.h>

#include <set>
#include <sstream>

#include "specagent/reasoning.hpp"
#include "specagent/rng.hpp"

using namespace specagent;

namespace {

LlmClient client_for(std::shared_ptr<LlmBackend> backend, int context_limit = 1 << 20) {
  LlmConfig cfg;
  cfg.model = "mock";
  cfg.context_limit = context_limit;
  return LlmClient(cfg, std::move(backend));
}

// two well-separated 2-D blobs, ids g<i> (label "good") and b<i> (label "bad")
struct BlobFixture {
  FeatureMatrix features;
  Split split;
  std::map<std::string, Label> truth;
};

BlobFixture separable_blobs(int per_class, std::uint64_t seed) {
  Rng rng(seed);
  BlobFixture fx;
  fx.features.feature_names = {"f1", "f2"};
  fx.features.rows.resize(2 * per_class, 2);
  for (int i = 0; i < per_class; ++i) {
    fx.features.rows(i, 0) = rng.normal(0.0, 0.3);
    fx.features.rows(i, 1) = rng.normal(0.0, 0.3);
    fx.features.ids.push_back("g" + std::to_string(i));
    fx.truth["g" + std::to_string(i)] = Label::of_class("good");
  }
  for (int i = 0; i < per_class; ++i) {
    fx.features.rows(per_class + i, 0) = rng.normal(6.0, 0.3);
    fx.features.rows(per_class + i, 1) = rng.normal(6.0, 0.3);
    fx.features.ids.push_back("b" + std::to_string(i));
    fx.truth["b" + std::to_string(i)] = Label::of_class("bad");
  }
  const int h = per_class / 2, q = per_class / 4;
  for (int c = 0; c < 2; ++c) {
    const int base = c * per_class;
    for (int i = 0; i < h; ++i) fx.split.train.push_back(base + i);
    for (int i = h; i < h + q; ++i) fx.split.validation.push_back(base + i);
    for (int i = h + q; i < per_class; ++i) fx.split.test.push_back(base + i);
  }
  return fx;
}

FeatureMatrix features_with_ids(const std::vector<std::string>& ids) {
  FeatureMatrix fm;
  fm.feature_names = {"f1"};
  fm.ids = ids;
  fm.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), 1);
  for (Eigen::Index i = 0; i < fm.rows.rows(); ++i) fm.rows(i, 0) = static_cast<double>(i);
  return fm;
}

}  // namespace

// --- prompt construction ------------------------------------------------------

TEST_CASE("prompts carry labeled exemplars, unlabeled queries and the schema") {
  const FeatureMatrix fm = features_with_ids({"e1", "e2", "q1"});
  std::map<std::string, Label> truth;
  truth["e1"] = Label::of_class("alpha");
  truth["e2"] = Label::of_class("beta");
  truth["q1"] = Label::of_class("alpha");

  const std::vector<ChatMessage> prompt =
      build_prompt(TaskType::Classification, fm, {"e1", "e2"}, truth, {"q1"});
  REQUIRE(prompt.size() == 2);
  CHECK(prompt[0].role == Role::System);
  CHECK(prompt[0].content.find("Task: classification") != std::string::npos);
  CHECK(prompt[0].content.find("\"label\"") != std::string::npos);

  const std::string& body = prompt[1].content;
  CHECK(body.find("e1 | 0 | alpha") != std::string::npos);
  CHECK(body.find("e2 | 1 | beta") != std::string::npos);
  CHECK(body.find("q1 | 2\n") != std::string::npos);
  // the query section never carries a label
  const std::size_t predict_at = body.find("Predict:");
  REQUIRE(predict_at != std::string::npos);
  CHECK(body.find("alpha", predict_at) == std::string::npos);

  const std::vector<ChatMessage> again =
      build_prompt(TaskType::Classification, fm, {"e1", "e2"}, truth, {"q1"});
  CHECK(again[0].content == prompt[0].content);
  CHECK(again[1].content == prompt[1].content);
}

TEST_CASE("anomaly prompts demand both flag and score") {
  const FeatureMatrix fm = features_with_ids({"e1", "q1"});
  std::map<std::string, Label> truth;
  truth["e1"] = Label::of_flag(true);
  truth["q1"] = Label::of_flag(false);
  const std::vector<ChatMessage> prompt =
      build_prompt(TaskType::AnomalyDetection, fm, {"e1"}, truth, {"q1"});
  CHECK(prompt[0].content.find("\"flag\"") != std::string::npos);
  CHECK(prompt[0].content.find("\"score\"") != std::string::npos);
}

TEST_CASE("prompt construction respects the token budget") {
  const FeatureMatrix fm = features_with_ids({"e1", "q1"});
  std::map<std::string, Label> truth;
  truth["e1"] = Label::of_class("a");
  try {
    build_prompt(TaskType::Classification, fm, {"e1"}, truth, {"q1"}, 10);
    FAIL("expected BudgetExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BudgetExceeded);
  }
}

// --- response parsing -------------------------------------------------------

TEST_CASE("valid prediction arrays parse to a complete map") {
  const ParsedPredictions out = parse_predictions(
      TaskType::Classification,
      R"([{"id":"a","label":"x"},{"id":"b","label":"y"}])", {"a", "b"});
  CHECK(out.predictions.at("a").label == "x");
  CHECK(out.predictions.at("b").label == "y");
  CHECK(out.warnings.empty());
}

TEST_CASE("missing and duplicate ids are named") {
  try {
    parse_predictions(TaskType::Classification, R"([{"id":"a","label":"x"}])", {"a", "b"});
    FAIL("expected MissingIds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingIds);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  try {
    parse_predictions(TaskType::Classification,
                      R"([{"id":"a","label":"x"},{"id":"a","label":"y"}])", {"a"});
    FAIL("expected DuplicateIds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DuplicateIds);
  }
}

TEST_CASE("fenced json responses parse") {
  const ParsedPredictions out = parse_predictions(
      TaskType::Regression, "```json\n[{\"id\":\"a\",\"value\":3.5}]\n```", {"a"});
  CHECK(out.predictions.at("a").value == 3.5);
}

TEST_CASE("anomaly scores clamp with a warning and fall back to flags") {
  const ParsedPredictions clamped = parse_predictions(
      TaskType::AnomalyDetection, R"([{"id":"a","flag":false,"score":1.7}])", {"a"});
  CHECK(clamped.predictions.at("a").score == 1.0);
  REQUIRE_FALSE(clamped.warnings.empty());

  const ParsedPredictions fallback = parse_predictions(
      TaskType::AnomalyDetection, R"([{"id":"a","flag":false},{"id":"b","flag":true}])",
      {"a", "b"});
  CHECK(fallback.predictions.at("a").score == 1.0);  // anomaly
  CHECK(fallback.predictions.at("b").score == 0.0);  // normal
}

TEST_CASE("non-finite regression values are unparseable") {
  CHECK_THROWS_AS(parse_predictions(TaskType::Regression,
                                    R"([{"id":"a","value":1e999}])", {"a"}),
                  Error);
}

// --- metrics vs brute force ---------------------------------------------------

TEST_CASE("accuracy counts exact matches") {
  std::map<std::string, std::string> truth = {{"a", "x"}, {"b", "y"}, {"c", "z"}};
  CHECK(accuracy({{"a", "x"}, {"b", "y"}, {"c", "z"}}, truth) == 1.0);
  CHECK(accuracy({{"a", "q"}, {"b", "q"}, {"c", "q"}}, truth) == 0.0);

  std::map<std::string, std::string> preds, truth10;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "s" + std::to_string(i);
    truth10[id] = "t";
    preds[id] = i < 7 ? "t" : "f";
  }
  CHECK(accuracy(preds, truth10) == doctest::Approx(0.7));

  CHECK_THROWS_AS(accuracy({{"a", "x"}}, truth), Error);
}

TEST_CASE("auc handles separation, ties, and matches the pairwise loop") {
  std::map<std::string, double> scores = {{"p1", 0.9}, {"p2", 0.8}, {"n1", 0.2}, {"n2", 0.1}};
  std::map<std::string, bool> labels = {{"p1", true}, {"p2", true}, {"n1", false}, {"n2", false}};
  CHECK(auc(scores, labels) == 1.0);

  std::map<std::string, double> flat = {{"p1", 0.5}, {"n1", 0.5}, {"p2", 0.5}, {"n2", 0.5}};
  CHECK(auc(flat, labels) == 0.5);

  Rng rng(66);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(4, 20);
    std::map<std::string, double> s;
    std::map<std::string, bool> pos;
    int n_pos = 0;
    for (int i = 0; i < n; ++i) {
      const std::string id = "i" + std::to_string(i);
      // quantized scores force plenty of ties
      s[id] = rng.uniform_int(0, 5) / 5.0;
      pos[id] = rng.uniform() < 0.5;
      if (pos[id]) ++n_pos;
    }
    if (n_pos == 0 || n_pos == n) continue;

    // brute-force pairwise oracle with half-credit ties
    double wins = 0.0;
    long pairs = 0;
    for (const auto& [pi, ps] : s) {
      if (!pos.at(pi)) continue;
      for (const auto& [ni, ns] : s) {
        if (pos.at(ni)) continue;
        ++pairs;
        if (ps > ns) wins += 1.0;
        else if (ps == ns) wins += 0.5;
      }
    }
    CHECK(auc(s, pos) == doctest::Approx(wins / pairs).epsilon(1e-12));
  }

  std::map<std::string, double> single = {{"p1", 0.5}};
  std::map<std::string, bool> single_label = {{"p1", true}};
  CHECK_THROWS_AS(auc(single, single_label), Error);
}

TEST_CASE("r-squared spans perfect, mean, and worse-than-mean predictors") {
  std::map<std::string, double> truth = {{"a", 1.0}, {"b", 2.0}, {"c", 3.0}, {"d", 4.0}};
  CHECK(r_squared(truth, truth) == doctest::Approx(1.0));

  std::map<std::string, double> at_mean;
  for (const auto& [id, v] : truth) at_mean[id] = 2.5;
  CHECK(r_squared(at_mean, truth) == doctest::Approx(0.0));

  // all-zero predictions: ss_res = 1+4+9+16 = 30, ss_tot = 5 -> R^2 = -5
  std::map<std::string, double> zeros;
  for (const auto& [id, v] : truth) zeros[id] = 0.0;
  CHECK(r_squared(zeros, truth) == doctest::Approx(-5.0));

  std::map<std::string, double> constant = {{"a", 2.0}, {"b", 2.0}};
  CHECK_THROWS_AS(r_squared(constant, constant), Error);  // ConstantTruth
}

TEST_CASE("rmse matches hand arithmetic") {
  std::map<std::string, double> truth = {{"a", 1.0}, {"b", 2.0}, {"c", 4.0}};
  CHECK(rmse(truth, truth) == 0.0);

  std::map<std::string, double> offset;
  for (const auto& [id, v] : truth) offset[id] = v + 2.5;
  CHECK(rmse(offset, truth) == doctest::Approx(2.5));

  std::map<std::string, double> preds = {{"a", 2.0}, {"b", 0.0}, {"c", 5.0}};
  CHECK(rmse(preds, truth) == doctest::Approx(std::sqrt((1.0 + 4.0 + 1.0) / 3.0)));
}

TEST_CASE("flag precision tracks anomaly calls") {
  std::map<std::string, bool> truth = {{"a", true}, {"b", false}, {"c", true}, {"d", false}};
  CHECK(flag_precision({{"a", true}, {"b", true}, {"c", false}, {"d", false}}, truth) ==
        doctest::Approx(0.5));
  CHECK(flag_precision({{"a", false}, {"b", false}, {"c", false}, {"d", false}}, truth) == 0.0);
}

// --- hard samples -------------------------------------------------------------

TEST_CASE("no errors, no hard samples") {
  ReasoningConfig cfg;
  Predictions preds;
  std::map<std::string, Label> truth;
  for (int i = 0; i < 5; ++i) {
    const std::string id = "v" + std::to_string(i);
    preds[id].label = "x";
    truth[id] = Label::of_class("x");
  }
  CHECK(select_hard_samples(TaskType::Classification, preds, truth, {}, cfg).empty());
}

TEST_CASE("classification caps hard samples at ten by descending id") {
  ReasoningConfig cfg;
  Predictions preds;
  std::map<std::string, Label> truth;
  for (int i = 0; i < 12; ++i) {
    const std::string id = "v" + std::to_string(10 + i);  // v10..v21
    preds[id].label = "wrong";
    truth[id] = Label::of_class("right");
  }
  const std::vector<std::string> hard =
      select_hard_samples(TaskType::Classification, preds, truth, {}, cfg);
  REQUIRE(hard.size() == 10);
  CHECK(hard.front() == "v21");
  CHECK(std::is_sorted(hard.begin(), hard.end(), std::greater<>()));
  CHECK(std::find(hard.begin(), hard.end(), "v10") == hard.end());
  CHECK(std::find(hard.begin(), hard.end(), "v11") == hard.end());
}

TEST_CASE("regression hard samples exceed the rmse and rank by residual") {
  ReasoningConfig cfg;
  cfg.hard_sample_top_k = 2;
  Predictions preds;
  std::map<std::string, Label> truth;
  const std::vector<std::pair<std::string, double>> residuals = {
      {"r1", 0.1}, {"r2", 0.2}, {"r3", 3.0}, {"r4", 5.0}, {"r5", 4.0}};
  for (const auto& [id, r] : residuals) {
    truth[id] = Label::of_value(10.0);
    preds[id].value = 10.0 + r;
  }
  // rmse = sqrt((0.01+0.04+9+25+16)/5) = sqrt(10.01) ~ 3.16: r4 and r5 qualify
  const std::vector<std::string> hard =
      select_hard_samples(TaskType::Regression, preds, truth, {}, cfg);
  REQUIRE(hard.size() == 2);
  CHECK(hard[0] == "r4");
  CHECK(hard[1] == "r5");
}

TEST_CASE("anomaly hard samples are the misordered pair participants") {
  ReasoningConfig cfg;
  Predictions preds;
  std::map<std::string, Label> truth;
  // anomalies (flag false in truth) should score higher than normals
  truth["a1"] = Label::of_flag(false);
  truth["a2"] = Label::of_flag(false);
  truth["n1"] = Label::of_flag(true);
  truth["n2"] = Label::of_flag(true);
  preds["a1"].score = 0.9;  // fine
  preds["a2"].score = 0.1;  // inverted against n1
  preds["n1"].score = 0.5;
  preds["n2"].score = 0.05;

  // brute force: misordered pairs are (a2, n1) only
  const std::vector<std::string> hard =
      select_hard_samples(TaskType::AnomalyDetection, preds, truth, {}, cfg);
  REQUIRE(hard.size() == 2);
  CHECK(((hard[0] == "a2" && hard[1] == "n1") || (hard[0] == "n1" && hard[1] == "a2")));
}

TEST_CASE("exemplar members never reappear as hard samples") {
  ReasoningConfig cfg;
  Predictions preds;
  std::map<std::string, Label> truth;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "v" + std::to_string(i);
    preds[id].label = "wrong";
    truth[id] = Label::of_class("right");
  }
  const std::vector<std::string> hard =
      select_hard_samples(TaskType::Classification, preds, truth, {"v0", "v2"}, cfg);
  CHECK(std::find(hard.begin(), hard.end(), "v0") == hard.end());
  CHECK(std::find(hard.begin(), hard.end(), "v2") == hard.end());
  CHECK(hard.size() == 2);
}

// --- the nearest-neighbor mock ---------------------------------------------------

TEST_CASE("the mock answers 1-NN classification from the prompt text") {
  const std::vector<ChatMessage> prompt = {
      {Role::System, "You are a spectroscopy analyst. Task: classification.\n"},
      {Role::User,
       "Labeled examples:\ne1 | 0.0,0.0 | near\ne2 | 10.0,10.0 | far\n"
       "Predict:\nq1 | 1.0,1.0\nq2 | 9.0,9.0\n"}};
  NearestNeighborBackend mock;
  LlmConfig cfg;
  const ParsedPredictions out =
      parse_predictions(TaskType::Classification, mock.complete(cfg, prompt), {"q1", "q2"});
  CHECK(out.predictions.at("q1").label == "near");
  CHECK(out.predictions.at("q2").label == "far");
}

TEST_CASE("the mock regresses with inverse-distance weights over 3 neighbors") {
  const std::vector<ChatMessage> prompt = {
      {Role::System, "Task: regression.\n"},
      {Role::User,
       "Labeled examples:\ne1 | 0.0 | 10\ne2 | 2.0 | 20\ne3 | 4.0 | 40\ne4 | 100.0 | 999\n"
       "Predict:\nq1 | 1.0\nq2 | 2.0\n"}};
  NearestNeighborBackend mock;
  LlmConfig cfg;
  const ParsedPredictions out =
      parse_predictions(TaskType::Regression, mock.complete(cfg, prompt), {"q1", "q2"});
  // q1 at 1.0: neighbors e1 (d=1), e2 (d=1), e3 (d=3): (10 + 20 + 40/3) / (1+1+1/3)
  const double expected = (10.0 + 20.0 + 40.0 / 3.0) / (2.0 + 1.0 / 3.0);
  CHECK(out.predictions.at("q1").value == doctest::Approx(expected).epsilon(1e-12));
  // q2 sits exactly on e2
  CHECK(out.predictions.at("q2").value == doctest::Approx(20.0));
}

TEST_CASE("the mock scores anomalies by distance to the nearest normal exemplar") {
  const std::vector<ChatMessage> prompt = {
      {Role::System, "Task: anomaly_detection.\n"},
      {Role::User,
       "Labeled examples:\ne1 | 0.0 | true\ne2 | 8.0 | false\n"
       "Predict:\nq1 | 0.5\nq2 | 7.5\n"}};
  NearestNeighborBackend mock;
  LlmConfig cfg;
  const ParsedPredictions out = parse_predictions(TaskType::AnomalyDetection,
                                                  mock.complete(cfg, prompt), {"q1", "q2"});
  CHECK(out.predictions.at("q1").flag == true);
  CHECK(out.predictions.at("q2").flag == false);
  CHECK(out.predictions.at("q1").score == doctest::Approx(0.5 / 1.5));
  CHECK(out.predictions.at("q2").score == doctest::Approx(7.5 / 8.5));
}

// --- the loop ------------------------------------------------------------

TEST_CASE("separable blobs converge with an empty hard list and perfect accuracy") {
  const BlobFixture fx = separable_blobs(16, 5);
  ReasoningConfig cfg;
  cfg.repeats = 1;
  cfg.seed = 3;
  LlmClient client = client_for(std::make_shared<NearestNeighborBackend>());

  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  REQUIRE(report.repeats.size() == 1);
  const RepeatResult& r = report.repeats[0];
  REQUIRE(r.ok);
  CHECK(r.convergence_round <= 2);
  CHECK(r.stop_reason == "no_hard_samples");
  CHECK(r.test_metrics.at("accuracy") == 1.0);
  CHECK(report.aggregate_mean.at("accuracy") == 1.0);
  CHECK(report.aggregate_std.at("accuracy") == 0.0);
}

TEST_CASE("single_turn equals run_multi_turn with one round, exactly") {
  const BlobFixture fx = separable_blobs(16, 8);
  ReasoningConfig cfg;
  cfg.repeats = 2;
  cfg.seed = 11;

  LlmClient a = client_for(std::make_shared<NearestNeighborBackend>());
  const RunReport single = single_turn(TaskType::Classification, fx.features, fx.split,
                                       fx.truth, a, cfg);
  ReasoningConfig one = cfg;
  one.max_rounds = 1;
  LlmClient b = client_for(std::make_shared<NearestNeighborBackend>());
  const RunReport multi_as_one =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, b, one);
  CHECK(single.to_json() == multi_as_one.to_json());

  for (const RepeatResult& r : single.repeats) {
    REQUIRE(r.turns.size() == 1);
    CHECK(r.turns[0].exemplar_ids.size() == fx.split.train.size());
  }
}

TEST_CASE("single turn spends one validation call and one test call per repeat") {
  const BlobFixture fx = separable_blobs(16, 9);
  ReasoningConfig cfg;
  cfg.repeats = 3;
  LlmClient client = client_for(std::make_shared<NearestNeighborBackend>());
  single_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  CHECK(client.total_attempts() == 2 * 3);
}

TEST_CASE("the printed convergence inequality stops a 0.005 improvement") {
  // 8 train exemplars, 200 validation ids, 2 test ids; scripted responses
  // produce validation accuracy 0.70 then 0.705
  std::vector<std::string> ids;
  std::map<std::string, Label> truth;
  Split split;
  for (int i = 0; i < 8; ++i) {
    ids.push_back("t" + std::to_string(i));
    truth[ids.back()] = Label::of_class("a");
    split.train.push_back(static_cast<int>(ids.size()) - 1);
  }
  std::vector<std::string> val_ids;
  for (int i = 0; i < 200; ++i) {
    std::ostringstream id;
    id << "v" << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
    ids.push_back(id.str());
    val_ids.push_back(id.str());
    truth[id.str()] = Label::of_class("a");
    split.validation.push_back(static_cast<int>(ids.size()) - 1);
  }
  for (int i = 0; i < 2; ++i) {
    ids.push_back("z" + std::to_string(i));
    truth[ids.back()] = Label::of_class("a");
    split.test.push_back(static_cast<int>(ids.size()) - 1);
  }
  const FeatureMatrix fm = features_with_ids(ids);

  auto respond_with_accuracy = [&](int correct) {
    std::string out = "[";
    for (std::size_t i = 0; i < val_ids.size(); ++i) {
      out += std::string("{\"id\":\"") + val_ids[i] + "\",\"label\":\"" +
             (static_cast<int>(i) < correct ? "a" : "b") + "\"}";
      if (i + 1 < val_ids.size()) out += ",";
    }
    return out + "]";
  };

  auto backend = std::make_shared<ScriptedBackend>();
  backend->push_response(respond_with_accuracy(140));  // round 1: 0.700
  backend->push_response(respond_with_accuracy(141));  // round 2: 0.705 -> stop
  backend->push_response(R"([{"id":"z0","label":"a"},{"id":"z1","label":"a"}])");

  ReasoningConfig cfg;
  cfg.repeats = 1;
  cfg.delta = 0.01;
  LlmClient client = client_for(backend);
  const RunReport report =
      run_multi_turn(TaskType::Classification, fm, split, truth, client, cfg);
  REQUIRE(report.repeats[0].ok);
  CHECK(report.repeats[0].turns.size() == 2);
  CHECK(report.repeats[0].turns[0].metric == doctest::Approx(0.700));
  CHECK(report.repeats[0].turns[1].metric == doctest::Approx(0.705));
  CHECK(report.repeats[0].stop_reason == "converged");
  CHECK(report.repeats[0].convergence_round == 2);
}

TEST_CASE("exemplars grow monotonically without duplicates and spare the test set") {
  const BlobFixture fx = separable_blobs(24, 21);
  ReasoningConfig cfg;
  cfg.repeats = 2;
  cfg.max_exemplars = 6;  // force under-coverage so hard samples appear
  TranscriptLog log;
  LlmConfig lcfg;
  lcfg.model = "mock";
  lcfg.context_limit = 1 << 20;
  LlmClient client(lcfg, std::make_shared<NearestNeighborBackend>(), &log);

  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);

  std::set<std::string> test_ids;
  for (int i : fx.split.test) test_ids.insert(fx.features.ids[static_cast<std::size_t>(i)]);

  for (const RepeatResult& r : report.repeats) {
    REQUIRE(r.ok);
    for (std::size_t t = 0; t < r.turns.size(); ++t) {
      const auto& ids = r.turns[t].exemplar_ids;
      CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == ids.size());
      for (const std::string& id : ids) CHECK(test_ids.count(id) == 0);
      if (t > 0) {
        const auto& prev = r.turns[t - 1].exemplar_ids;
        CHECK(ids.size() >= prev.size());
        // earlier exemplars stay, in order
        for (std::size_t k = 0; k < prev.size(); ++k) CHECK(ids[k] == prev[k]);
      }
    }
  }

  // test ids appear in exactly one exchange per repeat: the last one
  int exchanges_with_test = 0;
  for (const ChatExchange& e : log.entries()) {
    bool has_test = false;
    for (const std::string& id : test_ids)
      if (e.messages.back().content.find("\n" + id + " | ") != std::string::npos)
        has_test = true;
    if (has_test) ++exchanges_with_test;
  }
  CHECK(exchanges_with_test == 2);  // one per repeat
}

TEST_CASE("a run replayed from its own transcript reproduces the report") {
  const BlobFixture fx = separable_blobs(16, 29);
  ReasoningConfig cfg;
  cfg.repeats = 2;
  cfg.max_exemplars = 6;

  TranscriptLog log;
  LlmConfig lcfg;
  lcfg.model = "mock";
  lcfg.context_limit = 1 << 20;
  LlmClient live(lcfg, std::make_shared<NearestNeighborBackend>(), &log);
  const RunReport original =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, live, cfg);

  TranscriptLog replay_log;
  LlmClient replay(lcfg, ScriptedBackend::from_transcript(log.entries()), &replay_log);
  const RunReport replayed =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, replay, cfg);
  CHECK(replayed.to_json() == original.to_json());
  CHECK(replay_log.size() == log.size());
}

TEST_CASE("a deterministic mock makes the whole report reproducible") {
  const BlobFixture fx = separable_blobs(16, 30);
  ReasoningConfig cfg;
  cfg.repeats = 3;
  cfg.max_exemplars = 6;
  cfg.seed = 17;

  LlmClient a = client_for(std::make_shared<NearestNeighborBackend>());
  LlmClient b = client_for(std::make_shared<NearestNeighborBackend>());
  const RunReport ra =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, a, cfg);
  const RunReport rb =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, b, cfg);
  CHECK(ra.to_json() == rb.to_json());
  CHECK(ra.to_csv() == rb.to_csv());
}

TEST_CASE("a failing repeat is recorded, not dropped") {
  const BlobFixture fx = separable_blobs(8, 40);
  auto backend = std::make_shared<ScriptedBackend>();
  // repeat 1: all-correct validation (converges via empty hard list), then test
  auto respond_all = [&](const std::vector<int>& rows) {
    std::string out = "[";
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::string& id = fx.features.ids[static_cast<std::size_t>(rows[k])];
      out += "{\"id\":\"" + id + "\",\"label\":\"" + fx.truth.at(id).class_name + "\"}";
      if (k + 1 < rows.size()) out += ",";
    }
    return out + "]";
  };
  backend->push_response(respond_all(fx.split.validation));
  backend->push_response(respond_all(fx.split.test));
  // repeat 2: three unparseable answers exhaust the reformat budget
  backend->push_response("nope");
  backend->push_response("still nope");
  backend->push_response("nope again");

  ReasoningConfig cfg;
  cfg.repeats = 2;
  LlmClient client = client_for(backend);
  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  REQUIRE(report.repeats.size() == 2);
  CHECK(report.repeats[0].ok);
  CHECK_FALSE(report.repeats[1].ok);
  CHECK_FALSE(report.repeats[1].error.empty());
  // aggregates cover the surviving repeat
  CHECK(report.aggregate_mean.at("accuracy") == 1.0);
}

TEST_CASE("reformat retries repair a sloppy but willing responder") {
  const BlobFixture fx = separable_blobs(8, 44);
  auto backend = std::make_shared<ScriptedBackend>();
  backend->push_response("let me think...");  // invalid -> reformat retry
  auto respond_all = [&](const std::vector<int>& rows) {
    std::string out = "[";
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::string& id = fx.features.ids[static_cast<std::size_t>(rows[k])];
      out += "{\"id\":\"" + id + "\",\"label\":\"" + fx.truth.at(id).class_name + "\"}";
      if (k + 1 < rows.size()) out += ",";
    }
    return out + "]";
  };
  backend->push_response(respond_all(fx.split.validation));
  backend->push_response(respond_all(fx.split.test));

  ReasoningConfig cfg;
  cfg.repeats = 1;
  LlmClient client = client_for(backend);
  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  CHECK(report.repeats[0].ok);
  CHECK(backend->calls() == 3);
}

TEST_CASE("turn metrics match recomputation from stored predictions") {
  const BlobFixture fx = separable_blobs(16, 50);
  ReasoningConfig cfg;
  cfg.repeats = 1;
  cfg.max_exemplars = 6;
  LlmClient client = client_for(std::make_shared<NearestNeighborBackend>());
  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  for (const TurnState& turn : report.repeats[0].turns) {
    std::map<std::string, std::string> pv, tv;
    for (const auto& [id, p] : turn.predictions) {
      pv[id] = p.label;
      tv[id] = fx.truth.at(id).class_name;
    }
    CHECK(turn.metric == accuracy(pv, tv));
  }
}

TEST_CASE("reports serialize to json and back") {
  const BlobFixture fx = separable_blobs(8, 60);
  ReasoningConfig cfg;
  cfg.repeats = 2;
  LlmClient client = client_for(std::make_shared<NearestNeighborBackend>());
  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  const RunReport back = RunReport::from_json(report.to_json());
  CHECK(back.to_json() == report.to_json());
  CHECK(back.primary_metric() == "accuracy");

  const std::string csv = report.to_csv();
  CHECK(csv.find("section,repeat,round,key,value") == 0);
  CHECK(csv.find("aggregate,,,accuracy_mean,") != std::string::npos);
}

TEST_CASE("the absolute-delta option keeps going through a degradation") {
  // validation accuracy 0.75 -> 0.50 -> 0.50: the printed rule stops at round
  // 2 (negative improvement < delta), the absolute rule continues to round 3
  auto make_fixture = [&](BlobFixture& fx) {
    fx = separable_blobs(16, 90);
  };
  BlobFixture fx;
  make_fixture(fx);
  const std::vector<int> val_rows = fx.split.validation;

  auto respond_with = [&](int correct) {
    std::string out = "[";
    for (std::size_t i = 0; i < val_rows.size(); ++i) {
      const std::string& id = fx.features.ids[static_cast<std::size_t>(val_rows[i])];
      const std::string& truth_label = fx.truth.at(id).class_name;
      out += "{\"id\":\"" + id + "\",\"label\":\"" +
             (static_cast<int>(i) < correct ? truth_label
                                            : (truth_label == "good" ? "bad" : "good")) +
             "\"}";
      if (i + 1 < val_rows.size()) out += ",";
    }
    return out + "]";
  };
  auto test_response = [&] {
    std::string out = "[";
    for (std::size_t i = 0; i < fx.split.test.size(); ++i) {
      const std::string& id = fx.features.ids[static_cast<std::size_t>(fx.split.test[i])];
      out += "{\"id\":\"" + id + "\",\"label\":\"" + fx.truth.at(id).class_name + "\"}";
      if (i + 1 < fx.split.test.size()) out += ",";
    }
    return out + "]";
  };

  ReasoningConfig cfg;
  cfg.repeats = 1;
  cfg.delta = 0.01;

  {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->push_response(respond_with(6));  // 0.75
    backend->push_response(respond_with(4));  // 0.50 -> printed rule stops
    backend->push_response(test_response());
    LlmClient client = client_for(backend);
    const RunReport printed =
        run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
    CHECK(printed.repeats[0].turns.size() == 2);
    CHECK(printed.repeats[0].stop_reason == "converged");
  }
  {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->push_response(respond_with(6));  // 0.75
    backend->push_response(respond_with(4));  // 0.50, |delta| large -> continue
    backend->push_response(respond_with(4));  // 0.50, |delta| = 0 -> stop
    backend->push_response(test_response());
    ReasoningConfig abs_cfg = cfg;
    abs_cfg.absolute_delta = true;
    LlmClient client = client_for(backend);
    const RunReport absolute = run_multi_turn(TaskType::Classification, fx.features, fx.split,
                                              fx.truth, client, abs_cfg);
    CHECK(absolute.repeats[0].turns.size() == 3);
  }
}

TEST_CASE("turns record the transcript entries they produced") {
  const BlobFixture fx = separable_blobs(16, 91);
  TranscriptLog log;
  LlmConfig lcfg;
  lcfg.model = "mock";
  lcfg.context_limit = 1 << 20;
  LlmClient client(lcfg, std::make_shared<NearestNeighborBackend>(), &log);
  ReasoningConfig cfg;
  cfg.repeats = 2;
  cfg.max_exemplars = 6;
  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);

  int expected_begin = 0;
  for (const RepeatResult& r : report.repeats) {
    REQUIRE(r.ok);
    for (const TurnState& t : r.turns) {
      CHECK(t.transcript_begin == expected_begin);
      CHECK(t.transcript_end > t.transcript_begin);
      expected_begin = t.transcript_end;
    }
    CHECK(r.test_transcript_begin == expected_begin);
    CHECK(r.test_transcript_end == r.test_transcript_begin + 1);
    expected_begin = r.test_transcript_end;
  }
  CHECK(static_cast<int>(log.entries().size()) == expected_begin);

  // the linkage survives serialization
  const RunReport back = RunReport::from_json(report.to_json());
  CHECK(back.repeats[0].turns[0].transcript_begin == 0);
}

TEST_CASE("the loop always halts within max_rounds") {
  // adversarial responder: answers at random so improvement never settles;
  // randomness comes from a fixed-seed generator, so the test is stable
  class NoisyBackend : public LlmBackend {
   public:
    explicit NoisyBackend(const BlobFixture& fx) : fx_(fx) {}
    std::string name() const override { return "noisy"; }
    bool deterministic() const override { return true; }
    std::string complete(const LlmConfig&, const std::vector<ChatMessage>& messages) override {
      std::vector<std::string> ids;
      std::istringstream lines(messages.back().content);
      std::string line;
      bool in_queries = false;
      while (std::getline(lines, line)) {
        if (line.rfind("Predict:", 0) == 0) {
          in_queries = true;
          continue;
        }
        if (!in_queries) continue;
        const std::size_t bar = line.find(" | ");
        if (bar != std::string::npos) ids.push_back(line.substr(0, bar));
      }
      std::string out = "[";
      for (std::size_t i = 0; i < ids.size(); ++i) {
        out += "{\"id\":\"" + ids[i] + "\",\"label\":\"" +
               (rng_.uniform() < 0.5 ? "good" : "bad") + "\"}";
        if (i + 1 < ids.size()) out += ",";
      }
      return out + "]";
    }

   private:
    const BlobFixture& fx_;
    Rng rng_{99};
  };

  const BlobFixture fx = separable_blobs(16, 70);
  ReasoningConfig cfg;
  cfg.repeats = 2;
  cfg.max_rounds = 5;
  LlmClient client = client_for(std::make_shared<NoisyBackend>(fx));
  const RunReport report =
      run_multi_turn(TaskType::Classification, fx.features, fx.split, fx.truth, client, cfg);
  for (const RepeatResult& r : report.repeats) {
    REQUIRE(r.ok);
    CHECK(r.turns.size() <= 5);
    CHECK(r.convergence_round <= 5);
  }
}
