#include "specagent/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "specagent/rng.hpp"
#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

void ReasoningConfig::validate() const {
  if (max_rounds < 1) raise(ErrorCode::ConfigError, "max_rounds must be >= 1");
  if (delta <= 0) raise(ErrorCode::ConfigError, "delta must be > 0");
  if (hard_sample_cap < 1 || hard_sample_top_k < 1)
    raise(ErrorCode::ConfigError, "hard sample caps must be >= 1");
  if (repeats < 1) raise(ErrorCode::ConfigError, "repeats must be >= 1");
  if (max_exemplars < 0) raise(ErrorCode::ConfigError, "max_exemplars must be >= 0");
}

// --- prompt construction ----------------------------------------------------

namespace {

std::string schema_for(TaskType task) {
  switch (task) {
    case TaskType::Classification:
      return "{\"id\": \"...\", \"label\": \"...\"}";
    case TaskType::AnomalyDetection:
      return "{\"id\": \"...\", \"flag\": true|false, \"score\": 0.0-1.0}";
    case TaskType::Regression:
      return "{\"id\": \"...\", \"value\": number}";
  }
  return {};
}

std::string feature_line(const FeatureMatrix& features, int row) {
  std::string line;
  for (Eigen::Index c = 0; c < features.rows.cols(); ++c) {
    if (c > 0) line += ',';
    line += format_significant(features.rows(row, c), 6);
  }
  return line;
}

void check_line_safe(const std::string& id) {
  if (id.find('\n') != std::string::npos || id.find(" | ") != std::string::npos)
    raise(ErrorCode::ParseError, "id '" + id + "' would break the exemplar line format");
}

}  // namespace

std::vector<ChatMessage> build_prompt(TaskType task, const FeatureMatrix& features,
                                      const std::vector<std::string>& exemplar_ids,
                                      const std::map<std::string, Label>& truth,
                                      const std::vector<std::string>& query_ids,
                                      int budget_tokens) {
  if (exemplar_ids.empty()) raise(ErrorCode::ConfigError, "prompt needs exemplars");

  std::string names;
  for (std::size_t i = 0; i < features.feature_names.size(); ++i) {
    if (i > 0) names += ", ";
    names += features.feature_names[i];
  }

  std::ostringstream system;
  system << "You are a spectroscopy analyst. Task: " << to_string(task) << ".\n"
         << "Each sample is a feature vector [" << names
         << "] derived from preprocessed infrared spectra.\n"
         << "Labeled examples appear as lines `id | f1,...,fk | label`; query lines omit "
            "the label.\n";
  if (task == TaskType::AnomalyDetection)
    system << "flag true means the sample conforms to the reference class; score is the "
              "anomaly score in [0,1], higher = more anomalous.\n";
  system << "Respond with only a JSON array holding one object per query id, each "
         << schema_for(task) << ".\n"
         << "Every query id must appear exactly once. No prose.";

  std::ostringstream user;
  user << "Labeled examples:\n";
  for (const std::string& id : exemplar_ids) {
    check_line_safe(id);
    const int row = features.row_index(id);
    if (row < 0) raise(ErrorCode::IdMismatch, "exemplar id '" + id + "' has no feature row");
    auto it = truth.find(id);
    if (it == truth.end()) raise(ErrorCode::MissingLabel, "exemplar id '" + id + "' has no label");
    const std::string label = it->second.display();
    if (label.find('\n') != std::string::npos || label.find(" | ") != std::string::npos)
      raise(ErrorCode::ParseError,
            "label of '" + id + "' would break the exemplar line format");
    user << id << " | " << feature_line(features, row) << " | " << label << '\n';
  }
  user << "Predict:\n";
  for (const std::string& id : query_ids) {
    check_line_safe(id);
    const int row = features.row_index(id);
    if (row < 0) raise(ErrorCode::IdMismatch, "query id '" + id + "' has no feature row");
    user << id << " | " << feature_line(features, row) << '\n';
  }

  std::vector<ChatMessage> messages = {{Role::System, system.str()}, {Role::User, user.str()}};
  if (budget_tokens > 0 && estimate_tokens(messages) > budget_tokens)
    raise(ErrorCode::BudgetExceeded,
          "prompt estimate " + std::to_string(estimate_tokens(messages)) +
              " tokens exceeds budget " + std::to_string(budget_tokens));
  return messages;
}

// --- response parsing -------------------------------------------------------

namespace {

std::string strip_fence(const std::string& text) {
  std::string t = trim(text);
  if (t.rfind("```", 0) != 0) return t;
  const std::size_t first_newline = t.find('\n');
  const std::size_t closing = t.rfind("```");
  if (first_newline == std::string::npos || closing <= first_newline) return t;
  return trim(t.substr(first_newline + 1, closing - first_newline - 1));
}

}  // namespace

ParsedPredictions parse_predictions(TaskType task, const std::string& response,
                                    const std::vector<std::string>& expected_ids) {
  json j;
  try {
    j = json::parse(strip_fence(response));
  } catch (const json::exception& e) {
    raise(ErrorCode::UnparseableResponse, e.what());
  }
  if (!j.is_array()) raise(ErrorCode::UnparseableResponse, "top-level JSON array expected");

  const std::set<std::string> expected(expected_ids.begin(), expected_ids.end());
  ParsedPredictions out;
  for (const json& item : j) {
    if (!item.is_object() || !item.contains("id"))
      raise(ErrorCode::UnparseableResponse, "array items must be objects with an 'id'");
    const std::string id = item.at("id").get<std::string>();
    if (!expected.count(id))
      raise(ErrorCode::UnparseableResponse, "unexpected id '" + id + "'");
    if (out.predictions.count(id)) raise(ErrorCode::DuplicateIds, "id '" + id + "' appears twice");

    Prediction p;
    try {
      switch (task) {
        case TaskType::Classification:
          p.label = item.at("label").get<std::string>();
          break;
        case TaskType::Regression:
          p.value = item.at("value").get<double>();
          if (!std::isfinite(p.value))
            raise(ErrorCode::UnparseableResponse, "value for '" + id + "' is not finite");
          break;
        case TaskType::AnomalyDetection:
          p.flag = item.at("flag").get<bool>();
          if (item.contains("score")) {
            p.score = item.at("score").get<double>();
            if (!std::isfinite(p.score))
              raise(ErrorCode::UnparseableResponse, "score for '" + id + "' is not finite");
            if (p.score < 0.0 || p.score > 1.0) {
              out.warnings.push_back("score for '" + id + "' clamped to [0,1]");
              p.score = std::clamp(p.score, 0.0, 1.0);
            }
          } else {
            p.score = p.flag ? 0.0 : 1.0;
            out.warnings.push_back("score missing for '" + id + "', using the flag");
          }
          break;
      }
    } catch (const json::exception& e) {
      raise(ErrorCode::UnparseableResponse, "item '" + id + "': " + e.what());
    }
    out.predictions.emplace(id, std::move(p));
  }

  std::vector<std::string> missing;
  for (const std::string& id : expected_ids)
    if (!out.predictions.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string list;
    for (const std::string& id : missing) list += (list.empty() ? "" : ", ") + id;
    raise(ErrorCode::MissingIds, list);
  }
  return out;
}

// --- metrics ------------------------------------------------------------

namespace {

template <typename A, typename B>
void require_same_ids(const std::map<std::string, A>& a, const std::map<std::string, B>& b) {
  if (a.size() != b.size())
    raise(ErrorCode::IdMismatch, "prediction and truth id sets differ in size");
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first)
      raise(ErrorCode::IdMismatch, "id sets differ at '" + ia->first + "'");
}

}  // namespace

double accuracy(const std::map<std::string, std::string>& preds,
                const std::map<std::string, std::string>& truth) {
  require_same_ids(preds, truth);
  if (preds.empty()) raise(ErrorCode::IdMismatch, "empty prediction set");
  int correct = 0;
  for (const auto& [id, label] : preds)
    if (label == truth.at(id)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double auc(const std::map<std::string, double>& scores,
           const std::map<std::string, bool>& is_positive) {
  require_same_ids(scores, is_positive);
  std::vector<std::pair<double, bool>> items;
  long n_pos = 0, n_neg = 0;
  for (const auto& [id, s] : scores) {
    const bool pos = is_positive.at(id);
    items.emplace_back(s, pos);
    (pos ? n_pos : n_neg) += 1;
  }
  if (n_pos == 0 || n_neg == 0)
    raise(ErrorCode::SingleClass, "AUC needs at least one positive and one negative");

  // Mann-Whitney with average ranks; ties share rank mass, which reproduces
  // the half-credit pairwise form exactly
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (items[k].second) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double r_squared(const std::map<std::string, double>& preds,
                 const std::map<std::string, double>& truth) {
  require_same_ids(preds, truth);
  if (preds.size() < 2) raise(ErrorCode::TooFewSamples, "R^2 needs at least 2 samples");
  double mean = 0.0;
  for (const auto& [id, y] : truth) mean += y;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [id, y] : truth) {
    ss_res += (y - preds.at(id)) * (y - preds.at(id));
    ss_tot += (y - mean) * (y - mean);
  }
  if (ss_tot == 0.0) raise(ErrorCode::ConstantTruth, "truth values are constant");
  return 1.0 - ss_res / ss_tot;
}

double rmse(const std::map<std::string, double>& preds,
            const std::map<std::string, double>& truth) {
  require_same_ids(preds, truth);
  if (preds.empty()) raise(ErrorCode::IdMismatch, "empty prediction set");
  double acc = 0.0;
  for (const auto& [id, y] : truth) acc += (y - preds.at(id)) * (y - preds.at(id));
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

double flag_precision(const std::map<std::string, bool>& pred_is_anomaly,
                      const std::map<std::string, bool>& truth_is_anomaly) {
  require_same_ids(pred_is_anomaly, truth_is_anomaly);
  int tp = 0, fp = 0;
  for (const auto& [id, called] : pred_is_anomaly) {
    if (!called) continue;
    if (truth_is_anomaly.at(id)) ++tp;
    else ++fp;
  }
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

// --- hard samples -------------------------------------------------------------

std::vector<std::string> select_hard_samples(TaskType task, const Predictions& preds,
                                             const std::map<std::string, Label>& truth,
                                             const std::vector<std::string>& exemplar_ids,
                                             const ReasoningConfig& cfg) {
  const std::set<std::string> exemplars(exemplar_ids.begin(), exemplar_ids.end());
  std::vector<std::string> hard;

  switch (task) {
    case TaskType::Classification: {
      for (const auto& [id, p] : preds) {
        if (exemplars.count(id)) continue;
        if (p.label != truth.at(id).class_name) hard.push_back(id);
      }
      std::sort(hard.begin(), hard.end(), std::greater<>());
      if (static_cast<int>(hard.size()) > cfg.hard_sample_cap) hard.resize(cfg.hard_sample_cap);
      break;
    }
    case TaskType::Regression: {
      std::map<std::string, double> pv, tv;
      for (const auto& [id, p] : preds) {
        pv[id] = p.value;
        tv[id] = truth.at(id).value;
      }
      const double epsilon = rmse(pv, tv);
      std::vector<std::pair<double, std::string>> residuals;
      for (const auto& [id, p] : preds) {
        if (exemplars.count(id)) continue;
        const double r = std::abs(truth.at(id).value - p.value);
        if (r > epsilon) residuals.emplace_back(r, id);
      }
      std::sort(residuals.begin(), residuals.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t k = 0; k < residuals.size() &&
                              k < static_cast<std::size_t>(cfg.hard_sample_top_k); ++k)
        hard.push_back(residuals[k].second);
      break;
    }
    case TaskType::AnomalyDetection: {
      // count, per id, the misordered (positive, negative) pairs it joins;
      // positive = anomalous = flag false in the truth labels
      std::vector<std::pair<std::string, double>> pos, neg;
      for (const auto& [id, p] : preds) {
        if (!truth.at(id).flag) pos.emplace_back(id, p.score);
        else neg.emplace_back(id, p.score);
      }
      std::map<std::string, int> miscount;
      for (const auto& [pid, ps] : pos)
        for (const auto& [nid, ns] : neg)
          if (ps <= ns) {
            miscount[pid] += 1;
            miscount[nid] += 1;
          }
      std::vector<std::pair<int, std::string>> ranked;
      for (const auto& [id, count] : miscount) {
        if (exemplars.count(id)) continue;
        ranked.emplace_back(count, id);
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (std::size_t k = 0; k < ranked.size() &&
                              k < static_cast<std::size_t>(cfg.hard_sample_top_k); ++k)
        hard.push_back(ranked[k].second);
      break;
    }
  }
  return hard;
}

// --- the loop ------------------------------------------------------------

namespace {

std::string primary_metric_name(TaskType task) {
  switch (task) {
    case TaskType::Classification: return "accuracy";
    case TaskType::AnomalyDetection: return "auc";
    case TaskType::Regression: return "r2";
  }
  return {};
}

std::map<std::string, double> task_metrics(TaskType task, const Predictions& preds,
                                           const std::map<std::string, Label>& truth) {
  std::map<std::string, double> out;
  switch (task) {
    case TaskType::Classification: {
      std::map<std::string, std::string> pv, tv;
      for (const auto& [id, p] : preds) {
        pv[id] = p.label;
        tv[id] = truth.at(id).class_name;
      }
      out["accuracy"] = accuracy(pv, tv);
      break;
    }
    case TaskType::AnomalyDetection: {
      std::map<std::string, double> scores;
      std::map<std::string, bool> positives, called;
      for (const auto& [id, p] : preds) {
        scores[id] = p.score;
        positives[id] = !truth.at(id).flag;
        called[id] = !p.flag;
      }
      out["auc"] = auc(scores, positives);
      out["precision"] = flag_precision(called, positives);
      break;
    }
    case TaskType::Regression: {
      std::map<std::string, double> pv, tv;
      for (const auto& [id, p] : preds) {
        pv[id] = p.value;
        tv[id] = truth.at(id).value;
      }
      out["r2"] = r_squared(pv, tv);
      out["rmse"] = rmse(pv, tv);
      break;
    }
  }
  return out;
}

// one reformat retry, then a second, then the parse error propagates
Predictions complete_and_parse(LlmClient& client, TaskType task,
                               std::vector<ChatMessage> messages,
                               const std::vector<std::string>& expected_ids,
                               double temperature) {
  constexpr int kMaxAttempts = 3;
  for (int attempt = 1;; ++attempt) {
    const ChatExchange exchange = client.complete(messages, temperature);
    try {
      return parse_predictions(task, exchange.response, expected_ids).predictions;
    } catch (const Error& e) {
      const bool recoverable = e.code() == ErrorCode::UnparseableResponse ||
                               e.code() == ErrorCode::MissingIds ||
                               e.code() == ErrorCode::DuplicateIds;
      if (!recoverable || attempt == kMaxAttempts) throw;
      messages.push_back({Role::Assistant, exchange.response});
      std::string ids;
      for (const std::string& id : expected_ids) ids += (ids.empty() ? "" : ", ") + id;
      messages.push_back({Role::User,
                          std::string("Your previous reply was invalid (") + e.what() +
                              "). Reply again with only the JSON array covering exactly "
                              "these ids: " + ids + "."});
    }
  }
}

std::vector<std::string> ids_at(const FeatureMatrix& features, const std::vector<int>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (int r : rows) {
    if (r < 0 || r >= static_cast<int>(features.ids.size()))
      raise(ErrorCode::IdMismatch, "split index " + std::to_string(r) + " out of range");
    out.push_back(features.ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

RepeatResult run_one_repeat(TaskType task, const FeatureMatrix& features, const Split& split,
                            const std::map<std::string, Label>& truth, LlmClient& client,
                            const ReasoningConfig& cfg, std::uint64_t seed) {
  RepeatResult repeat;
  repeat.seed = seed;

  const std::vector<std::string> validation_ids = ids_at(features, split.validation);
  const std::vector<std::string> test_ids = ids_at(features, split.test);
  const std::set<std::string> test_set(test_ids.begin(), test_ids.end());

  // round-1 exemplars: the training set, seeded subsample when capped
  std::vector<std::string> exemplars = ids_at(features, split.train);
  Rng rng(seed);
  if (cfg.max_exemplars > 0 && static_cast<int>(exemplars.size()) > cfg.max_exemplars) {
    rng.shuffle(exemplars);
    exemplars.resize(static_cast<std::size_t>(cfg.max_exemplars));
  }

  const int budget = client.config().budget_tokens();
  auto fit_to_budget = [&](std::vector<std::string>& ids, std::size_t keep_at_least) {
    // drop the most recently appended entries last, oldest hard samples first
    while (ids.size() > keep_at_least) {
      try {
        build_prompt(task, features, ids, truth, validation_ids, budget);
        return;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::BudgetExceeded) throw;
        ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(keep_at_least));
      }
    }
  };

  // budget-driven round-1 subsample: seeded shuffle then keep the prefix
  {
    bool over = false;
    try {
      build_prompt(task, features, exemplars, truth, validation_ids, budget);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BudgetExceeded) throw;
      over = true;
    }
    if (over) {
      rng.shuffle(exemplars);
      while (exemplars.size() > 1) {
        exemplars.pop_back();
        try {
          build_prompt(task, features, exemplars, truth, validation_ids, budget);
          break;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::BudgetExceeded) throw;
        }
      }
    }
  }
  const std::size_t base_exemplars = exemplars.size();

  std::vector<std::string> pending_hard;
  double previous_metric = 0.0;

  for (int round = 1; round <= cfg.max_rounds; ++round) {
    for (const std::string& id : pending_hard)
      if (std::find(exemplars.begin(), exemplars.end(), id) == exemplars.end())
        exemplars.push_back(id);
    pending_hard.clear();
    fit_to_budget(exemplars, base_exemplars);

    // instrumented isolation check: the test set stays untouched inside the loop
    for (const std::string& id : exemplars)
      if (test_set.count(id))
        throw std::logic_error("test sample '" + id + "' leaked into the exemplar set");

    const std::vector<ChatMessage> prompt =
        build_prompt(task, features, exemplars, truth, validation_ids, budget);
    const int log_before =
        client.transcript() ? static_cast<int>(client.transcript()->size()) : -1;
    const Predictions preds =
        complete_and_parse(client, task, prompt, validation_ids, cfg.temperature);

    TurnState turn;
    turn.round = round;
    turn.exemplar_ids = exemplars;
    turn.predictions = preds;
    turn.transcript_begin = log_before;
    turn.transcript_end =
        client.transcript() ? static_cast<int>(client.transcript()->size()) : -1;
    turn.metric = task_metrics(task, preds, truth).at(primary_metric_name(task));
    turn.hard_ids = select_hard_samples(task, preds, truth, exemplars, cfg);
    repeat.turns.push_back(turn);

    repeat.convergence_round = round;
    if (turn.hard_ids.empty()) {
      repeat.stop_reason = "no_hard_samples";
      break;
    }
    if (round >= 2) {
      const double improvement = turn.metric - previous_metric;
      const bool stop = cfg.absolute_delta ? std::abs(improvement) < cfg.delta
                                           : improvement < cfg.delta;
      if (stop) {
        repeat.stop_reason = "converged";
        break;
      }
    }
    previous_metric = turn.metric;
    if (round == cfg.max_rounds) {
      repeat.stop_reason = "max_rounds";
      break;
    }
    pending_hard = turn.hard_ids;
  }

  // test evaluation happens exactly once, after the loop has stopped
  const std::vector<ChatMessage> test_prompt =
      build_prompt(task, features, exemplars, truth, test_ids, budget);
  repeat.test_transcript_begin =
      client.transcript() ? static_cast<int>(client.transcript()->size()) : -1;
  repeat.test_predictions =
      complete_and_parse(client, task, test_prompt, test_ids, cfg.temperature);
  repeat.test_transcript_end =
      client.transcript() ? static_cast<int>(client.transcript()->size()) : -1;
  repeat.test_metrics = task_metrics(task, repeat.test_predictions, truth);
  return repeat;
}

}  // namespace

std::string RunReport::primary_metric() const { return primary_metric_name(task); }

RunReport run_multi_turn(TaskType task, const FeatureMatrix& features, const Split& split,
                         const std::map<std::string, Label>& truth, LlmClient& client,
                         const ReasoningConfig& cfg) {
  cfg.validate();
  features.validate();
  if (split.train.empty() || split.validation.empty() || split.test.empty())
    raise(ErrorCode::TooFewSamples, "split must populate train, validation and test");

  RunReport report;
  report.task = task;
  report.config = cfg;

  for (int r = 0; r < cfg.repeats; ++r) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
    try {
      report.repeats.push_back(run_one_repeat(task, features, split, truth, client, cfg, seed));
    } catch (const Error& e) {
      RepeatResult failed;
      failed.seed = seed;
      failed.ok = false;
      failed.error = e.what();
      report.repeats.push_back(std::move(failed));
    }
  }

  // aggregate over successful repeats
  std::map<std::string, std::vector<double>> values;
  for (const RepeatResult& r : report.repeats)
    if (r.ok)
      for (const auto& [key, v] : r.test_metrics) values[key].push_back(v);
  for (const auto& [key, vs] : values) {
    const double mean = std::accumulate(vs.begin(), vs.end(), 0.0) / vs.size();
    double var = 0.0;
    for (double v : vs) var += (v - mean) * (v - mean);
    report.aggregate_mean[key] = mean;
    report.aggregate_std[key] = vs.size() > 1 ? std::sqrt(var / (vs.size() - 1)) : 0.0;
  }
  return report;
}

RunReport single_turn(TaskType task, const FeatureMatrix& features, const Split& split,
                      const std::map<std::string, Label>& truth, LlmClient& client,
                      const ReasoningConfig& cfg) {
  ReasoningConfig one = cfg;
  one.max_rounds = 1;
  return run_multi_turn(task, features, split, truth, client, one);
}

// --- report serialization ------------------------------------------------------

namespace {

json prediction_to_json(TaskType task, const Prediction& p) {
  json j;
  switch (task) {
    case TaskType::Classification: j["label"] = p.label; break;
    case TaskType::Regression: j["value"] = p.value; break;
    case TaskType::AnomalyDetection:
      j["flag"] = p.flag;
      j["score"] = p.score;
      break;
  }
  return j;
}

Prediction prediction_from_json(TaskType task, const json& j) {
  Prediction p;
  switch (task) {
    case TaskType::Classification: p.label = j.at("label").get<std::string>(); break;
    case TaskType::Regression: p.value = j.at("value").get<double>(); break;
    case TaskType::AnomalyDetection:
      p.flag = j.at("flag").get<bool>();
      p.score = j.at("score").get<double>();
      break;
  }
  return p;
}

json config_to_json(const ReasoningConfig& cfg) {
  return {{"max_rounds", cfg.max_rounds},
          {"delta", cfg.delta},
          {"absolute_delta", cfg.absolute_delta},
          {"hard_sample_cap", cfg.hard_sample_cap},
          {"hard_sample_top_k", cfg.hard_sample_top_k},
          {"temperature", cfg.temperature},
          {"repeats", cfg.repeats},
          {"seed", cfg.seed},
          {"max_exemplars", cfg.max_exemplars}};
}

ReasoningConfig config_from_json(const json& j) {
  ReasoningConfig cfg;
  cfg.max_rounds = j.at("max_rounds").get<int>();
  cfg.delta = j.at("delta").get<double>();
  cfg.absolute_delta = j.at("absolute_delta").get<bool>();
  cfg.hard_sample_cap = j.at("hard_sample_cap").get<int>();
  cfg.hard_sample_top_k = j.at("hard_sample_top_k").get<int>();
  cfg.temperature = j.at("temperature").get<double>();
  cfg.repeats = j.at("repeats").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.max_exemplars = j.at("max_exemplars").get<int>();
  return cfg;
}

}  // namespace

std::string RunReport::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["task"] = to_string(task);
  j["config"] = config_to_json(config);
  j["single_turn"] = config.max_rounds == 1;

  json repeats_json = json::array();
  for (const RepeatResult& r : repeats) {
    json rj;
    rj["seed"] = r.seed;
    rj["ok"] = r.ok;
    if (!r.ok) {
      rj["error"] = r.error;
      repeats_json.push_back(std::move(rj));
      continue;
    }
    json turns = json::array();
    for (const TurnState& t : r.turns) {
      json tj;
      tj["round"] = t.round;
      tj["exemplar_ids"] = t.exemplar_ids;
      tj["metric"] = t.metric;
      tj["hard_ids"] = t.hard_ids;
      tj["transcript"] = {{"begin", t.transcript_begin}, {"end", t.transcript_end}};
      json preds = json::object();
      for (const auto& [id, p] : t.predictions) preds[id] = prediction_to_json(task, p);
      tj["predictions"] = std::move(preds);
      turns.push_back(std::move(tj));
    }
    rj["turns"] = std::move(turns);
    rj["convergence_round"] = r.convergence_round;
    rj["stop_reason"] = r.stop_reason;
    json test_preds = json::object();
    for (const auto& [id, p] : r.test_predictions) test_preds[id] = prediction_to_json(task, p);
    rj["test_predictions"] = std::move(test_preds);
    rj["test_metrics"] = r.test_metrics;
    rj["test_transcript"] = {{"begin", r.test_transcript_begin},
                             {"end", r.test_transcript_end}};
    repeats_json.push_back(std::move(rj));
  }
  j["repeats"] = std::move(repeats_json);
  j["aggregate"] = {{"mean", aggregate_mean}, {"std", aggregate_std}};
  return j.dump(2);
}

RunReport RunReport::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "run report: " + std::string(e.what()));
  }
  RunReport report;
  report.task = task_from_string(j.at("task").get<std::string>());
  report.config = config_from_json(j.at("config"));
  for (const json& rj : j.at("repeats")) {
    RepeatResult r;
    r.seed = rj.at("seed").get<std::uint64_t>();
    r.ok = rj.at("ok").get<bool>();
    if (!r.ok) {
      r.error = rj.value("error", std::string{});
      report.repeats.push_back(std::move(r));
      continue;
    }
    for (const json& tj : rj.at("turns")) {
      TurnState t;
      t.round = tj.at("round").get<int>();
      t.exemplar_ids = tj.at("exemplar_ids").get<std::vector<std::string>>();
      t.metric = tj.at("metric").get<double>();
      t.hard_ids = tj.at("hard_ids").get<std::vector<std::string>>();
      if (tj.contains("transcript")) {
        t.transcript_begin = tj.at("transcript").at("begin").get<int>();
        t.transcript_end = tj.at("transcript").at("end").get<int>();
      }
      for (const auto& [id, pj] : tj.at("predictions").items())
        t.predictions[id] = prediction_from_json(report.task, pj);
      r.turns.push_back(std::move(t));
    }
    r.convergence_round = rj.at("convergence_round").get<int>();
    r.stop_reason = rj.at("stop_reason").get<std::string>();
    for (const auto& [id, pj] : rj.at("test_predictions").items())
      r.test_predictions[id] = prediction_from_json(report.task, pj);
    r.test_metrics = rj.at("test_metrics").get<std::map<std::string, double>>();
    if (rj.contains("test_transcript")) {
      r.test_transcript_begin = rj.at("test_transcript").at("begin").get<int>();
      r.test_transcript_end = rj.at("test_transcript").at("end").get<int>();
    }
    report.repeats.push_back(std::move(r));
  }
  report.aggregate_mean = j.at("aggregate").at("mean").get<std::map<std::string, double>>();
  report.aggregate_std = j.at("aggregate").at("std").get<std::map<std::string, double>>();
  return report;
}

std::string RunReport::to_csv() const {
  std::ostringstream out;
  out << "section,repeat,round,key,value\n";
  for (std::size_t r = 0; r < repeats.size(); ++r) {
    const RepeatResult& rep = repeats[r];
    if (!rep.ok) {
      out << "repeat," << r << ",,status,failed\n";
      continue;
    }
    for (const TurnState& t : rep.turns) {
      out << "round," << r << ',' << t.round << ",validation_metric,"
          << format_double(t.metric) << '\n';
      out << "round," << r << ',' << t.round << ",n_exemplars," << t.exemplar_ids.size()
          << '\n';
      out << "round," << r << ',' << t.round << ",n_hard," << t.hard_ids.size() << '\n';
    }
    for (const auto& [key, v] : rep.test_metrics)
      out << "final," << r << ",," << key << ',' << format_double(v) << '\n';
  }
  for (const auto& [key, v] : aggregate_mean)
    out << "aggregate,,," << key << "_mean," << format_double(v) << '\n';
  for (const auto& [key, v] : aggregate_std)
    out << "aggregate,,," << key << "_std," << format_double(v) << '\n';
  return out.str();
}

// --- nearest-neighbor mock -----------------------------------------------------

namespace {

struct PromptSample {
  std::string id;
  std::vector<double> features;
  std::string label;  // empty for queries
};

std::vector<double> parse_feature_csv(const std::string& text) {
  std::vector<double> values;
  for (const std::string& cell : split(text, ','))
    values.push_back(std::stod(trim(cell)));
  return values;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

}  // namespace

std::string NearestNeighborBackend::complete(const LlmConfig&,
                                             const std::vector<ChatMessage>& messages) {
  std::string task_name;
  std::string body;
  for (const ChatMessage& m : messages) {
    if (m.role == Role::System) {
      const std::size_t at = m.content.find("Task: ");
      if (at != std::string::npos) {
        std::size_t end = m.content.find_first_of(".\n", at + 6);
        if (end == std::string::npos) end = m.content.size();
        task_name = trim(m.content.substr(at + 6, end - at - 6));
      }
    } else if (m.role == Role::User && body.empty()) {
      body = m.content;  // reformat retries repeat the original user payload first
    }
  }
  if (task_name.empty())
    raise(ErrorCode::ProviderError, "mock cannot find a 'Task:' line in the system prompt");
  const TaskType task = task_from_string(task_name);

  std::vector<PromptSample> exemplars, queries;
  std::istringstream lines(body);
  std::string line;
  while (std::getline(lines, line)) {
    const std::size_t first = line.find(" | ");
    if (first == std::string::npos) continue;
    const std::size_t second = line.find(" | ", first + 3);
    PromptSample sample;
    sample.id = trim(line.substr(0, first));
    if (second == std::string::npos) {
      sample.features = parse_feature_csv(line.substr(first + 3));
      queries.push_back(std::move(sample));
    } else {
      sample.features = parse_feature_csv(line.substr(first + 3, second - first - 3));
      sample.label = trim(line.substr(second + 3));
      exemplars.push_back(std::move(sample));
    }
  }
  if (exemplars.empty())
    raise(ErrorCode::ProviderError, "mock found no exemplar lines");

  json reply = json::array();
  for (const PromptSample& q : queries) {
    // ranked neighbor list; prompt order breaks distance ties
    std::vector<std::pair<double, const PromptSample*>> neighbors;
    for (const PromptSample& e : exemplars) neighbors.emplace_back(distance(q.features, e.features), &e);
    std::stable_sort(neighbors.begin(), neighbors.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    json item;
    item["id"] = q.id;
    switch (task) {
      case TaskType::Classification:
        item["label"] = neighbors.front().second->label;
        break;
      case TaskType::Regression: {
        if (neighbors.front().first == 0.0) {
          item["value"] = std::stod(neighbors.front().second->label);
          break;
        }
        double wsum = 0.0, acc = 0.0;
        for (std::size_t k = 0; k < neighbors.size() && k < 3; ++k) {
          const double w = 1.0 / neighbors[k].first;
          wsum += w;
          acc += w * std::stod(neighbors[k].second->label);
        }
        item["value"] = acc / wsum;
        break;
      }
      case TaskType::AnomalyDetection: {
        item["flag"] = neighbors.front().second->label == "true";
        double d_normal = -1.0;
        for (const auto& [d, e] : neighbors)
          if (e->label == "true") {
            d_normal = d;
            break;
          }
        item["score"] = d_normal < 0.0 ? 1.0 : d_normal / (1.0 + d_normal);
        break;
      }
    }
    reply.push_back(std::move(item));
  }
  return reply.dump();
}

}  // namespace specagent
