#include "specagent/entity.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "specagent/kb.hpp"
#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

namespace {

const char* kExtractionSystemPrompt =
    "You extract two entities from a question about spectral analysis.\n"
    "1. research_object: the material or analyte being studied.\n"
    "2. task: one of classification, anomaly_detection, regression.\n"
    "Respond with only a JSON object, no prose:\n"
    "{\"research_object\": \"...\", \"task\": \"classification|anomaly_detection|regression\"}";

// strips a ``` or ```json fence if the whole payload is fenced
std::string strip_code_fence(const std::string& text) {
  std::string t = trim(text);
  if (t.rfind("```", 0) != 0) return t;
  const std::size_t first_newline = t.find('\n');
  if (first_newline == std::string::npos) return t;
  const std::size_t closing = t.rfind("```");
  if (closing <= first_newline) return t;
  return trim(t.substr(first_newline + 1, closing - first_newline - 1));
}

struct ParsedEntities {
  std::string research_object;
  std::string task;
};

ParsedEntities parse_entity_json(const std::string& response) {
  json j;
  try {
    j = json::parse(strip_code_fence(response));
  } catch (const json::exception& e) {
    raise(ErrorCode::UnparseableResponse, e.what());
  }
  if (!j.is_object() || !j.contains("research_object") || !j.contains("task"))
    raise(ErrorCode::UnparseableResponse, "missing research_object or task field");
  ParsedEntities out;
  out.research_object = trim(j.at("research_object").get<std::string>());
  out.task = trim(j.at("task").get<std::string>());
  if (out.research_object.empty())
    raise(ErrorCode::UnparseableResponse, "research_object is empty");
  return out;
}

}  // namespace

ExtractedEntities extract_entities(LlmClient& client, const std::string& question) {
  if (trim(question).empty())
    raise(ErrorCode::ConfigError, "question must be non-empty");

  std::vector<ChatMessage> messages = {{Role::System, kExtractionSystemPrompt},
                                       {Role::User, question}};
  constexpr int kMaxAttempts = 3;
  for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    const ChatExchange exchange = client.complete(messages, 0.1);
    try {
      const ParsedEntities parsed = parse_entity_json(exchange.response);
      ExtractedEntities out;
      out.research_object = parsed.research_object;
      out.task = task_from_string(parsed.task);  // throws UnknownTaskType
      out.raw_response = exchange.response;
      out.attempts = attempt;
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnparseableResponse || attempt == kMaxAttempts) throw;
      messages.push_back({Role::Assistant, exchange.response});
      messages.push_back(
          {Role::User,
           "That response could not be parsed. Reply again with only the JSON object "
           "{\"research_object\": \"...\", \"task\": \"...\"} and nothing else."});
    }
  }
  raise(ErrorCode::UnparseableResponse, "entity extraction exhausted retries");
}

namespace {

std::string normalize_for_fuzzy(const std::string& s) {
  std::vector<std::string> tokens = tokenize(s);
  std::sort(tokens.begin(), tokens.end());
  std::string joined;
  for (const std::string& t : tokens) {
    if (!joined.empty()) joined += ' ';
    joined += t;
  }
  return joined;
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), curr(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    curr[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
    }
    std::swap(prev, curr);
  }
  return prev[m];
}

}  // namespace

int fuzzy_similarity(const std::string& a, const std::string& b) {
  const std::string na = normalize_for_fuzzy(a);
  const std::string nb = normalize_for_fuzzy(b);
  if (na.empty() && nb.empty()) return 100;
  if (na.empty() || nb.empty()) return 0;
  const std::size_t dist = levenshtein(na, nb);
  const std::size_t longest = std::max(na.size(), nb.size());
  const int score =
      static_cast<int>(std::lround(100.0 * (1.0 - static_cast<double>(dist) / longest)));
  // a nonzero distance never reports a perfect match
  if (dist > 0 && score == 100) return 99;
  return score;
}

std::vector<EntityEvalCase> load_eval_cases(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) raise(ErrorCode::ParseError, "cannot open '" + jsonl_path + "'");
  std::vector<EntityEvalCase> cases;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      cases.push_back({j.at("question").get<std::string>(),
                       j.at("gold_object").get<std::string>(),
                       task_from_string(j.at("gold_task").get<std::string>())});
    } catch (const json::exception& e) {
      raise(ErrorCode::ParseError, jsonl_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

ExtractionScores evaluate_extraction(LlmClient& client,
                                     const std::vector<EntityEvalCase>& cases,
                                     int threshold) {
  if (cases.empty()) raise(ErrorCode::ConfigError, "no evaluation cases");
  int object_correct = 0, task_correct = 0;
  for (const EntityEvalCase& c : cases) {
    try {
      const ExtractedEntities e = extract_entities(client, c.question);
      if (fuzzy_similarity(e.research_object, c.gold_object) >= threshold) ++object_correct;
      if (e.task == c.gold_task) ++task_correct;
    } catch (const Error&) {
      // a failed case counts as incorrect on both metrics
    }
  }
  const double n = static_cast<double>(cases.size());
  return {100.0 * object_correct / n, 100.0 * task_correct / n};
}

}  // namespace specagent
