#pragma once

#include <string>
#include <vector>

#include "specagent/core.hpp"
#include "specagent/llm.hpp"

namespace specagent {

struct ExtractedEntities {
  std::string research_object;
  TaskType task = TaskType::Classification;
  std::string raw_response;
  int attempts = 1;
};

// Prompts for JSON-only output at temperature 0.1 and parses it strictly.
// A malformed response earns one reformat retry with the bad output quoted;
// three failed attempts raise UnparseableResponse. A well-formed response
// with a task outside the closed vocabulary raises UnknownTaskType directly.
ExtractedEntities extract_entities(LlmClient& client, const std::string& question);

// Token-sort-normalized Levenshtein similarity in [0, 100]. 100 only when the
// normalized forms are identical.
int fuzzy_similarity(const std::string& a, const std::string& b);

struct EntityEvalCase {
  std::string question;
  std::string gold_object;
  TaskType gold_task = TaskType::Classification;
};

std::vector<EntityEvalCase> load_eval_cases(const std::string& jsonl_path);

struct ExtractionScores {
  double object_accuracy = 0.0;  // percent
  double task_accuracy = 0.0;    // percent
};

// Object correct iff fuzzy_similarity >= threshold, task by exact match.
// Backend failures count the case as incorrect on both metrics.
ExtractionScores evaluate_extraction(LlmClient& client,
                                     const std::vector<EntityEvalCase>& cases,
                                     int threshold = 80);

}  // namespace specagent
