#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "specagent/core.hpp"
#include "specagent/llm.hpp"

namespace specagent {

struct ReasoningConfig {
  int max_rounds = 5;
  double delta = 0.01;        // convergence threshold on the validation metric
  bool absolute_delta = false;  // stop on |improvement| < delta instead of
                                // improvement < delta (the printed form)
  int hard_sample_cap = 10;   // classification
  int hard_sample_top_k = 5;  // regression / anomaly
  double temperature = 0.5;
  int repeats = 10;
  std::uint64_t seed = 0;
  int max_exemplars = 0;  // 0 = unlimited; otherwise a seeded subsample

  void validate() const;
};

// Per-task payload; only the fields for the active task are meaningful.
// `flag == true` means the sample conforms to the reference class; `score`
// is the anomaly score in [0,1], higher = more anomalous.
struct Prediction {
  std::string label;
  double value = 0.0;
  bool flag = true;
  double score = 0.0;
};

using Predictions = std::map<std::string, Prediction>;

// System message states the task, the feature semantics and the output
// schema; the user message lists exemplars as `id | f1,...,fk | label` lines
// (6 significant digits) followed by unlabeled query lines. Throws
// BudgetExceeded when budget_tokens > 0 and the estimate exceeds it.
std::vector<ChatMessage> build_prompt(TaskType task, const FeatureMatrix& features,
                                      const std::vector<std::string>& exemplar_ids,
                                      const std::map<std::string, Label>& truth,
                                      const std::vector<std::string>& query_ids,
                                      int budget_tokens = 0);

struct ParsedPredictions {
  Predictions predictions;
  std::vector<std::string> warnings;
};

// Strict JSON (fenced blocks tolerated): every expected id exactly once,
// regression values finite, anomaly scores clamped to [0,1] with a warning.
// A missing anomaly score falls back to the flag (normal -> 0, anomaly -> 1).
ParsedPredictions parse_predictions(TaskType task, const std::string& response,
                                    const std::vector<std::string>& expected_ids);

// --- metrics ------------------------------------------------------------

double accuracy(const std::map<std::string, std::string>& preds,
                const std::map<std::string, std::string>& truth);

// Pairwise form with half-credit ties (positives should score higher).
double auc(const std::map<std::string, double>& scores,
           const std::map<std::string, bool>& is_positive);

double r_squared(const std::map<std::string, double>& preds,
                 const std::map<std::string, double>& truth);

double rmse(const std::map<std::string, double>& preds,
            const std::map<std::string, double>& truth);

// Precision of anomaly calls: of the samples flagged anomalous, the fraction
// that truly are. 0 when nothing is flagged.
double flag_precision(const std::map<std::string, bool>& pred_is_anomaly,
                      const std::map<std::string, bool>& truth_is_anomaly);

// --- hard samples ------------------------------------------------------------

// Classification: all misclassified ids, capped by descending id order.
// Regression: |residual| > epsilon with epsilon = this turn's RMSE, top-k by
// magnitude. Anomaly: ids ranked by the number of misordered score pairs they
// join. Ids already in the exemplar set are excluded.
std::vector<std::string> select_hard_samples(TaskType task, const Predictions& preds,
                                             const std::map<std::string, Label>& truth,
                                             const std::vector<std::string>& exemplar_ids,
                                             const ReasoningConfig& cfg);

// --- run state -----------------------------------------------------------

struct TurnState {
  int round = 0;
  std::vector<std::string> exemplar_ids;  // as used in this round's prompt
  Predictions predictions;                // over the validation set
  double metric = 0.0;                    // primary validation metric
  std::vector<std::string> hard_ids;
  // half-open range of entries this round appended to the transcript log;
  // [-1, -1) when no log is attached
  int transcript_begin = -1;
  int transcript_end = -1;
};

struct RepeatResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::vector<TurnState> turns;
  int convergence_round = 0;
  std::string stop_reason;  // converged | no_hard_samples | max_rounds
  Predictions test_predictions;
  std::map<std::string, double> test_metrics;
  int test_transcript_begin = -1;  // transcript range of the test evaluation
  int test_transcript_end = -1;
};

struct RunReport {
  TaskType task = TaskType::Classification;
  ReasoningConfig config;
  std::vector<RepeatResult> repeats;
  std::map<std::string, double> aggregate_mean;  // over successful repeats
  std::map<std::string, double> aggregate_std;   // sample std, 0 for n < 2

  std::string primary_metric() const;
  std::string to_json() const;
  std::string to_csv() const;
  static RunReport from_json(const std::string& text);
};

// The multi-turn protocol: round-1 exemplars are the training set (seeded
// subsample when capped or over budget); each round submits the whole
// validation set, computes the metric, selects hard samples and appends them
// with true labels for the next round. Stops when the improvement drops below
// delta (from round 2), when no hard samples remain, or at max_rounds; only
// then is the test set evaluated, once, with the final prompt. Repeats run
// with seeds seed..seed+repeats-1; a failing repeat is recorded, not dropped.
RunReport run_multi_turn(TaskType task, const FeatureMatrix& features, const Split& split,
                         const std::map<std::string, Label>& truth, LlmClient& client,
                         const ReasoningConfig& cfg);

// max_rounds = 1
RunReport single_turn(TaskType task, const FeatureMatrix& features, const Split& split,
                      const std::map<std::string, Label>& truth, LlmClient& client,
                      const ReasoningConfig& cfg);

// Deterministic prompt-reading responder used for hermetic runs: 1-NN for
// class labels and anomaly flags, distance-weighted 3-NN for regression,
// anomaly score d/(1+d) from the distance d to the nearest normal exemplar.
class NearestNeighborBackend : public LlmBackend {
 public:
  std::string name() const override { return "nn-mock"; }
  bool deterministic() const override { return true; }
  std::string complete(const LlmConfig& cfg, const std::vector<ChatMessage>& messages) override;
};

}  // namespace specagent
