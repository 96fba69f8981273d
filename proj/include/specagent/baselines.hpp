#pragma once

#include <map>
#include <string>
#include <vector>

#include "specagent/core.hpp"
#include "specagent/reasoning.hpp"

namespace specagent {

enum class BaselineKind {
  KnnClassifier,
  LinearRegression,
  PlsRegression,
  OneClassMahalanobis,
  OneClassKnnDistance,
};

const char* to_string(BaselineKind kind);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::KnnClassifier;
  int k = 3;
  int n_latent = 2;
  double quantile = 0.95;  // training-score threshold for one-class flags

  std::string name() const;  // "knn(k=3)"
  void validate() const;
};

// Trains on the train rows and predicts the eval rows. One-class detectors
// fit on the normal (flag true) training samples only; their anomaly score is
// the Mahalanobis distance (ridge-regularized covariance) or the mean k-NN
// distance, thresholded at the training-score quantile.
Predictions fit_predict(const BaselineSpec& spec, const FeatureMatrix& features,
                        const std::vector<int>& train, const std::vector<int>& eval,
                        const std::map<std::string, Label>& truth);

struct ComparisonRow {
  std::string method;
  std::string metric;
  double mean = 0.0;
  double std_dev = 0.0;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  std::uint64_t feature_hash = 0;  // hash of the features every method consumed

  std::string to_csv() const;  // method,metric,mean,std
  std::string to_json() const;
};

// One row per (method, metric): the supplied LLM reports first, then each
// baseline evaluated on the same features, split and metrics. Deterministic
// baselines repeat identically, so their std is 0.
ComparisonTable compare(const std::vector<const RunReport*>& llm_runs,
                        const std::vector<std::string>& llm_names,
                        const std::vector<BaselineSpec>& baselines,
                        const FeatureMatrix& features, const Split& split,
                        const std::map<std::string, Label>& truth);

// task-appropriate default baseline set
std::vector<BaselineSpec> default_baselines(TaskType task);

}  // namespace specagent
