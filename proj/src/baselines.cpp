#include "specagent/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "specagent/features.hpp"
#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

const char* to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::KnnClassifier: return "knn";
    case BaselineKind::LinearRegression: return "lr";
    case BaselineKind::PlsRegression: return "plsr";
    case BaselineKind::OneClassMahalanobis: return "oc-mahalanobis";
    case BaselineKind::OneClassKnnDistance: return "oc-knn";
  }
  return "unknown";
}

std::string BaselineSpec::name() const {
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case BaselineKind::KnnClassifier: out << "(k=" << k << ")"; break;
    case BaselineKind::PlsRegression: out << "(lv=" << n_latent << ")"; break;
    case BaselineKind::OneClassMahalanobis: out << "(q=" << format_double(quantile) << ")"; break;
    case BaselineKind::OneClassKnnDistance:
      out << "(k=" << k << ", q=" << format_double(quantile) << ")";
      break;
    default: break;
  }
  return out.str();
}

void BaselineSpec::validate() const {
  if (k < 1) raise(ErrorCode::ConfigError, "k must be >= 1");
  if (n_latent < 1) raise(ErrorCode::ConfigError, "n_latent must be >= 1");
  if (quantile <= 0.0 || quantile >= 1.0)
    raise(ErrorCode::ConfigError, "quantile must lie in (0,1)");
}

namespace {

Eigen::MatrixXd rows_of(const FeatureMatrix& features, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), features.rows.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = features.rows.row(idx[i]);
  return out;
}

double quantile_threshold(std::vector<double> scores, double q) {
  std::sort(scores.begin(), scores.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::max<long>(0, static_cast<long>(std::ceil(q * scores.size())) - 1));
  return scores[std::min(rank, scores.size() - 1)];
}

Predictions knn_classify(const BaselineSpec& spec, const FeatureMatrix& features,
                         const std::vector<int>& train, const std::vector<int>& eval,
                         const std::map<std::string, Label>& truth) {
  Predictions out;
  for (int e : eval) {
    std::vector<std::pair<double, int>> neighbors;
    for (int t : train)
      neighbors.emplace_back((features.rows.row(e) - features.rows.row(t)).norm(), t);
    std::stable_sort(neighbors.begin(), neighbors.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const int kk = std::min<int>(spec.k, static_cast<int>(neighbors.size()));

    std::map<std::string, int> votes;
    for (int i = 0; i < kk; ++i)
      votes[truth.at(features.ids[static_cast<std::size_t>(neighbors[i].second)]).class_name] += 1;
    int best = 0;
    for (const auto& [label, count] : votes) best = std::max(best, count);
    std::set<std::string> tied;
    for (const auto& [label, count] : votes)
      if (count == best) tied.insert(label);

    Prediction p;
    if (tied.size() == 1) {
      p.label = *tied.begin();
    } else {
      // tie: the single nearest neighbor with a tied label decides
      for (int i = 0; i < kk; ++i) {
        const std::string& l =
            truth.at(features.ids[static_cast<std::size_t>(neighbors[i].second)]).class_name;
        if (tied.count(l)) {
          p.label = l;
          break;
        }
      }
    }
    out[features.ids[static_cast<std::size_t>(e)]] = std::move(p);
  }
  return out;
}

Eigen::VectorXd ols_predict(const Eigen::MatrixXd& Xtrain, const Eigen::VectorXd& y,
                            const Eigen::MatrixXd& Xeval) {
  Eigen::MatrixXd design(Xtrain.rows(), Xtrain.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(Xtrain.cols()) = Xtrain;
  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(y);
  Eigen::MatrixXd eval_design(Xeval.rows(), Xeval.cols() + 1);
  eval_design.col(0).setOnes();
  eval_design.rightCols(Xeval.cols()) = Xeval;
  return eval_design * beta;
}

Predictions regression_predict(const BaselineSpec& spec, const FeatureMatrix& features,
                               const std::vector<int>& train, const std::vector<int>& eval,
                               const std::map<std::string, Label>& truth) {
  const Eigen::MatrixXd Xtrain = rows_of(features, train);
  const Eigen::MatrixXd Xeval = rows_of(features, eval);
  Eigen::VectorXd y(static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i)
    y[static_cast<Eigen::Index>(i)] =
        truth.at(features.ids[static_cast<std::size_t>(train[i])]).value;

  Eigen::VectorXd pred;
  if (spec.kind == BaselineKind::LinearRegression) {
    pred = ols_predict(Xtrain, y, Xeval);
  } else {
    const int latent = std::min<int>(
        spec.n_latent, static_cast<int>(std::min<Eigen::Index>(Xtrain.rows() - 1, Xtrain.cols())));
    pred = pls_predict(pls_fit(Xtrain, y, latent), Xeval);
  }

  Predictions out;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    Prediction p;
    p.value = pred[static_cast<Eigen::Index>(i)];
    out[features.ids[static_cast<std::size_t>(eval[i])]] = std::move(p);
  }
  return out;
}

Predictions one_class_predict(const BaselineSpec& spec, const FeatureMatrix& features,
                              const std::vector<int>& train, const std::vector<int>& eval,
                              const std::map<std::string, Label>& truth) {
  std::vector<int> normals;
  for (int t : train)
    if (truth.at(features.ids[static_cast<std::size_t>(t)]).flag) normals.push_back(t);
  if (normals.size() < 2)
    raise(ErrorCode::TooFewSamples, "one-class fit needs at least 2 normal training samples");
  const Eigen::MatrixXd N = rows_of(features, normals);

  std::vector<double> train_scores;
  std::vector<double> eval_scores;

  if (spec.kind == BaselineKind::OneClassMahalanobis) {
    const Eigen::VectorXd mean = N.colwise().mean();
    const Eigen::MatrixXd centered = N.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(N.rows() - 1);
    const double ridge = 1e-6 * cov.trace() / static_cast<double>(cov.cols());
    cov += ridge * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
    const Eigen::LDLT<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success || !solver.isPositive())
      raise(ErrorCode::SingularCovariance, "covariance stays indefinite after the ridge");
    auto mahalanobis = [&](const Eigen::VectorXd& x) {
      const Eigen::VectorXd d = x - mean;
      const double m2 = d.dot(solver.solve(d));
      if (!std::isfinite(m2))
        raise(ErrorCode::SingularCovariance, "non-finite Mahalanobis distance");
      return std::sqrt(std::max(0.0, m2));
    };
    for (int t : normals) train_scores.push_back(mahalanobis(features.rows.row(t).transpose()));
    for (int e : eval) eval_scores.push_back(mahalanobis(features.rows.row(e).transpose()));
  } else {
    // training members are scored leave-one-out, both during calibration and
    // when they reappear in the eval set
    auto mean_knn = [&](Eigen::Index self, const Eigen::VectorXd& x) {
      std::vector<double> dists;
      for (std::size_t i = 0; i < normals.size(); ++i) {
        if (static_cast<Eigen::Index>(i) == self) continue;
        dists.push_back((x - N.row(static_cast<Eigen::Index>(i)).transpose()).norm());
      }
      std::sort(dists.begin(), dists.end());
      const int kk = std::min<int>(spec.k, static_cast<int>(dists.size()));
      double acc = 0.0;
      for (int i = 0; i < kk; ++i) acc += dists[static_cast<std::size_t>(i)];
      return acc / kk;
    };
    for (std::size_t i = 0; i < normals.size(); ++i)
      train_scores.push_back(mean_knn(static_cast<Eigen::Index>(i),
                                      N.row(static_cast<Eigen::Index>(i)).transpose()));
    for (int e : eval) {
      Eigen::Index self = -1;
      for (std::size_t i = 0; i < normals.size(); ++i)
        if (normals[i] == e) self = static_cast<Eigen::Index>(i);
      eval_scores.push_back(mean_knn(self, features.rows.row(e).transpose()));
    }
  }

  const double threshold = quantile_threshold(train_scores, spec.quantile);
  Predictions out;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    Prediction p;
    const double s = eval_scores[i];
    p.flag = s <= threshold;          // within the normal region
    p.score = s / (1.0 + s);          // monotone map into [0,1)
    out[features.ids[static_cast<std::size_t>(eval[i])]] = std::move(p);
  }
  return out;
}

}  // namespace

Predictions fit_predict(const BaselineSpec& spec, const FeatureMatrix& features,
                        const std::vector<int>& train, const std::vector<int>& eval,
                        const std::map<std::string, Label>& truth) {
  spec.validate();
  features.validate();
  if (train.empty()) raise(ErrorCode::TooFewSamples, "empty training set");
  for (int i : train)
    if (i < 0 || i >= static_cast<int>(features.ids.size()))
      raise(ErrorCode::DimMismatch, "train index out of range");
  for (int i : eval)
    if (i < 0 || i >= static_cast<int>(features.ids.size()))
      raise(ErrorCode::DimMismatch, "eval index out of range");

  switch (spec.kind) {
    case BaselineKind::KnnClassifier:
      return knn_classify(spec, features, train, eval, truth);
    case BaselineKind::LinearRegression:
    case BaselineKind::PlsRegression:
      return regression_predict(spec, features, train, eval, truth);
    case BaselineKind::OneClassMahalanobis:
    case BaselineKind::OneClassKnnDistance:
      return one_class_predict(spec, features, train, eval, truth);
  }
  raise(ErrorCode::ConfigError, "unhandled baseline kind");
}

std::vector<BaselineSpec> default_baselines(TaskType task) {
  switch (task) {
    case TaskType::Classification: {
      BaselineSpec knn;
      knn.kind = BaselineKind::KnnClassifier;
      return {knn};
    }
    case TaskType::Regression: {
      BaselineSpec lr, pls;
      lr.kind = BaselineKind::LinearRegression;
      pls.kind = BaselineKind::PlsRegression;
      return {lr, pls};
    }
    case TaskType::AnomalyDetection: {
      BaselineSpec maha, knn;
      maha.kind = BaselineKind::OneClassMahalanobis;
      knn.kind = BaselineKind::OneClassKnnDistance;
      return {maha, knn};
    }
  }
  return {};
}

namespace {

std::map<std::string, double> metrics_of(TaskType task, const Predictions& preds,
                                         const FeatureMatrix& features,
                                         const std::vector<int>& eval,
                                         const std::map<std::string, Label>& truth) {
  std::map<std::string, double> out;
  switch (task) {
    case TaskType::Classification: {
      std::map<std::string, std::string> pv, tv;
      for (int e : eval) {
        const std::string& id = features.ids[static_cast<std::size_t>(e)];
        pv[id] = preds.at(id).label;
        tv[id] = truth.at(id).class_name;
      }
      out["accuracy"] = accuracy(pv, tv);
      break;
    }
    case TaskType::Regression: {
      std::map<std::string, double> pv, tv;
      for (int e : eval) {
        const std::string& id = features.ids[static_cast<std::size_t>(e)];
        pv[id] = preds.at(id).value;
        tv[id] = truth.at(id).value;
      }
      out["r2"] = r_squared(pv, tv);
      out["rmse"] = rmse(pv, tv);
      break;
    }
    case TaskType::AnomalyDetection: {
      std::map<std::string, double> scores;
      std::map<std::string, bool> called, positives;
      for (int e : eval) {
        const std::string& id = features.ids[static_cast<std::size_t>(e)];
        scores[id] = preds.at(id).score;
        called[id] = !preds.at(id).flag;
        positives[id] = !truth.at(id).flag;
      }
      out["auc"] = auc(scores, positives);
      out["precision"] = flag_precision(called, positives);
      break;
    }
  }
  return out;
}

}  // namespace

ComparisonTable compare(const std::vector<const RunReport*>& llm_runs,
                        const std::vector<std::string>& llm_names,
                        const std::vector<BaselineSpec>& baselines,
                        const FeatureMatrix& features, const Split& split,
                        const std::map<std::string, Label>& truth) {
  if (llm_runs.size() != llm_names.size())
    raise(ErrorCode::ConfigError, "llm run and name counts differ");

  ComparisonTable table;
  table.feature_hash = features.content_hash();

  for (std::size_t i = 0; i < llm_runs.size(); ++i) {
    const RunReport& report = *llm_runs[i];
    std::map<std::string, std::vector<double>> values;
    for (const RepeatResult& r : report.repeats)
      if (r.ok)
        for (const auto& [key, v] : r.test_metrics) values[key].push_back(v);
    for (const auto& [key, vs] : values) {
      double mean = 0.0;
      for (double v : vs) mean += v;
      mean /= static_cast<double>(vs.size());
      double var = 0.0;
      for (double v : vs) var += (v - mean) * (v - mean);
      table.rows.push_back({llm_names[i], key, mean,
                            vs.size() > 1 ? std::sqrt(var / (vs.size() - 1)) : 0.0});
    }
  }

  const TaskType task = llm_runs.empty()
                            ? (baselines.empty() ? TaskType::Classification
                               : baselines.front().kind == BaselineKind::KnnClassifier
                                   ? TaskType::Classification
                               : baselines.front().kind == BaselineKind::LinearRegression ||
                                       baselines.front().kind == BaselineKind::PlsRegression
                                   ? TaskType::Regression
                                   : TaskType::AnomalyDetection)
                            : llm_runs.front()->task;

  for (const BaselineSpec& spec : baselines) {
    const Predictions preds = fit_predict(spec, features, split.train, split.test, truth);
    for (const auto& [key, v] : metrics_of(task, preds, features, split.test, truth))
      table.rows.push_back({spec.name(), key, v, 0.0});
  }
  return table;
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "method,metric,mean,std\n";
  for (const ComparisonRow& r : rows)
    out << r.method << ',' << r.metric << ',' << format_double(r.mean) << ','
        << format_double(r.std_dev) << '\n';
  return out.str();
}

std::string ComparisonTable::to_json() const {
  json j;
  j["feature_hash"] = feature_hash;
  json rows_json = json::array();
  for (const ComparisonRow& r : rows)
    rows_json.push_back({{"method", r.method},
                         {"metric", r.metric},
                         {"mean", r.mean},
                         {"std", r.std_dev}});
  j["rows"] = std::move(rows_json);
  return j.dump(2);
}

}  // namespace specagent
