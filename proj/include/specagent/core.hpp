#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "specagent/error.hpp"

namespace specagent {

enum class TaskType { Classification, AnomalyDetection, Regression };

const char* to_string(TaskType task);
TaskType task_from_string(const std::string& name);

// Exactly one of the three payloads is active, matching the dataset's task.
// For anomaly detection `flag == true` means the sample conforms to the
// reference ("normal") class.
struct Label {
  enum class Kind { Class, Flag, Value };

  Kind kind = Kind::Class;
  std::string class_name;
  bool flag = false;
  double value = 0.0;
  std::string unit;

  static Label of_class(std::string name);
  static Label of_flag(bool normal);
  static Label of_value(double v, std::string unit = "");

  bool operator==(const Label& other) const;
  std::string display() const;
};

// One measured spectrum on a strictly increasing wavelength grid (nm).
// grid_step() is the mean increment; uniform_grid() gates derivative
// operations (max relative step deviation < 1e-6).
class Spectrum {
 public:
  Spectrum(Eigen::VectorXd wavelengths, Eigen::VectorXd intensities,
           std::string id);

  const Eigen::VectorXd& wavelengths() const { return wavelengths_; }
  const Eigen::VectorXd& intensities() const { return intensities_; }
  const std::string& id() const { return id_; }
  Eigen::Index size() const { return wavelengths_.size(); }

  double grid_step() const { return grid_step_; }
  bool uniform_grid() const { return uniform_grid_; }

  // same grid and id, new values
  Spectrum with_intensities(Eigen::VectorXd values) const;

 private:
  Eigen::VectorXd wavelengths_;
  Eigen::VectorXd intensities_;
  std::string id_;
  double grid_step_ = 0.0;
  bool uniform_grid_ = false;
};

struct SpectralDataset {
  std::vector<Spectrum> spectra;
  std::vector<Label> labels;
  std::string material;
  TaskType task = TaskType::Classification;

  std::size_t size() const { return spectra.size(); }
  const Eigen::VectorXd& grid() const;
  std::vector<std::string> class_set() const;
  const Label& label_of(const std::string& id) const;
  std::map<std::string, Label> label_map() const;

  // shared grid, matching label kinds; throws on violation
  void validate() const;

  // samples-by-wavelengths intensity matrix
  Eigen::MatrixXd intensity_matrix() const;
};

struct Split {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

struct SplitRatio {
  int train = 4;
  int validation = 2;
  int test = 2;
};

struct FeatureMatrix {
  Eigen::MatrixXd rows;                    // n_samples x dim
  std::vector<std::string> feature_names;  // size dim
  std::vector<std::string> ids;            // size n_samples

  Eigen::Index dim() const { return rows.cols(); }
  Eigen::Index n_samples() const { return rows.rows(); }
  int row_index(const std::string& id) const;  // -1 when absent
  std::uint64_t content_hash() const;
  void validate() const;
};

enum class DatasetFormat { Csv, Json };

// CSV layout: header `wavelength,<id1>,<id2>,...`, one row per wavelength;
// labels live in a sidecar `<stem>.labels.json` keyed by id. JSON format is a
// single self-describing file. Saving mirrors loading bit-exactly.
SpectralDataset load_dataset(const std::string& path, DatasetFormat format);
void save_dataset(const SpectralDataset& ds, const std::string& path,
                  DatasetFormat format);

// Deterministic 4:2:2 split, stratified by class for classification tasks.
Split split_dataset(const SpectralDataset& ds, const SplitRatio& ratio,
                    std::uint64_t seed);

// Seeded reduction to at most max_samples (class-proportional for
// classification); datasets already within the cap pass through untouched.
// Keeps prompt sizes inside provider token limits.
SpectralDataset subsample_dataset(const SpectralDataset& ds, int max_samples,
                                  std::uint64_t seed);

struct AnomalyDatasetResult {
  SpectralDataset dataset;
  std::vector<std::string> warnings;
};

// 60% reference samples (flag true), 20% samples from other classes and 20%
// noise-perturbed reference copies (both flag false). Perturbation is
// zero-mean Gaussian with per-wavelength sigma = noise_scale * reference-class
// standard deviation at that wavelength.
AnomalyDatasetResult build_anomaly_dataset(const SpectralDataset& ds,
                                           const std::string& reference_class,
                                           std::uint64_t seed,
                                           double noise_scale = 0.05);

}  // namespace specagent
