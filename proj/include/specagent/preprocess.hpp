#pragma once

#include <string>
#include <vector>

#include "specagent/core.hpp"
#include "specagent/features.hpp"

namespace specagent {

enum class StepKind {
  AsLS,
  SavitzkyGolay,
  MinMax,
  Snv,
  Msc,
  Detrend,
  FirstDerivative,
  SecondDerivative,
};

const char* to_string(StepKind kind);

struct PreprocessStep {
  StepKind kind = StepKind::Snv;

  // AsLS
  double lambda = 1e5;
  double asymmetry = 0.01;
  int iters = 10;
  // SavitzkyGolay: window 2m+1
  int half_window = 5;
  int degree = 2;
  int deriv_order = 0;
  // Detrend
  int order = 1;

  void validate() const;
  std::string summary() const;  // "SavitzkyGolay(m=5, degree=2)"
};

// Accepts canonical kind names and the literature shorthand: SG, SNV, MM,
// MSC, DT, BC (AsLS), FD, SD, SGFD (Savitzky-Golay first derivative).
PreprocessStep step_from_name(const std::string& name);
// "SG+SNV" -> [SavitzkyGolay, Snv]
std::vector<PreprocessStep> chain_from_string(const std::string& text);
std::string chain_to_string(const std::vector<PreprocessStep>& steps);

struct MethodPlan {
  std::vector<PreprocessStep> steps;  // empty = explicit identity chain
  FeatureSpec feature;
  std::vector<std::string> provenance;  // KB record ids, or {"manual"}

  std::string to_json() const;
  static MethodPlan from_json(const std::string& text);
};

// --- transforms --------------------------------------------------------------

struct AslsResult {
  Spectrum corrected;
  Spectrum baseline;
  // weighted objective before/after each solve, under that iteration's weights
  std::vector<double> objective_before;
  std::vector<double> objective_after;
  // weights of the final solve; the returned baseline is the exact minimizer
  // of the objective under these
  Eigen::VectorXd final_weights;
};

AslsResult asls_baseline(const Spectrum& s, double lambda, double asymmetry, int iters);

// value of the penalized weighted least-squares objective
double asls_objective(const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                      const Eigen::VectorXd& weights, double lambda);

Spectrum savitzky_golay(const Spectrum& s, int half_window, int degree,
                        int deriv_order = 0);

Spectrum minmax_normalize(const Spectrum& s);

Spectrum snv(const Spectrum& s);

// y regressed on the reference (OLS, intercept + slope), then inverted.
Spectrum msc_single(const Spectrum& s, const Spectrum& reference);
// reference = mean spectrum of the batch unless given explicitly
SpectralDataset msc(const SpectralDataset& ds, const Spectrum* reference = nullptr);

Spectrum detrend(const Spectrum& s, int order);

// central differences with one-sided ends; requires a uniform grid
Spectrum derivative(const Spectrum& s, int order);

struct QualityReport {
  bool finite = true;
  double baseline_flatness = 0.0;  // mean |value| over the first/last 5%
  double noise_estimate = 0.0;     // sample std of the second difference
  std::vector<std::string> warnings;
};

QualityReport quality_report(const Spectrum& s);

struct ChainSpectrumResult {
  Spectrum spectrum;
  QualityReport quality;
};

struct ChainDatasetResult {
  SpectralDataset dataset;
  QualityReport quality;  // averaged over spectra
};

// Left-to-right composition. Failures rethrow with the step index prepended.
// Batch-level steps (MSC) require the dataset overload.
ChainSpectrumResult apply_chain(const Spectrum& s, const std::vector<PreprocessStep>& steps);
ChainDatasetResult apply_chain(const SpectralDataset& ds, const std::vector<PreprocessStep>& steps);

}  // namespace specagent
