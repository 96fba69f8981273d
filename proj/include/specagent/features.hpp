#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "specagent/core.hpp"

namespace specagent {

enum class FeatureKind { Pca, Pls, Cwt, LambertBeerPearson, Nmf, Peaks, Stats };

const char* to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

struct FeatureSpec {
  FeatureKind kind = FeatureKind::Pca;
  int n_components = 5;        // PCA
  int n_latent = 2;            // PLS
  std::vector<double> scales;  // CWT, in nm; empty = defaults from the grid
  std::string wavelet = "ricker";
  int n_top = 3;               // LambertBeerPearson
  int lbp_bins = 3;            // response bins for reference construction
  int rank = 2;                // NMF
  int iters = 200;
  std::uint64_t seed = 0;
  double prominence = 0.0;     // Peaks; 0 = 10% of the intensity range
  int max_peaks = 5;

  void validate(Eigen::Index n_samples, Eigen::Index dim) const;
};

// --- PCA ------------------------------------------------------------------

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd loadings;            // dim x k, orthonormal columns
  Eigen::VectorXd explained_variance;  // k eigenvalues, descending
  double total_variance = 0.0;         // trace of the covariance
  std::vector<std::string> warnings;

  Eigen::VectorXd explained_variance_ratio() const;
};

// Eigendecomposition of the covariance of column-centered X. Columns are
// unit-norm, ordered by descending eigenvalue, sign fixed so the
// largest-magnitude loading entry is positive. Asking for more components
// than the numerical rank returns the available ones plus a warning.
PcaModel pca_fit(const Eigen::MatrixXd& X, int n_components);
Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& X);

// --- PLS (NIPALS, single response) ----------------------------------------

struct PlsModel {
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
  Eigen::MatrixXd x_weights;   // dim x k, unit columns
  Eigen::MatrixXd x_loadings;  // dim x k
  Eigen::VectorXd y_loadings;  // k
};

PlsModel pls_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int n_latent);
Eigen::MatrixXd pls_scores(const PlsModel& model, const Eigen::MatrixXd& X);
Eigen::VectorXd pls_predict(const PlsModel& model, const Eigen::MatrixXd& X);

// --- CWT (Ricker) -----------------------------------------------------------

struct CwtResult {
  Eigen::MatrixXd coefficients;  // scales x translations
  Eigen::VectorXd features;      // per scale: max |W| then its wavelength
};

CwtResult cwt(const Spectrum& s, const std::vector<double>& scales);
std::vector<double> default_cwt_scales(const Spectrum& s, int count = 6);

// --- Lambert-Beer / Pearson -------------------------------------------------

Spectrum absorbance(const Spectrum& transmitted, const Spectrum& incident);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct PearsonFeatures {
  Eigen::VectorXd top_r;             // n_top coefficients, descending
  std::vector<std::string> ref_ids;  // matching reference ids
};

// refs: one reference curve per row, on the same grid as `a`.
PearsonFeatures pearson_features(const Eigen::VectorXd& a, const Eigen::MatrixXd& refs,
                                 const std::vector<std::string>& ref_ids, int n_top);

struct LbpModel {
  Eigen::MatrixXd references;  // n_refs x dim, mean curve per response bin
  std::vector<std::string> ref_ids;
  int n_top = 3;
};

// Reference curves = mean spectrum per response-value bin (tertiles by default).
LbpModel lbp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& responses, int n_bins,
                 int n_top);

// --- NMF --------------------------------------------------------------------

struct NmfModel {
  Eigen::MatrixXd basis;  // rank x dim, non-negative
  int iters = 200;
  std::uint64_t seed = 0;
  std::vector<double> objective_trace;  // Frobenius error per iteration
};

NmfModel nmf_fit(const Eigen::MatrixXd& X, int rank, int iters, std::uint64_t seed);
// Non-negative coefficients for new rows against the fitted basis.
Eigen::MatrixXd nmf_transform(const NmfModel& model, const Eigen::MatrixXd& X);

// --- Peaks and summary stats -------------------------------------------------

struct Peak {
  double wavelength = 0.0;
  double height = 0.0;
  double prominence = 0.0;
};

// Strict local maxima filtered by topographic prominence, sorted by
// prominence descending, truncated to max_peaks.
std::vector<Peak> detect_peaks(const Spectrum& s, double prominence, int max_peaks);

// [mean, sample std, min, max, skewness, excess kurtosis, trapezoid area,
//  peak count at the default prominence]
Eigen::VectorXd summarize_stats(const Spectrum& s);
std::vector<std::string> stats_feature_names();

// --- Unified extractor -------------------------------------------------------

struct FittedExtractor {
  FeatureSpec spec;
  std::variant<std::monostate, PcaModel, PlsModel, NmfModel, LbpModel> model;
};

// Fits on the training subset only (PLS and LBP read regression labels from
// the training samples). Stateless kinds (CWT, Peaks, Stats) carry no model.
FittedExtractor fit_extractor(const FeatureSpec& spec, const SpectralDataset& ds,
                              const std::vector<int>& train_indices);

// Feature rows for every sample of the dataset, in dataset order.
FeatureMatrix apply_extractor(const FittedExtractor& extractor, const SpectralDataset& ds);

std::string extractor_to_json(const FittedExtractor& extractor);
FittedExtractor extractor_from_json(const std::string& text);

}  // namespace specagent
