#include "specagent/features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "specagent/rng.hpp"
#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Pca: return "PCA";
    case FeatureKind::Pls: return "PLS";
    case FeatureKind::Cwt: return "CWT";
    case FeatureKind::LambertBeerPearson: return "LambertBeerPearson";
    case FeatureKind::Nmf: return "NMF";
    case FeatureKind::Peaks: return "Peaks";
    case FeatureKind::Stats: return "Stats";
  }
  return "unknown";
}

FeatureKind feature_kind_from_string(const std::string& name) {
  const std::string key = to_lower(trim(name));
  if (key == "pca") return FeatureKind::Pca;
  if (key == "pls" || key == "plsr") return FeatureKind::Pls;
  if (key == "cwt") return FeatureKind::Cwt;
  if (key == "lambertbeerpearson" || key == "lbp" || key == "pearson" ||
      key == "pearson correlation features")
    return FeatureKind::LambertBeerPearson;
  if (key == "nmf") return FeatureKind::Nmf;
  if (key == "peaks") return FeatureKind::Peaks;
  if (key == "stats") return FeatureKind::Stats;
  raise(ErrorCode::NoResolvablePlan, "unknown feature extractor '" + name + "'");
}

void FeatureSpec::validate(Eigen::Index n_samples, Eigen::Index dim) const {
  const Eigen::Index cap = std::min<Eigen::Index>(n_samples - 1, dim);
  switch (kind) {
    case FeatureKind::Pca:
      if (n_components < 1 || n_components > cap)
        raise(ErrorCode::DimMismatch,
              "PCA components must lie in [1, min(samples-1, dim)] = [1, " +
                  std::to_string(cap) + "]");
      break;
    case FeatureKind::Pls:
      if (n_latent < 1 || n_latent > cap)
        raise(ErrorCode::DimMismatch, "PLS latent count must lie in [1, " +
                                          std::to_string(cap) + "]");
      break;
    case FeatureKind::Cwt:
      for (double a : scales)
        if (a <= 0) raise(ErrorCode::ParseError, "CWT scales must be positive");
      if (wavelet != "ricker")
        raise(ErrorCode::ParseError, "unsupported wavelet '" + wavelet + "'");
      break;
    case FeatureKind::LambertBeerPearson:
      if (n_top < 1) raise(ErrorCode::ParseError, "n_top must be >= 1");
      if (lbp_bins < n_top)
        raise(ErrorCode::ParseError, "need at least n_top reference bins");
      break;
    case FeatureKind::Nmf:
      if (rank < 1 || iters < 1)
        raise(ErrorCode::ParseError, "NMF rank and iters must be >= 1");
      break;
    case FeatureKind::Peaks:
      if (prominence < 0) raise(ErrorCode::ParseError, "prominence must be >= 0");
      if (max_peaks < 1) raise(ErrorCode::ParseError, "max_peaks must be >= 1");
      break;
    case FeatureKind::Stats:
      break;
  }
}

// --- PCA ---------------------------------------------------------------

Eigen::VectorXd PcaModel::explained_variance_ratio() const {
  if (total_variance == 0.0) return Eigen::VectorXd::Zero(explained_variance.size());
  return explained_variance / total_variance;
}

PcaModel pca_fit(const Eigen::MatrixXd& X, int n_components) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 2) raise(ErrorCode::TooFewSamples, "PCA needs at least 2 samples");
  if (n_components < 1 || n_components > std::min<Eigen::Index>(n - 1, d))
    raise(ErrorCode::DimMismatch, "PCA components out of range");

  PcaModel model;
  model.mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  model.total_variance = cov.trace();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    raise(ErrorCode::SingularSystem, "PCA eigendecomposition failed");
  // SelfAdjointEigenSolver sorts ascending
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();

  const double tol = std::max(1e-12, values[0] * 1e-12);
  int rank = 0;
  for (Eigen::Index k = 0; k < values.size(); ++k)
    if (values[k] > tol) ++rank;
  int keep = n_components;
  if (rank < n_components) {
    keep = std::max(1, rank);
    model.warnings.push_back("requested " + std::to_string(n_components) +
                             " components but numerical rank is " + std::to_string(rank));
  }

  model.loadings = vectors.leftCols(keep);
  model.explained_variance = values.head(keep).cwiseMax(0.0);
  for (int k = 0; k < keep; ++k) {
    Eigen::Index at = 0;
    model.loadings.col(k).cwiseAbs().maxCoeff(&at);
    if (model.loadings(at, k) < 0) model.loadings.col(k) *= -1.0;
  }
  return model;
}

Eigen::MatrixXd pca_transform(const PcaModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.mean.size())
    raise(ErrorCode::DimMismatch, "PCA transform dim " + std::to_string(X.cols()) +
                                      " does not match fit dim " + std::to_string(model.mean.size()));
  return (X.rowwise() - model.mean.transpose()) * model.loadings;
}

// --- PLS ---------------------------------------------------------------

PlsModel pls_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int n_latent) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 2) raise(ErrorCode::TooFewSamples, "PLS needs at least 2 samples");
  if (y.size() != n) raise(ErrorCode::DimMismatch, "response length does not match sample count");
  if (n_latent < 1 || n_latent > std::min<Eigen::Index>(n - 1, d))
    raise(ErrorCode::DimMismatch, "PLS latent count out of range");

  PlsModel model;
  model.x_mean = X.colwise().mean();
  model.y_mean = y.mean();
  Eigen::MatrixXd Xc = X.rowwise() - model.x_mean.transpose();
  Eigen::VectorXd yc = y.array() - model.y_mean;
  if (yc.cwiseAbs().maxCoeff() == 0.0)
    raise(ErrorCode::DegenerateResponse, "response is constant");

  model.x_weights.resize(d, n_latent);
  model.x_loadings.resize(d, n_latent);
  model.y_loadings.resize(n_latent);

  for (int k = 0; k < n_latent; ++k) {
    Eigen::VectorXd w = Xc.transpose() * yc;
    const double norm = w.norm();
    if (norm < 1e-14)
      raise(ErrorCode::DegenerateResponse,
            "residual response no longer covaries with predictors at component " +
                std::to_string(k + 1));
    w /= norm;
    const Eigen::VectorXd t = Xc * w;
    const double tt = t.squaredNorm();
    if (tt < 1e-14)
      raise(ErrorCode::DegenerateResponse, "vanishing scores at component " + std::to_string(k + 1));
    const Eigen::VectorXd p = Xc.transpose() * t / tt;
    const double c = yc.dot(t) / tt;
    Xc -= t * p.transpose();
    yc -= t * c;
    model.x_weights.col(k) = w;
    model.x_loadings.col(k) = p;
    model.y_loadings[k] = c;
  }
  return model;
}

Eigen::MatrixXd pls_scores(const PlsModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.x_mean.size())
    raise(ErrorCode::DimMismatch, "PLS transform dim does not match fit dim");
  const int k = static_cast<int>(model.x_weights.cols());
  Eigen::MatrixXd Xc = X.rowwise() - model.x_mean.transpose();
  Eigen::MatrixXd scores(X.rows(), k);
  for (int j = 0; j < k; ++j) {
    scores.col(j) = Xc * model.x_weights.col(j);
    Xc -= scores.col(j) * model.x_loadings.col(j).transpose();
  }
  return scores;
}

Eigen::VectorXd pls_predict(const PlsModel& model, const Eigen::MatrixXd& X) {
  return (pls_scores(model, X) * model.y_loadings).array() + model.y_mean;
}

// --- CWT ---------------------------------------------------------------

namespace {

// standard L2-normalized Ricker (mexican hat)
double ricker(double u) {
  static const double norm = 2.0 / (std::sqrt(3.0) * std::pow(M_PI, 0.25));
  return norm * (1.0 - u * u) * std::exp(-0.5 * u * u);
}

}  // namespace

std::vector<double> default_cwt_scales(const Spectrum& s, int count) {
  const double lo = 2.0 * s.grid_step();
  const double hi = (s.wavelengths()[s.size() - 1] - s.wavelengths()[0]) / 10.0;
  std::vector<double> scales;
  for (int k = 0; k < count; ++k)
    scales.push_back(lo * std::pow(hi / lo, count == 1 ? 0.0 : k / double(count - 1)));
  return scales;
}

CwtResult cwt(const Spectrum& s, const std::vector<double>& scales) {
  if (s.size() < 8) raise(ErrorCode::LengthMismatch, "CWT needs at least 8 points");
  for (double a : scales)
    if (a <= 0) raise(ErrorCode::ParseError, "CWT scales must be positive");

  const Eigen::VectorXd& x = s.wavelengths();
  const Eigen::VectorXd& y = s.intensities();
  const Eigen::Index n = x.size();

  // trapezoid quadrature weights handle mildly non-uniform grids
  Eigen::VectorXd qw(n);
  qw[0] = 0.5 * (x[1] - x[0]);
  qw[n - 1] = 0.5 * (x[n - 1] - x[n - 2]);
  for (Eigen::Index i = 1; i + 1 < n; ++i) qw[i] = 0.5 * (x[i + 1] - x[i - 1]);

  CwtResult result;
  result.coefficients.resize(static_cast<Eigen::Index>(scales.size()), n);
  result.features.resize(2 * static_cast<Eigen::Index>(scales.size()));

  for (std::size_t si = 0; si < scales.size(); ++si) {
    const double a = scales[si];
    const double support = 5.0 * a;  // Ricker is negligible beyond |u| = 5
    for (Eigen::Index b = 0; b < n; ++b) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double d = x[j] - x[b];
        if (std::abs(d) > support) continue;
        acc += y[j] * ricker(d / a) * qw[j];
      }
      result.coefficients(static_cast<Eigen::Index>(si), b) = acc / std::sqrt(a);
    }
    Eigen::Index at = 0;
    const double peak = result.coefficients.row(static_cast<Eigen::Index>(si)).cwiseAbs().maxCoeff(&at);
    result.features[2 * static_cast<Eigen::Index>(si)] = peak;
    result.features[2 * static_cast<Eigen::Index>(si) + 1] = x[at];
  }
  return result;
}

// --- Lambert-Beer / Pearson ----------------------------------------------

Spectrum absorbance(const Spectrum& transmitted, const Spectrum& incident) {
  if (transmitted.size() != incident.size())
    raise(ErrorCode::LengthMismatch, "transmitted and incident grids differ in length");
  const Eigen::VectorXd& i1 = transmitted.intensities();
  const Eigen::VectorXd& i0 = incident.intensities();
  for (Eigen::Index k = 0; k < i1.size(); ++k)
    if (i1[k] <= 0.0 || i0[k] <= 0.0)
      raise(ErrorCode::NonPositiveIntensity,
            "intensity at index " + std::to_string(k) + " is not positive");
  return transmitted.with_intensities((i0.array() / i1.array()).log10());
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) raise(ErrorCode::LengthMismatch, "pearson input lengths differ");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (denom == 0.0) raise(ErrorCode::ConstantReference, "pearson input is constant");
  return std::clamp((da * db).sum() / denom, -1.0, 1.0);
}

PearsonFeatures pearson_features(const Eigen::VectorXd& a, const Eigen::MatrixXd& refs,
                                 const std::vector<std::string>& ref_ids, int n_top) {
  if (refs.rows() != static_cast<Eigen::Index>(ref_ids.size()))
    raise(ErrorCode::LengthMismatch, "reference ids do not match reference count");
  if (refs.rows() < n_top)
    raise(ErrorCode::LengthMismatch, "need at least n_top references");
  std::vector<std::pair<double, std::size_t>> scored;
  for (Eigen::Index j = 0; j < refs.rows(); ++j) {
    const Eigen::VectorXd r = refs.row(j).transpose();
    if ((r.array() - r.mean()).abs().maxCoeff() == 0.0)
      raise(ErrorCode::ConstantReference, "reference '" + ref_ids[j] + "' is constant");
    scored.emplace_back(pearson(a, r), static_cast<std::size_t>(j));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& l, const auto& r) { return l.first > r.first; });
  PearsonFeatures out;
  out.top_r.resize(n_top);
  for (int k = 0; k < n_top; ++k) {
    out.top_r[k] = scored[k].first;
    out.ref_ids.push_back(ref_ids[scored[k].second]);
  }
  return out;
}

LbpModel lbp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& responses, int n_bins,
                 int n_top) {
  if (X.rows() != responses.size())
    raise(ErrorCode::DimMismatch, "responses do not match sample count");
  if (X.rows() < n_bins)
    raise(ErrorCode::TooFewSamples, "need at least one sample per reference bin");

  // equal-count bins over the sorted response values
  std::vector<Eigen::Index> order(X.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return responses[a] < responses[b]; });

  LbpModel model;
  model.n_top = n_top;
  model.references = Eigen::MatrixXd::Zero(n_bins, X.cols());
  for (int b = 0; b < n_bins; ++b) {
    const Eigen::Index lo = X.rows() * b / n_bins;
    const Eigen::Index hi = X.rows() * (b + 1) / n_bins;
    for (Eigen::Index k = lo; k < hi; ++k) model.references.row(b) += X.row(order[k]);
    model.references.row(b) /= static_cast<double>(hi - lo);
    model.ref_ids.push_back("bin" + std::to_string(b + 1));
  }
  return model;
}

// --- NMF ---------------------------------------------------------------

NmfModel nmf_fit(const Eigen::MatrixXd& X, int rank, int iters, std::uint64_t seed) {
  if ((X.array() < 0.0).any())
    raise(ErrorCode::NegativeInput, "NMF input must be non-negative");
  if (rank < 1 || iters < 1) raise(ErrorCode::ParseError, "NMF rank and iters must be >= 1");

  const Eigen::Index n = X.rows(), d = X.cols();
  Rng rng(seed);
  Eigen::MatrixXd W(n, rank), H(rank, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < rank; ++k) W(i, k) = rng.uniform(0.1, 1.0);
  for (int k = 0; k < rank; ++k)
    for (Eigen::Index j = 0; j < d; ++j) H(k, j) = rng.uniform(0.1, 1.0);

  constexpr double kEps = 1e-12;
  NmfModel model;
  model.iters = iters;
  model.seed = seed;
  for (int it = 0; it < iters; ++it) {
    H.array() *= (W.transpose() * X).array() / ((W.transpose() * W * H).array() + kEps);
    W.array() *= (X * H.transpose()).array() / ((W * H * H.transpose()).array() + kEps);
    model.objective_trace.push_back((X - W * H).norm());
  }
  model.basis = H;
  return model;
}

Eigen::MatrixXd nmf_transform(const NmfModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.basis.cols())
    raise(ErrorCode::DimMismatch, "NMF transform dim does not match basis");
  if ((X.array() < 0.0).any())
    raise(ErrorCode::NegativeInput, "NMF input must be non-negative");

  const Eigen::MatrixXd& H = model.basis;
  Rng rng(model.seed);
  Eigen::MatrixXd W(X.rows(), H.rows());
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index k = 0; k < W.cols(); ++k) W(i, k) = rng.uniform(0.1, 1.0);
  constexpr double kEps = 1e-12;
  for (int it = 0; it < model.iters; ++it)
    W.array() *= (X * H.transpose()).array() / ((W * H * H.transpose()).array() + kEps);
  return W;
}

// --- peaks and stats --------------------------------------------------------

std::vector<Peak> detect_peaks(const Spectrum& s, double prominence, int max_peaks) {
  if (prominence <= 0) raise(ErrorCode::ParseError, "prominence must be > 0");
  const Eigen::VectorXd& y = s.intensities();
  const Eigen::Index n = y.size();

  std::vector<Peak> peaks;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    if (!(y[i] > y[i - 1] && y[i] > y[i + 1])) continue;
    // topographic prominence: walk out to the first higher point on each side
    // and take the highest of the two valley floors
    double left_min = y[i];
    for (Eigen::Index j = i - 1; j >= 0; --j) {
      if (y[j] > y[i]) break;
      left_min = std::min(left_min, y[j]);
    }
    double right_min = y[i];
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (y[j] > y[i]) break;
      right_min = std::min(right_min, y[j]);
    }
    const double prom = y[i] - std::max(left_min, right_min);
    if (prom >= prominence)
      peaks.push_back({s.wavelengths()[i], y[i], prom});
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.prominence > b.prominence; });
  if (static_cast<int>(peaks.size()) > max_peaks) peaks.resize(max_peaks);
  return peaks;
}

Eigen::VectorXd summarize_stats(const Spectrum& s) {
  const Eigen::VectorXd& y = s.intensities();
  const Eigen::Index n = y.size();
  const double mean = y.mean();
  const Eigen::ArrayXd centered = y.array() - mean;
  const double m2 = centered.square().sum() / n;
  const double sd = n > 1 ? std::sqrt(centered.square().sum() / (n - 1)) : 0.0;

  double skew = 0.0, kurt = 0.0;
  if (m2 > 0) {
    skew = (centered.pow(3).sum() / n) / std::pow(m2, 1.5);
    kurt = (centered.pow(4).sum() / n) / (m2 * m2) - 3.0;
  }

  double area = 0.0;
  for (Eigen::Index i = 1; i < n; ++i)
    area += 0.5 * (y[i] + y[i - 1]) * (s.wavelengths()[i] - s.wavelengths()[i - 1]);

  const double range = y.maxCoeff() - y.minCoeff();
  const double peak_count =
      range > 0 ? static_cast<double>(detect_peaks(s, 0.1 * range, n > 0 ? static_cast<int>(n) : 1).size())
                : 0.0;

  Eigen::VectorXd out(8);
  out << mean, sd, y.minCoeff(), y.maxCoeff(), skew, kurt, area, peak_count;
  return out;
}

std::vector<std::string> stats_feature_names() {
  return {"mean", "std", "min", "max", "skewness", "kurtosis", "area", "peak_count"};
}

// --- unified extractor -------------------------------------------------------

namespace {

Eigen::MatrixXd subset_rows(const Eigen::MatrixXd& X, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  return out;
}

std::vector<double> cwt_scales_for(const FeatureSpec& spec, const Spectrum& s) {
  return spec.scales.empty() ? default_cwt_scales(s) : spec.scales;
}

}  // namespace

FittedExtractor fit_extractor(const FeatureSpec& spec, const SpectralDataset& ds,
                              const std::vector<int>& train_indices) {
  if (train_indices.empty()) raise(ErrorCode::TooFewSamples, "no training samples");
  const Eigen::MatrixXd all = ds.intensity_matrix();
  const Eigen::MatrixXd X = subset_rows(all, train_indices);
  spec.validate(X.rows(), X.cols());

  FittedExtractor fitted;
  fitted.spec = spec;
  switch (spec.kind) {
    case FeatureKind::Pca:
      fitted.model = pca_fit(X, spec.n_components);
      break;
    case FeatureKind::Pls: {
      Eigen::VectorXd y(X.rows());
      for (std::size_t i = 0; i < train_indices.size(); ++i) {
        const Label& l = ds.labels[static_cast<std::size_t>(train_indices[i])];
        if (l.kind != Label::Kind::Value)
          raise(ErrorCode::DegenerateResponse, "PLS features need regression labels");
        y[static_cast<Eigen::Index>(i)] = l.value;
      }
      fitted.model = pls_fit(X, y, spec.n_latent);
      break;
    }
    case FeatureKind::LambertBeerPearson: {
      Eigen::VectorXd y(X.rows());
      for (std::size_t i = 0; i < train_indices.size(); ++i) {
        const Label& l = ds.labels[static_cast<std::size_t>(train_indices[i])];
        if (l.kind != Label::Kind::Value)
          raise(ErrorCode::DegenerateResponse,
                "Lambert-Beer-Pearson references need regression labels");
        y[static_cast<Eigen::Index>(i)] = l.value;
      }
      fitted.model = lbp_fit(X, y, spec.lbp_bins, spec.n_top);
      break;
    }
    case FeatureKind::Nmf:
      fitted.model = nmf_fit(X, spec.rank, spec.iters, spec.seed);
      break;
    case FeatureKind::Cwt:
    case FeatureKind::Peaks:
    case FeatureKind::Stats:
      fitted.model = std::monostate{};
      break;
  }
  return fitted;
}

FeatureMatrix apply_extractor(const FittedExtractor& extractor, const SpectralDataset& ds) {
  const FeatureSpec& spec = extractor.spec;
  FeatureMatrix fm;
  for (const Spectrum& s : ds.spectra) fm.ids.push_back(s.id());

  switch (spec.kind) {
    case FeatureKind::Pca: {
      const auto& model = std::get<PcaModel>(extractor.model);
      fm.rows = pca_transform(model, ds.intensity_matrix());
      for (Eigen::Index k = 0; k < fm.rows.cols(); ++k)
        fm.feature_names.push_back("pc" + std::to_string(k + 1));
      break;
    }
    case FeatureKind::Pls: {
      const auto& model = std::get<PlsModel>(extractor.model);
      fm.rows = pls_scores(model, ds.intensity_matrix());
      for (Eigen::Index k = 0; k < fm.rows.cols(); ++k)
        fm.feature_names.push_back("lv" + std::to_string(k + 1));
      break;
    }
    case FeatureKind::Cwt: {
      const std::vector<double> scales = cwt_scales_for(spec, ds.spectra.front());
      fm.rows.resize(static_cast<Eigen::Index>(ds.size()), 2 * static_cast<Eigen::Index>(scales.size()));
      for (std::size_t i = 0; i < ds.size(); ++i)
        fm.rows.row(static_cast<Eigen::Index>(i)) = cwt(ds.spectra[i], scales).features.transpose();
      for (std::size_t k = 0; k < scales.size(); ++k) {
        fm.feature_names.push_back("cwt_max_s" + std::to_string(k + 1));
        fm.feature_names.push_back("cwt_loc_s" + std::to_string(k + 1));
      }
      break;
    }
    case FeatureKind::LambertBeerPearson: {
      const auto& model = std::get<LbpModel>(extractor.model);
      fm.rows.resize(static_cast<Eigen::Index>(ds.size()), model.n_top);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const PearsonFeatures pf = pearson_features(ds.spectra[i].intensities(),
                                                    model.references, model.ref_ids, model.n_top);
        fm.rows.row(static_cast<Eigen::Index>(i)) = pf.top_r.transpose();
      }
      for (int k = 0; k < model.n_top; ++k)
        fm.feature_names.push_back("pearson_r" + std::to_string(k + 1));
      break;
    }
    case FeatureKind::Nmf: {
      const auto& model = std::get<NmfModel>(extractor.model);
      fm.rows = nmf_transform(model, ds.intensity_matrix());
      for (Eigen::Index k = 0; k < fm.rows.cols(); ++k)
        fm.feature_names.push_back("nmf" + std::to_string(k + 1));
      break;
    }
    case FeatureKind::Peaks: {
      fm.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.size()), 3 * spec.max_peaks);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const Eigen::VectorXd& y = ds.spectra[i].intensities();
        const double range = y.maxCoeff() - y.minCoeff();
        const double prom = spec.prominence > 0 ? spec.prominence : 0.1 * range;
        if (prom <= 0) continue;
        const std::vector<Peak> peaks = detect_peaks(ds.spectra[i], prom, spec.max_peaks);
        for (std::size_t p = 0; p < peaks.size(); ++p) {
          fm.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(3 * p)) = peaks[p].wavelength;
          fm.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(3 * p + 1)) = peaks[p].height;
          fm.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(3 * p + 2)) = peaks[p].prominence;
        }
      }
      for (int p = 0; p < spec.max_peaks; ++p) {
        fm.feature_names.push_back("peak" + std::to_string(p + 1) + "_nm");
        fm.feature_names.push_back("peak" + std::to_string(p + 1) + "_height");
        fm.feature_names.push_back("peak" + std::to_string(p + 1) + "_prom");
      }
      break;
    }
    case FeatureKind::Stats: {
      fm.rows.resize(static_cast<Eigen::Index>(ds.size()), 8);
      for (std::size_t i = 0; i < ds.size(); ++i)
        fm.rows.row(static_cast<Eigen::Index>(i)) = summarize_stats(ds.spectra[i]).transpose();
      fm.feature_names = stats_feature_names();
      break;
    }
  }
  fm.validate();
  return fm;
}

// --- serialization -----------------------------------------------------------

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return {};
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

std::string extractor_to_json(const FittedExtractor& extractor) {
  json j;
  j["schema_version"] = 1;
  j["kind"] = to_string(extractor.spec.kind);
  json spec;
  spec["n_components"] = extractor.spec.n_components;
  spec["n_latent"] = extractor.spec.n_latent;
  spec["scales"] = extractor.spec.scales;
  spec["wavelet"] = extractor.spec.wavelet;
  spec["n_top"] = extractor.spec.n_top;
  spec["bins"] = extractor.spec.lbp_bins;
  spec["rank"] = extractor.spec.rank;
  spec["iters"] = extractor.spec.iters;
  spec["seed"] = extractor.spec.seed;
  spec["prominence"] = extractor.spec.prominence;
  spec["max_peaks"] = extractor.spec.max_peaks;
  j["spec"] = std::move(spec);

  if (const auto* pca = std::get_if<PcaModel>(&extractor.model)) {
    j["model"] = {{"mean", vector_to_json(pca->mean)},
                  {"loadings", matrix_to_json(pca->loadings)},
                  {"explained_variance", vector_to_json(pca->explained_variance)},
                  {"total_variance", pca->total_variance}};
  } else if (const auto* pls = std::get_if<PlsModel>(&extractor.model)) {
    j["model"] = {{"x_mean", vector_to_json(pls->x_mean)},
                  {"y_mean", pls->y_mean},
                  {"x_weights", matrix_to_json(pls->x_weights)},
                  {"x_loadings", matrix_to_json(pls->x_loadings)},
                  {"y_loadings", vector_to_json(pls->y_loadings)}};
  } else if (const auto* nmf = std::get_if<NmfModel>(&extractor.model)) {
    j["model"] = {{"basis", matrix_to_json(nmf->basis)},
                  {"iters", nmf->iters},
                  {"seed", nmf->seed}};
  } else if (const auto* lbp = std::get_if<LbpModel>(&extractor.model)) {
    j["model"] = {{"references", matrix_to_json(lbp->references)},
                  {"ref_ids", lbp->ref_ids},
                  {"n_top", lbp->n_top}};
  }
  return j.dump(2);
}

FittedExtractor extractor_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "extractor: " + std::string(e.what()));
  }
  FittedExtractor out;
  out.spec.kind = feature_kind_from_string(j.at("kind").get<std::string>());
  const json& spec = j.at("spec");
  out.spec.n_components = spec.at("n_components").get<int>();
  out.spec.n_latent = spec.at("n_latent").get<int>();
  out.spec.scales = spec.at("scales").get<std::vector<double>>();
  out.spec.wavelet = spec.at("wavelet").get<std::string>();
  out.spec.n_top = spec.at("n_top").get<int>();
  out.spec.lbp_bins = spec.at("bins").get<int>();
  out.spec.rank = spec.at("rank").get<int>();
  out.spec.iters = spec.at("iters").get<int>();
  out.spec.seed = spec.at("seed").get<std::uint64_t>();
  out.spec.prominence = spec.at("prominence").get<double>();
  out.spec.max_peaks = spec.at("max_peaks").get<int>();

  switch (out.spec.kind) {
    case FeatureKind::Pca: {
      PcaModel m;
      m.mean = vector_from_json(j.at("model").at("mean"));
      m.loadings = matrix_from_json(j.at("model").at("loadings"));
      m.explained_variance = vector_from_json(j.at("model").at("explained_variance"));
      m.total_variance = j.at("model").at("total_variance").get<double>();
      out.model = std::move(m);
      break;
    }
    case FeatureKind::Pls: {
      PlsModel m;
      m.x_mean = vector_from_json(j.at("model").at("x_mean"));
      m.y_mean = j.at("model").at("y_mean").get<double>();
      m.x_weights = matrix_from_json(j.at("model").at("x_weights"));
      m.x_loadings = matrix_from_json(j.at("model").at("x_loadings"));
      m.y_loadings = vector_from_json(j.at("model").at("y_loadings"));
      out.model = std::move(m);
      break;
    }
    case FeatureKind::Nmf: {
      NmfModel m;
      m.basis = matrix_from_json(j.at("model").at("basis"));
      m.iters = j.at("model").at("iters").get<int>();
      m.seed = j.at("model").at("seed").get<std::uint64_t>();
      out.model = std::move(m);
      break;
    }
    case FeatureKind::LambertBeerPearson: {
      LbpModel m;
      m.references = matrix_from_json(j.at("model").at("references"));
      m.ref_ids = j.at("model").at("ref_ids").get<std::vector<std::string>>();
      m.n_top = j.at("model").at("n_top").get<int>();
      out.model = std::move(m);
      break;
    }
    default:
      out.model = std::monostate{};
      break;
  }
  return out;
}

}  // namespace specagent
