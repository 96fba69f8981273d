#include "specagent/preprocess.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

const char* to_string(StepKind kind) {
  switch (kind) {
    case StepKind::AsLS: return "AsLS";
    case StepKind::SavitzkyGolay: return "SavitzkyGolay";
    case StepKind::MinMax: return "MinMax";
    case StepKind::Snv: return "SNV";
    case StepKind::Msc: return "MSC";
    case StepKind::Detrend: return "Detrend";
    case StepKind::FirstDerivative: return "FirstDerivative";
    case StepKind::SecondDerivative: return "SecondDerivative";
  }
  return "unknown";
}

void PreprocessStep::validate() const {
  switch (kind) {
    case StepKind::AsLS:
      if (lambda <= 0) raise(ErrorCode::ParseError, "AsLS: lambda must be > 0");
      if (asymmetry <= 0 || asymmetry >= 1)
        raise(ErrorCode::ParseError, "AsLS: asymmetry must lie in (0,1)");
      if (iters < 1) raise(ErrorCode::ParseError, "AsLS: iters must be >= 1");
      break;
    case StepKind::SavitzkyGolay:
      if (degree < 1) raise(ErrorCode::ParseError, "SavitzkyGolay: degree must be >= 1");
      if (2 * half_window + 1 < degree + 2)
        raise(ErrorCode::ParseError, "SavitzkyGolay: window 2m+1 must be >= degree+2");
      if (deriv_order < 0 || deriv_order > 2)
        raise(ErrorCode::ParseError, "SavitzkyGolay: deriv_order must be 0, 1 or 2");
      if (deriv_order > degree)
        raise(ErrorCode::ParseError, "SavitzkyGolay: deriv_order exceeds degree");
      break;
    case StepKind::Detrend:
      if (order != 1 && order != 2)
        raise(ErrorCode::ParseError, "Detrend: order must be 1 or 2");
      break;
    default:
      break;
  }
}

std::string PreprocessStep::summary() const {
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case StepKind::AsLS:
      out << "(lambda=" << format_double(lambda) << ", p=" << format_double(asymmetry)
          << ", iters=" << iters << ")";
      break;
    case StepKind::SavitzkyGolay:
      out << "(m=" << half_window << ", degree=" << degree;
      if (deriv_order > 0) out << ", deriv=" << deriv_order;
      out << ")";
      break;
    case StepKind::Detrend:
      out << "(order=" << order << ")";
      break;
    default:
      break;
  }
  return out.str();
}

PreprocessStep step_from_name(const std::string& name) {
  const std::string key = to_lower(trim(name));
  PreprocessStep step;
  if (key == "asls" || key == "bc" || key == "baseline") {
    step.kind = StepKind::AsLS;
  } else if (key == "savitzkygolay" || key == "sg") {
    step.kind = StepKind::SavitzkyGolay;
  } else if (key == "sgfd") {
    step.kind = StepKind::SavitzkyGolay;
    step.deriv_order = 1;
  } else if (key == "minmax" || key == "mm") {
    step.kind = StepKind::MinMax;
  } else if (key == "snv") {
    step.kind = StepKind::Snv;
  } else if (key == "msc") {
    step.kind = StepKind::Msc;
  } else if (key == "detrend" || key == "dt") {
    step.kind = StepKind::Detrend;
  } else if (key == "firstderivative" || key == "fd") {
    step.kind = StepKind::FirstDerivative;
  } else if (key == "secondderivative" || key == "sd") {
    step.kind = StepKind::SecondDerivative;
  } else {
    raise(ErrorCode::NoResolvablePlan, "unknown preprocessing step '" + name + "'");
  }
  step.validate();
  return step;
}

std::vector<PreprocessStep> chain_from_string(const std::string& text) {
  std::vector<PreprocessStep> steps;
  if (trim(text).empty()) return steps;
  for (const std::string& part : split(text, '+')) steps.push_back(step_from_name(part));
  return steps;
}

std::string chain_to_string(const std::vector<PreprocessStep>& steps) {
  std::string out;
  for (const PreprocessStep& s : steps) {
    if (!out.empty()) out += '+';
    if (s.kind == StepKind::SavitzkyGolay && s.deriv_order == 1) out += "SGFD";
    else out += to_string(s.kind);
  }
  return out;
}

namespace {

json step_to_json(const PreprocessStep& s) {
  json j;
  j["kind"] = to_string(s.kind);
  switch (s.kind) {
    case StepKind::AsLS:
      j["lambda"] = s.lambda;
      j["p"] = s.asymmetry;
      j["iters"] = s.iters;
      break;
    case StepKind::SavitzkyGolay:
      j["m"] = s.half_window;
      j["degree"] = s.degree;
      j["deriv_order"] = s.deriv_order;
      break;
    case StepKind::Detrend:
      j["order"] = s.order;
      break;
    default:
      break;
  }
  return j;
}

PreprocessStep step_from_json(const json& j) {
  PreprocessStep s = step_from_name(j.at("kind").get<std::string>());
  if (j.contains("lambda")) s.lambda = j.at("lambda").get<double>();
  if (j.contains("p")) s.asymmetry = j.at("p").get<double>();
  if (j.contains("iters")) s.iters = j.at("iters").get<int>();
  if (j.contains("m")) s.half_window = j.at("m").get<int>();
  if (j.contains("degree")) s.degree = j.at("degree").get<int>();
  if (j.contains("deriv_order")) s.deriv_order = j.at("deriv_order").get<int>();
  if (j.contains("order")) s.order = j.at("order").get<int>();
  s.validate();
  return s;
}

json feature_spec_to_json(const FeatureSpec& f) {
  json j;
  j["kind"] = to_string(f.kind);
  switch (f.kind) {
    case FeatureKind::Pca: j["n_components"] = f.n_components; break;
    case FeatureKind::Pls: j["n_latent"] = f.n_latent; break;
    case FeatureKind::Cwt:
      j["scales"] = f.scales;
      j["wavelet"] = f.wavelet;
      break;
    case FeatureKind::LambertBeerPearson:
      j["n_top"] = f.n_top;
      j["bins"] = f.lbp_bins;
      break;
    case FeatureKind::Nmf:
      j["rank"] = f.rank;
      j["iters"] = f.iters;
      j["seed"] = f.seed;
      break;
    case FeatureKind::Peaks:
      j["prominence"] = f.prominence;
      j["max_peaks"] = f.max_peaks;
      break;
    case FeatureKind::Stats: break;
  }
  return j;
}

FeatureSpec feature_spec_from_json(const json& j) {
  FeatureSpec f;
  f.kind = feature_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("n_components")) f.n_components = j.at("n_components").get<int>();
  if (j.contains("n_latent")) f.n_latent = j.at("n_latent").get<int>();
  if (j.contains("scales")) f.scales = j.at("scales").get<std::vector<double>>();
  if (j.contains("wavelet")) f.wavelet = j.at("wavelet").get<std::string>();
  if (j.contains("n_top")) f.n_top = j.at("n_top").get<int>();
  if (j.contains("bins")) f.lbp_bins = j.at("bins").get<int>();
  if (j.contains("rank")) f.rank = j.at("rank").get<int>();
  if (j.contains("iters")) f.iters = j.at("iters").get<int>();
  if (j.contains("seed")) f.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("prominence")) f.prominence = j.at("prominence").get<double>();
  if (j.contains("max_peaks")) f.max_peaks = j.at("max_peaks").get<int>();
  return f;
}

}  // namespace

std::string MethodPlan::to_json() const {
  json j;
  j["steps"] = json::array();
  for (const PreprocessStep& s : steps) j["steps"].push_back(step_to_json(s));
  j["feature"] = feature_spec_to_json(feature);
  j["provenance"] = provenance;
  return j.dump(2);
}

MethodPlan MethodPlan::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "method plan: " + std::string(e.what()));
  }
  MethodPlan plan;
  for (const json& s : j.at("steps")) plan.steps.push_back(step_from_json(s));
  plan.feature = feature_spec_from_json(j.at("feature"));
  if (j.contains("provenance"))
    plan.provenance = j.at("provenance").get<std::vector<std::string>>();
  return plan;
}

// --- AsLS ---------------------------------------------------------------

double asls_objective(const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                      const Eigen::VectorXd& weights, double lambda) {
  const Eigen::VectorXd r = y - z;
  double fidelity = r.cwiseProduct(r).dot(weights);
  double penalty = 0.0;
  for (Eigen::Index i = 1; i + 1 < z.size(); ++i) {
    const double d2 = z[i + 1] - 2.0 * z[i] + z[i - 1];
    penalty += d2 * d2;
  }
  return fidelity + lambda * penalty;
}

AslsResult asls_baseline(const Spectrum& s, double lambda, double asymmetry, int iters) {
  PreprocessStep check;
  check.kind = StepKind::AsLS;
  check.lambda = lambda;
  check.asymmetry = asymmetry;
  check.iters = iters;
  check.validate();

  const Eigen::VectorXd& y = s.intensities();
  const Eigen::Index n = y.size();

  // lambda * D^T D with D the (n-2) x n second-difference operator
  Eigen::SparseMatrix<double> penalty(n, n);
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(9 * n));
    for (Eigen::Index r = 0; r + 2 < n; ++r) {
      const double coeff[3] = {1.0, -2.0, 1.0};
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          trip.emplace_back(r + a, r + b, lambda * coeff[a] * coeff[b]);
    }
    penalty.setFromTriplets(trip.begin(), trip.end());
  }

  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd z = y;
  AslsResult result{s, s, {}, {}, {}};

  Eigen::SparseMatrix<double> system(n, n);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  for (int iter = 0; iter < iters; ++iter) {
    system = penalty;
    for (Eigen::Index i = 0; i < n; ++i) system.coeffRef(i, i) += w[i];
    solver.compute(system);
    if (solver.info() != Eigen::Success)
      raise(ErrorCode::SingularSystem, "AsLS system factorization failed (lambda=" +
                                           format_double(lambda) + ")");
    const Eigen::VectorXd z_new = solver.solve(w.cwiseProduct(y));
    if (!z_new.allFinite())
      raise(ErrorCode::SingularSystem, "AsLS solve produced non-finite baseline");

    result.objective_before.push_back(asls_objective(y, z, w, lambda));
    result.objective_after.push_back(asls_objective(y, z_new, w, lambda));
    z = z_new;
    result.final_weights = w;

    Eigen::VectorXd w_new(n);
    for (Eigen::Index i = 0; i < n; ++i) w_new[i] = y[i] > z[i] ? asymmetry : 1.0 - asymmetry;
    if (w_new == w) break;
    w = w_new;
  }

  result.baseline = s.with_intensities(z);
  result.corrected = s.with_intensities(y - z);
  return result;
}

// --- Savitzky-Golay -------------------------------------------------------

Spectrum savitzky_golay(const Spectrum& s, int half_window, int degree, int deriv_order) {
  PreprocessStep check;
  check.kind = StepKind::SavitzkyGolay;
  check.half_window = half_window;
  check.degree = degree;
  check.deriv_order = deriv_order;
  check.validate();

  const Eigen::Index n = s.size();
  if (n < 2 * half_window + 1)
    raise(ErrorCode::WindowTooLarge, "window " + std::to_string(2 * half_window + 1) +
                                         " exceeds spectrum length " + std::to_string(n));

  const Eigen::VectorXd& x = s.wavelengths();
  const Eigen::VectorXd& y = s.intensities();
  Eigen::VectorXd out(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - half_window);
    const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + half_window);
    const Eigen::Index w = hi - lo + 1;
    // truncated edge windows fall back to the largest degree they support
    const int local_degree = std::min<int>(degree, static_cast<int>(w) - 1);

    Eigen::MatrixXd vand(w, local_degree + 1);
    for (Eigen::Index r = 0; r < w; ++r) {
      const double u = x[lo + r] - x[i];
      double power = 1.0;
      for (int c = 0; c <= local_degree; ++c) {
        vand(r, c) = power;
        power *= u;
      }
    }
    const Eigen::VectorXd coeff = vand.colPivHouseholderQr().solve(y.segment(lo, w));
    switch (deriv_order) {
      case 0: out[i] = coeff[0]; break;
      case 1: out[i] = coeff[1]; break;
      default: out[i] = 2.0 * coeff[2]; break;
    }
  }
  return s.with_intensities(out);
}

// --- scalers ----------------------------------------------------------------

Spectrum minmax_normalize(const Spectrum& s) {
  const double lo = s.intensities().minCoeff();
  const double hi = s.intensities().maxCoeff();
  if (hi == lo)
    raise(ErrorCode::ConstantSpectrum, "spectrum '" + s.id() + "' has zero range");
  return s.with_intensities((s.intensities().array() - lo) / (hi - lo));
}

Spectrum snv(const Spectrum& s) {
  const Eigen::VectorXd& y = s.intensities();
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / (y.size() - 1));
  if (sd == 0.0)
    raise(ErrorCode::ConstantSpectrum, "spectrum '" + s.id() + "' has zero variance");
  return s.with_intensities((y.array() - mean) / sd);
}

Spectrum msc_single(const Spectrum& s, const Spectrum& reference) {
  const Eigen::VectorXd& y = s.intensities();
  const Eigen::VectorXd& r = reference.intensities();
  if (y.size() != r.size())
    raise(ErrorCode::LengthMismatch, "MSC reference grid does not match sample grid");
  const double ry = (r.array() - r.mean()).matrix().dot((y.array() - y.mean()).matrix());
  const double rr = (r.array() - r.mean()).square().sum();
  const double b = rr == 0.0 ? 0.0 : ry / rr;
  if (std::abs(b) < 1e-12)
    raise(ErrorCode::DegenerateRegression,
          "spectrum '" + s.id() + "' has no multiplicative relation to the reference");
  const double a = y.mean() - b * r.mean();
  return s.with_intensities((y.array() - a) / b);
}

SpectralDataset msc(const SpectralDataset& ds, const Spectrum* reference) {
  if (reference == nullptr && ds.size() < 2)
    raise(ErrorCode::TooFewSamples, "MSC with a mean reference needs at least 2 spectra");
  Eigen::VectorXd ref_values;
  if (reference != nullptr) {
    ref_values = reference->intensities();
  } else {
    ref_values = Eigen::VectorXd::Zero(ds.grid().size());
    for (const Spectrum& s : ds.spectra) ref_values += s.intensities();
    ref_values /= static_cast<double>(ds.size());
  }
  const Spectrum ref(ds.grid(), ref_values, "msc_reference");
  SpectralDataset out = ds;
  for (std::size_t i = 0; i < ds.spectra.size(); ++i)
    out.spectra[i] = msc_single(ds.spectra[i], ref);
  return out;
}

Spectrum detrend(const Spectrum& s, int order) {
  PreprocessStep check;
  check.kind = StepKind::Detrend;
  check.order = order;
  check.validate();
  const Eigen::Index n = s.size();
  if (n <= order + 1)
    raise(ErrorCode::LengthMismatch, "detrend order " + std::to_string(order) +
                                         " needs more than " + std::to_string(order + 1) + " points");

  // normalized wavelength keeps the Vandermonde well conditioned; the fitted
  // subspace is the same as with raw wavelengths
  const Eigen::VectorXd& x = s.wavelengths();
  const double lo = x[0], hi = x[n - 1];
  Eigen::MatrixXd vand(n, order + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = 2.0 * (x[i] - lo) / (hi - lo) - 1.0;
    double power = 1.0;
    for (int c = 0; c <= order; ++c) {
      vand(i, c) = power;
      power *= u;
    }
  }
  const Eigen::VectorXd coeff = vand.colPivHouseholderQr().solve(s.intensities());
  return s.with_intensities(s.intensities() - vand * coeff);
}

Spectrum derivative(const Spectrum& s, int order) {
  if (order != 1 && order != 2)
    raise(ErrorCode::ParseError, "derivative order must be 1 or 2");
  if (!s.uniform_grid())
    raise(ErrorCode::NonUniformGrid,
          "spectrum '" + s.id() + "' is not on a uniform grid; finite differences need one");
  const Eigen::Index n = s.size();
  if (n < 3) raise(ErrorCode::LengthMismatch, "derivative needs at least 3 points");

  const Eigen::VectorXd& y = s.intensities();
  const double h = s.grid_step();
  Eigen::VectorXd out(n);
  if (order == 1) {
    for (Eigen::Index i = 1; i + 1 < n; ++i) out[i] = (y[i + 1] - y[i - 1]) / (2.0 * h);
    out[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    out[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
  } else {
    for (Eigen::Index i = 1; i + 1 < n; ++i)
      out[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
    out[0] = (y[2] - 2.0 * y[1] + y[0]) / (h * h);
    out[n - 1] = (y[n - 1] - 2.0 * y[n - 2] + y[n - 3]) / (h * h);
  }
  return s.with_intensities(out);
}

// --- quality + chains ---------------------------------------------------------

QualityReport quality_report(const Spectrum& s) {
  QualityReport report;
  const Eigen::VectorXd& y = s.intensities();
  const Eigen::Index n = y.size();
  report.finite = y.allFinite();
  if (!report.finite) {
    report.warnings.push_back("output contains non-finite values");
    return report;
  }

  const Eigen::Index margin = std::max<Eigen::Index>(1, n / 20);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < margin; ++i) sum += std::abs(y[i]) + std::abs(y[n - 1 - i]);
  report.baseline_flatness = sum / static_cast<double>(2 * margin);

  if (n >= 3) {
    Eigen::VectorXd d2(n - 2);
    for (Eigen::Index i = 1; i + 1 < n; ++i) d2[i - 1] = y[i + 1] - 2.0 * y[i] + y[i - 1];
    const double mean = d2.mean();
    report.noise_estimate =
        d2.size() > 1 ? std::sqrt((d2.array() - mean).square().sum() / (d2.size() - 1)) : 0.0;
  }
  return report;
}

namespace {

Spectrum apply_step(const Spectrum& s, const PreprocessStep& step) {
  switch (step.kind) {
    case StepKind::AsLS:
      return asls_baseline(s, step.lambda, step.asymmetry, step.iters).corrected;
    case StepKind::SavitzkyGolay:
      return savitzky_golay(s, step.half_window, step.degree, step.deriv_order);
    case StepKind::MinMax: return minmax_normalize(s);
    case StepKind::Snv: return snv(s);
    case StepKind::Msc:
      raise(ErrorCode::DimMismatch, "MSC is a batch-level step and needs a dataset input");
    case StepKind::Detrend: return detrend(s, step.order);
    case StepKind::FirstDerivative: return derivative(s, 1);
    case StepKind::SecondDerivative: return derivative(s, 2);
  }
  raise(ErrorCode::ParseError, "unhandled step kind");
}

[[noreturn]] void rethrow_with_step(const Error& e, std::size_t index, StepKind kind) {
  throw Error(e.code(), "step " + std::to_string(index) + " (" + to_string(kind) +
                            "): " + e.what());
}

}  // namespace

ChainSpectrumResult apply_chain(const Spectrum& s, const std::vector<PreprocessStep>& steps) {
  Spectrum current = s;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    try {
      steps[k].validate();
      current = apply_step(current, steps[k]);
    } catch (const Error& e) {
      rethrow_with_step(e, k, steps[k].kind);
    }
  }
  return {current, quality_report(current)};
}

ChainDatasetResult apply_chain(const SpectralDataset& ds,
                               const std::vector<PreprocessStep>& steps) {
  SpectralDataset current = ds;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    try {
      steps[k].validate();
      if (steps[k].kind == StepKind::Msc) {
        current = msc(current);
      } else {
        for (Spectrum& s : current.spectra) s = apply_step(s, steps[k]);
      }
    } catch (const Error& e) {
      rethrow_with_step(e, k, steps[k].kind);
    }
  }

  ChainDatasetResult result{current, {}};
  if (!current.spectra.empty()) {
    double flatness = 0.0, noise = 0.0;
    bool finite = true;
    for (const Spectrum& s : current.spectra) {
      const QualityReport q = quality_report(s);
      finite = finite && q.finite;
      flatness += q.baseline_flatness;
      noise += q.noise_estimate;
      for (const std::string& w : q.warnings) result.quality.warnings.push_back(s.id() + ": " + w);
    }
    result.quality.finite = finite;
    result.quality.baseline_flatness = flatness / static_cast<double>(current.size());
    result.quality.noise_estimate = noise / static_cast<double>(current.size());
  }
  return result;
}

}  // namespace specagent
