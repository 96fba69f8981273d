#include "specagent/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "specagent/rng.hpp"
#include "specagent/util.hpp"

namespace specagent {

using nlohmann::json;

const char* to_string(TaskType task) {
  switch (task) {
    case TaskType::Classification: return "classification";
    case TaskType::AnomalyDetection: return "anomaly_detection";
    case TaskType::Regression: return "regression";
  }
  return "unknown";
}

TaskType task_from_string(const std::string& name) {
  if (name == "classification") return TaskType::Classification;
  if (name == "anomaly_detection") return TaskType::AnomalyDetection;
  if (name == "regression") return TaskType::Regression;
  raise(ErrorCode::UnknownTaskType, "'" + name + "' is not one of classification|anomaly_detection|regression");
}

Label Label::of_class(std::string name) {
  Label l;
  l.kind = Kind::Class;
  l.class_name = std::move(name);
  return l;
}

Label Label::of_flag(bool normal) {
  Label l;
  l.kind = Kind::Flag;
  l.flag = normal;
  return l;
}

Label Label::of_value(double v, std::string unit) {
  if (!std::isfinite(v)) raise(ErrorCode::ParseError, "regression label value is not finite");
  Label l;
  l.kind = Kind::Value;
  l.value = v;
  l.unit = std::move(unit);
  return l;
}

bool Label::operator==(const Label& other) const {
  if (kind != other.kind) return false;
  switch (kind) {
    case Kind::Class: return class_name == other.class_name;
    case Kind::Flag: return flag == other.flag;
    case Kind::Value: return value == other.value && unit == other.unit;
  }
  return false;
}

std::string Label::display() const {
  switch (kind) {
    case Kind::Class: return class_name;
    case Kind::Flag: return flag ? "true" : "false";
    case Kind::Value: return format_double(value);
  }
  return {};
}

Spectrum::Spectrum(Eigen::VectorXd wavelengths, Eigen::VectorXd intensities,
                   std::string id)
    : wavelengths_(std::move(wavelengths)),
      intensities_(std::move(intensities)),
      id_(std::move(id)) {
  if (wavelengths_.size() != intensities_.size())
    raise(ErrorCode::LengthMismatch,
          "spectrum '" + id_ + "': " + std::to_string(wavelengths_.size()) +
              " wavelengths vs " + std::to_string(intensities_.size()) + " intensities");
  if (wavelengths_.size() < 5)
    raise(ErrorCode::LengthMismatch,
          "spectrum '" + id_ + "': needs at least 5 points, got " +
              std::to_string(wavelengths_.size()));
  for (Eigen::Index i = 0; i < wavelengths_.size(); ++i) {
    if (!std::isfinite(wavelengths_[i]) || !std::isfinite(intensities_[i]))
      raise(ErrorCode::ParseError,
            "spectrum '" + id_ + "': non-finite value at index " + std::to_string(i));
    if (i > 0 && wavelengths_[i] <= wavelengths_[i - 1])
      raise(ErrorCode::NonUniformGrid,
            "spectrum '" + id_ + "': wavelengths not strictly increasing at index " +
                std::to_string(i));
  }
  const Eigen::Index n = wavelengths_.size();
  grid_step_ = (wavelengths_[n - 1] - wavelengths_[0]) / static_cast<double>(n - 1);
  double max_dev = 0.0;
  for (Eigen::Index i = 1; i < n; ++i)
    max_dev = std::max(max_dev, std::abs(wavelengths_[i] - wavelengths_[i - 1] - grid_step_));
  uniform_grid_ = max_dev < 1e-6 * std::abs(grid_step_);
}

Spectrum Spectrum::with_intensities(Eigen::VectorXd values) const {
  return Spectrum(wavelengths_, std::move(values), id_);
}

const Eigen::VectorXd& SpectralDataset::grid() const {
  if (spectra.empty()) raise(ErrorCode::ParseError, "dataset has no spectra");
  return spectra.front().wavelengths();
}

std::vector<std::string> SpectralDataset::class_set() const {
  std::set<std::string> names;
  for (const Label& l : labels)
    if (l.kind == Label::Kind::Class) names.insert(l.class_name);
  return {names.begin(), names.end()};
}

const Label& SpectralDataset::label_of(const std::string& id) const {
  for (std::size_t i = 0; i < spectra.size(); ++i)
    if (spectra[i].id() == id) return labels[i];
  raise(ErrorCode::MissingLabel, "no sample with id '" + id + "'");
}

std::map<std::string, Label> SpectralDataset::label_map() const {
  std::map<std::string, Label> out;
  for (std::size_t i = 0; i < spectra.size(); ++i) out[spectra[i].id()] = labels[i];
  return out;
}

void SpectralDataset::validate() const {
  if (spectra.size() != labels.size())
    raise(ErrorCode::LengthMismatch,
          std::to_string(spectra.size()) + " spectra vs " + std::to_string(labels.size()) + " labels");
  const Label::Kind expected = task == TaskType::Classification ? Label::Kind::Class
                               : task == TaskType::AnomalyDetection ? Label::Kind::Flag
                                                                    : Label::Kind::Value;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i].kind != expected)
      raise(ErrorCode::ParseError, "label kind of sample '" + spectra[i].id() +
                                       "' does not match task " + to_string(task));
  if (!spectra.empty()) {
    const Eigen::VectorXd& g = spectra.front().wavelengths();
    for (const Spectrum& s : spectra)
      if (s.wavelengths().size() != g.size() || (s.wavelengths() - g).cwiseAbs().maxCoeff() != 0.0)
        raise(ErrorCode::NonUniformGrid, "sample '" + s.id() + "' is not on the shared wavelength grid");
  }
}

Eigen::MatrixXd SpectralDataset::intensity_matrix() const {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(spectra.size()),
                    spectra.empty() ? 0 : spectra.front().size());
  for (std::size_t i = 0; i < spectra.size(); ++i)
    X.row(static_cast<Eigen::Index>(i)) = spectra[i].intensities().transpose();
  return X;
}

int FeatureMatrix::row_index(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return static_cast<int>(i);
  return -1;
}

std::uint64_t FeatureMatrix::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      const double v = rows(r, c);
      h = fnv1a_bytes(&v, sizeof(v), h);
    }
  for (const auto& n : feature_names) h = fnv1a(n, h);
  for (const auto& i : ids) h = fnv1a(i, h);
  return h;
}

void FeatureMatrix::validate() const {
  if (static_cast<Eigen::Index>(ids.size()) != rows.rows())
    raise(ErrorCode::LengthMismatch, "feature matrix ids do not match row count");
  if (static_cast<Eigen::Index>(feature_names.size()) != rows.cols())
    raise(ErrorCode::LengthMismatch, "feature names do not match column count");
  if (!rows.allFinite())
    raise(ErrorCode::ParseError, "feature matrix contains non-finite entries");
}

namespace {

std::string sidecar_path(const std::string& csv_path) {
  std::filesystem::path p(csv_path);
  p.replace_extension(".labels.json");
  return p.string();
}

Label label_from_json(const std::string& id, const json& entry) {
  if (!entry.is_object())
    raise(ErrorCode::ParseError, "label of '" + id + "' is not an object");
  if (entry.contains("class")) return Label::of_class(entry.at("class").get<std::string>());
  if (entry.contains("flag")) return Label::of_flag(entry.at("flag").get<bool>());
  if (entry.contains("value"))
    return Label::of_value(entry.at("value").get<double>(),
                           entry.value("unit", std::string{}));
  raise(ErrorCode::ParseError, "label of '" + id + "' has none of class|flag|value");
}

json label_to_json(const Label& label) {
  json j;
  switch (label.kind) {
    case Label::Kind::Class: j["class"] = label.class_name; break;
    case Label::Kind::Flag: j["flag"] = label.flag; break;
    case Label::Kind::Value:
      j["value"] = label.value;
      if (!label.unit.empty()) j["unit"] = label.unit;
      break;
  }
  return j;
}

TaskType infer_task(const std::vector<Label>& labels, const std::string& origin) {
  if (labels.empty()) raise(ErrorCode::ParseError, origin + ": no labels");
  const Label::Kind kind = labels.front().kind;
  for (const Label& l : labels)
    if (l.kind != kind)
      raise(ErrorCode::ParseError, origin + ": mixed label kinds");
  switch (kind) {
    case Label::Kind::Class: return TaskType::Classification;
    case Label::Kind::Flag: return TaskType::AnomalyDetection;
    case Label::Kind::Value: return TaskType::Regression;
  }
  return TaskType::Classification;
}

double parse_number(const std::string& cell, std::size_t row, std::size_t col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    raise(ErrorCode::ParseError, "row " + std::to_string(row) + ", column " +
                                     std::to_string(col) + ": cannot parse '" + cell + "'");
  }
}

SpectralDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ParseError, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) raise(ErrorCode::ParseError, "'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split(line, ',');
  if (header.empty() || header[0] != "wavelength")
    raise(ErrorCode::ParseError, "'" + path + "': header must start with 'wavelength'");
  const std::size_t n_samples = header.size() - 1;
  if (n_samples == 0) raise(ErrorCode::ParseError, "'" + path + "': no sample columns");

  std::vector<double> wavelengths;
  std::vector<std::vector<double>> columns(n_samples);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != header.size())
      raise(ErrorCode::LengthMismatch, "row " + std::to_string(row) + ": expected " +
                                           std::to_string(header.size()) + " cells, got " +
                                           std::to_string(cells.size()));
    wavelengths.push_back(parse_number(cells[0], row, 0));
    for (std::size_t c = 0; c < n_samples; ++c)
      columns[c].push_back(parse_number(cells[c + 1], row, c + 1));
  }

  std::ifstream sidecar(sidecar_path(path));
  if (!sidecar)
    raise(ErrorCode::MissingLabel, "label sidecar '" + sidecar_path(path) + "' not found");
  json side;
  try {
    sidecar >> side;
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "label sidecar: " + std::string(e.what()));
  }

  SpectralDataset ds;
  const Eigen::VectorXd grid =
      Eigen::Map<const Eigen::VectorXd>(wavelengths.data(), static_cast<Eigen::Index>(wavelengths.size()));
  for (std::size_t c = 0; c < n_samples; ++c) {
    const std::string& id = header[c + 1];
    ds.spectra.emplace_back(grid,
                            Eigen::Map<const Eigen::VectorXd>(
                                columns[c].data(), static_cast<Eigen::Index>(columns[c].size())),
                            id);
    if (!side.contains(id))
      raise(ErrorCode::MissingLabel, "sample '" + id + "' has no entry in the label sidecar");
    ds.labels.push_back(label_from_json(id, side.at(id)));
  }
  ds.material = std::filesystem::path(path).stem().string();
  ds.task = infer_task(ds.labels, path);
  ds.validate();
  return ds;
}

void save_csv(const SpectralDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::ParseError, "cannot write '" + path + "'");
  out << "wavelength";
  for (const Spectrum& s : ds.spectra) out << ',' << s.id();
  out << '\n';
  const Eigen::VectorXd& grid = ds.grid();
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    out << format_double(grid[i]);
    for (const Spectrum& s : ds.spectra) out << ',' << format_double(s.intensities()[i]);
    out << '\n';
  }
  json side = json::object();
  for (std::size_t i = 0; i < ds.spectra.size(); ++i)
    side[ds.spectra[i].id()] = label_to_json(ds.labels[i]);
  std::ofstream sidecar(sidecar_path(path));
  sidecar << side.dump(2) << '\n';
}

SpectralDataset load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::ParseError, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(ErrorCode::ParseError, "'" + path + "': " + std::string(e.what()));
  }
  SpectralDataset ds;
  ds.material = j.value("material", std::filesystem::path(path).stem().string());
  const auto wl = j.at("wavelengths").get<std::vector<double>>();
  const Eigen::VectorXd grid =
      Eigen::Map<const Eigen::VectorXd>(wl.data(), static_cast<Eigen::Index>(wl.size()));
  for (const json& sample : j.at("samples")) {
    const std::string id = sample.at("id").get<std::string>();
    const auto vals = sample.at("intensities").get<std::vector<double>>();
    if (vals.size() != wl.size())
      raise(ErrorCode::LengthMismatch,
            "sample '" + id + "': " + std::to_string(vals.size()) + " intensities vs " +
                std::to_string(wl.size()) + " wavelengths");
    ds.spectra.emplace_back(grid,
                            Eigen::Map<const Eigen::VectorXd>(
                                vals.data(), static_cast<Eigen::Index>(vals.size())),
                            id);
    if (!sample.contains("label"))
      raise(ErrorCode::MissingLabel, "sample '" + id + "' has no label");
    ds.labels.push_back(label_from_json(id, sample.at("label")));
  }
  if (j.contains("task")) ds.task = task_from_string(j.at("task").get<std::string>());
  else ds.task = infer_task(ds.labels, path);
  ds.validate();
  return ds;
}

void save_json(const SpectralDataset& ds, const std::string& path) {
  json j;
  j["schema_version"] = 1;
  j["material"] = ds.material;
  j["task"] = to_string(ds.task);
  j["wavelengths"] = std::vector<double>(ds.grid().data(), ds.grid().data() + ds.grid().size());
  json samples = json::array();
  for (std::size_t i = 0; i < ds.spectra.size(); ++i) {
    json s;
    s["id"] = ds.spectra[i].id();
    s["intensities"] = std::vector<double>(ds.spectra[i].intensities().data(),
                                           ds.spectra[i].intensities().data() +
                                               ds.spectra[i].intensities().size());
    s["label"] = label_to_json(ds.labels[i]);
    samples.push_back(std::move(s));
  }
  j["samples"] = std::move(samples);
  std::ofstream out(path);
  if (!out) raise(ErrorCode::ParseError, "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

// Largest-remainder allocation of n into the three buckets. Fractional ties
// are broken in bucket order rotated by `rotation` so no bucket always wins.
std::array<int, 3> allocate(int n, const SplitRatio& ratio, int rotation) {
  const double total = ratio.train + ratio.validation + ratio.test;
  const double quota[3] = {n * ratio.train / total, n * ratio.validation / total,
                           n * ratio.test / total};
  std::array<int, 3> counts{};
  double frac[3];
  int assigned = 0;
  for (int b = 0; b < 3; ++b) {
    counts[b] = static_cast<int>(quota[b]);
    frac[b] = quota[b] - counts[b];
    assigned += counts[b];
  }
  int remaining = n - assigned;
  std::array<int, 3> order = {0, 1, 2};
  std::rotate(order.begin(), order.begin() + rotation % 3, order.end());
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frac[a] > frac[b]; });
  for (int k = 0; k < remaining; ++k) counts[order[k % 3]] += 1;
  return counts;
}

}  // namespace

SpectralDataset load_dataset(const std::string& path, DatasetFormat format) {
  return format == DatasetFormat::Csv ? load_csv(path) : load_json(path);
}

void save_dataset(const SpectralDataset& ds, const std::string& path,
                  DatasetFormat format) {
  ds.validate();
  if (format == DatasetFormat::Csv) save_csv(ds, path);
  else save_json(ds, path);
}

Split split_dataset(const SpectralDataset& ds, const SplitRatio& ratio,
                    std::uint64_t seed) {
  const int n = static_cast<int>(ds.size());
  if (n < 8) raise(ErrorCode::TooFewSamples, "need at least 8 samples, got " + std::to_string(n));

  Split split;
  Rng rng(seed);

  auto assign = [&](std::vector<int>& members, const std::array<int, 3>& counts) {
    rng.shuffle(members);
    int pos = 0;
    for (int k = 0; k < counts[0]; ++k) split.train.push_back(members[pos++]);
    for (int k = 0; k < counts[1]; ++k) split.validation.push_back(members[pos++]);
    for (int k = 0; k < counts[2]; ++k) split.test.push_back(members[pos++]);
  };

  if (ds.task == TaskType::Classification) {
    std::map<std::string, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[ds.labels[i].class_name].push_back(i);
    int class_index = 0;
    for (auto& [name, members] : by_class) {
      if (members.size() < 2)
        raise(ErrorCode::TooFewSamples, "class '" + name + "' has fewer than 2 samples");
      assign(members, allocate(static_cast<int>(members.size()), ratio, class_index++));
    }
  } else {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    assign(all, allocate(n, ratio, 0));
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

SpectralDataset subsample_dataset(const SpectralDataset& ds, int max_samples,
                                  std::uint64_t seed) {
  if (max_samples <= 0 || static_cast<int>(ds.size()) <= max_samples) return ds;
  Rng rng(seed);

  std::vector<int> keep;
  if (ds.task == TaskType::Classification) {
    // largest-remainder allocation keeps class proportions
    std::map<std::string, std::vector<int>> by_class;
    for (int i = 0; i < static_cast<int>(ds.size()); ++i)
      by_class[ds.labels[static_cast<std::size_t>(i)].class_name].push_back(i);
    const double scale = static_cast<double>(max_samples) / static_cast<double>(ds.size());
    std::vector<std::pair<double, std::string>> remainders;
    int assigned = 0;
    std::map<std::string, int> counts;
    for (const auto& [name, members] : by_class) {
      const double quota = members.size() * scale;
      counts[name] = static_cast<int>(quota);
      assigned += counts[name];
      remainders.emplace_back(quota - counts[name], name);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < max_samples - assigned; ++k)
      counts[remainders[static_cast<std::size_t>(k) % remainders.size()].second] += 1;
    for (auto& [name, members] : by_class) {
      rng.shuffle(members);
      for (int k = 0; k < counts[name] && k < static_cast<int>(members.size()); ++k)
        keep.push_back(members[static_cast<std::size_t>(k)]);
    }
  } else {
    std::vector<int> all(ds.size());
    for (int i = 0; i < static_cast<int>(ds.size()); ++i) all[static_cast<std::size_t>(i)] = i;
    rng.shuffle(all);
    all.resize(static_cast<std::size_t>(max_samples));
    keep = all;
  }
  std::sort(keep.begin(), keep.end());

  SpectralDataset out;
  out.material = ds.material;
  out.task = ds.task;
  for (int i : keep) {
    out.spectra.push_back(ds.spectra[static_cast<std::size_t>(i)]);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

AnomalyDatasetResult build_anomaly_dataset(const SpectralDataset& ds,
                                           const std::string& reference_class,
                                           std::uint64_t seed,
                                           double noise_scale) {
  ds.validate();
  if (ds.task != TaskType::Classification)
    raise(ErrorCode::ParseError, "anomaly construction starts from a classification dataset");

  std::vector<int> reference, others;
  for (int i = 0; i < static_cast<int>(ds.size()); ++i) {
    if (ds.labels[i].class_name == reference_class) reference.push_back(i);
    else others.push_back(i);
  }
  const int n_ref = static_cast<int>(reference.size());
  const int n_anom = static_cast<int>(std::lround(n_ref / 3.0));
  if (n_ref < 5)
    raise(ErrorCode::InsufficientReferenceSamples,
          "reference class '" + reference_class + "' has " + std::to_string(n_ref) + " samples");
  if (n_anom < 1 || static_cast<int>(others.size()) < n_anom)
    raise(ErrorCode::InsufficientReferenceSamples,
          "need " + std::to_string(n_anom) + " inter-class anomalies but only " +
              std::to_string(others.size()) + " non-reference samples exist");

  Rng rng(seed);

  // per-wavelength std of the reference class (n-1 denominator)
  const Eigen::Index dim = ds.grid().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (int idx : reference) mean += ds.spectra[idx].intensities();
  mean /= n_ref;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (int idx : reference) {
    const Eigen::VectorXd d = ds.spectra[idx].intensities() - mean;
    var += d.cwiseProduct(d);
  }
  var /= std::max(1, n_ref - 1);
  const Eigen::VectorXd sigma = var.cwiseSqrt();

  AnomalyDatasetResult result;
  result.dataset.material = ds.material;
  result.dataset.task = TaskType::AnomalyDetection;
  if (noise_scale == 0.0)
    result.warnings.push_back(
        "noise_scale is 0: intra-class anomalies are identical to their source spectra");

  for (int idx : reference) {
    result.dataset.spectra.push_back(ds.spectra[idx]);
    result.dataset.labels.push_back(Label::of_flag(true));
  }

  std::vector<int> inter = others;
  rng.shuffle(inter);
  inter.resize(n_anom);
  std::sort(inter.begin(), inter.end());
  for (int idx : inter) {
    result.dataset.spectra.push_back(ds.spectra[idx]);
    result.dataset.labels.push_back(Label::of_flag(false));
  }

  std::vector<int> sources = reference;
  rng.shuffle(sources);
  sources.resize(n_anom);
  std::sort(sources.begin(), sources.end());
  for (int idx : sources) {
    Eigen::VectorXd noisy = ds.spectra[idx].intensities();
    for (Eigen::Index w = 0; w < dim; ++w) noisy[w] += rng.normal() * noise_scale * sigma[w];
    result.dataset.spectra.push_back(
        Spectrum(ds.grid(), std::move(noisy), ds.spectra[idx].id() + "_perturbed"));
    result.dataset.labels.push_back(Label::of_flag(false));
  }

  result.dataset.validate();
  return result;
}

}  // namespace specagent
