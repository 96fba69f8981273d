#include "specagent/synthetic.hpp"

#include <cmath>
#include <sstream>

#include "specagent/rng.hpp"
#include "specagent/util.hpp"

namespace specagent {

namespace {

double gauss(double x, double center, double width) {
  const double u = (x - center) / width;
  return std::exp(-0.5 * u * u);
}

Eigen::VectorXd grid_of(int n_points, double lo, double hi) {
  Eigen::VectorXd grid(n_points);
  for (int i = 0; i < n_points; ++i)
    grid[i] = lo + (hi - lo) * i / static_cast<double>(n_points - 1);
  return grid;
}

std::string sample_id(const std::string& prefix, int index) {
  std::ostringstream out;
  out << prefix;
  if (index < 10) out << '0';
  out << index;
  return out.str();
}

}  // namespace

SpectralDataset synthetic_classification_dataset(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  const Eigen::VectorXd grid = grid_of(spec.n_points, spec.wl_start, spec.wl_end);
  const double range = spec.wl_end - spec.wl_start;
  const double width = range / 18.0;

  SpectralDataset ds;
  ds.material = spec.material;
  ds.task = TaskType::Classification;

  for (int c = 0; c < spec.n_classes; ++c) {
    // two bands per class, staggered across the range
    const double center1 = spec.wl_start + range * (c + 1.0) / (spec.n_classes + 2.0);
    const double center2 = center1 + range / 4.0;
    const std::string class_name = "class" + std::to_string(c + 1);
    for (int s = 0; s < spec.samples_per_class; ++s) {
      const double scatter = 1.0 + spec.scatter * (rng.uniform() - 0.5) * 2.0;
      const double slope = spec.baseline_drift * (rng.uniform() - 0.5) * 2.0;
      const double offset = spec.baseline_drift * rng.uniform() * 0.5;
      Eigen::VectorXd y(spec.n_points);
      for (int i = 0; i < spec.n_points; ++i) {
        const double t = (grid[i] - spec.wl_start) / range;
        const double signal = gauss(grid[i], center1, width) + 0.6 * gauss(grid[i], center2, width);
        y[i] = scatter * signal + offset + slope * t + spec.noise * rng.normal();
      }
      ds.spectra.emplace_back(grid, y, sample_id("c" + std::to_string(c + 1) + "s", s + 1));
      ds.labels.push_back(Label::of_class(class_name));
    }
  }
  ds.validate();
  return ds;
}

SpectralDataset synthetic_regression_dataset(int n_samples, std::uint64_t seed) {
  Rng rng(seed);
  const int n_points = 120;
  const Eigen::VectorXd grid = grid_of(n_points, 190.0, 1100.0);

  SpectralDataset ds;
  ds.material = "synthetic_cod";
  ds.task = TaskType::Regression;

  for (int s = 0; s < n_samples; ++s) {
    const double value = 5.0 + 95.0 * rng.uniform();  // mg/L
    const double scatter = 1.0 + 0.08 * (rng.uniform() - 0.5) * 2.0;
    const double slope = 0.1 * (rng.uniform() - 0.5);
    Eigen::VectorXd y(n_points);
    for (int i = 0; i < n_points; ++i) {
      const double t = (grid[i] - 190.0) / 910.0;
      // analyte band depth tracks concentration, plus a fixed matrix band
      const double signal = (value / 100.0) * gauss(grid[i], 350.0, 60.0) +
                            0.25 * gauss(grid[i], 750.0, 90.0);
      y[i] = scatter * signal + 0.1 + slope * t + 0.005 * rng.normal();
    }
    ds.spectra.emplace_back(grid, y, sample_id("w", s + 1));
    ds.labels.push_back(Label::of_value(value, "mg/L"));
  }
  ds.validate();
  return ds;
}

UndercoveredFixture synthetic_undercovered_fixture(std::uint64_t seed) {
  Rng rng(seed);
  const int n_points = 100;
  const Eigen::VectorXd grid = grid_of(n_points, 400.0, 1700.0);
  const double width = 80.0;

  UndercoveredFixture fixture;
  fixture.undercovered_class = "classc";
  SpectralDataset& ds = fixture.dataset;
  ds.material = "synthetic_undercovered";
  ds.task = TaskType::Classification;

  auto add_sample = [&](const std::string& id, const std::string& cls, double w700,
                        double w550, double w1150) {
    const double scatter = 1.0 + 0.08 * (rng.uniform() - 0.5) * 2.0;
    const double slope = 0.15 * (rng.uniform() - 0.5);
    Eigen::VectorXd y(n_points);
    for (int i = 0; i < n_points; ++i) {
      const double t = (grid[i] - 400.0) / 1300.0;
      const double signal = w550 * gauss(grid[i], 550.0, width) +
                            w700 * gauss(grid[i], 700.0, width) +
                            w1150 * gauss(grid[i], 1150.0, width);
      y[i] = scatter * signal + 0.1 + slope * t + 0.01 * rng.normal();
    }
    ds.spectra.emplace_back(grid, y, id);
    ds.labels.push_back(Label::of_class(cls));
    return static_cast<int>(ds.spectra.size()) - 1;
  };

  // class A (550 nm) and class B (700 nm): 8 train / 4 validation / 4 test each
  for (int s = 0; s < 16; ++s) {
    const int idx = add_sample(sample_id("as", s + 1), "classa", 0.0, 1.0, 0.0);
    (s < 8 ? fixture.split.train : s < 12 ? fixture.split.validation : fixture.split.test)
        .push_back(idx);
  }
  for (int s = 0; s < 16; ++s) {
    const int idx = add_sample(sample_id("bs", s + 1), "classb", 1.0, 0.0, 0.0);
    (s < 8 ? fixture.split.train : s < 12 ? fixture.split.validation : fixture.split.test)
        .push_back(idx);
  }
  // class C training mode sits at 1150 nm only
  for (int s = 0; s < 6; ++s)
    fixture.split.train.push_back(
        add_sample(sample_id("cs", s + 1), "classc", 0.0, 0.0, 1.0));
  // held-out C mode mixes a B-like band with a weak C band; it never reaches
  // the training set, so round-1 exemplars under-cover it
  for (int s = 0; s < 12; ++s) {
    const int idx = add_sample(sample_id("ch", s + 1), "classc", 0.75, 0.0, 0.45);
    (s < 6 ? fixture.split.validation : fixture.split.test).push_back(idx);
  }

  ds.validate();
  return fixture;
}

std::vector<KbRecord> table_kb_records() {
  auto make = [](const std::string& id, const std::string& focus, const std::string& bands,
                 std::vector<std::string> steps, const std::string& feature,
                 std::map<std::string, double> params, const std::string& model,
                 const std::string& citation) {
    KbRecord r;
    r.id = id;
    r.material_focus = focus;
    r.technique = "near infrared spectroscopy";
    r.wavelength_bands = bands;
    r.best_preprocessing = std::move(steps);
    r.best_feature = feature;
    r.best_feature_params = std::move(params);
    r.model_architecture = model;
    r.citation = citation;
    return r;
  };

  return {
      make("kb_ink_01", "stamp pad ink brand identification", "400-1700 nm", {"SG", "SNV"},
           "PCA", {{"n_components", 5}}, "few-shot reasoning",
           "Su et al., Forensic Sci. Int. 2021"),
      make("kb_ink_02", "red stamp pad ink product discrimination", "400-1700 nm",
           {"SG", "SNV"}, "PCA", {{"n_components", 5}}, "pls-da",
           "Fan et al., Anal. Methods 2019"),
      make("kb_medicine_01", "chinese medicine lonicerae japonicae flos adulteration",
           "900-1700 nm", {"SNV", "FD"}, "PCA", {{"n_components", 5}}, "svm",
           "Peng et al., Spectrochim. Acta A 2025"),
      make("kb_medicine_02", "lonicerae flos herbal medicine screening", "900-1700 nm",
           {"SNV", "FD"}, "PCA", {{"n_components", 5}}, "knn",
           "Qiao et al., J. Pharm. Biomed. 2020"),
      make("kb_crp_01", "citri reticulatae pericarpium storage age", "900-1700 nm",
           {"SGFD", "SNV"}, "PCA", {{"n_components", 5}}, "random forest",
           "Pan et al., Spectrochim. Acta A 2022"),
      make("kb_crp_02", "dried tangerine peel citri reticulatae pericarpium grading",
           "900-1700 nm", {"SGFD", "SNV"}, "PCA", {{"n_components", 5}}, "pls-da",
           "Zhang et al., J. Near Infrared Spectrosc. 2022"),
      make("kb_tea_01", "pu er tea geographical origin", "900-1700 nm", {"SNV"}, "PCA",
           {{"n_components", 5}}, "cnn", "Hu et al., Food Chem. 2023"),
      make("kb_tea_02", "yunnan pu er tea authentication", "900-1700 nm", {"SNV"}, "PCA",
           {{"n_components", 5}}, "svm", "Li et al., LWT 2020"),
      make("kb_water_01", "waste water chemical oxygen demand cod", "190-1100 nm", {"BC"},
           "LambertBeerPearson", {{"n_top", 3}}, "linear regression",
           "Liang et al., Spectrochim. Acta A 2024"),
      make("kb_water_02", "wastewater effluent cod monitoring", "190-1100 nm", {"BC"},
           "LambertBeerPearson", {{"n_top", 3}}, "plsr",
           "Chen et al., Water Res. 2021"),
  };
}

namespace {

const std::vector<std::string> kGenericTerms = {
    "spectral",     "analysis",   "classification", "detection",  "prediction",
    "quantitative", "calibration", "model",          "samples",    "measurement",
    "spectroscopy", "study",      "rapid",          "nondestructive"};

struct MaterialGroup {
  std::string key;
  std::vector<std::string> terms;
  int count;
};

const std::vector<MaterialGroup> kRelevantGroups = {
    {"ink", {"stamp", "pad", "ink", "seal", "red"}, 10},
    {"water", {"waste", "water", "cod", "chemical", "oxygen", "demand", "effluent"}, 20},
    {"medicine", {"chinese", "medicine", "lonicerae", "japonicae", "flos", "herbal"}, 10},
    {"tea", {"pu", "er", "tea", "yunnan", "origin"}, 10},
};

const std::vector<std::vector<std::string>> kNoiseSubjects = {
    {"soil", "organic", "matter"},   {"wheat", "grain", "protein"},
    {"corn", "kernel", "moisture"},  {"milk", "powder", "melamine"},
    {"honey", "adulteration"},       {"olive", "oil", "acidity"},
    {"apple", "firmness"},           {"tobacco", "leaf", "nicotine"},
    {"coal", "ash", "content"},      {"polymer", "film", "thickness"},
    {"plastic", "resin", "grade"},   {"paper", "pulp", "lignin"},
    {"textile", "fiber", "blend"},   {"wine", "ethanol", "content"},
    {"beer", "bitterness"},          {"juice", "sugar", "brix"},
    {"meat", "freshness"},           {"fish", "fat", "content"},
    {"rice", "amylose"},             {"barley", "malt", "quality"},
    {"cotton", "maturity"},          {"sugar", "cane", "pol"},
    {"salt", "purity"},              {"cement", "clinker", "phase"},
    {"glass", "refractive", "index"},{"steel", "carbon", "content"},
    {"paint", "pigment", "layer"},   {"leather", "tanning", "agent"},
    {"wood", "density"},             {"gasoline", "octane", "number"},
};

std::string join_terms(const std::vector<std::string>& terms, std::size_t from,
                       std::size_t count) {
  std::string out;
  for (std::size_t i = from; i < from + count && i < terms.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += terms[i];
  }
  return out;
}

}  // namespace

RetrievalFixture synthetic_retrieval_corpus(std::uint64_t seed) {
  Rng rng(seed);
  RetrievalFixture fixture;
  std::map<std::string, std::vector<std::string>> ids_by_group;

  auto generic_phrase = [&](int count) {
    std::string out;
    for (int i = 0; i < count; ++i) {
      if (!out.empty()) out += ' ';
      out += kGenericTerms[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(kGenericTerms.size()) - 1))];
    }
    return out;
  };

  int doc_no = 0;
  for (const MaterialGroup& group : kRelevantGroups) {
    for (int d = 0; d < group.count; ++d) {
      KbRecord r;
      r.id = "doc" + std::to_string(++doc_no);
      const std::size_t n_terms = static_cast<std::size_t>(
          rng.uniform_int(3, static_cast<int>(group.terms.size())));
      r.material_focus = join_terms(group.terms, 0, n_terms);
      r.technique = "near infrared spectroscopy " + generic_phrase(rng.uniform_int(2, 4));
      r.wavelength_bands = d % 2 == 0 ? "900-1700 nm" : "400-1100 nm";
      r.best_preprocessing = {"SNV"};
      r.best_feature = "PCA";
      r.model_architecture = "various";
      r.citation = "synthetic corpus entry " + r.id;
      ids_by_group[group.key].push_back(r.id);
      fixture.records.push_back(std::move(r));
    }
  }
  for (int d = 0; d < 150; ++d) {
    KbRecord r;
    r.id = "doc" + std::to_string(++doc_no);
    const auto& subject = kNoiseSubjects[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(kNoiseSubjects.size()) - 1))];
    r.material_focus = join_terms(subject, 0, subject.size()) + " " + generic_phrase(2);
    r.technique = "spectroscopy " + generic_phrase(rng.uniform_int(4, 7));
    r.wavelength_bands = d % 3 == 0 ? "900-1700 nm" : "1000-2500 nm";
    r.best_preprocessing = {"SNV"};
    r.best_feature = "PCA";
    r.model_architecture = "various";
    r.citation = "synthetic corpus entry " + r.id;
    fixture.records.push_back(std::move(r));
  }

  // queries mix each material's label with generic vocabulary, 25 per material
  const std::vector<std::string> templates = {
      "rapid nondestructive spectral classification study of {m}",
      "rapid detection model for {m} samples measurement analysis",
      "quantitative analysis calibration of {m} spectral measurement",
      "{m} spectroscopy calibration model study samples",
      "prediction detection of {m} quality with spectral analysis model",
  };
  for (const MaterialGroup& group : kRelevantGroups) {
    for (int q = 0; q < 25; ++q) {
      const std::string& tpl = templates[static_cast<std::size_t>(q) % templates.size()];
      const std::size_t n_terms =
          2 + static_cast<std::size_t>(q % (group.terms.size() - 1));
      const std::string material = join_terms(group.terms, 0, n_terms);
      std::string text = tpl;
      text.replace(text.find("{m}"), 3, material);
      fixture.queries.push_back({text, ids_by_group[group.key]});
    }
  }
  return fixture;
}

std::vector<EntityEvalCase> synthetic_entity_cases() {
  struct MaterialTask {
    std::string object;
    std::vector<TaskType> tasks;
  };
  const std::vector<MaterialTask> materials = {
      {"stamp pad ink", {TaskType::Classification, TaskType::AnomalyDetection}},
      {"chinese medicine", {TaskType::Classification, TaskType::AnomalyDetection}},
      {"citri reticulatae pericarpium", {TaskType::Classification, TaskType::AnomalyDetection}},
      {"pu er tea", {TaskType::Classification, TaskType::AnomalyDetection}},
      {"waste water", {TaskType::Regression}},
  };
  const std::vector<std::string> classification_templates = {
      "Can you classify {obj} samples from their infrared spectra?",
      "Which subclass does each {obj} spectrum belong to?",
      "Please assign class labels to these {obj} measurements.",
      "Identify the category of every {obj} sample in this batch.",
      "Sort the {obj} spectra into their product types.",
  };
  const std::vector<std::string> anomaly_templates = {
      "Are any of these {obj} spectra abnormal?",
      "Flag the {obj} samples that do not match the reference class.",
      "Detect outliers among the {obj} measurements.",
      "Which {obj} spectra fail to conform to the normal pattern?",
      "Screen this {obj} batch for anomalous samples.",
  };
  const std::vector<std::string> regression_templates = {
      "Predict the COD concentration of these {obj} samples.",
      "Estimate the chemical oxygen demand from the {obj} spectra.",
      "What is the concentration value for each {obj} measurement?",
      "Give a quantitative COD prediction for the {obj} batch.",
      "Regress the analyte level of the {obj} spectra.",
  };

  std::vector<EntityEvalCase> cases;
  int i = 0;
  while (cases.size() < 100) {
    const MaterialTask& m = materials[static_cast<std::size_t>(i) % materials.size()];
    const TaskType task = m.tasks[static_cast<std::size_t>(i / materials.size()) % m.tasks.size()];
    const std::vector<std::string>& pool =
        task == TaskType::Classification ? classification_templates
        : task == TaskType::AnomalyDetection ? anomaly_templates
                                             : regression_templates;
    std::string question = pool[static_cast<std::size_t>(i / 10) % pool.size()];
    question.replace(question.find("{obj}"), 5, m.object);
    cases.push_back({question, m.object, task});
    ++i;
  }
  return cases;
}

}  // namespace specagent
