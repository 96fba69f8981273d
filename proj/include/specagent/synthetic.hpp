#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specagent/core.hpp"
#include "specagent/entity.hpp"
#include "specagent/kb.hpp"

namespace specagent {

// Deterministic generators behind the bundled fixtures. Everything here is
// seeded and reproducible bit-for-bit, so the files under data/ can always be
// regenerated with the CLI `fixtures` command.

struct SyntheticSpec {
  std::string material = "synthetic_ink";
  int n_classes = 3;
  int samples_per_class = 20;
  int n_points = 120;
  double wl_start = 400.0;
  double wl_end = 1700.0;
  double noise = 0.01;            // additive, relative to peak height
  double scatter = 0.15;          // multiplicative path-length spread
  double baseline_drift = 0.3;    // sloped baseline amplitude
  std::uint64_t seed = 0;
};

// Gaussian absorption bands per class on a drifting baseline with
// multiplicative scatter; labels class1..classN.
SpectralDataset synthetic_classification_dataset(const SyntheticSpec& spec);

// COD-style regression set: one analyte band whose depth tracks the response
// value; labels in mg/L.
SpectralDataset synthetic_regression_dataset(int n_samples, std::uint64_t seed);

// A classification dataset plus an explicit split in which one class has a
// spectral mode that never reaches the training set, so round-1 exemplars
// under-cover it and nearest-neighbor reasoning starts out wrong on it.
struct UndercoveredFixture {
  SpectralDataset dataset;
  Split split;
  std::string undercovered_class;
};

UndercoveredFixture synthetic_undercovered_fixture(std::uint64_t seed);

// The five-material literature fixture (two records per material, identical
// plans, so deduplication leaves one candidate each).
std::vector<KbRecord> table_kb_records();

// 200-document retrieval corpus: 10 ink + 20 water + 10 medicine + 10 tea
// relevant records and 150 noise records, plus 100 labeled queries derived
// from the material labels.
struct RetrievalFixture {
  std::vector<KbRecord> records;
  std::vector<LabeledQuery> queries;
};

RetrievalFixture synthetic_retrieval_corpus(std::uint64_t seed);

// 100 templated questions across five materials and three task types.
std::vector<EntityEvalCase> synthetic_entity_cases();

}  // namespace specagent
