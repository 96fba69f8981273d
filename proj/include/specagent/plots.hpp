#pragma once

#include <string>
#include <vector>

#include "specagent/core.hpp"

namespace specagent {

// Self-contained deterministic SVG: raw and processed traces overlaid on a
// shared canvas with min/max scaling per trace.
std::string svg_overlay(const Spectrum& raw, const Spectrum& processed);

// 2-D scatter of the first two feature dimensions, colored by label.
std::string svg_scatter(const FeatureMatrix& features, const std::vector<Label>& labels);

}  // namespace specagent
