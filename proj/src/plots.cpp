#include "specagent/plots.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "specagent/util.hpp"

namespace specagent {

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 400.0;
constexpr double kPad = 40.0;

std::string coord(double v) { return format_significant(v, 6); }

void polyline(std::ostringstream& out, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
              const std::string& color) {
  const double xmin = x.minCoeff(), xmax = x.maxCoeff();
  double ymin = y.minCoeff(), ymax = y.maxCoeff();
  if (ymax == ymin) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\" points=\"";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double px = kPad + (kWidth - 2 * kPad) * (x[i] - xmin) / (xmax - xmin);
    const double py = kHeight - kPad - (kHeight - 2 * kPad) * (y[i] - ymin) / (ymax - ymin);
    out << coord(px) << ',' << coord(py) << ' ';
  }
  out << "\"/>\n";
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string svg_overlay(const Spectrum& raw, const Spectrum& processed) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
      << raw.id() << " (gray: raw, blue: processed)</text>\n";
  polyline(out, raw.wavelengths(), raw.intensities(), "#b0b0b0");
  polyline(out, processed.wavelengths(), processed.intensities(), "#1f77b4");
  out << "</svg>\n";
  return out.str();
}

std::string svg_scatter(const FeatureMatrix& features, const std::vector<Label>& labels) {
  if (features.dim() < 2)
    raise(ErrorCode::DimMismatch, "scatter plot needs at least 2 feature dimensions");
  if (static_cast<std::size_t>(features.n_samples()) != labels.size())
    raise(ErrorCode::LengthMismatch, "labels do not match feature rows");

  const Eigen::VectorXd x = features.rows.col(0);
  const Eigen::VectorXd y = features.rows.col(1);
  const double xmin = x.minCoeff(), xmax = x.maxCoeff();
  const double ymin = y.minCoeff(), ymax = y.maxCoeff();
  const double xspan = xmax == xmin ? 1.0 : xmax - xmin;
  const double yspan = ymax == ymin ? 1.0 : ymax - ymin;

  // stable color assignment: sorted distinct label text
  std::map<std::string, std::string> color_of;
  for (const Label& l : labels) color_of[l.display()] = "";
  int k = 0;
  for (auto& [name, color] : color_of)
    color = kPalette[static_cast<std::size_t>(k++) % 10];

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
      << features.feature_names[0] << " vs " << features.feature_names[1] << "</text>\n";
  for (Eigen::Index i = 0; i < features.n_samples(); ++i) {
    const double px = kPad + (kWidth - 2 * kPad) * (x[i] - xmin) / xspan;
    const double py = kHeight - kPad - (kHeight - 2 * kPad) * (y[i] - ymin) / yspan;
    out << "<circle cx=\"" << coord(px) << "\" cy=\"" << coord(py) << "\" r=\"3\" fill=\""
        << color_of[labels[static_cast<std::size_t>(i)].display()] << "\"/>\n";
  }
  double ly = 36.0;
  for (const auto& [name, color] : color_of) {
    out << "<circle cx=\"" << kWidth - 150 << "\" cy=\"" << coord(ly) << "\" r=\"4\" fill=\""
        << color << "\"/>\n";
    out << "<text x=\"" << kWidth - 140 << "\" y=\"" << coord(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
    ly += 16.0;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace specagent
