#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace flowlab {

// Minimal SVG plotter for the report's static figures: metric curves and 2D
// scatters with density contours. Data coordinates are mapped into a fixed
// frame with simple axis ticks.
class SvgPlot {
 public:
  SvgPlot(std::string title, double x_min, double x_max, double y_min, double y_max);

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                const std::string& label = "");
  void scatter(const std::vector<std::pair<double, double>>& pts, const std::string& color,
               double radius = 1.5, const std::string& label = "");
  void ellipse(double cx, double cy, double rx, double ry, const std::string& color);

  void save(const std::filesystem::path& path) const;

 private:
  double px(double x) const;
  double py(double y) const;

  std::string title_;
  double x_min_, x_max_, y_min_, y_max_;
  std::vector<std::string> body_;
  std::vector<std::pair<std::string, std::string>> legend_;  // label, color
};

}  // namespace flowlab
