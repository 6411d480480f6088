#include "flowlab/plot.hpp"

#include <cmath>
#include <fstream>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {
constexpr double kW = 640.0, kH = 440.0;
constexpr double kL = 60.0, kR = 20.0, kT = 40.0, kB = 40.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

SvgPlot::SvgPlot(std::string title, double x_min, double x_max, double y_min, double y_max)
    : title_(std::move(title)), x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max) {
  if (!(x_max_ > x_min_)) x_max_ = x_min_ + 1.0;
  if (!(y_max_ > y_min_)) y_max_ = y_min_ + 1.0;
}

double SvgPlot::px(double x) const {
  return kL + (x - x_min_) / (x_max_ - x_min_) * (kW - kL - kR);
}

double SvgPlot::py(double y) const {
  return kH - kB - (y - y_min_) / (y_max_ - y_min_) * (kH - kT - kB);
}

void SvgPlot::polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                       const std::string& label) {
  if (pts.empty()) return;
  std::string d = "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
  for (const auto& [x, y] : pts) d += fmt(px(x)) + "," + fmt(py(y)) + " ";
  d += "\"/>";
  body_.push_back(d);
  if (!label.empty()) legend_.emplace_back(label, color);
}

void SvgPlot::scatter(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                      double radius, const std::string& label) {
  for (const auto& [x, y] : pts)
    body_.push_back("<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) + "\" r=\"" +
                    fmt(radius) + "\" fill=\"" + color + "\" fill-opacity=\"0.5\"/>");
  if (!label.empty()) legend_.emplace_back(label, color);
}

void SvgPlot::ellipse(double cx, double cy, double rx, double ry, const std::string& color) {
  const double prx = rx / (x_max_ - x_min_) * (kW - kL - kR);
  const double pry = ry / (y_max_ - y_min_) * (kH - kT - kB);
  body_.push_back("<ellipse cx=\"" + fmt(px(cx)) + "\" cy=\"" + fmt(py(cy)) + "\" rx=\"" +
                  fmt(prx) + "\" ry=\"" + fmt(pry) + "\" fill=\"none\" stroke=\"" + color +
                  "\" stroke-dasharray=\"4 3\"/>");
}

void SvgPlot::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write plot: " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title_
     << "</text>\n";
  // frame + ticks
  os << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\""
     << kH - kT - kB << "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x_min_ + (x_max_ - x_min_) * i / 4.0;
    const double yv = y_min_ + (y_max_ - y_min_) * i / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << kH - kB + 16
       << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt(xv) << "</text>\n";
    os << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 3
       << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(yv) << "</text>\n";
  }
  for (const std::string& b : body_) os << b << "\n";
  double ly = kT + 14;
  for (const auto& [label, color] : legend_) {
    os << "<rect x=\"" << kW - kR - 150 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
       << color << "\"/>\n";
    os << "<text x=\"" << kW - kR - 135 << "\" y=\"" << ly << "\" font-size=\"11\">" << label
       << "</text>\n";
    ly += 16;
  }
  os << "</svg>\n";
}

}  // namespace flowlab
