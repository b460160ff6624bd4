#include "ccf/svg.hpp"

#include <algorithm>
#include <cmath>

#include "ccf/csv.hpp"

namespace ccf {

namespace {

const char* kPalette[] = {"#4878cf", "#d65f5f", "#6acc65", "#b47cc7",
                          "#c4ad66", "#77bedb"};

std::string num(double v) { return fmt_g9(v); }

std::string rect(double x, double y, double w, double h,
                 const std::string& fill) {
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
         "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
}

std::string text(double x, double y, const std::string& s, int size,
                 const std::string& anchor = "middle") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
         std::to_string(size) +
         "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\">" + s +
         "</text>\n";
}

}  // namespace

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& group_labels,
                          const std::vector<BarSeries>& series) {
  const double width = 720, height = 420;
  const double left = 60, right = 20, top = 48, bottom = 60;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double vmax = 0;
  for (const auto& s : series)
    for (double v : s.values) vmax = std::max(vmax, v);
  if (vmax <= 0) vmax = 1;

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) +
         "\" height=\"" + num(height) + "\">\n";
  out += rect(0, 0, width, height, "#ffffff");
  out += text(width / 2, 24, title, 16);

  for (int tick = 0; tick <= 4; ++tick) {
    const double frac = tick / 4.0;
    const double y = top + plot_h * (1 - frac);
    out += "<line x1=\"" + num(left) + "\" y1=\"" + num(y) + "\" x2=\"" +
           num(left + plot_w) + "\" y2=\"" + num(y) +
           "\" stroke=\"#dddddd\"/>\n";
    out += text(left - 8, y + 4, fmt_g9(vmax * frac), 11, "end");
  }

  const std::size_t groups = group_labels.size();
  const std::size_t bars = std::max<std::size_t>(series.size(), 1);
  const double group_w = groups ? plot_w / double(groups) : plot_w;
  const double bar_w = group_w * 0.8 / double(bars);

  for (std::size_t g = 0; g < groups; ++g) {
    const double gx = left + group_w * double(g);
    out += text(gx + group_w / 2, top + plot_h + 18, group_labels[g], 12);
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].values.size()) continue;
      const double v = std::max(0.0, series[s].values[g]);
      const double h = plot_h * v / vmax;
      const double x = gx + group_w * 0.1 + bar_w * double(s);
      out += rect(x, top + plot_h - h, bar_w * 0.92, h,
                  kPalette[s % 6]);
    }
  }

  double lx = left;
  const double ly = height - 18;
  for (std::size_t s = 0; s < series.size(); ++s) {
    out += rect(lx, ly - 10, 12, 12, kPalette[s % 6]);
    out += text(lx + 16, ly, series[s].name, 12, "start");
    lx += 24 + 7.5 * double(series[s].name.size());
  }

  out += "</svg>\n";
  return out;
}

std::string svg_mask(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                         Eigen::Dynamic>& mask,
                     const std::string& title) {
  const double cell = std::max(1.0, 420.0 / std::max<double>(1, mask.rows()));
  const double w = cell * double(mask.cols());
  const double h = cell * double(mask.rows());
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) +
         "\" height=\"" + num(h + 28) + "\">\n";
  out += rect(0, 0, w, h + 28, "#ffffff");
  out += text(w / 2, 16, title, 13);
  // Runs of masked cells are merged per row to keep files small.
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    Eigen::Index c = 0;
    while (c < mask.cols()) {
      if (mask(r, c) != 0) {
        ++c;
        continue;
      }
      Eigen::Index c0 = c;
      while (c < mask.cols() && mask(r, c) == 0) ++c;
      out += rect(cell * double(c0), 24 + cell * double(r),
                  cell * double(c - c0), cell, "#222222");
    }
  }
  out += "</svg>\n";
  return out;
}

std::string svg_line_chart(const std::string& title,
                           const std::vector<BarSeries>& series) {
  const double width = 720, height = 420;
  const double left = 60, right = 20, top = 48, bottom = 40;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double vmax = 0;
  std::size_t nmax = 1;
  for (const auto& s : series) {
    nmax = std::max(nmax, s.values.size());
    for (double v : s.values) vmax = std::max(vmax, v);
  }
  if (vmax <= 0) vmax = 1;

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) +
         "\" height=\"" + num(height) + "\">\n";
  out += rect(0, 0, width, height, "#ffffff");
  out += text(width / 2, 24, title, 16);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& vals = series[s].values;
    if (vals.empty()) continue;
    std::string pts;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double x =
          left + (nmax > 1 ? plot_w * double(i) / double(nmax - 1) : 0);
      const double y = top + plot_h * (1 - std::max(0.0, vals[i]) / vmax);
      pts += num(x) + "," + num(y) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" +
           std::string(kPalette[s % 6]) + "\" stroke-width=\"2\" points=\"" +
           pts + "\"/>\n";
    out += text(left + 8 + 130.0 * double(s), height - 12, series[s].name, 12,
                "start");
  }
  out += "</svg>\n";
  return out;
}

}  // namespace ccf
