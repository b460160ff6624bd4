#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccf {

// Grouped bar chart. One group per label, one bar per series entry. Values
// are clamped at zero; the y axis spans [0, max value].
struct BarSeries {
  std::string name;
  std::vector<double> values;  // one per group
};

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& group_labels,
                          const std::vector<BarSeries>& series);

// Renders a binary mask (1 = visible) as black blocks on white.
std::string svg_mask(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                         Eigen::Dynamic>& mask,
                     const std::string& title);

// Simple multi-line chart for loss/metric curves.
std::string svg_line_chart(const std::string& title,
                           const std::vector<BarSeries>& series);

}  // namespace ccf
