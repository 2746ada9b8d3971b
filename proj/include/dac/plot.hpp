#pragma once

#include <string>
#include <vector>

namespace dac::plot {

struct Series {
    std::string name;
    std::vector<double> values;
};

// Minimal standalone SVG charts.
std::string grouped_bar_svg(const std::string& title, const std::vector<std::string>& categories,
                            const std::vector<Series>& series, const std::string& y_label);
std::string line_svg(const std::string& title, const std::vector<double>& xs, const std::vector<Series>& series,
                     const std::string& x_label, const std::string& y_label);

}  // namespace dac::plot
