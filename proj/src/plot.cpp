#include "dac/plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dac::plot {

namespace {

constexpr const char* kPalette[] = {"#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860"};
constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

double max_value(const std::vector<Series>& series) {
    double m = 0.0;
    for (const auto& s : series)
        for (double v : s.values)
            if (std::isfinite(v)) m = std::max(m, v);
    return m > 0.0 ? m : 1.0;
}

void frame(std::ostringstream& o, const std::string& title, const std::string& y_label, double y_max) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
    const double plot_h = kH - kTop - kBottom;
    for (int t = 0; t <= 5; ++t) {
        const double v = y_max * t / 5.0;
        const double y = kTop + plot_h * (1.0 - t / 5.0);
        o << "<line x1=\"" << kLeft << "\" x2=\"" << kW - kRight << "\" y1=\"" << y << "\" y2=\"" << y
          << "\" stroke=\"#ddd\" stroke-dasharray=\"4,3\"/>\n";
        o << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << std::round(v * 100) / 100
          << "</text>\n";
    }
    o << "<text transform=\"translate(16," << kTop + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";
}

void legend(std::ostringstream& o, const std::vector<Series>& series) {
    double x = kLeft + 10;
    for (std::size_t s = 0; s < series.size(); ++s) {
        o << "<rect x=\"" << x << "\" y=\"" << kTop - 4 << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[s % 6]
          << "\"/><text x=\"" << x + 14 << "\" y=\"" << kTop + 5 << "\">" << escape(series[s].name) << "</text>\n";
        x += 24 + 7.0 * series[s].name.size();
    }
}

}  // namespace

std::string grouped_bar_svg(const std::string& title, const std::vector<std::string>& categories,
                            const std::vector<Series>& series, const std::string& y_label) {
    std::ostringstream o;
    const double y_max = max_value(series) * 1.1;
    frame(o, title, y_label, y_max);
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    const double group_w = plot_w / std::max<std::size_t>(1, categories.size());
    const double bar_w = group_w * 0.8 / std::max<std::size_t>(1, series.size());
    for (std::size_t c = 0; c < categories.size(); ++c) {
        const double gx = kLeft + c * group_w + group_w * 0.1;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = c < series[s].values.size() ? series[s].values[c] : 0.0;
            const double h = plot_h * std::max(0.0, v) / y_max;
            o << "<rect x=\"" << gx + s * bar_w << "\" y=\"" << kTop + plot_h - h << "\" width=\"" << bar_w * 0.95
              << "\" height=\"" << h << "\" fill=\"" << kPalette[s % 6] << "\"/>\n";
        }
        o << "<text x=\"" << kLeft + (c + 0.5) * group_w << "\" y=\"" << kH - kBottom + 18
          << "\" text-anchor=\"middle\">" << escape(categories[c]) << "</text>\n";
    }
    legend(o, series);
    o << "</svg>\n";
    return o.str();
}

std::string line_svg(const std::string& title, const std::vector<double>& xs, const std::vector<Series>& series,
                     const std::string& x_label, const std::string& y_label) {
    std::ostringstream o;
    const double y_max = std::max(1.0, max_value(series));
    frame(o, title, y_label, y_max);
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    const double x_lo = xs.empty() ? 0.0 : *std::min_element(xs.begin(), xs.end());
    const double x_hi = xs.empty() ? 1.0 : *std::max_element(xs.begin(), xs.end());
    const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
    auto px = [&](double x) { return kLeft + plot_w * (x - x_lo) / span; };
    auto py = [&](double y) { return kTop + plot_h * (1.0 - y / y_max); };
    for (double x : xs)
        o << "<text x=\"" << px(x) << "\" y=\"" << kH - kBottom + 18 << "\" text-anchor=\"middle\">" << x << "</text>\n";
    o << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">" << escape(x_label)
      << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        o << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[s % 6] << "\" points=\"";
        for (std::size_t i = 0; i < xs.size() && i < series[s].values.size(); ++i)
            o << px(xs[i]) << "," << py(series[s].values[i]) << " ";
        o << "\"/>\n";
        for (std::size_t i = 0; i < xs.size() && i < series[s].values.size(); ++i)
            o << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(series[s].values[i]) << "\" r=\"3\" fill=\""
              << kPalette[s % 6] << "\"/>\n";
    }
    legend(o, series);
    o << "</svg>\n";
    return o.str();
}

}  // namespace dac::plot
