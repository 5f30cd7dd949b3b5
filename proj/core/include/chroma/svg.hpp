#pragma once

#include <string>
#include <utility>
#include <vector>

#include "chroma/error.hpp"

// Self-contained SVG line charts: multi-series polylines with point markers,
// nice linear ticks (or decade ticks on a logarithmic x axis), a legend, and
// axis labels. Text output keeps the plots diffable in tests.

namespace chroma::svg {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

struct ChartOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    int width = 760;
    int height = 480;
};

std::string render_line_chart(const std::vector<Series>& series, const ChartOptions& options);

}  // namespace chroma::svg
