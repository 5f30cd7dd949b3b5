#include "chroma/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace chroma::svg {

namespace {

constexpr double kMarginLeft = 70.0, kMarginRight = 18.0, kMarginTop = 34.0, kMarginBottom = 52.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string escape_xml(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range padded(double lo, double hi) {
    if (lo == hi) {
        const double pad = std::max(0.5, std::abs(lo) * 0.1);
        return {lo - pad, hi + pad};
    }
    const double pad = (hi - lo) * 0.05;
    return {lo - pad, hi + pad};
}

// Tick step of the form {1, 2, 5} * 10^k giving roughly `target` divisions.
std::vector<double> linear_ticks(const Range& range, int target) {
    const double span = range.hi - range.lo;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double mult : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * mult >= raw) {
            step = mag * mult;
            break;
        }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(range.lo / step) * step; t <= range.hi + step * 1e-9; t += step) {
        ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    }
    return ticks;
}

std::vector<double> decade_ticks(const Range& log_range) {
    std::vector<double> ticks;
    for (double e = std::ceil(log_range.lo - 1e-9); e <= log_range.hi + 1e-9; e += 1.0) {
        ticks.push_back(e);
    }
    if (ticks.empty()) ticks.push_back(std::round((log_range.lo + log_range.hi) / 2.0));
    return ticks;
}

}  // namespace

std::string render_line_chart(const std::vector<Series>& series, const ChartOptions& options) {
    if (series.empty()) throw ValueError("line chart needs at least one series");
    double x_lo = std::numeric_limits<double>::max(), x_hi = std::numeric_limits<double>::lowest();
    double y_lo = x_lo, y_hi = x_hi;
    std::size_t total_points = 0;
    for (const Series& s : series) {
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) throw ValueError("chart point is not finite");
            if (options.log_x && x <= 0.0) {
                throw ValueError("logarithmic x axis needs positive x values, got " + std::to_string(x));
            }
            const double px = options.log_x ? std::log10(x) : x;
            x_lo = std::min(x_lo, px);
            x_hi = std::max(x_hi, px);
            y_lo = std::min(y_lo, y);
            y_hi = std::max(y_hi, y);
            ++total_points;
        }
    }
    if (total_points == 0) throw ValueError("line chart needs at least one point");

    const Range xr = padded(x_lo, x_hi);
    const Range yr = padded(y_lo, y_hi);
    const double plot_w = options.width - kMarginLeft - kMarginRight;
    const double plot_h = options.height - kMarginTop - kMarginBottom;
    const auto to_px = [&](double x) { return kMarginLeft + (x - xr.lo) / (xr.hi - xr.lo) * plot_w; };
    const auto to_py = [&](double y) {
        return kMarginTop + plot_h - (y - yr.lo) / (yr.hi - yr.lo) * plot_h;
    };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(options.width) +
           "\" height=\"" + std::to_string(options.height) + "\" viewBox=\"0 0 " +
           std::to_string(options.width) + " " + std::to_string(options.height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!options.title.empty()) {
        out += "<text x=\"" + num(options.width / 2.0) +
               "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
               escape_xml(options.title) + "</text>\n";
    }

    // gridlines + tick labels
    const std::vector<double> x_ticks = options.log_x ? decade_ticks(xr) : linear_ticks(xr, 6);
    const std::vector<double> y_ticks = linear_ticks(yr, 5);
    out += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
    for (double t : x_ticks) {
        const double px = to_px(t);
        out += "<line x1=\"" + num(px) + "\" y1=\"" + num(kMarginTop) + "\" x2=\"" + num(px) + "\" y2=\"" +
               num(kMarginTop + plot_h) + "\" stroke=\"#ddd\"/>\n";
        out += "<text class=\"x-tick\" x=\"" + num(px) + "\" y=\"" + num(kMarginTop + plot_h + 16) +
               "\" text-anchor=\"middle\">" + tick_label(options.log_x ? std::pow(10.0, t) : t) + "</text>\n";
    }
    for (double t : y_ticks) {
        const double py = to_py(t);
        out += "<line x1=\"" + num(kMarginLeft) + "\" y1=\"" + num(py) + "\" x2=\"" +
               num(kMarginLeft + plot_w) + "\" y2=\"" + num(py) + "\" stroke=\"#ddd\"/>\n";
        out += "<text class=\"y-tick\" x=\"" + num(kMarginLeft - 6) + "\" y=\"" + num(py + 4) +
               "\" text-anchor=\"end\">" + tick_label(t) + "</text>\n";
    }
    out += "</g>\n";

    // axes
    out += "<line x1=\"" + num(kMarginLeft) + "\" y1=\"" + num(kMarginTop + plot_h) + "\" x2=\"" +
           num(kMarginLeft + plot_w) + "\" y2=\"" + num(kMarginTop + plot_h) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + num(kMarginLeft) + "\" y1=\"" + num(kMarginTop) + "\" x2=\"" + num(kMarginLeft) +
           "\" y2=\"" + num(kMarginTop + plot_h) + "\" stroke=\"black\"/>\n";
    if (!options.x_label.empty()) {
        out += "<text x=\"" + num(kMarginLeft + plot_w / 2.0) + "\" y=\"" + num(options.height - 10.0) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
               escape_xml(options.x_label) + (options.log_x ? " (log scale)" : "") + "</text>\n";
    }
    if (!options.y_label.empty()) {
        out += "<text x=\"16\" y=\"" + num(kMarginTop + plot_h / 2.0) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
               num(kMarginTop + plot_h / 2.0) + ")\">" + escape_xml(options.y_label) + "</text>\n";
    }

    // series paths and markers
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % kPaletteSize];
        const Series& s = series[i];
        if (s.points.size() >= 2) {
            std::string d;
            for (std::size_t p = 0; p < s.points.size(); ++p) {
                const double px = options.log_x ? std::log10(s.points[p].first) : s.points[p].first;
                d += (p == 0 ? "M" : " L") + num(to_px(px)) + "," + num(to_py(s.points[p].second));
            }
            out += "<path class=\"series\" d=\"" + d + "\" fill=\"none\" stroke=\"" + color +
                   "\" stroke-width=\"1.8\"/>\n";
        }
        for (const auto& [x, y] : s.points) {
            const double px = options.log_x ? std::log10(x) : x;
            out += "<circle cx=\"" + num(to_px(px)) + "\" cy=\"" + num(to_py(y)) + "\" r=\"2.6\" fill=\"" +
                   color + "\"/>\n";
        }
    }

    // legend, top-right inside the plot
    out += "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double ly = kMarginTop + 14.0 + 18.0 * static_cast<double>(i);
        const double lx = kMarginLeft + plot_w - 150.0;
        out += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(lx + 22) + "\" y2=\"" +
               num(ly - 4) + "\" stroke=\"" + std::string(kPalette[i % kPaletteSize]) +
               "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + num(lx + 28) + "\" y=\"" + num(ly) + "\">" + escape_xml(series[i].label) +
               "</text>\n";
    }
    out += "</g>\n</svg>\n";
    return out;
}

}  // namespace chroma::svg
