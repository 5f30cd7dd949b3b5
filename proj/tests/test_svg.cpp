#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "chroma/error.hpp"
#include "chroma/svg.hpp"

using namespace chroma;

namespace {

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
    std::size_t count = 0;
    for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
        ++count;
    }
    return count;
}

}  // namespace

TEST_SUITE("svg") {

TEST_CASE("chart structure: paths, markers, legend, labels") {
    svg::Series a{"loss", {{0, 1.0}, {1, 0.7}, {2, 0.55}}};
    svg::Series b{"val loss", {{0, 1.1}, {1, 0.8}, {2, 0.6}}};
    svg::ChartOptions options;
    options.title = "training curves";
    options.x_label = "epoch";
    options.y_label = "loss";
    const std::string out = svg::render_line_chart({a, b}, options);

    CHECK(out.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0) == 0);
    CHECK(out.find("width=\"760\"") != std::string::npos);
    CHECK(out.find("height=\"480\"") != std::string::npos);
    CHECK(out.substr(out.size() - 7) == "</svg>\n");
    CHECK(count_occurrences(out, "<path class=\"series\"") == 2);
    CHECK(count_occurrences(out, "<circle") == 6);
    CHECK(out.find(">loss</text>") != std::string::npos);
    CHECK(out.find(">val loss</text>") != std::string::npos);
    CHECK(out.find(">training curves</text>") != std::string::npos);
    CHECK(out.find(">epoch</text>") != std::string::npos);
    CHECK(out.find("class=\"legend\"") != std::string::npos);
}

TEST_CASE("a single point draws a marker but no line") {
    svg::Series lonely{"dot", {{3.0, 4.0}}};
    const std::string out = svg::render_line_chart({lonely}, {});
    CHECK(count_occurrences(out, "<path class=\"series\"") == 0);
    CHECK(count_occurrences(out, "<circle") == 1);
}

TEST_CASE("labels are xml-escaped") {
    svg::Series s{"a<b & c>d", {{0, 0}, {1, 1}}};
    svg::ChartOptions options;
    options.title = "x & y";
    const std::string out = svg::render_line_chart({s}, options);
    CHECK(out.find("a&lt;b &amp; c&gt;d") != std::string::npos);
    CHECK(out.find("x &amp; y") != std::string::npos);
    CHECK(out.find("a<b") == std::string::npos);
}

TEST_CASE("logarithmic x axis uses decade ticks") {
    svg::Series s{"params", {{1, 70.0}, {10, 80.0}, {100, 88.0}, {1000, 92.0}}};
    svg::ChartOptions options;
    options.x_label = "params";
    options.log_x = true;
    const std::string out = svg::render_line_chart({s}, options);
    for (const char* tick : {">1</text>", ">10</text>", ">100</text>", ">1000</text>"}) {
        CHECK(out.find(tick) != std::string::npos);
    }
    CHECK(out.find("params (log scale)") != std::string::npos);
    CHECK_THROWS_AS(svg::render_line_chart({svg::Series{"bad", {{0.0, 1.0}}}}, options), ValueError);
    CHECK_THROWS_AS(svg::render_line_chart({svg::Series{"bad", {{-3.0, 1.0}}}}, options), ValueError);
}

TEST_CASE("degenerate inputs fail loudly") {
    CHECK_THROWS_AS(svg::render_line_chart({}, {}), ValueError);
    CHECK_THROWS_AS(svg::render_line_chart({svg::Series{"empty", {}}}, {}), ValueError);
    const double nan = std::nan("");
    CHECK_THROWS_AS(svg::render_line_chart({svg::Series{"nan", {{0.0, nan}}}}, {}), ValueError);
}

}  // TEST_SUITE
