#pragma once

// Minimal deterministic SVG rendering for the report figures: grouped bar
// charts and polyline charts. Output depends only on the inputs, so report
// regeneration is byte-identical.

#include <string>
#include <vector>

namespace dac::svg {

struct Series {
    std::string name;
    std::vector<double> values;
};

// Bars grouped per category; up to a handful of series.
std::string bar_chart(const std::string& title, const std::vector<std::string>& categories,
                      const std::vector<Series>& series, int width = 640, int height = 400);

struct Polyline {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

std::string line_chart(const std::string& title, const std::vector<Polyline>& lines,
                       const std::string& x_label, const std::string& y_label, int width = 640,
                       int height = 400);

}  // namespace dac::svg
