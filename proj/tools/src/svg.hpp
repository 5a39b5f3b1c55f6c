#pragma once

// Minimal static SVG charts for experiment outputs.

#include <string>
#include <vector>

namespace cpae::svg {

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::vector<double> y_err;  // optional band (same length as y)
};

struct ChartOptions {
    std::string title, x_label, y_label;
    bool log_y = false;
    bool markers_only = false;  // scatter instead of polyline
    int width = 640, height = 420;
};

std::string line_chart(const std::vector<Series>& series, const ChartOptions& opt);

struct Bar {
    std::string label;
    double value = 0.0;
    double error = 0.0;
};

std::string bar_chart(const std::vector<Bar>& bars, const ChartOptions& opt);

}  // namespace cpae::svg
