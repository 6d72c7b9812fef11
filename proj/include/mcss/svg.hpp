#pragma once

#include <string>
#include <vector>

namespace mcss {

struct ChartSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal self-contained SVG line chart; CSVs remain the source of truth.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<ChartSeries>& series);

}  // namespace mcss
