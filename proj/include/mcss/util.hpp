#pragma once

#include <string>
#include <vector>

namespace mcss {

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

// Fixed 17-significant-digit form used by the dataset files.
std::string format_double17(double v);

double parse_double(const std::string& s);

// Write via temp file + rename so readers never see a partial file.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Spearman rank correlation with average ranks for ties. Requires >= 2 points.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// Nearest-rank percentile, p in [0, 100]. Requires non-empty input.
double percentile(std::vector<double> values, double p);

}  // namespace mcss
