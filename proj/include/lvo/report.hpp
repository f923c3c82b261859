#pragma once

#include "lvo/config.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lvo {

struct ReportBuild {
    std::filesystem::path html;
    std::filesystem::path manifest;
    int rows = 0;  // one per (feature, peak)
    std::vector<std::string> warnings;
};

/// Verifies every upstream manifest (missing files, hash mismatches) and
/// writes <output>/reports/index.html. Gaps are rendered, never fatal.
ReportBuild build_report(const StageConfig& cfg);

/// Inline SVG line plot of one or more series over time-steps; `marks` draws vertical rules.
std::string svg_plot(const std::vector<std::vector<double>>& series, const std::vector<std::string>& colors,
                     const std::vector<int>& marks, int width = 320, int height = 90);

std::string html_escape(const std::string& s);

} // namespace lvo
