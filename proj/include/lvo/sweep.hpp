#pragma once

// Coordinate-descent sweep: vary one parameter group over a level list
// while every other setting stays at the baseline, one cell per
// (level, feature, noise condition).

#include "lvo/config.hpp"
#include "lvo/pipeline.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace lvo {

struct SweepLevel {
    std::string name;
    nlohmann::json values;  // parameter key -> value
};

struct SweepPlan {
    std::string parameter;
    std::vector<SweepLevel> levels;
    StageConfig baseline;
    std::vector<int> features;
    std::vector<bool> noise;

    /// Throws on duplicate levels, an empty level list, or an invalid baseline.
    void validate() const;
    std::size_t cell_count() const { return levels.size() * features.size() * noise.size(); }
};

/// Keys a sweep parameter is allowed to change.
std::vector<std::string> sweep_keys(const std::string& parameter);
/// Built-in level sets: tv_weight / range_weight / moment_weight, robustness, steering_gamma, spectral_filter.
std::vector<SweepLevel> preset_levels(const std::string& parameter);
/// Levels from a config list: scalars for single-key parameters, maps for groups.
std::vector<SweepLevel> levels_from_json(const std::string& parameter, const nlohmann::json& levels);

SweepPlan make_sweep_plan(const StageConfig& cfg, int feature_count);

/// Flat settings of one cell: weights, optimizer, steering strength, noise condition.
nlohmann::json cell_settings(const StageConfig& baseline, bool noise);
nlohmann::json apply_level(nlohmann::json settings, const SweepLevel& level);
/// Keys whose values differ between two flat settings objects.
std::vector<std::string> config_diff(const nlohmann::json& a, const nlohmann::json& b);

/// Runs every cell and writes <output>/sweeps/<parameter>/{grid.png, manifest.json, cells/}.
/// Needs the analyze stage outputs for peaks and steering tables.
StageReport run_sweep(const SweepPlan& plan);

} // namespace lvo
