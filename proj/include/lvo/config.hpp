#pragma once

// Per-stage YAML configuration and the calibrated default profiles.

#include "lvo/regularization.hpp"
#include "lvo/optimizer.hpp"
#include "lvo/steering.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lvo {

enum class NoiseMode { Off, On, FeatureDependent };

std::string to_string(NoiseMode m);
NoiseMode noise_mode_from_string(const std::string& s);
/// Noise conditions a mode expands to: {false}, {true}, or {true, false}.
std::vector<bool> noise_conditions(NoiseMode m);

/// One column of the calibrated defaults.
struct TargetProfile {
    RegularizerWeights weights;
    double steering_gamma = 50.0;
    double learning_rate = 0.05;
    int steps = 100;
    NoiseMode schedule_noise = NoiseMode::FeatureDependent;
    TimestepMode steering_timesteps = TimestepMode::ActiveTimesteps;

    friend bool operator==(const TargetProfile&, const TargetProfile&) = default;
};

struct DefaultProfiles {
    TargetProfile raw_layer;
    TargetProfile sae;

    const TargetProfile& for_kind(FeatureTarget::Kind k) const {
        return k == FeatureTarget::Kind::SaeFeature ? sae : raw_layer;
    }
};

/// Compiled-in copy of the calibrated table, used when no defaults file is given.
DefaultProfiles builtin_defaults();
DefaultProfiles load_defaults(const std::filesystem::path& path);

nlohmann::json to_json(const RegularizerWeights& w);
nlohmann::json to_json(const TargetProfile& p);
nlohmann::json to_json(const DefaultProfiles& d);

/// Explicit ids, or the first `first_n` in index order.
struct FeatureSelection {
    std::vector<int> ids;
    int first_n = 30;

    std::vector<int> resolve(int available) const;
    /// "first 6", "first:6", "6", or "0,3,5"
    static FeatureSelection parse(const std::string& text);
};

struct DatasetConfig {
    std::string kind = "shapes";
    std::size_t count = 120;
    std::uint64_t seed = 1;
};

struct AnalyzeParams {
    DatasetConfig dataset;
    int k = 20;
    int p = 3;
    int min_separation = 0;  // 0: scaled to the schedule
    int examples = 5;
};

struct PriorParams {
    std::optional<double> gamma;  // unset: profile default
    std::optional<TimestepMode> timestep_mode;
};

struct VisualizeParams {
    std::optional<double> learning_rate;
    std::optional<int> steps;
    std::optional<NoiseMode> schedule_noise;
    Aggregation aggregation = Aggregation::Max;
    nlohmann::json weight_overrides = nlohmann::json::object();  // keys of RegularizerWeights
};

struct EvaluateParams {
    std::string title = "Latent visualizations";
};

struct SweepParams {
    std::string parameter = "robustness";
    nlohmann::json levels = nlohmann::json::array();  // empty: preset for the parameter
    std::optional<NoiseMode> noise;
    int seed_index = 0;
};

struct StageConfig {
    std::string stage;
    std::filesystem::path source;  // file it was loaded from

    std::string model = "assets/toy/model";
    std::string sae = "assets/toy/sae";
    std::string output = "runs/toy";
    std::string defaults;  // empty: built-in table
    FeatureTarget::Kind target_kind = FeatureTarget::Kind::SaeFeature;
    std::string layer = "up.attn";
    FeatureSelection features;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    int workers = 0;

    AnalyzeParams analyze;
    PriorParams prior;
    VisualizeParams visualize;
    EvaluateParams evaluate;
    SweepParams sweep;

    /// Relative paths resolve against the config file's directory.
    std::filesystem::path resolve(const std::string& p) const;
    std::filesystem::path model_dir() const { return resolve(model); }
    std::filesystem::path sae_dir() const { return resolve(sae); }
    std::filesystem::path output_dir() const { return resolve(output); }

    TargetProfile profile() const;
    /// Effective prior settings after applying overrides to the profile.
    double steering_gamma() const;
    TimestepMode steering_timesteps() const;
    /// Effective optimizer settings; target, timestep, and seed are left for the caller.
    LvoConfig lvo_template() const;
    NoiseMode schedule_noise() const;

    nlohmann::json to_json() const;
    /// SHA-256 of the canonical JSON form.
    std::string hash() const;
};

StageConfig load_stage_config(const std::filesystem::path& path);
StageConfig stage_config_from_yaml(const std::string& text, const std::filesystem::path& base = {});

/// Applies named overrides such as "tv_weight" or "jitter_px" to a weight bundle.
void apply_weight_override(RegularizerWeights& w, const std::string& key, const nlohmann::json& value);

} // namespace lvo
