#pragma once

// The four pipeline stages. Each reads its YAML config, checks that the
// artifacts of the previous stage exist, and writes under
// <output>/{profiles,priors,visualizations,reports}. Every manifest records
// the config hash and the hashes of the files it was built from.

#include "lvo/config.hpp"
#include "lvo/dataset.hpp"
#include "lvo/sae.hpp"
#include "lvo/toy_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lvo {

struct StageReport {
    std::string stage;
    std::vector<std::string> warnings;
    std::vector<std::string> notes;
    std::filesystem::path manifest;

    int exit_code() const { return warnings.empty() ? 0 : 2; }
};

struct Backend {
    ToyLdm model;
    std::optional<SparseAutoencoder> sae;
    nlohmann::json inputs = nlohmann::json::object();  // checkpoint file -> sha256

    const SparseAutoencoder* sae_ptr() const { return sae ? &*sae : nullptr; }
    /// Channels of the hooked layer, or the SAE dictionary size.
    int feature_count(const StageConfig& cfg) const;
};

/// Throws if LVO_DEVICE names a device the backend cannot use.
void check_device();

Backend load_backend(const StageConfig& cfg, bool need_sae);
std::unique_ptr<Dataset> make_dataset(const DatasetConfig& cfg);

/// Aggregated activations of every feature for every (sample, t), from
/// schedule-noised encodings of the dataset images.
ActivationSweep capture_activations(const Backend& b, const StageConfig& cfg, const Dataset& data);

/// Layer activations at random time-steps of schedule-noised dataset latents, for SAE training.
std::vector<Tensor> collect_layer_activations(const ToyLdm& model, const Dataset& data, const std::string& layer,
                                              int timesteps_per_sample, std::uint64_t seed);

StageReport stage_analyze(const StageConfig& cfg);
StageReport stage_prior(const StageConfig& cfg);
StageReport stage_visualize(const StageConfig& cfg);
StageReport stage_evaluate(const StageConfig& cfg);

StageReport run_stage(const StageConfig& cfg);

/// Output subdirectories.
std::filesystem::path profiles_dir(const StageConfig& cfg);
std::filesystem::path priors_dir(const StageConfig& cfg);
std::filesystem::path visualizations_dir(const StageConfig& cfg);
std::filesystem::path reports_dir(const StageConfig& cfg);
std::filesystem::path sweeps_dir(const StageConfig& cfg);

/// Records sha256 of each existing output, keyed by path relative to `root`.
nlohmann::json hash_outputs(const std::filesystem::path& root, const std::vector<std::filesystem::path>& files);

/// Prior file stem for one (feature, seed, timestep mode, gamma) key.
std::string prior_stem(int feature, std::uint64_t seed, TimestepMode mode, double gamma);

} // namespace lvo
