#pragma once

#include "lvo/activity.hpp"
#include "lvo/model.hpp"
#include "lvo/regularization.hpp"
#include "lvo/rng.hpp"
#include "lvo/sae.hpp"
#include "lvo/scheduler.hpp"
#include "lvo/steering.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lvo {

struct LvoConfig {
    double learning_rate = 0.05;
    int steps = 100;
    RegularizerWeights weights;
    bool schedule_noise = false;
    FeatureTarget target;
    int timestep = 0;
    std::uint64_t seed = 0;
    Aggregation aggregation = Aggregation::Max;
    Conditioning conditioning;

    void validate() const;
};

struct ObjectiveValue {
    double score = 0.0;       // activation - penalty
    double activation = 0.0;
    double penalty = 0.0;     // total_penalty on the clean latent
    GradientField grad;       // d score / d z
    TransformRecord transform;
};

/// One stochastic evaluation: transform, optional schedule noise, hooked forward, target readout,
/// minus penalties on the untransformed z. Draws come from `rng` in that order.
ObjectiveValue objective(const LatentGrid& z, const DenoiserModel& m, const SchedulerTable& s,
                         const SparseAutoencoder* sae, const LvoConfig& cfg, Rng& rng, int step = 0);

struct VisualizationResult {
    LatentGrid latent;  // z_opt
    Image image;        // decode(z_opt)
    std::vector<double> activation_trace;
    std::vector<double> penalty_trace;
    LvoConfig config;
    std::string prior_ref;
};

/// Adam ascent from `prior_latent`; gradients pass through the spectral filter and then the decaying blur.
VisualizationResult lvo_run(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s,
                            const SparseAutoencoder* sae, const LvoConfig& cfg, const LatentGrid& prior_latent,
                            const std::string& prior_ref = {});

struct SeededPrior {
    std::uint64_t seed = 0;
    LatentGrid latent;
    std::string ref;
};

/// One run per (peak, prior), peak-major. Each run uses t = peak and the prior's seed.
std::vector<VisualizationResult> run_per_peak(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s,
                                              const SparseAutoencoder* sae, const FeatureTarget& target,
                                              const std::vector<int>& peaks, const std::vector<SeededPrior>& priors,
                                              const LvoConfig& tmpl, int workers = 1);

} // namespace lvo
