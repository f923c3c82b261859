#pragma once

#include "lvo/autograd.hpp"
#include "lvo/model.hpp"
#include "lvo/sae.hpp"
#include "lvo/scheduler.hpp"
#include "lvo/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lvo {

/// A raw channel of a layer, or a dictionary feature of the SAE trained on that layer.
struct FeatureTarget {
    enum class Kind { RawChannel, SaeFeature };

    Kind kind = Kind::RawChannel;
    int index = 0;
    std::string layer;

    static FeatureTarget raw(std::string layer, int channel) { return {Kind::RawChannel, channel, std::move(layer)}; }
    static FeatureTarget sae(std::string layer, int feature) { return {Kind::SaeFeature, feature, std::move(layer)}; }

    bool is_sae() const { return kind == Kind::SaeFeature; }
    /// "raw:<layer>:<c>" or "sae:<layer>:<i>"
    std::string label() const;

    /// Checks the index against the layer width or the SAE dictionary size.
    void validate(const DenoiserModel& m, const SparseAutoencoder* sae) const;

    friend bool operator==(const FeatureTarget&, const FeatureTarget&) = default;
};

enum class Aggregation { Max, Mean };

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

/// Scalar activation of the target given its layer's tokens x channels activations.
double target_activation(const Tensor& activations, const FeatureTarget& target, const SparseAutoencoder* sae,
                         Aggregation agg = Aggregation::Max);
ag::Var target_activation(const ag::Var& activations, const FeatureTarget& target, const SparseAutoencoder* sae,
                          Aggregation agg = Aggregation::Max);

enum class TimestepMode { ActiveTimesteps, AllTimesteps };

std::string to_string(TimestepMode m);
TimestepMode timestep_mode_from_string(const std::string& s);

struct SteeringSpec {
    FeatureTarget target;
    double gamma = 50.0;
    TimestepMode mode = TimestepMode::ActiveTimesteps;
    std::vector<double> activity;        // profile of the target per time-step
    std::vector<double> max_activation;  // dataset max of the target per time-step

    static double default_gamma(const FeatureTarget& target) { return target.is_sae() ? 500.0 : 50.0; }
};

/// gamma * max_activation[t], or 0 at zero-activity time-steps in active mode.
double steering_coefficient(const SteeringSpec& spec, int t);

/// Adds lambda to channel c (raw) or lambda * d_i to every token (SAE). lambda = 0 returns the input unchanged.
Tensor apply_steering(const Tensor& activations, const FeatureTarget& target, double lambda,
                      const SparseAutoencoder* sae);
Tensor apply_steering(const Tensor& activations, const SteeringSpec& spec, int t, const SparseAutoencoder* sae);

/// Sampling hook that applies `spec` at every time-step.
SteeringHook make_steering_hook(const SteeringSpec& spec, const SparseAutoencoder* sae);

struct Prior {
    Image image;            // decoded steered sample P
    LatentGrid latent;      // encode(P), the optimizer's starting point
    LatentGrid sampled;     // final latent of the sampling loop
};

Prior generate_prior(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s, const SteeringSpec& spec,
                     const Conditioning& cond, std::uint64_t seed, const SparseAutoencoder* sae);

} // namespace lvo
