#include "lvo/steering.hpp"

#include <algorithm>
#include <stdexcept>

namespace lvo {

std::string FeatureTarget::label() const {
    return std::string(is_sae() ? "sae:" : "raw:") + layer + ":" + std::to_string(index);
}

void FeatureTarget::validate(const DenoiserModel& m, const SparseAutoencoder* sae) const {
    const LayerInfo info = m.layer(layer);
    if (is_sae()) {
        if (!sae) throw std::invalid_argument("target " + label() + " needs an SAE");
        if (sae->input_dim() != info.channels)
            throw std::invalid_argument("SAE width " + std::to_string(sae->input_dim()) + " does not match layer " +
                                        layer + " (" + std::to_string(info.channels) + " channels)");
        if (index < 0 || index >= sae->dict_size())
            throw std::out_of_range("target " + label() + ": SAE has " + std::to_string(sae->dict_size()) +
                                    " features");
    } else if (index < 0 || index >= info.channels) {
        throw std::out_of_range("target " + label() + ": layer has " + std::to_string(info.channels) + " channels");
    }
}

std::string to_string(Aggregation a) { return a == Aggregation::Max ? "max" : "mean"; }

Aggregation aggregation_from_string(const std::string& s) {
    if (s == "max") return Aggregation::Max;
    if (s == "mean") return Aggregation::Mean;
    throw std::invalid_argument("unknown aggregation '" + s + "' (expected max or mean)");
}

std::string to_string(TimestepMode m) { return m == TimestepMode::ActiveTimesteps ? "active_timesteps" : "all_timesteps"; }

TimestepMode timestep_mode_from_string(const std::string& s) {
    if (s == "active_timesteps") return TimestepMode::ActiveTimesteps;
    if (s == "all_timesteps") return TimestepMode::AllTimesteps;
    throw std::invalid_argument("unknown timestep mode '" + s + "'");
}

ag::Var target_activation(const ag::Var& activations, const FeatureTarget& target, const SparseAutoencoder* sae,
                          Aggregation agg) {
    if (activations.shape().size() != 2) throw std::invalid_argument("activations must be tokens x channels");
    ag::Var table = activations;
    if (target.is_sae()) {
        if (!sae) throw std::invalid_argument("target " + target.label() + " needs an SAE");
        table = sae->encode(activations);
    }
    if (target.index < 0 || target.index >= table.shape()[1])
        throw std::out_of_range("target " + target.label() + " outside the activation width");
    return agg == Aggregation::Max ? ag::column_max(table, target.index) : ag::column_mean(table, target.index);
}

double target_activation(const Tensor& activations, const FeatureTarget& target, const SparseAutoencoder* sae,
                         Aggregation agg) {
    return target_activation(ag::constant(activations), target, sae, agg).value()[0];
}

double steering_coefficient(const SteeringSpec& spec, int t) {
    if (t < 0 || t >= static_cast<int>(spec.max_activation.size()))
        throw std::out_of_range("no max-activation entry for time-step " + std::to_string(t));
    if (spec.mode == TimestepMode::ActiveTimesteps) {
        if (t >= static_cast<int>(spec.activity.size()))
            throw std::out_of_range("no activity entry for time-step " + std::to_string(t));
        if (spec.activity[t] <= 0.0) return 0.0;
    }
    return spec.gamma * spec.max_activation[t];
}

Tensor apply_steering(const Tensor& activations, const FeatureTarget& target, double lambda,
                      const SparseAutoencoder* sae) {
    if (activations.rank() != 2) throw std::invalid_argument("apply_steering: activations must be tokens x channels");
    const int n = activations.dim(0);
    const int c = activations.dim(1);
    if (target.is_sae()) {
        if (!sae) throw std::invalid_argument("apply_steering: SAE feature target without an SAE");
        if (sae->input_dim() != c) throw std::invalid_argument("apply_steering: SAE width does not match the layer");
    } else {
        if (sae) throw std::invalid_argument("apply_steering: raw channel target does not take an SAE");
        if (target.index < 0 || target.index >= c) throw std::out_of_range("apply_steering: channel out of range");
    }
    if (lambda == 0.0) return activations;

    Tensor out = activations;
    if (target.is_sae()) {
        const std::vector<double> d = sae->direction(target.index);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) out.at(i, j) += lambda * d[j];
    } else {
        for (int i = 0; i < n; ++i) out.at(i, target.index) += lambda;
    }
    return out;
}

Tensor apply_steering(const Tensor& activations, const SteeringSpec& spec, int t, const SparseAutoencoder* sae) {
    return apply_steering(activations, spec.target, steering_coefficient(spec, t), sae);
}

SteeringHook make_steering_hook(const SteeringSpec& spec, const SparseAutoencoder* sae) {
    return [spec, sae](const Tensor& a, int t) { return apply_steering(a, spec, t, sae); };
}

Prior generate_prior(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s, const SteeringSpec& spec,
                     const Conditioning& cond, std::uint64_t seed, const SparseAutoencoder* sae) {
    if (spec.gamma < 0.0) throw std::invalid_argument("steering gamma must be >= 0");
    spec.target.validate(m, spec.target.is_sae() ? sae : nullptr);
    const SparseAutoencoder* used = spec.target.is_sae() ? sae : nullptr;
    const SteeringHook hook = make_steering_hook(spec, used);
    SampleResult r = sample(m, codec, s, cond, seed, spec.target.layer, &hook);
    LatentGrid z = codec.encode(r.image);
    return {std::move(r.image), std::move(z), std::move(r.latent)};
}

} // namespace lvo
