#include "lvo/optimizer.hpp"

#include "lvo/optim.hpp"
#include "lvo/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace lvo {

void LvoConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    weights.validate();
}

ObjectiveValue objective(const LatentGrid& z, const DenoiserModel& m, const SchedulerTable& s,
                         const SparseAutoencoder* sae, const LvoConfig& cfg, Rng& rng, int step) {
    s.check_timestep(cfg.timestep);
    const ag::Var zl = ag::leaf(z.tensor());

    ObjectiveValue out;
    out.transform = draw_transform(cfg.weights, rng);
    ag::Var x = zl;
    if (!(out.transform == TransformRecord{}))
        x = ag::sparse_map(zl, transform_map(z.channels(), z.height(), z.width(), out.transform));

    if (cfg.schedule_noise) {
        const double ab = s.alpha_bar[cfg.timestep];
        Tensor offset(z.tensor().shape());
        const double sd = std::sqrt(1.0 - ab);
        for (double& v : offset.storage()) v = sd * rng.normal();
        x = ag::affine(x, std::sqrt(ab), offset);
    }

    const HookedForward fw = forward_with_hook(m, x, cfg.timestep, cfg.conditioning, cfg.target.layer);
    const ag::Var a = target_activation(fw.activations, cfg.target, sae, cfg.aggregation);
    ag::backward(a);

    const PenaltyValue pen = total_penalty_grad(z, cfg.weights);
    out.activation = a.value()[0];
    out.penalty = pen.value;
    out.score = out.activation - out.penalty;
    Tensor g = zl.grad();
    if (!pen.grad.empty()) g -= pen.grad;
    if (!std::isfinite(out.score) || !g.all_finite())
        throw std::runtime_error("non-finite objective at step " + std::to_string(step) + " (activation " +
                                 std::to_string(out.activation) + ", penalty " + std::to_string(out.penalty) + ")");
    out.grad = GradientField(std::move(g));
    return out;
}

VisualizationResult lvo_run(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s,
                            const SparseAutoencoder* sae, const LvoConfig& cfg, const LatentGrid& prior_latent,
                            const std::string& prior_ref) {
    cfg.validate();
    if (prior_latent.size() == 0) throw std::invalid_argument("lvo_run: empty prior latent");
    if (prior_latent.tensor().shape() != m.latent_shape())
        throw std::invalid_argument("lvo_run: prior latent " + shape_string(prior_latent.tensor().shape()) +
                                    " does not match the model latent " + shape_string(m.latent_shape()));
    cfg.target.validate(m, cfg.target.is_sae() ? sae : nullptr);

    VisualizationResult r;
    r.config = cfg;
    r.prior_ref = prior_ref;
    r.activation_trace.reserve(cfg.steps);
    r.penalty_trace.reserve(cfg.steps);

    LatentGrid z = prior_latent;
    Rng rng(cfg.seed);
    AdamState adam;
    const AdamSettings settings{cfg.learning_rate};
    for (int step = 0; step < cfg.steps; ++step) {
        ObjectiveValue ov = objective(z, m, s, sae, cfg, rng, step);
        GradientField g = std::move(ov.grad);
        if (cfg.weights.spectral_filter) g = spectral_filter(g);
        g = smooth_gradient(g, step, cfg.steps, cfg.weights.smoothing_sigma0);
        Tensor descent = g.tensor() * -1.0;
        adam.step(z.tensor(), descent, settings);
        r.activation_trace.push_back(ov.activation);
        r.penalty_trace.push_back(ov.penalty);
    }
    r.image = codec.decode(z);
    r.latent = std::move(z);
    return r;
}

std::vector<VisualizationResult> run_per_peak(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s,
                                              const SparseAutoencoder* sae, const FeatureTarget& target,
                                              const std::vector<int>& peaks, const std::vector<SeededPrior>& priors,
                                              const LvoConfig& tmpl, int workers) {
    const std::size_t n = peaks.size() * priors.size();
    std::vector<VisualizationResult> out(n);
    parallel_for(n, workers, [&](std::size_t job) {
        const int peak = peaks[job / priors.size()];
        const SeededPrior& prior = priors[job % priors.size()];
        LvoConfig cfg = tmpl;
        cfg.target = target;
        cfg.timestep = peak;
        cfg.seed = prior.seed;
        out[job] = lvo_run(m, codec, s, sae, cfg, prior.latent, prior.ref);
    });
    return out;
}

} // namespace lvo
