#include "lvo/model.hpp"

#include "lvo/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace lvo {

LayerInfo DenoiserModel::layer(const std::string& name) const {
    const auto all = layers();
    for (const auto& l : all)
        if (l.name == name) return l;
    std::string names;
    for (const auto& l : all) names += (names.empty() ? "" : ", ") + l.name;
    throw std::invalid_argument("unknown layer '" + name + "'; available layers: " + names);
}

HookedForward forward_with_hook(const DenoiserModel& m, const ag::Var& z, int t, const Conditioning& cond,
                                const std::string& layer) {
    m.layer(layer);
    const LayerHook hook{layer, {}};
    return m.forward(z, t, cond, &hook);
}

HookedForward forward_with_hook(const DenoiserModel& m, const LatentGrid& z, int t, const Conditioning& cond,
                                const std::string& layer) {
    return forward_with_hook(m, ag::constant(z.tensor()), t, cond, layer);
}

ag::Var forward_with_edit(const DenoiserModel& m, const ag::Var& z, int t, const Conditioning& cond,
                          const std::string& layer, const ActivationEdit& edit) {
    const LayerInfo info = m.layer(layer);
    if (!info.editable) throw std::invalid_argument("layer '" + layer + "' is the output head and cannot be edited");
    if (!edit) throw std::invalid_argument("forward_with_edit needs an edit function");
    const LayerHook hook{layer, edit};
    return m.forward(z, t, cond, &hook).prediction;
}

SampleResult sample(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s, const Conditioning& cond,
                    std::uint64_t seed, const std::string& layer, const SteeringHook* hook) {
    Rng rng(seed);
    const auto shape = m.latent_shape();
    Tensor x(shape);
    for (double& v : x.storage()) v = rng.normal();

    if (hook && *hook && !m.layer(layer).editable)
        throw std::invalid_argument("steering layer '" + layer + "' is not editable");

    for (int t = s.num_steps - 1; t >= 0; --t) {
        const ag::Var xv = ag::constant(x);
        Tensor eps;
        if (hook && *hook) {
            const SteeringHook& h = *hook;
            const LayerHook lh{layer, [&h, t](const Tensor& a) { return h(a, t); }};
            eps = m.forward(xv, t, cond, &lh).prediction.value();
        } else {
            eps = m.forward(xv, t, cond, nullptr).prediction.value();
        }
        const double beta = s.betas[t];
        const double alpha = 1.0 - beta;
        const double coef = beta / std::sqrt(1.0 - s.alpha_bar[t]);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = inv_sqrt_alpha * (x[i] - coef * eps[i]);
        if (t > 0) {
            const double sigma = std::sqrt(beta);
            for (double& v : x.storage()) v += sigma * rng.normal();
        }
    }
    LatentGrid latent(std::move(x));
    Image img = codec.decode(latent);
    return {std::move(latent), std::move(img)};
}

} // namespace lvo
