#pragma once

#include "lvo/autograd.hpp"
#include "lvo/rng.hpp"
#include "lvo/tensor.hpp"

namespace lvo {

/// Penalty weights and gradient/input conditioners for one LVO run.
struct RegularizerWeights {
    double tv_weight = 0.0;
    double range_weight = 0.0;
    double moment_weight = 0.0;
    bool spectral_filter = false;
    double smoothing_sigma0 = 0.0;  // latent-pixel units
    int jitter_px = 0;
    double rotation_deg = 0.0;
    double scale_factor = 1.0;

    /// Throws std::invalid_argument on a negative weight or scale_factor < 1.
    void validate() const;

    /// Calibrated bundle for raw layer channels.
    static RegularizerWeights raw_layer_defaults();
    /// Calibrated bundle for SAE dictionary features.
    static RegularizerWeights sae_defaults();

    friend bool operator==(const RegularizerWeights&, const RegularizerWeights&) = default;
};

struct PenaltyValue {
    double value = 0.0;
    Tensor grad;  // d value / d z, same shape as z
};

/// Mean over channels of the per-channel anisotropic total variation divided by H*W.
/// Only neighbour pairs inside the grid contribute.
double tv_penalty(const LatentGrid& z);
PenaltyValue tv_penalty_grad(const LatentGrid& z);

/// mean(max(|z| - 3, 0)^2)
double range_penalty(const LatentGrid& z);
PenaltyValue range_penalty_grad(const LatentGrid& z);

/// |mean(z)| + |std(z) - 1| with population variance over every element.
double moment_penalty(const LatentGrid& z);
PenaltyValue moment_penalty_grad(const LatentGrid& z);

double total_penalty(const LatentGrid& z, const RegularizerWeights& w);
PenaltyValue total_penalty_grad(const LatentGrid& z, const RegularizerWeights& w);

/// Per-channel 1/|f| reweighting of the gradient spectrum. The weight is clamped at the
/// smallest nonzero bin magnitude and normalized so DC and the fundamental pass at 1.
GradientField spectral_filter(const GradientField& g);
/// The per-bin weight used by spectral_filter, laid out H x W in DFT order.
Tensor spectral_weights(int height, int width);

/// sigma0 * (1 - step / total_steps)
double smoothing_sigma(int step, int total_steps, double sigma0);
/// Separable Gaussian blur with half-sample symmetric boundary; identity when sigma is 0.
GradientField smooth_gradient(const GradientField& g, int step, int total_steps, double sigma0);
GradientField gaussian_blur(const GradientField& g, double sigma);

struct TransformRecord {
    int shift_x = 0;
    int shift_y = 0;
    double rotation_deg = 0.0;
    double scale = 1.0;

    friend bool operator==(const TransformRecord&, const TransformRecord&) = default;
};

/// Draws shift, rotation, and scale from the ranges configured in `w`.
TransformRecord draw_transform(const RegularizerWeights& w, Rng& rng);

/// Shift, then rotate about the centre, then scale, sampled bilinearly with
/// symmetric reflection at the borders. The result is linear in the latent.
ag::SparseLinearMap transform_map(int channels, int height, int width, const TransformRecord& rec);

struct TransformedLatent {
    LatentGrid latent;
    TransformRecord record;
};

TransformedLatent apply_random_transform(const LatentGrid& z, const RegularizerWeights& w, Rng& rng);

/// Index reflection used at every border in this module: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
int reflect_index(int i, int n);

} // namespace lvo
