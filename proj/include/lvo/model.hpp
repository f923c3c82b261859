#pragma once

// Contract every latent diffusion backend implements: a VAE codec, a
// denoiser whose named layers can be read and edited during a forward
// pass, and the DDPM schedule it was trained with.

#include "lvo/autograd.hpp"
#include "lvo/scheduler.hpp"
#include "lvo/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lvo {

/// Backend-defined conditioning. The toy backend reads `class_label`
/// (nullopt = unconditional); text backends read `embedding`.
struct Conditioning {
    std::optional<int> class_label;
    std::vector<double> embedding;
    std::string prompt;

    static Conditioning unconditional() { return {}; }
    static Conditioning label(int c) { return {c, {}, {}}; }
};

struct LayerInfo {
    std::string name;
    int tokens = 0;
    int channels = 0;
    bool editable = true;  // false for the output head
};

/// Activations are always exposed as tokens x channels.
using ActivationEdit = std::function<Tensor(const Tensor&)>;

struct LayerHook {
    std::string layer;
    ActivationEdit edit;  // empty: read-only capture
};

struct HookedForward {
    ag::Var prediction;   // predicted noise, same shape as the latent
    ag::Var activations;  // tokens x channels at the hooked layer (post-edit)
};

class DenoiserModel {
public:
    virtual ~DenoiserModel() = default;

    virtual std::vector<LayerInfo> layers() const = 0;
    virtual std::vector<int> latent_shape() const = 0;
    virtual HookedForward forward(const ag::Var& z, int t, const Conditioning& cond, const LayerHook* hook) const = 0;

    /// Throws std::invalid_argument listing the available layers if `name` is unknown.
    LayerInfo layer(const std::string& name) const;
};

class VaeCodec {
public:
    virtual ~VaeCodec() = default;

    virtual LatentGrid encode(const Image& image) const = 0;
    /// Pixel values in [0, 1].
    virtual Image decode(const LatentGrid& z) const = 0;
    virtual std::vector<int> image_shape() const = 0;
    /// Declared bound on mean absolute round-trip error for in-distribution images.
    virtual double reconstruction_bound() const = 0;
};

HookedForward forward_with_hook(const DenoiserModel& m, const ag::Var& z, int t, const Conditioning& cond,
                                const std::string& layer);
HookedForward forward_with_hook(const DenoiserModel& m, const LatentGrid& z, int t, const Conditioning& cond,
                                const std::string& layer);

/// Rejects edits at non-editable layers and edits that change the activation shape.
ag::Var forward_with_edit(const DenoiserModel& m, const ag::Var& z, int t, const Conditioning& cond,
                          const std::string& layer, const ActivationEdit& edit);

/// Per-time-step activation edit used while sampling.
using SteeringHook = std::function<Tensor(const Tensor& activations, int t)>;

struct SampleResult {
    LatentGrid latent;
    Image image;
};

/// Ancestral DDPM sampling from pure noise over every time-step of `s`. When
/// `hook` is set it edits `layer` at every step; the trajectory is a pure
/// function of `seed`.
SampleResult sample(const DenoiserModel& m, const VaeCodec& codec, const SchedulerTable& s, const Conditioning& cond,
                    std::uint64_t seed, const std::string& layer = {}, const SteeringHook* hook = nullptr);

} // namespace lvo
