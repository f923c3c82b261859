#pragma once

// Desk-scale latent diffusion model satisfying the DenoiserModel / VaeCodec
// contract: 3x16x16 images, 4x8x8 latents, a conv encoder-decoder denoiser
// with one self-attention block ("up.attn") as the designated hook target.

#include "lvo/array_io.hpp"
#include "lvo/dataset.hpp"
#include "lvo/model.hpp"
#include "lvo/rng.hpp"
#include "lvo/scheduler.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lvo {

struct ToyArchitecture {
    int image_size = 16;
    int latent_channels = 4;
    int latent_size = 8;
    int vae_width = 16;
    int width = 32;
    int num_classes = 6;
    int num_steps = 100;
};

/// Named autograd leaves owned by one model component.
class ParameterSet {
public:
    ag::Var add(const std::string& name, Tensor init);
    const ag::Var& get(const std::string& name) const;
    std::vector<ag::Var> all() const;
    NamedTensors snapshot() const;
    void load(const NamedTensors& tensors, const std::string& prefix);
    void set_trainable(bool on);

private:
    std::vector<std::pair<std::string, ag::Var>> params_;
};

class ToyVae final : public VaeCodec {
public:
    ToyVae(const ToyArchitecture& arch, Rng& init);

    LatentGrid encode(const Image& image) const override;
    Image decode(const LatentGrid& z) const override;
    std::vector<int> image_shape() const override;
    double reconstruction_bound() const override { return reconstruction_bound_; }

    struct Posterior {
        ag::Var mean;
        ag::Var logvar;
    };
    /// Unscaled posterior of the encoder.
    Posterior encode_raw(const ag::Var& image) const;
    /// Decoder on an unscaled latent.
    ag::Var decode_raw(const ag::Var& raw) const;

    double latent_shift() const { return shift_; }
    double latent_scale() const { return scale_; }
    void set_standardization(double shift, double scale);
    void set_reconstruction_bound(double bound) { reconstruction_bound_ = bound; }

    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

private:
    ToyArchitecture arch_;
    ParameterSet params_;
    double shift_ = 0.0;
    double scale_ = 1.0;
    double reconstruction_bound_ = 1.0;
};

class ToyDenoiser final : public DenoiserModel {
public:
    static constexpr const char* kAttentionLayer = "up.attn";
    static constexpr const char* kOutputLayer = "out";

    ToyDenoiser(const ToyArchitecture& arch, Rng& init);

    std::vector<LayerInfo> layers() const override;
    std::vector<int> latent_shape() const override;
    HookedForward forward(const ag::Var& z, int t, const Conditioning& cond, const LayerHook* hook) const override;

    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

private:
    ag::Var time_embedding(int t) const;

    ToyArchitecture arch_;
    ParameterSet params_;
};

struct ToyLdm {
    ToyArchitecture arch;
    ToyVae vae;
    ToyDenoiser denoiser;
    SchedulerTable scheduler;
};

struct ToyRecipe {
    std::uint64_t seed = 7;
    int vae_epochs = 15;
    double vae_lr = 3e-3;
    double kl_weight = 1e-4;
    int denoiser_epochs = 40;
    double denoiser_lr = 2e-3;
    int batch_size = 16;
    double class_dropout = 0.15;
    std::size_t max_samples = 0;  // 0: whole dataset
};

struct ToyTrainingLog {
    std::vector<double> vae_loss;       // mean per epoch
    std::vector<double> denoiser_loss;  // mean per epoch
    double initial_denoising_loss = 0.0;
    double final_denoising_loss = 0.0;
    double reconstruction_mae = 0.0;
};

ToyLdm make_toy(const ToyArchitecture& arch, std::uint64_t seed);
ToyLdm train_toy(const Dataset& data, const ToyRecipe& recipe, ToyTrainingLog* log = nullptr,
                 const ToyArchitecture& arch = {});

/// Noise-prediction MSE on a fixed set of (sample, t, eps) draws.
double denoising_loss(const ToyLdm& model, const Dataset& data, std::size_t samples, std::uint64_t seed);
/// Mean absolute pixel error of decode(encode(x)).
double reconstruction_mae(const ToyVae& vae, const Dataset& data, std::size_t samples);

/// Writes manifest.json + weights.bin into `dir`.
void save_toy(const ToyLdm& model, const std::filesystem::path& dir);
ToyLdm load_toy(const std::filesystem::path& dir);

} // namespace lvo
