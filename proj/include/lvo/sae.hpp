#pragma once

#include "lvo/array_io.hpp"
#include "lvo/autograd.hpp"
#include "lvo/rng.hpp"
#include "lvo/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lvo {

/// Top-k sparse autoencoder over layer activations (tokens x input_dim).
///
/// Encoding subtracts the decoder bias, applies the encoder, keeps the
/// k_sae largest pre-activations per token (ties to the lower feature
/// index) and clamps at zero. Decoder directions are unit norm.
class SparseAutoencoder {
public:
    SparseAutoencoder() = default;
    SparseAutoencoder(int input_dim, int dict_size, int k_sae, std::uint64_t seed);

    int input_dim() const { return input_dim_; }
    int dict_size() const { return dict_size_; }
    int k() const { return k_; }
    const std::string& layer() const { return layer_; }
    void set_layer(std::string layer) { layer_ = std::move(layer); }

    /// tokens x dict_size, nonnegative, at most k nonzeros per row.
    Tensor encode(const Tensor& activations) const;
    /// tokens x input_dim
    Tensor decode(const Tensor& codes) const;
    /// max over tokens of encode(F)[:, feature]
    double feature_activation(const Tensor& activations, int feature) const;
    /// Same quantity for every feature at once.
    std::vector<double> feature_activations(const Tensor& activations) const;

    ag::Var encode(const ag::Var& activations) const;

    /// Unit-norm direction of `feature` (input_dim values).
    std::vector<double> direction(int feature) const;

    const ag::Var& encoder_weight() const { return w_enc_; }
    const ag::Var& encoder_bias() const { return b_enc_; }
    const ag::Var& decoder_weight() const { return w_dec_; }  // dict_size x input_dim, rows unit norm
    const ag::Var& decoder_bias() const { return b_dec_; }

    void renormalize_decoder();
    void set_trainable(bool on);
    std::vector<ag::Var> parameters() const { return {w_enc_, b_enc_, w_dec_, b_dec_}; }

    void save(const std::filesystem::path& dir) const;
    static SparseAutoencoder load(const std::filesystem::path& dir);

private:
    void check_width(const std::vector<int>& shape) const;

    int input_dim_ = 0;
    int dict_size_ = 0;
    int k_ = 0;
    std::string layer_;
    ag::Var w_enc_, b_enc_, w_dec_, b_dec_;
};

struct SaeTrainingOptions {
    int epochs = 20;
    int batch_tokens = 256;
    double learning_rate = 2e-3;
    std::uint64_t seed = 11;
};

struct SaeTrainingLog {
    std::vector<double> epoch_loss;  // mean reconstruction MSE
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Mean squared reconstruction error over all tokens of all tensors.
double reconstruction_loss(const SparseAutoencoder& sae, const std::vector<Tensor>& corpus);

/// Trains on rows of the given activation tensors; decoder rows are renormalized after every step.
SparseAutoencoder train_toy_sae(const std::vector<Tensor>& corpus, int dict_size, int k_sae,
                                const SaeTrainingOptions& opts, SaeTrainingLog* log = nullptr);

} // namespace lvo
