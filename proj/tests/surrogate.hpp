#pragma once

// Closed-form stand-ins for the model contract: the single "score" channel
// reads -||z - z*||^2, so the optimum of a raw-channel run is z*.

#include "lvo/model.hpp"

#include <cmath>
#include <stdexcept>

namespace lvo::testing {

class QuadraticModel final : public DenoiserModel {
public:
    explicit QuadraticModel(Tensor optimum) : optimum_(std::move(optimum)) {}

    std::vector<LayerInfo> layers() const override { return {{"score", 1, 1, true}}; }
    std::vector<int> latent_shape() const override { return optimum_.shape(); }

    HookedForward forward(const ag::Var& z, int, const Conditioning&, const LayerHook* hook) const override {
        Tensor neg = optimum_;
        neg *= -1.0;
        const ag::Var d = ag::add_constant(z, neg);
        ag::Var act = ag::reshape(ag::scale(ag::sum(ag::square(d)), -1.0), {1, 1});
        if (hook && hook->layer != "score") throw std::invalid_argument("unknown layer " + hook->layer);
        if (hook && hook->edit) act = ag::substitute(act, hook->edit(act.value()));
        return {z, act};
    }

    const Tensor& optimum() const { return optimum_; }

private:
    Tensor optimum_;
};

/// Squashes each latent value into [0, 1] and presents the result as an image.
class SquashCodec final : public VaeCodec {
public:
    explicit SquashCodec(std::vector<int> shape) : shape_(std::move(shape)) {}
    LatentGrid encode(const Image& image) const override {
        Tensor z = image;
        for (double& v : z.storage()) v = std::log(v / (1.0 - v));
        return LatentGrid(z);
    }
    Image decode(const LatentGrid& z) const override {
        Tensor img = z.tensor();
        for (double& v : img.storage()) v = 1.0 / (1.0 + std::exp(-v));
        return img;
    }
    std::vector<int> image_shape() const override { return shape_; }
    double reconstruction_bound() const override { return 1e-9; }

private:
    std::vector<int> shape_;
};

} // namespace lvo::testing
