#pragma once

#include "lvo/rng.hpp"
#include "lvo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace lvo::testing {

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = scale * rng.normal();
    return t;
}

inline LatentGrid random_latent(Rng& rng, double scale = 1.0, int c = 4, int h = 8, int w = 8) {
    return LatentGrid(random_tensor({c, h, w}, rng, scale));
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central differences of f at every element of x.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||)
inline double relative_l2(const Tensor& a, const Tensor& b) {
    const double denom = std::max(l2_norm(a), l2_norm(b));
    return denom == 0.0 ? 0.0 : l2_distance(a, b) / denom;
}

inline std::filesystem::path source_dir() { return LVO_SOURCE_DIR; }
inline std::filesystem::path toy_model_dir() { return source_dir() / "assets/toy/model"; }
inline std::filesystem::path toy_sae_dir() { return source_dir() / "assets/toy/sae"; }

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::path(LVO_BINARY_DIR) / "test-scratch" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace lvo::testing
