#include "lvo/dataset.hpp"

#include "lvo/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace lvo {

namespace {

const std::array<const char*, 6> kShapes = {"circle", "square", "triangle", "cross", "ring", "stripes"};

struct Color {
    const char* name;
    double r, g, b;
};

const std::array<Color, 7> kColors = {{
    {"red", 0.9, 0.15, 0.1},
    {"green", 0.15, 0.8, 0.2},
    {"blue", 0.15, 0.3, 0.95},
    {"yellow", 0.95, 0.85, 0.1},
    {"magenta", 0.85, 0.2, 0.8},
    {"cyan", 0.1, 0.85, 0.85},
    {"white", 0.95, 0.95, 0.95},
}};

bool inside(int shape, double dx, double dy, double r) {
    switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
    case 2: return dy <= r * 0.8 && dy >= -r && std::abs(dx) <= (dy + r) * 0.6;
    case 3: return (std::abs(dx) <= r * 0.3 && std::abs(dy) <= r) || (std::abs(dy) <= r * 0.3 && std::abs(dx) <= r);
    case 4: {
        const double d = std::sqrt(dx * dx + dy * dy);
        return d <= r && d >= r * 0.55;
    }
    default: return false;
    }
}

} // namespace

ShapesDataset::ShapesDataset(std::size_t count, std::uint64_t seed, int image_size)
    : count_(count), seed_(seed), image_size_(image_size) {
    if (image_size < 8) throw std::invalid_argument("shapes dataset needs image_size >= 8");
}

int ShapesDataset::num_classes() const { return static_cast<int>(kShapes.size()); }

std::vector<std::string> ShapesDataset::class_names() const { return {kShapes.begin(), kShapes.end()}; }

Sample ShapesDataset::get(std::size_t index) const {
    if (index >= count_) throw std::out_of_range("dataset index out of range");
    Rng rng = Rng::derive(seed_, index, 0x5ba9e5);
    const int n = image_size_;
    const int shape = static_cast<int>(index % kShapes.size());
    const Color& color = kColors[rng.uniform_int(0, static_cast<int>(kColors.size()) - 1)];
    const double bg = rng.uniform(0.02, 0.25);
    const double bg_tint[3] = {bg * rng.uniform(0.7, 1.3), bg * rng.uniform(0.7, 1.3), bg * rng.uniform(0.7, 1.3)};
    const double radius = rng.uniform(0.22, 0.38) * n;
    const double cx = rng.uniform(0.35, 0.65) * (n - 1);
    const double cy = rng.uniform(0.35, 0.65) * (n - 1);
    const int stripe_period = rng.uniform_int(3, 5);
    const bool vertical = rng.uniform(0.0, 1.0) < 0.5;

    Sample s;
    s.id = static_cast<int>(index);
    s.class_label = shape;
    s.prompt = std::string("A ") + color.name + " " + kShapes[shape] + " image";
    s.image = Tensor({3, n, n});
    const double rgb[3] = {color.r, color.g, color.b};
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const bool on = shape == 5 ? ((vertical ? x : y) % stripe_period) < (stripe_period + 1) / 2
                                       : inside(shape, x - cx, y - cy, radius);
            for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = std::clamp(on ? rgb[c] : bg_tint[c], 0.0, 1.0);
        }
    return s;
}

} // namespace lvo
