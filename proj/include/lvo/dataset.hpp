#pragma once

#include "lvo/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lvo {

struct Sample {
    int id = 0;
    Image image;  // 3 x H x W in [0, 1]
    int class_label = 0;
    std::string prompt;
};

/// Loader interface for the analysis sweep; backends plug real datasets in here.
class Dataset {
public:
    virtual ~Dataset() = default;
    virtual std::size_t size() const = 0;
    virtual Sample get(std::size_t index) const = 0;
    virtual int num_classes() const = 0;
    virtual std::vector<std::string> class_names() const = 0;
};

/// Colored geometric shapes on dark backgrounds. Sample i is a pure function of (seed, i).
class ShapesDataset final : public Dataset {
public:
    ShapesDataset(std::size_t count, std::uint64_t seed, int image_size = 16);

    std::size_t size() const override { return count_; }
    Sample get(std::size_t index) const override;
    int num_classes() const override;
    std::vector<std::string> class_names() const override;

    int image_size() const { return image_size_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::size_t count_;
    std::uint64_t seed_;
    int image_size_;
};

} // namespace lvo
