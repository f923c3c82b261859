#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lvo {

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double& at(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double at(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    Tensor reshaped(std::vector<int> shape) const;
    void fill(double v);

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

double sum(const Tensor& t);
double mean(const Tensor& t);
double l2_norm(const Tensor& t);
double l2_distance(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// C x H x W latent in the VAE-standardized space (typical values within [-3, 3]).
class LatentGrid {
public:
    LatentGrid() = default;
    LatentGrid(int channels, int height, int width, double fill = 0.0);
    explicit LatentGrid(Tensor values);

    int channels() const { return values_.dim(0); }
    int height() const { return values_.dim(1); }
    int width() const { return values_.dim(2); }
    std::size_t size() const { return values_.size(); }

    const Tensor& tensor() const { return values_; }
    Tensor& tensor() { return values_; }

    double& at(int c, int y, int x) { return values_.at(c, y, x); }
    double at(int c, int y, int x) const { return values_.at(c, y, x); }

    friend bool operator==(const LatentGrid& a, const LatentGrid& b) { return a.values_ == b.values_; }

private:
    Tensor values_;
};

/// Gradient with the same C x H x W layout as the latent it conditions.
using GradientField = LatentGrid;

/// RGB image, 3 x H x W, pixel values in [0, 1].
using Image = Tensor;

} // namespace lvo
