#pragma once

#include "lvo/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace lvo {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Binary weight bundle: "LVOW0001", u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, i32 dims[rank], f64 data (little endian).
void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::filesystem::path& path);

/// NumPy .npy v1.0, dtype '<f8', C order.
void save_npy(const std::filesystem::path& path, const Tensor& t);
Tensor load_npy(const std::filesystem::path& path);

} // namespace lvo
