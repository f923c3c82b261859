#pragma once

// File formats shared by the pipeline stages.

#include "lvo/activity.hpp"
#include "lvo/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace lvo {

/// 8-bit RGB PNG of a 3 x H x W image in [0, 1]; each pixel becomes an upscale x upscale block.
void write_png(const std::filesystem::path& path, const Image& image, int upscale = 1);
Image read_png(const std::filesystem::path& path);

/// Row-major grid of equally sized images separated by `gap` pixels of `background`.
Image tile_images(const std::vector<std::vector<Image>>& rows, int gap = 1, double background = 1.0);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// feature_id,t,frequency,samples
void write_profiles_csv(const std::filesystem::path& path, const std::vector<ActivityProfile>& profiles);
std::vector<ActivityProfile> read_profiles_csv(const std::filesystem::path& path);

/// Rows of feature_id,t,max_activation for every feature of the sweep.
void write_max_activation_csv(const std::filesystem::path& path, const std::vector<std::vector<double>>& table);
std::vector<std::vector<double>> read_max_activation_csv(const std::filesystem::path& path);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

} // namespace lvo
