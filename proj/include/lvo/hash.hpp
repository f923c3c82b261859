#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace lvo {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
/// Hash of a file's contents; throws if it cannot be read.
std::string sha256_file(const std::filesystem::path& path);

} // namespace lvo
