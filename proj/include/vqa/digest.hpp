#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace vqa {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's bytes; the digest of the empty string when the file
/// does not exist.
std::string file_sha256_hex(const std::filesystem::path& path);

}  // namespace vqa
