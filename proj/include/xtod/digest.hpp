#pragma once

#include <string>
#include <string_view>

namespace xtod::digest {

// Hex-encoded SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

// Hex-encoded SHA-256 of a file's contents. Throws std::runtime_error when
// the file cannot be read.
std::string sha256_file(const std::string& path);

}  // namespace xtod::digest
