#pragma once

#include <string>

namespace avt {

// SHA-1 hex digest; used for manifest content hashes, not for security.
std::string sha1_hex(const void* data, std::size_t len);
std::string sha1_hex(const std::string& s);
std::string sha1_file_hex(const std::string& path);

} // namespace avt
