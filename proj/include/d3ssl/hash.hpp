#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace d3ssl::hash {

// Lowercase hex SHA-1 of a byte string.
std::string sha1_hex(std::string_view bytes);

// SHA-1 of "blob <size>\0<content>", the object id git assigns a file.
std::string git_blob_id(std::string_view content);

// git_blob_id of a file's bytes. Throws DataError.
std::string file_blob_id(const std::filesystem::path& path);

} // namespace d3ssl::hash
