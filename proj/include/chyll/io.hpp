#pragma once

#include <string>

namespace chyll::io {

// Writes via a temporary sibling file and rename(2).
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace chyll::io
