#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace gaf {

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partial file.
void atomic_write(const std::filesystem::path& path, std::string_view content);

// Throws ContractError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
// 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace gaf
