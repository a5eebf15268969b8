#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace inkuba {

// Unicode canonical composition (NFC). Invalid UTF-8 sequences are replaced
// with U+FFFD by the converter.
std::string nfc(std::string_view utf8);

// NFC; ASCII/Unicode whitespace runs collapse to one space, other control
// characters are dropped, ends trimmed.
std::string normalize_whitespace(std::string_view utf8);

std::vector<std::string_view> split_whitespace(std::string_view s);

bool is_ascii_space(unsigned char c);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Regular files directly under dir, sorted by name.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir);

}  // namespace inkuba
