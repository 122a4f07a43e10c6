#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pbtw {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename so readers never observe a
/// half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

void append_line(const std::filesystem::path& path, std::string_view line);

std::vector<std::string> split_lines(std::string_view text);

bool is_blank(std::string_view text);

std::string_view trim(std::string_view text);

bool starts_with_word(std::string_view text, std::string_view word);

/// True for dotted Python-style identifiers ("numpy.cumsum").
bool is_dotted_identifier(std::string_view text);

bool is_identifier(std::string_view text);

/// Line-based unified diff with `context` lines around each change; empty
/// when the texts are equal.
std::string unified_diff(std::string_view from, std::string_view to, const std::string& from_label,
                         const std::string& to_label, int context = 3);

/// Random lowercase hex string of `n` characters.
std::string random_hex(std::size_t n);

}  // namespace pbtw
