#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace forge {

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents. Throws IoError when unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// Code with trailing whitespace stripped from every line and CRLF folded to
/// LF. Two programs that only differ in that are the same record.
std::string normalize_code(std::string_view code);

/// Dedup identity of a program: sha256_hex(normalize_code(code)).
std::string code_hash(std::string_view code);

/// 64-bit FNV-1a, used to derive sub-seeds from names.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace forge
