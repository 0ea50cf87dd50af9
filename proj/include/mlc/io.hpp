#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlc {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Writes to "<path>.tmp" and renames over `path` once the write succeeded,
/// so readers never observe a half-written file.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, std::string_view text);

/// Little-endian primitives shared by the binary containers.
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t offset);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace mlc
