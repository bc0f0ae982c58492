#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace masdt {

// FNV-1a 64-bit hash of a byte string.
std::uint64_t fnv1a64(const std::string& bytes);
std::string to_hex(std::uint64_t v);

// Runs fn(i) for i in [0, n). jobs <= 1 runs inline; otherwise indices are
// split into contiguous chunks, one thread per chunk, so any writes indexed
// by i land in fixed slots regardless of scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// Whole-file helpers. write_file_atomic writes to a sibling temp file and
// renames into place.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

// Little-endian scalar encoding used by the binary file formats.
void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);
std::uint16_t get_u16(const std::string& in, std::size_t& pos);
std::uint32_t get_u32(const std::string& in, std::size_t& pos);
float get_f32(const std::string& in, std::size_t& pos);
double get_f64(const std::string& in, std::size_t& pos);

// Deterministic float formatting (shortest round-trip) for CSV output.
std::string format_double(double v);

std::string trim(const std::string& s);

}  // namespace masdt
