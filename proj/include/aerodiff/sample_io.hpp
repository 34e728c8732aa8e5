#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "aerodiff/data.hpp"

namespace aerodiff {

// Sample file, all little-endian:
//   bytes  0..7   magic "ADFIELD\0"
//   bytes  8..11  u32 format version (1)
//   bytes 12..15  u32 reserved (0)
//   u32 case id, f64 Re, f64 alpha (degrees), u32 replicate, u32 H, u32 W
//   six H*W planes of f32, row-major: mask, Re cos(a)/re_max, Re sin(a)/re_max,
//   pressure, u_x, u_y
inline constexpr std::uint32_t kSampleFormatVersion = 1;

std::vector<std::uint8_t> serialize_sample(const FieldSample& sample);
// origin names the source in error messages.
FieldSample deserialize_sample(std::span<const std::uint8_t> bytes, const std::string& origin);

void write_sample(const std::filesystem::path& path, const FieldSample& sample);
FieldSample read_sample(const std::filesystem::path& path);

// Plain-text manifest (manifest.txt in the dataset root), one record per line:
//   re_max <value>
//   case <id> <Re> <training|test> <low|high> <interpolation|extrapolation>
//   sample <case id> <replicate> <path relative to root>
// Blank lines and lines starting with '#' are ignored.
inline constexpr const char* kManifestName = "manifest.txt";

struct ManifestEntry {
    std::uint32_t case_id;
    std::uint32_t replicate;
    std::string path;
};

struct Manifest {
    CaseSplit split;
    std::vector<ManifestEntry> samples;
};

std::string format_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text, const std::string& origin);

// Writes samples/case<id>_rep<r>.bin plus the manifest. Output is a pure
// function of the dataset, so rewriting is byte-identical.
void save_dataset(const std::filesystem::path& root, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& root);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);

}  // namespace aerodiff
