#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aerodiff/data.hpp"

namespace aerodiff {

// Minimal .npy support: little-endian float32/float64, C order, any rank.
struct NpyArray {
    Shape shape;
    std::vector<double> values;
};
NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const NpyArray& array, bool float64 = false);

// Upstream archive layout accepted by import_archive: a directory holding
// cases.csv and one .npy per sample. cases.csv has the header
//   file,case,reynolds,alpha_deg,replicate,subset,category
// and each .npy is [6, H, W] in the order (freestream_x, freestream_y, mask,
// pressure, u_x, u_y) with raw (dimensional) values. The freestream speed is the
// magnitude of the freestream channels averaged over fluid cells; the
// freestream pressure is taken from ImportOptions.
struct ImportOptions {
    double freestream_pressure = 0.0;
};

// Fails with an import error naming every bad file and the cases that parsed
// cleanly; nothing is returned for a partial archive.
Dataset import_archive(const std::filesystem::path& archive, const ImportOptions& options = {});

}  // namespace aerodiff
