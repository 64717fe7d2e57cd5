#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ganet/errors.hpp"

namespace ganet {

// Binary PNM (P5 grayscale / P6 color) with 8- or 16-bit samples. 16-bit
// samples are big-endian on disk per the Netpbm format.
struct PnmImage {
  std::int64_t height = 0, width = 0;
  int channels = 1;  // 1 (P5) or 3 (P6)
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // interleaved, row-major, top-down
};

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

// Single-channel 32-bit float raster (PFM, grayscale "Pf"). Stored top-down
// in memory; the on-disk representation is bottom-up little-endian.
struct PfmImage {
  std::int64_t height = 0, width = 0;
  std::vector<float> pixels;
};

PfmImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const PfmImage& image);

}  // namespace ganet
