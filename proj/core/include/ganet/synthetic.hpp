#pragma once

#include <filesystem>

#include "ganet/dataset.hpp"

namespace ganet {

// Desk-scale benchmark: textured rectangles of four classes where classes 0/1
// share one appearance distribution and classes 2/3 another, and only the
// elevated class of each pair (1 and 3) carries height. The per-pixel
// marginal distribution of each pair is identical by construction; the
// elevated classes differ only through spatially correlated texture, the cue
// the height supervision is meant to extract.
inline constexpr int kSyntheticClasses = 4;

ColorMap synthetic_color_map();

struct SyntheticOptions {
  std::int64_t num_tiles = 12;
  std::int64_t tile_size = 96;
  double noise_sigma = 0.12;
  // The texture's spatial correlation encodes elevation: the correlated
  // fraction at a pixel is texture_base + texture_blend * elevation/max. The
  // blend alpha*smooth + sqrt(1-alpha^2)*white keeps the per-pixel marginal
  // exactly N(0, sigma^2) for any alpha, so confusable class pairs stay
  // identically distributed per pixel; smaller blends make the cue subtler.
  double texture_base = 0.25;
  double texture_blend = 0.55;
  double base_height_m = 200.0;  // flat terrain offset, removed by normalization
  double ground_relief_m = 6.0;  // gentle undulation of ground classes
  double min_elevation_m = 8.0;
  double max_elevation_m = 11.0;
};

// In-memory tiles with exact labels and height maps. Channels: 3 optical
// bands (already quantized to the 8-bit grid used on disk), raw DSM, labels.
std::vector<GeoRaster> generate_synthetic_tiles(const SyntheticOptions& options, Rng& rng);
std::vector<GeoRaster> generate_synthetic_dataset(std::int64_t num_tiles, std::int64_t tile_size,
                                                  Rng& rng);

// Writes tiles plus a dataset manifest under `dir` (train/val/test splits
// with disjoint ids) and returns the loaded manifest.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir,
                                        const SyntheticOptions& options, std::uint64_t seed);

}  // namespace ganet
