#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ganet/raster.hpp"
#include "ganet/rng.hpp"
#include "ganet/tensor.hpp"

namespace ganet {

// A training crop: optical image in [0,1], integer labels, normalized height.
// Labels/height are empty when the source tile lacks those channels.
struct PatchSample {
  Tensor image;       // C,h,w
  IntTensor labels;   // h,w
  Tensor height;      // h,w
  std::string source_tile_id;
  std::int64_t origin_row = 0;
  std::int64_t origin_col = 0;
};

struct ClassWeights {
  std::vector<double> weights;  // one per class, inverse relative frequency
};

// Stacks optical (+ optional DSM and label) rasters into one GeoRaster.
// Optical samples are scaled to [0,1]; color-coded labels are decoded through
// `colors`; the DSM channel is passed through raw.
GeoRaster load_tile(const std::filesystem::path& optical_path,
                    const std::optional<std::filesystem::path>& dsm_path,
                    const std::optional<std::filesystem::path>& label_path,
                    const ColorMap& colors);

// Min-max normalizes the height channel per tile into [0,1]; a constant
// height tile maps to all zeros.
GeoRaster normalize_height(const GeoRaster& raster);

// Uniform draw over all valid top-left positions of a patch inside an H x W
// tile. Returns (row, col).
std::pair<std::int64_t, std::int64_t> draw_patch_origin(std::int64_t tile_h, std::int64_t tile_w,
                                                        std::int64_t patch_size, Rng& rng);

// Uniformly random patch over all valid top-left positions.
PatchSample sample_patch(const GeoRaster& raster, std::int64_t patch_size, Rng& rng);

// Deterministic flip application, congruent across image, labels and height.
PatchSample apply_flips(PatchSample patch, bool horizontal, bool vertical);

// Horizontal then vertical flip, each with independent probability 0.5.
PatchSample augment(PatchSample patch, Rng& rng);

// weights[c] proportional to 1/frequency(c), scaled so the frequency-weighted
// mean is 1. Throws DataError listing classes with zero pixels.
ClassWeights compute_class_weights(const std::vector<GeoRaster>& label_rasters, int num_classes,
                                   std::int32_t ignore_class);

struct TileEntry {
  std::string id;
  std::filesystem::path optical;
  std::optional<std::filesystem::path> dsm;
  std::optional<std::filesystem::path> label;
};

// Key-value dataset description: class count, color map, ignore class and
// per-split tile lists resolved against filename patterns.
struct DatasetManifest {
  std::string name = "dataset";
  int num_classes = 0;
  std::int32_t ignore_class = -1;  // -1: nothing ignored
  ColorMap color_map;
  std::vector<TileEntry> train, val, test;

  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path,
            const std::string& optical_pattern, const std::string& dsm_pattern,
            const std::string& label_pattern) const;

  const std::vector<TileEntry>& split(const std::string& name) const;
};

// Loads every tile of a split; height channels are normalized unless
// `normalize_heights` is false.
std::vector<GeoRaster> load_split(const DatasetManifest& manifest, const std::string& split,
                                  bool normalize_heights = true);

// Per-optical-channel mean and standard deviation over a set of tiles.
struct OpticalStats {
  std::vector<double> mean, stddev;
};
OpticalStats compute_optical_stats(const std::vector<GeoRaster>& tiles);

}  // namespace ganet
