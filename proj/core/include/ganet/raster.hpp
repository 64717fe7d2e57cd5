#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ganet/errors.hpp"

namespace ganet {

enum class ChannelRole { kOpticalBand, kHeight, kLabel };

// Class id <-> color table for color-coded label rasters. Defaults to the
// ISPRS contest convention.
class ColorMap {
 public:
  ColorMap() = default;
  explicit ColorMap(std::vector<std::array<std::uint8_t, 3>> colors);

  int num_classes() const { return static_cast<int>(colors_.size()); }
  std::array<std::uint8_t, 3> color_of(int class_id) const;
  std::optional<int> class_of(std::uint8_t r, std::uint8_t g, std::uint8_t b) const;

  // impervious=white, building=blue, low-veg=cyan, tree=green, car=yellow,
  // clutter=red.
  static ColorMap isprs();
  // First `k` entries of the contest table.
  static ColorMap isprs_subset(int k);

 private:
  std::vector<std::array<std::uint8_t, 3>> colors_;
};

// A multi-channel tile: planar storage, one role per channel. Label planes
// hold integer class ids (stored as doubles); height planes hold raw or
// normalized elevations.
class GeoRaster {
 public:
  GeoRaster() = default;
  GeoRaster(std::int64_t height, std::int64_t width);

  std::int64_t height() const { return height_; }
  std::int64_t width() const { return width_; }
  std::int64_t pixels() const { return height_ * width_; }
  int channel_count() const { return static_cast<int>(planes_.size()); }

  int add_channel(ChannelRole role, std::vector<double> plane);
  ChannelRole role(int channel) const;
  std::vector<double>& plane(int channel);
  const std::vector<double>& plane(int channel) const;

  std::optional<int> find_channel(ChannelRole role) const;
  int optical_count() const;
  std::int32_t label_at(std::int64_t row, std::int64_t col) const;

  GeoRaster crop(std::int64_t row0, std::int64_t col0, std::int64_t h, std::int64_t w) const;
  void flip_horizontal();
  void flip_vertical();

  std::string id;
  double ground_resolution = 0.0;  // meters/pixel; 0 when unknown

 private:
  std::int64_t height_ = 0, width_ = 0;
  std::vector<ChannelRole> roles_;
  std::vector<std::vector<double>> planes_;
};

}  // namespace ganet
