#include "ganet/raster.hpp"

#include <algorithm>
#include <cmath>

namespace ganet {

ColorMap::ColorMap(std::vector<std::array<std::uint8_t, 3>> colors) : colors_(std::move(colors)) {
  GANET_CHECK(!colors_.empty(), ConfigError, "color map must not be empty");
  for (std::size_t i = 0; i < colors_.size(); ++i)
    for (std::size_t j = i + 1; j < colors_.size(); ++j)
      GANET_CHECK(colors_[i] != colors_[j], ConfigError, "duplicate color in color map (classes ",
                  i, " and ", j, ")");
}

std::array<std::uint8_t, 3> ColorMap::color_of(int class_id) const {
  GANET_CHECK(class_id >= 0 && class_id < num_classes(), DataError, "class id ", class_id,
              " outside color map with ", num_classes(), " classes");
  return colors_[static_cast<std::size_t>(class_id)];
}

std::optional<int> ColorMap::class_of(std::uint8_t r, std::uint8_t g, std::uint8_t b) const {
  const std::array<std::uint8_t, 3> key{r, g, b};
  for (std::size_t i = 0; i < colors_.size(); ++i)
    if (colors_[i] == key) return static_cast<int>(i);
  return std::nullopt;
}

ColorMap ColorMap::isprs() {
  return ColorMap({{255, 255, 255},  // impervious surface
                   {0, 0, 255},      // building
                   {0, 255, 255},    // low vegetation
                   {0, 255, 0},      // tree
                   {255, 255, 0},    // car
                   {255, 0, 0}});    // clutter
}

ColorMap ColorMap::isprs_subset(int k) {
  ColorMap full = isprs();
  GANET_CHECK(k >= 1 && k <= full.num_classes(), ConfigError, "isprs_subset: k=", k);
  std::vector<std::array<std::uint8_t, 3>> colors;
  for (int i = 0; i < k; ++i) colors.push_back(full.color_of(i));
  return ColorMap(std::move(colors));
}

GeoRaster::GeoRaster(std::int64_t height, std::int64_t width) : height_(height), width_(width) {
  GANET_CHECK(height >= 1 && width >= 1, ShapeError, "raster extent must be positive, got ",
              height, "x", width);
}

int GeoRaster::add_channel(ChannelRole role, std::vector<double> plane) {
  GANET_CHECK(static_cast<std::int64_t>(plane.size()) == pixels(), ShapeError,
              "channel plane has ", plane.size(), " values, raster is ", height_, "x", width_);
  roles_.push_back(role);
  planes_.push_back(std::move(plane));
  return channel_count() - 1;
}

ChannelRole GeoRaster::role(int channel) const {
  return roles_.at(static_cast<std::size_t>(channel));
}

std::vector<double>& GeoRaster::plane(int channel) {
  return planes_.at(static_cast<std::size_t>(channel));
}

const std::vector<double>& GeoRaster::plane(int channel) const {
  return planes_.at(static_cast<std::size_t>(channel));
}

std::optional<int> GeoRaster::find_channel(ChannelRole role) const {
  for (int c = 0; c < channel_count(); ++c)
    if (roles_[static_cast<std::size_t>(c)] == role) return c;
  return std::nullopt;
}

int GeoRaster::optical_count() const {
  int n = 0;
  for (auto r : roles_)
    if (r == ChannelRole::kOpticalBand) ++n;
  return n;
}

std::int32_t GeoRaster::label_at(std::int64_t row, std::int64_t col) const {
  const auto ch = find_channel(ChannelRole::kLabel);
  GANET_CHECK(ch.has_value(), DataError, "raster has no label channel");
  return static_cast<std::int32_t>(std::llround(
      planes_[static_cast<std::size_t>(*ch)][static_cast<std::size_t>(row * width_ + col)]));
}

GeoRaster GeoRaster::crop(std::int64_t row0, std::int64_t col0, std::int64_t h,
                          std::int64_t w) const {
  GANET_CHECK(row0 >= 0 && col0 >= 0 && h >= 1 && w >= 1 && row0 + h <= height_ &&
                  col0 + w <= width_,
              ShapeError, "crop ", h, "x", w, " at (", row0, ",", col0, ") exceeds raster ",
              height_, "x", width_);
  GeoRaster out(h, w);
  out.id = id;
  out.ground_resolution = ground_resolution;
  for (int c = 0; c < channel_count(); ++c) {
    std::vector<double> plane(static_cast<std::size_t>(h * w));
    const auto& src = planes_[static_cast<std::size_t>(c)];
    for (std::int64_t r = 0; r < h; ++r)
      std::copy_n(src.begin() + (row0 + r) * width_ + col0, w, plane.begin() + r * w);
    out.add_channel(roles_[static_cast<std::size_t>(c)], std::move(plane));
  }
  return out;
}

void GeoRaster::flip_horizontal() {
  for (auto& plane : planes_)
    for (std::int64_t r = 0; r < height_; ++r)
      std::reverse(plane.begin() + r * width_, plane.begin() + (r + 1) * width_);
}

void GeoRaster::flip_vertical() {
  for (auto& plane : planes_)
    for (std::int64_t r = 0; r < height_ / 2; ++r)
      std::swap_ranges(plane.begin() + r * width_, plane.begin() + (r + 1) * width_,
                       plane.begin() + (height_ - 1 - r) * width_);
}

}  // namespace ganet
