#include "ganet/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "ganet/raster_io.hpp"

namespace ganet {

namespace fs = std::filesystem;

ColorMap synthetic_color_map() { return ColorMap::isprs_subset(kSyntheticClasses); }

namespace {

// Appearance A for the {0,1} pair, appearance B for {2,3}.
constexpr double kMeanA[3] = {0.42, 0.55, 0.48};
constexpr double kMeanB[3] = {0.66, 0.40, 0.33};

// Unit-L2 smoothing kernel; circular-convolving an iid N(0,1) field with it
// preserves the N(0,1) marginal exactly while adding spatial correlation.
constexpr double kKernel[5] = {1.0, 2.0, 3.0, 2.0, 1.0};

std::vector<double> smooth_unit_field(const std::vector<double>& white, std::int64_t n) {
  double norm = 0.0;
  for (double k : kKernel) norm += k * k;
  norm = std::sqrt(norm);
  double k[5];
  for (int i = 0; i < 5; ++i) k[i] = kKernel[i] / norm;

  std::vector<double> tmp(white.size()), out(white.size());
  // Rows, wrap-around borders.
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t)
        acc += k[t + 2] * white[static_cast<std::size_t>(r * n + ((c + t + n) % n))];
      tmp[static_cast<std::size_t>(r * n + c)] = acc;
    }
  // Columns.
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (int t = -2; t <= 2; ++t)
        acc += k[t + 2] * tmp[static_cast<std::size_t>(((r + t + n) % n) * n + c)];
      out[static_cast<std::size_t>(r * n + c)] = acc;
    }
  return out;
}

struct Layout {
  std::vector<std::int32_t> labels;
  std::vector<double> elevation;
};

// Random rectangles over a class-0 background whose relief undulates gently.
// Elevated rectangles (classes 1 and 3) carry a constant per-rectangle
// elevation well above the ground relief. Rejected and redrawn until every
// class keeps a reasonable pixel share.
Layout draw_layout(std::int64_t n, const SyntheticOptions& opt, Rng& rng) {
  const std::int64_t min_side = std::max<std::int64_t>(10, n / 6);
  const std::int64_t max_side = std::max<std::int64_t>(min_side + 2, n / 3);
  const double relief_max = opt.ground_relief_m;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Layout layout;
    layout.labels.assign(static_cast<std::size_t>(n * n), 0);
    layout.elevation.assign(static_cast<std::size_t>(n * n), 0.0);

    // Smooth ground relief, min-max normalized so every tile spans the full
    // [0, relief_max] ground range.
    {
      std::vector<double> white(static_cast<std::size_t>(n * n));
      for (auto& v : white) v = rng.normal();
      std::vector<double> relief = smooth_unit_field(white, n);
      relief = smooth_unit_field(relief, n);
      const auto [mn, mx] = std::minmax_element(relief.begin(), relief.end());
      const double span = *mx - *mn;
      for (std::int64_t i = 0; i < n * n; ++i)
        layout.elevation[static_cast<std::size_t>(i)] =
            relief_max * (relief[static_cast<std::size_t>(i)] - *mn) / span;
    }

    const int rects = 5 + static_cast<int>(rng.uniform_int(0, 2));
    for (int i = 0; i < rects; ++i) {
      // First three rectangles cycle through classes 1..3 so each class
      // appears; later ones are random.
      const std::int32_t cls =
          i < 3 ? static_cast<std::int32_t>(i + 1)
                : static_cast<std::int32_t>(rng.uniform_int(1, kSyntheticClasses - 1));
      const std::int64_t h = rng.uniform_int(min_side, max_side);
      const std::int64_t w = rng.uniform_int(min_side, max_side);
      const std::int64_t r0 = rng.uniform_int(0, n - h);
      const std::int64_t c0 = rng.uniform_int(0, n - w);
      const bool elevated = (cls == 1 || cls == 3);
      const double elev =
          elevated ? opt.min_elevation_m +
                         rng.uniform() * (opt.max_elevation_m - opt.min_elevation_m)
                   : rng.uniform() * relief_max;  // flat low lot
      for (std::int64_t r = r0; r < r0 + h; ++r)
        for (std::int64_t c = c0; c < c0 + w; ++c) {
          layout.labels[static_cast<std::size_t>(r * n + c)] = cls;
          layout.elevation[static_cast<std::size_t>(r * n + c)] = elev;
        }
    }
    std::int64_t counts[kSyntheticClasses] = {0, 0, 0, 0};
    for (auto v : layout.labels) ++counts[v];
    const std::int64_t floor_px = std::max<std::int64_t>(n * n / 25, 16);
    bool ok = true;
    for (auto cnt : counts) ok = ok && cnt >= floor_px;
    if (ok) return layout;
  }
  GANET_THROW(DataError, "synthetic layout rejection loop failed; tile size too small?");
}

}  // namespace

std::vector<GeoRaster> generate_synthetic_tiles(const SyntheticOptions& opt, Rng& rng) {
  GANET_CHECK(opt.tile_size >= 64, ConfigError, "synthetic tile size must be >= 64, got ",
              opt.tile_size);
  GANET_CHECK(opt.num_tiles >= 1, ConfigError, "synthetic tile count must be >= 1");
  GANET_CHECK(opt.texture_blend >= 0.0 && opt.texture_blend + opt.texture_base <= 1.0,
              ConfigError, "texture_base + texture_blend must lie in [0, 1]");
  GANET_CHECK(opt.ground_relief_m < opt.min_elevation_m, ConfigError,
              "ground relief must stay below the minimum elevation");
  const std::int64_t n = opt.tile_size;
  std::vector<GeoRaster> tiles;
  tiles.reserve(static_cast<std::size_t>(opt.num_tiles));
  for (std::int64_t t = 0; t < opt.num_tiles; ++t) {
    const Layout layout = draw_layout(n, opt, rng);
    GeoRaster tile(n, n);
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%03lld", static_cast<long long>(t));
    tile.id = buf;
    tile.ground_resolution = 0.09;

    for (int ch = 0; ch < 3; ++ch) {
      std::vector<double> white(static_cast<std::size_t>(n * n));
      for (auto& v : white) v = rng.normal();
      const std::vector<double> smooth = smooth_unit_field(white, n);
      std::vector<double> rough(static_cast<std::size_t>(n * n));
      for (auto& v : rough) v = rng.normal();

      std::vector<double> plane(static_cast<std::size_t>(n * n));
      for (std::int64_t i = 0; i < n * n; ++i) {
        const std::int32_t cls = layout.labels[static_cast<std::size_t>(i)];
        const bool appearance_b = cls >= 2;
        const double mean = appearance_b ? kMeanB[ch] : kMeanA[ch];
        // Spatial correlation of the texture grows with elevation; the
        // per-pixel marginal stays exactly N(mean, sigma^2) for any blend.
        const double alpha =
            opt.texture_base +
            opt.texture_blend *
                std::clamp(layout.elevation[static_cast<std::size_t>(i)] / 14.0, 0.0, 1.0);
        const double noise = alpha * smooth[static_cast<std::size_t>(i)] +
                             std::sqrt(1.0 - alpha * alpha) * rough[static_cast<std::size_t>(i)];
        double v = mean + opt.noise_sigma * noise;
        v = std::clamp(v, 0.0, 1.0);
        // Match the 8-bit grid the on-disk rasters use.
        plane[static_cast<std::size_t>(i)] = std::round(v * 255.0) / 255.0;
      }
      tile.add_channel(ChannelRole::kOpticalBand, std::move(plane));
    }

    std::vector<double> dsm(static_cast<std::size_t>(n * n));
    for (std::int64_t i = 0; i < n * n; ++i)
      dsm[static_cast<std::size_t>(i)] =
          opt.base_height_m + layout.elevation[static_cast<std::size_t>(i)];
    tile.add_channel(ChannelRole::kHeight, std::move(dsm));

    std::vector<double> labels(static_cast<std::size_t>(n * n));
    for (std::int64_t i = 0; i < n * n; ++i)
      labels[static_cast<std::size_t>(i)] =
          static_cast<double>(layout.labels[static_cast<std::size_t>(i)]);
    tile.add_channel(ChannelRole::kLabel, std::move(labels));

    tiles.push_back(std::move(tile));
  }
  return tiles;
}

std::vector<GeoRaster> generate_synthetic_dataset(std::int64_t num_tiles, std::int64_t tile_size,
                                                  Rng& rng) {
  SyntheticOptions opt;
  opt.num_tiles = num_tiles;
  opt.tile_size = tile_size;
  return generate_synthetic_tiles(opt, rng);
}

DatasetManifest write_synthetic_dataset(const fs::path& dir, const SyntheticOptions& opt,
                                        std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<GeoRaster> tiles = generate_synthetic_tiles(opt, rng);
  const ColorMap colors = synthetic_color_map();

  fs::create_directories(dir / "tiles");
  for (const auto& tile : tiles) {
    const std::int64_t n = tile.height();
    PnmImage optical;
    optical.height = n;
    optical.width = n;
    optical.channels = 3;
    optical.maxval = 255;
    optical.pixels.resize(static_cast<std::size_t>(n * n * 3));
    for (int ch = 0; ch < 3; ++ch) {
      const auto& plane = tile.plane(ch);
      for (std::int64_t i = 0; i < n * n; ++i)
        optical.pixels[static_cast<std::size_t>(i * 3 + ch)] =
            static_cast<std::uint16_t>(std::llround(plane[static_cast<std::size_t>(i)] * 255.0));
    }
    write_pnm(dir / "tiles" / (tile.id + "_optical.ppm"), optical);

    PfmImage dsm;
    dsm.height = n;
    dsm.width = n;
    const auto& hplane = tile.plane(*tile.find_channel(ChannelRole::kHeight));
    dsm.pixels.assign(hplane.begin(), hplane.end());
    write_pfm(dir / "tiles" / (tile.id + "_dsm.pfm"), dsm);

    PnmImage labels;
    labels.height = n;
    labels.width = n;
    labels.channels = 3;
    labels.maxval = 255;
    labels.pixels.resize(static_cast<std::size_t>(n * n * 3));
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < n; ++c) {
        const auto rgb = colors.color_of(tile.label_at(r, c));
        for (int k = 0; k < 3; ++k)
          labels.pixels[static_cast<std::size_t>((r * n + c) * 3 + k)] = rgb[k];
      }
    write_pnm(dir / "tiles" / (tile.id + "_label.ppm"), labels);
  }

  DatasetManifest manifest;
  manifest.name = "synthetic";
  manifest.num_classes = kSyntheticClasses;
  manifest.ignore_class = -1;
  manifest.color_map = colors;
  // 60/20/20 split by tile index; every id lands in exactly one split.
  const std::int64_t n_tiles = static_cast<std::int64_t>(tiles.size());
  const std::int64_t n_train = std::max<std::int64_t>(1, (n_tiles * 6 + 9) / 10);
  const std::int64_t n_val = std::max<std::int64_t>(n_tiles > n_train ? 1 : 0, (n_tiles * 2) / 10);
  for (std::int64_t i = 0; i < n_tiles; ++i) {
    TileEntry e;
    e.id = tiles[static_cast<std::size_t>(i)].id;
    e.optical = dir / "tiles" / (e.id + "_optical.ppm");
    e.dsm = dir / "tiles" / (e.id + "_dsm.pfm");
    e.label = dir / "tiles" / (e.id + "_label.ppm");
    if (i < n_train)
      manifest.train.push_back(std::move(e));
    else if (i < n_train + n_val)
      manifest.val.push_back(std::move(e));
    else
      manifest.test.push_back(std::move(e));
  }
  manifest.save(dir / "manifest.txt", "tiles/{id}_optical.ppm", "tiles/{id}_dsm.pfm",
                "tiles/{id}_label.ppm");
  return DatasetManifest::load(dir / "manifest.txt");
}

}  // namespace ganet
