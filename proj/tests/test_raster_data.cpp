#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "ganet/dataset.hpp"
#include "ganet/raster_io.hpp"
#include "ganet/synthetic.hpp"
#include "testing_utils.hpp"

using namespace ganet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ganet_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    const double fa = static_cast<double>(i) / a.size();
    const double fb = static_cast<double>(j) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

double ks_critical(double alpha, std::size_t n, std::size_t m) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * m));
}

}  // namespace

TEST_CASE("pnm round trips") {
  const fs::path dir = temp_dir("pnm");
  PnmImage img;
  img.height = 3;
  img.width = 4;
  img.channels = 3;
  img.maxval = 255;
  Rng rng(1);
  img.pixels.resize(36);
  for (auto& p : img.pixels) p = static_cast<std::uint16_t>(rng.uniform_int(0, 255));
  write_pnm(dir / "a.ppm", img);
  PnmImage back = read_pnm(dir / "a.ppm");
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.channels == 3);
  CHECK(back.pixels == img.pixels);

  PnmImage gray;
  gray.height = 2;
  gray.width = 5;
  gray.channels = 1;
  gray.maxval = 65535;
  gray.pixels.resize(10);
  for (auto& p : gray.pixels) p = static_cast<std::uint16_t>(rng.uniform_int(0, 65535));
  write_pnm(dir / "b.pgm", gray);
  PnmImage gback = read_pnm(dir / "b.pgm");
  CHECK(gback.maxval == 65535);
  CHECK(gback.pixels == gray.pixels);

  CHECK_THROWS_AS((void)read_pnm(dir / "missing.ppm"), DataError);
}

TEST_CASE("pfm round trip") {
  const fs::path dir = temp_dir("pfm");
  PfmImage img;
  img.height = 4;
  img.width = 3;
  img.pixels = {240.0f, 250.5f, 260.0f, 1.5f, -2.25f, 0.0f,
                10.0f,  20.0f,  30.0f,  7.0f, 8.0f,   9.0f};
  write_pfm(dir / "h.pfm", img);
  PfmImage back = read_pfm(dir / "h.pfm");
  CHECK(back.height == 4);
  CHECK(back.width == 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
}

TEST_CASE("color map round trip and defaults") {
  const ColorMap cm = ColorMap::isprs();
  CHECK(cm.num_classes() == 6);
  for (int c = 0; c < cm.num_classes(); ++c) {
    const auto rgb = cm.color_of(c);
    const auto back = cm.class_of(rgb[0], rgb[1], rgb[2]);
    REQUIRE(back.has_value());
    CHECK(*back == c);
  }
  CHECK_FALSE(cm.class_of(1, 2, 3).has_value());
  CHECK(cm.color_of(0) == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(cm.color_of(1) == std::array<std::uint8_t, 3>{0, 0, 255});
  CHECK_THROWS_AS(ColorMap({{1, 2, 3}, {1, 2, 3}}), ConfigError);
}

TEST_CASE("load_tile assembles channels with correct roles") {
  const fs::path dir = temp_dir("load");
  // 1x1 optical raster, no DSM/labels.
  {
    PnmImage one;
    one.height = 1;
    one.width = 1;
    one.channels = 3;
    one.maxval = 255;
    one.pixels = {10, 20, 30};
    write_pnm(dir / "one.ppm", one);
    GeoRaster r = load_tile(dir / "one.ppm", std::nullopt, std::nullopt, ColorMap::isprs());
    CHECK(r.height() == 1);
    CHECK(r.width() == 1);
    CHECK(r.channel_count() == 3);
    for (int c = 0; c < 3; ++c) CHECK(r.role(c) == ChannelRole::kOpticalBand);
    CHECK(r.plane(0)[0] == doctest::Approx(10.0 / 255.0));
  }
  // Solid label color decodes to a constant class id.
  {
    PnmImage optical;
    optical.height = 2;
    optical.width = 2;
    optical.channels = 3;
    optical.maxval = 255;
    optical.pixels.assign(12, 100);
    write_pnm(dir / "img.ppm", optical);
    PnmImage label = optical;
    for (std::size_t i = 0; i < 4; ++i) {
      label.pixels[3 * i] = 0;
      label.pixels[3 * i + 1] = 255;
      label.pixels[3 * i + 2] = 255;  // low vegetation
    }
    write_pnm(dir / "lbl.ppm", label);
    GeoRaster r = load_tile(dir / "img.ppm", std::nullopt, dir / "lbl.ppm", ColorMap::isprs());
    const auto lc = r.find_channel(ChannelRole::kLabel);
    REQUIRE(lc.has_value());
    for (std::int64_t i = 0; i < 4; ++i) CHECK(r.plane(*lc)[static_cast<std::size_t>(i)] == 2.0);
    CHECK(r.label_at(1, 1) == 2);
  }
  // Unknown color names the offender.
  {
    PnmImage label;
    label.height = 2;
    label.width = 2;
    label.channels = 3;
    label.maxval = 255;
    label.pixels.assign(12, 0);
    label.pixels[0] = 12;
    label.pixels[1] = 34;
    label.pixels[2] = 56;
    write_pnm(dir / "bad.ppm", label);
    CHECK_THROWS_WITH_AS(
        (void)load_tile(dir / "img.ppm", std::nullopt, dir / "bad.ppm", ColorMap::isprs()),
        doctest::Contains("(12,34,56)"), DataError);
  }
  // Mismatched dimensions across sources.
  {
    PfmImage dsm;
    dsm.height = 3;
    dsm.width = 2;
    dsm.pixels.assign(6, 1.0f);
    write_pfm(dir / "bad.pfm", dsm);
    CHECK_THROWS_AS((void)load_tile(dir / "img.ppm", dir / "bad.pfm", std::nullopt,
                                    ColorMap::isprs()),
                    DataError);
  }
}

TEST_CASE("load_tile handles a contest-sized IRRG tile") {
  const fs::path dir = temp_dir("big");
  PnmImage big;
  big.height = 2500;
  big.width = 2500;
  big.channels = 3;
  big.maxval = 255;
  big.pixels.assign(static_cast<std::size_t>(2500) * 2500 * 3, 127);
  write_pnm(dir / "tile.ppm", big);
  GeoRaster r = load_tile(dir / "tile.ppm", std::nullopt, std::nullopt, ColorMap::isprs());
  r.ground_resolution = 0.09;
  CHECK(r.height() == 2500);
  CHECK(r.width() == 2500);
  CHECK(r.optical_count() == 3);
  fs::remove_all(dir);
}

TEST_CASE("normalize_height") {
  GeoRaster r(1, 3);
  r.add_channel(ChannelRole::kHeight, {240.0, 250.0, 260.0});
  GeoRaster n = normalize_height(r);
  const auto& p = n.plane(0);
  CHECK(p[0] == 0.0);
  CHECK(p[1] == doctest::Approx(0.5));
  CHECK(p[2] == 1.0);

  GeoRaster c(2, 2);
  c.add_channel(ChannelRole::kHeight, {7.0, 7.0, 7.0, 7.0});
  const GeoRaster cn = normalize_height(c);
  for (double v : cn.plane(0)) CHECK(v == 0.0);

  GeoRaster d(1, 4);
  d.add_channel(ChannelRole::kHeight, {2.0, 3.0, 5.0, 7.0});
  const GeoRaster dn = normalize_height(d);
  const auto& q = dn.plane(0);
  CHECK(q[0] == doctest::Approx(0.0));
  CHECK(q[1] == doctest::Approx(0.2));
  CHECK(q[2] == doctest::Approx(0.6));
  CHECK(q[3] == doctest::Approx(1.0));

  // Invariant to adding a constant.
  GeoRaster e(1, 4);
  e.add_channel(ChannelRole::kHeight, {102.0, 103.0, 105.0, 107.0});
  const GeoRaster en = normalize_height(e);
  const auto& s = en.plane(0);
  for (int i = 0; i < 4; ++i) CHECK(s[static_cast<std::size_t>(i)] ==
                                    doctest::Approx(q[static_cast<std::size_t>(i)]).epsilon(1e-12));

  GeoRaster no_height(1, 1);
  no_height.add_channel(ChannelRole::kOpticalBand, {0.5});
  CHECK_THROWS_AS((void)normalize_height(no_height), DataError);
}

TEST_CASE("sample_patch geometry and content") {
  Rng rng(5);
  // Exact-fit tile has a single valid origin.
  GeoRaster tile(8, 8);
  std::vector<double> ramp(64);
  for (int i = 0; i < 64; ++i) ramp[static_cast<std::size_t>(i)] = i;
  tile.add_channel(ChannelRole::kOpticalBand, ramp);
  PatchSample s = sample_patch(tile, 8, rng);
  CHECK(s.origin_row == 0);
  CHECK(s.origin_col == 0);
  CHECK(s.image.dim(0) == 1);

  // Patch too large -> size error.
  CHECK_THROWS_AS((void)sample_patch(tile, 9, rng), ShapeError);

  // Content equals the source crop at the reported origin (no out-of-bounds
  // reads possible: any misread would break the unique-value pattern).
  GeoRaster big(37, 51);
  std::vector<double> unique(37 * 51);
  for (std::size_t i = 0; i < unique.size(); ++i) unique[i] = static_cast<double>(i) * 0.25;
  big.add_channel(ChannelRole::kOpticalBand, unique);
  for (int trial = 0; trial < 50; ++trial) {
    PatchSample p = sample_patch(big, 16, rng);
    CHECK(p.origin_row >= 0);
    CHECK(p.origin_row <= 37 - 16);
    CHECK(p.origin_col >= 0);
    CHECK(p.origin_col <= 51 - 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        CHECK(p.image.at({0, r, c}) ==
              unique[static_cast<std::size_t>((p.origin_row + r) * 51 + p.origin_col + c)]);
  }
}

TEST_CASE("patch origins are uniform (chi-square oracle)") {
  // Contest-sized tile: patch 320 in 2500 leaves origins in [0, 2180].
  Rng rng(6);
  const std::int64_t extent = 2500, patch = 320;
  const std::int64_t span = extent - patch + 1;  // 2181 valid positions
  const int bins = 20;
  std::vector<std::int64_t> row_counts(bins, 0), col_counts(bins, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto [r, c] = draw_patch_origin(extent, extent, patch, rng);
    CHECK(r >= 0);
    CHECK(r <= 2180);
    CHECK(c >= 0);
    CHECK(c <= 2180);
    row_counts[static_cast<std::size_t>(r * bins / span)]++;
    col_counts[static_cast<std::size_t>(c * bins / span)]++;
  }
  // Bins are near-equal width; compare against exact expected proportions.
  auto chi_square = [&](const std::vector<std::int64_t>& counts) {
    double stat = 0.0;
    for (int b = 0; b < bins; ++b) {
      std::int64_t width = 0;
      for (std::int64_t p = 0; p < span; ++p)
        if (p * bins / span == b) ++width;
      const double expected = static_cast<double>(draws) * width / span;
      const double d = counts[static_cast<std::size_t>(b)] - expected;
      stat += d * d / expected;
    }
    return stat;
  };
  // 19 degrees of freedom, alpha=0.001 -> critical value 43.82.
  CHECK(chi_square(row_counts) < 43.82);
  CHECK(chi_square(col_counts) < 43.82);

  // Potsdam configuration: 512 patch in a 512 tile pins the origin.
  Rng rng2(7);
  const auto [r0, c0] = draw_patch_origin(512, 512, 512, rng2);
  CHECK(r0 == 0);
  CHECK(c0 == 0);
}

TEST_CASE("augmentation flips congruently") {
  Rng rng(8);
  GeoRaster tile(6, 6);
  std::vector<double> img(36), hgt(36), lbl(36);
  for (int i = 0; i < 36; ++i) {
    img[static_cast<std::size_t>(i)] = i * 0.01;
    hgt[static_cast<std::size_t>(i)] = i * 0.02;
    lbl[static_cast<std::size_t>(i)] = i % 4;
  }
  tile.add_channel(ChannelRole::kOpticalBand, img);
  tile.add_channel(ChannelRole::kHeight, hgt);
  tile.add_channel(ChannelRole::kLabel, lbl);
  PatchSample base = sample_patch(tile, 6, rng);

  // No flips: identity.
  PatchSample same = apply_flips(base, false, false);
  CHECK(testing::bitwise_equal(same.image, base.image));
  CHECK(same.labels.data == base.labels.data);

  // Both flips equal a 180 degree rotation.
  PatchSample rot = apply_flips(base, true, true);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      CHECK(rot.image.at({0, r, c}) == base.image.at({0, 5 - r, 5 - c}));
      CHECK(rot.height.at({r, c}) == base.height.at({5 - r, 5 - c}));
      CHECK(rot.labels.data[static_cast<std::size_t>(r * 6 + c)] ==
            base.labels.data[static_cast<std::size_t>((5 - r) * 6 + 5 - c)]);
    }

  // Involution: applying the same flips twice restores the original.
  PatchSample twice = apply_flips(apply_flips(base, true, false), true, false);
  CHECK(testing::bitwise_equal(twice.image, base.image));
  CHECK(twice.labels.data == base.labels.data);
  CHECK(testing::bitwise_equal(twice.height, base.height));

  // Congruence: flipping moves image, labels and height identically, so the
  // class at a pixel still matches the original at the mirrored position
  // (checked above); a label-only flip would break it.
}

TEST_CASE("class weights") {
  auto make_label_raster = [](const std::vector<double>& labels, std::int64_t w) {
    GeoRaster r(static_cast<std::int64_t>(labels.size()) / w, w);
    r.add_channel(ChannelRole::kLabel, labels);
    return r;
  };
  // Equal counts -> unit weights.
  {
    auto r = make_label_raster({0, 1, 0, 1}, 2);
    auto w = compute_class_weights({r}, 2, -1);
    CHECK(w.weights[0] == doctest::Approx(1.0));
    CHECK(w.weights[1] == doctest::Approx(1.0));
  }
  // Counts {90, 10} -> weights {5/9, 5}.
  {
    std::vector<double> labels(100, 0.0);
    for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = 1.0;
    auto r = make_label_raster(labels, 10);
    auto w = compute_class_weights({r}, 2, -1);
    CHECK(w.weights[0] == doctest::Approx(5.0 / 9.0).epsilon(1e-12));
    CHECK(w.weights[1] == doctest::Approx(5.0).epsilon(1e-12));
    // Frequency-weighted mean is 1.
    CHECK(0.9 * w.weights[0] + 0.1 * w.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Single class -> weight 1.
  {
    auto r = make_label_raster({0, 0, 0, 0}, 2);
    auto w = compute_class_weights({r}, 1, -1);
    CHECK(w.weights[0] == doctest::Approx(1.0));
  }
  // Missing classes are listed.
  {
    auto r = make_label_raster({0, 0, 2, 2}, 2);
    CHECK_THROWS_WITH_AS((void)compute_class_weights({r}, 3, -1), doctest::Contains("[1]"),
                         DataError);
  }
  // Ignored pixels do not count.
  {
    auto r = make_label_raster({0, 1, 5, 5}, 2);
    auto w = compute_class_weights({r}, 2, 5);
    CHECK(w.weights[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("synthetic tiles satisfy the benchmark contract") {
  Rng rng(11);
  auto tiles = generate_synthetic_dataset(5, 96, rng);
  REQUIRE(tiles.size() == 5);

  std::vector<double> class0, class1, class2, class3;
  for (const auto& tile : tiles) {
    CHECK(tile.height() == 96);
    CHECK(tile.width() == 96);
    const auto hc = tile.find_channel(ChannelRole::kHeight);
    REQUIRE(hc.has_value());
    const auto& heights = tile.plane(*hc);
    double max_ground = -1e30, min_elevated = 1e30;
    std::set<int> present;
    for (std::int64_t r = 0; r < 96; ++r)
      for (std::int64_t c = 0; c < 96; ++c) {
        const int cls = tile.label_at(r, c);
        present.insert(cls);
        const double h = heights[static_cast<std::size_t>(r * 96 + c)];
        if (cls == 1 || cls == 3)
          min_elevated = std::min(min_elevated, h);
        else
          max_ground = std::max(max_ground, h);
        // Subsample with a stride beyond the texture correlation length so
        // the KS samples are effectively independent.
        if (r % 5 == 0 && c % 5 == 0) {
          const double v = tile.plane(0)[static_cast<std::size_t>(r * 96 + c)];
          if (cls == 0) class0.push_back(v);
          if (cls == 1) class1.push_back(v);
          if (cls == 2) class2.push_back(v);
          if (cls == 3) class3.push_back(v);
        }
      }
    // Elevated classes are strictly above every ground pixel.
    CHECK(min_elevated > max_ground);
    CHECK(present == std::set<int>({0, 1, 2, 3}));
  }

  // Identical appearance distributions within each confusable pair.
  REQUIRE(class0.size() > 200);
  REQUIRE(class1.size() > 200);
  const double d01 = ks_statistic(class0, class1);
  CHECK(d01 < ks_critical(0.01, class0.size(), class1.size()));
  const double d23 = ks_statistic(class2, class3);
  CHECK(d23 < ks_critical(0.01, class2.size(), class3.size()));

  // ...while the pairs themselves are easily separable.
  const double d02 = ks_statistic(class0, class2);
  CHECK(d02 > 3.0 * ks_critical(0.01, class0.size(), class2.size()));

  // Determinism in the seed.
  Rng rng_a(12), rng_b(12);
  auto ta = generate_synthetic_dataset(2, 96, rng_a);
  auto tb = generate_synthetic_dataset(2, 96, rng_b);
  CHECK(ta[0].plane(0) == tb[0].plane(0));
  CHECK(ta[1].plane(4) == tb[1].plane(4));
}

TEST_CASE("synthetic dataset writes a loadable layout") {
  const fs::path dir = temp_dir("synth");
  SyntheticOptions opt;
  opt.num_tiles = 5;
  opt.tile_size = 64;
  DatasetManifest manifest = write_synthetic_dataset(dir, opt, 99);
  CHECK(manifest.num_classes == 4);
  CHECK(manifest.train.size() == 3);
  CHECK(manifest.val.size() == 1);
  CHECK(manifest.test.size() == 1);

  // Disjoint split ids.
  std::set<std::string> ids;
  for (const auto* split : {&manifest.train, &manifest.val, &manifest.test})
    for (const auto& e : *split) CHECK(ids.insert(e.id).second);
  CHECK(ids.size() == 5);

  // The written tiles load back equal to the in-memory generation (optical is
  // quantized identically; labels round trip through the color map).
  Rng rng(99);
  auto reference = generate_synthetic_tiles(opt, rng);
  auto loaded = load_split(manifest, "train", /*normalize_heights=*/false);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      double max_diff = 0.0;
      for (std::size_t p = 0; p < loaded[i].plane(c).size(); ++p)
        max_diff = std::max(max_diff,
                            std::abs(loaded[i].plane(c)[p] - reference[i].plane(c)[p]));
      CHECK(max_diff < 1e-12);
    }
    const auto lc = *loaded[i].find_channel(ChannelRole::kLabel);
    CHECK(loaded[i].plane(lc) == reference[i].plane(lc));
    // DSM float32 round trip.
    const auto hc = *loaded[i].find_channel(ChannelRole::kHeight);
    for (std::size_t p = 0; p < loaded[i].plane(hc).size(); ++p)
      CHECK(loaded[i].plane(hc)[p] ==
            doctest::Approx(reference[i].plane(hc)[p]).epsilon(1e-6));
  }

  // Normalized heights lie in [0,1].
  auto normalized = load_split(manifest, "train");
  for (const auto& t : normalized) {
    const auto hc = *t.find_channel(ChannelRole::kHeight);
    for (double v : t.plane(hc)) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("optical stats") {
  GeoRaster a(1, 2);
  a.add_channel(ChannelRole::kOpticalBand, {0.0, 1.0});
  GeoRaster b(1, 2);
  b.add_channel(ChannelRole::kOpticalBand, {0.5, 0.5});
  auto stats = compute_optical_stats({a, b});
  CHECK(stats.mean[0] == doctest::Approx(0.5));
  CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(0.125)));
}
