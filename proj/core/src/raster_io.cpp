#include "ganet/raster_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace ganet {

namespace {

void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

std::int64_t read_pnm_int(std::istream& in) {
  skip_pnm_whitespace(in);
  std::int64_t v = 0;
  bool any = false;
  while (std::isdigit(in.peek())) {
    v = v * 10 + (in.get() - '0');
    any = true;
  }
  GANET_CHECK(any, DataError, "malformed PNM header: expected integer");
  return v;
}

}  // namespace

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  GANET_CHECK(in.good(), DataError, "cannot open raster '", path.string(), "'");
  char magic[2];
  in.read(magic, 2);
  GANET_CHECK(in.good() && magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'), DataError,
              "'", path.string(), "' is not a binary PGM/PPM file");
  PnmImage img;
  img.channels = magic[1] == '6' ? 3 : 1;
  img.width = read_pnm_int(in);
  img.height = read_pnm_int(in);
  img.maxval = static_cast<int>(read_pnm_int(in));
  GANET_CHECK(img.maxval > 0 && img.maxval < 65536, DataError, "'", path.string(),
              "': unsupported maxval ", img.maxval);
  in.get();  // single whitespace byte before the raster
  const std::size_t count =
      static_cast<std::size_t>(img.width * img.height) * static_cast<std::size_t>(img.channels);
  img.pixels.resize(count);
  if (img.maxval < 256) {
    std::vector<std::uint8_t> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
    GANET_CHECK(in.gcount() == static_cast<std::streamsize>(count), DataError, "'", path.string(),
                "': truncated raster data");
    for (std::size_t i = 0; i < count; ++i) img.pixels[i] = raw[i];
  } else {
    std::vector<std::uint8_t> raw(count * 2);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 2));
    GANET_CHECK(in.gcount() == static_cast<std::streamsize>(count * 2), DataError, "'",
                path.string(), "': truncated raster data");
    for (std::size_t i = 0; i < count; ++i)
      img.pixels[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
  GANET_CHECK(image.channels == 1 || image.channels == 3, DataError,
              "write_pnm: channels must be 1 or 3, got ", image.channels);
  GANET_CHECK(static_cast<std::int64_t>(image.pixels.size()) ==
                  image.width * image.height * image.channels,
              ShapeError, "write_pnm: pixel buffer does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  GANET_CHECK(out.good(), DataError, "cannot write raster '", path.string(), "'");
  out << (image.channels == 3 ? "P6" : "P5") << "\n"
      << image.width << " " << image.height << "\n"
      << image.maxval << "\n";
  if (image.maxval < 256) {
    std::vector<std::uint8_t> raw(image.pixels.size());
    for (std::size_t i = 0; i < image.pixels.size(); ++i)
      raw[i] = static_cast<std::uint8_t>(image.pixels[i]);
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
  } else {
    std::vector<std::uint8_t> raw(image.pixels.size() * 2);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
      raw[2 * i] = static_cast<std::uint8_t>(image.pixels[i] >> 8);
      raw[2 * i + 1] = static_cast<std::uint8_t>(image.pixels[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
  }
  GANET_CHECK(out.good(), DataError, "failed writing raster '", path.string(), "'");
}

PfmImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  GANET_CHECK(in.good(), DataError, "cannot open raster '", path.string(), "'");
  std::string magic;
  in >> magic;
  GANET_CHECK(magic == "Pf", DataError, "'", path.string(),
              "' is not a grayscale PFM file (magic '", magic, "')");
  PfmImage img;
  double scale;
  in >> img.width >> img.height >> scale;
  GANET_CHECK(in.good() && img.width > 0 && img.height > 0, DataError, "'", path.string(),
              "': malformed PFM header");
  in.get();  // single whitespace before data
  const bool little_endian = scale < 0.0;
  const std::size_t count = static_cast<std::size_t>(img.width * img.height);
  std::vector<float> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  GANET_CHECK(in.gcount() == static_cast<std::streamsize>(count * sizeof(float)), DataError, "'",
              path.string(), "': truncated PFM data");
  if (little_endian != (std::endian::native == std::endian::little)) {
    for (auto& v : raw) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) | ((u & 0x0000ff00u) << 8) |
          ((u & 0x000000ffu) << 24);
      std::memcpy(&v, &u, 4);
    }
  }
  // PFM rows are stored bottom-up; flip to top-down.
  img.pixels.resize(count);
  for (std::int64_t r = 0; r < img.height; ++r)
    std::copy_n(raw.begin() + (img.height - 1 - r) * img.width, img.width,
                img.pixels.begin() + r * img.width);
  return img;
}

void write_pfm(const std::filesystem::path& path, const PfmImage& image) {
  GANET_CHECK(static_cast<std::int64_t>(image.pixels.size()) == image.width * image.height,
              ShapeError, "write_pfm: pixel buffer does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  GANET_CHECK(out.good(), DataError, "cannot write raster '", path.string(), "'");
  const char* scale = std::endian::native == std::endian::little ? "-1.0" : "1.0";
  out << "Pf\n" << image.width << " " << image.height << "\n" << scale << "\n";
  for (std::int64_t r = image.height - 1; r >= 0; --r)
    out.write(reinterpret_cast<const char*>(image.pixels.data() + r * image.width),
              static_cast<std::streamsize>(image.width * sizeof(float)));
  GANET_CHECK(out.good(), DataError, "failed writing raster '", path.string(), "'");
}

}  // namespace ganet
