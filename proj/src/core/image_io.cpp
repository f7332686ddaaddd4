#include "image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "error.hpp"

namespace kafshot {
namespace {

std::string offset_msg(const std::filesystem::path& path, std::size_t offset) {
  return path.string() + " at offset " + std::to_string(offset);
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) v = v * 10 + (buf[pos++] - '0');
    require(pos > start, ErrorKind::format,
            std::string("unreadable PGM ") + what + " in " + offset_msg(path, start));
    return v;
  };
  require(buf.size() >= 2 && buf[0] == 'P' && buf[1] == '5', ErrorKind::format,
          "not a binary P5 PGM: " + offset_msg(path, 0));
  pos = 2;
  GrayImage img;
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = number("maxval");
  require(maxval == 255, ErrorKind::format,
          "PGM maxval " + std::to_string(maxval) + " is not 255 in " +
              offset_msg(path, maxval_at));
  require(pos < buf.size() && std::isspace(buf[pos]), ErrorKind::format,
          "PGM header not terminated in " + offset_msg(path, pos));
  ++pos;
  require(img.width > 0 && img.height > 0, ErrorKind::format,
          "PGM has zero extent: " + path.string());
  const std::size_t n = img.width * img.height;
  require(buf.size() - pos >= n, ErrorKind::format,
          "PGM pixel data truncated in " + offset_msg(path, buf.size()));
  img.pixels.assign(buf.begin() + pos, buf.begin() + pos + n);
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_file(&image, path.c_str()) != 0, ErrorKind::format,
          "unreadable PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  GrayImage img;
  img.width = image.width;
  img.height = image.height;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr) == 0) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::format, "corrupt PNG " + path.string() + ": " + msg);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  require(png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr) != 0,
          ErrorKind::io, "cannot write PNG " + path.string() + ": " + image.message);
}

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  // gzread passes uncompressed files through unchanged
  gzFile f = gzopen(path.c_str(), "rb");
  require(f != nullptr, ErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 16);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      const std::string msg = gzerror(f, &err);
      gzclose(f);
      fail(ErrorKind::format, "corrupt compressed file " + offset_msg(path, out.size()) +
                                  ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

std::vector<double> resample_area(const std::vector<double>& src, std::size_t h,
                                  std::size_t w, std::size_t out_h, std::size_t out_w) {
  require(src.size() == h * w && out_h > 0 && out_w > 0, ErrorKind::dimension,
          "resample_area extents do not match the source");
  if (h == out_h && w == out_w) return src;
  // per-axis overlap weights between output cells and source cells
  auto weights = [](std::size_t n_in, std::size_t n_out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> wts(n_out);
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double lo = o * scale, hi = (o + 1) * scale;
      for (auto i = static_cast<std::size_t>(lo); i < n_in && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (overlap > 0.0) wts[o].emplace_back(i, overlap / scale);
      }
    }
    return wts;
  };
  const auto wy = weights(h, out_h);
  const auto wx = weights(w, out_w);
  std::vector<double> out(out_h * out_w, 0.0);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double acc = 0.0;
      for (const auto& [iy, fy] : wy[oy])
        for (const auto& [ix, fx] : wx[ox]) acc += fy * fx * src[iy * w + ix];
      out[oy * out_w + ox] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace kafshot
