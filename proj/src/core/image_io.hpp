#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace kafshot {

/// 8-bit grayscale raster.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Binary P5 PGM with maxval 255.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

/// Any PNG, converted to 8-bit gray.
GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& img);

/// Reads a whole file, inflating it first when it is gzip-compressed.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

/// Box-filter resampling: every output pixel is the area-weighted mean of the
/// source pixels it covers. Works for both up- and down-scaling. Values are
/// intensities in [0,1] and the result is clamped to that range.
std::vector<double> resample_area(const std::vector<double>& src, std::size_t h,
                                  std::size_t w, std::size_t out_h, std::size_t out_w);

}  // namespace kafshot
