#include "arbsr/png.hpp"

#include "arbsr/error.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <png.h>

namespace arbsr {

namespace {

std::vector<std::uint8_t> encode(int h, int w, png_uint_32 format, std::vector<std::uint8_t> const &px)
{
  if (h <= 0 || w <= 0) {
    fail(ErrorKind::InvalidArgument, "cannot encode an empty image");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(w);
  image.height = png_uint_32(h);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, px.data(), 0, nullptr)) {
    fail(ErrorKind::Io, fmt::format("png encode failed: {}", image.message));
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, px.data(), 0, nullptr)) {
    fail(ErrorKind::Io, fmt::format("png encode failed: {}", image.message));
  }
  out.resize(size);
  return out;
}

} // namespace

std::vector<std::uint8_t> encode_png_gray(Grid<double> const &img, double lo, double hi)
{
  if (!(hi > lo)) {
    fail(ErrorKind::InvalidArgument, "png range must satisfy hi > lo");
  }
  std::vector<std::uint8_t> px(img.size());
  for (std::size_t i = 0; i < img.size(); i++) {
    double const t = std::clamp((img.data[i] - lo) / (hi - lo), 0.0, 1.0);
    px[i] = std::uint8_t(std::lround(t * 255.0));
  }
  return encode(img.height, img.width, PNG_FORMAT_GRAY, px);
}

std::vector<std::uint8_t> encode_png_rgb(int h, int w, std::vector<std::uint8_t> const &rgb)
{
  if (rgb.size() != std::size_t(h) * w * 3) {
    fail(ErrorKind::DimensionMismatch, "rgb buffer size does not match dims");
  }
  return encode(h, w, PNG_FORMAT_RGB, rgb);
}

Grid<double> decode_png_gray(std::vector<std::uint8_t> const &bytes)
{
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorKind::Io, fmt::format("png decode failed: {}", image.message));
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    fail(ErrorKind::Io, fmt::format("png decode failed: {}", image.message));
  }
  Grid<double> out(int(image.height), int(image.width));
  for (std::size_t i = 0; i < out.size(); i++) {
    out.data[i] = px[i] / 255.0;
  }
  return out;
}

Grid<double> decode_png_gray(std::filesystem::path const &file)
{
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    fail(ErrorKind::Io, fmt::format("cannot read {}", file.string()));
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png_gray(bytes);
}

void write_bytes(std::filesystem::path const &file, std::vector<std::uint8_t> const &bytes)
{
  if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<char const *>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) {
    fail(ErrorKind::Io, fmt::format("cannot write {}", file.string()));
  }
}

} // namespace arbsr
