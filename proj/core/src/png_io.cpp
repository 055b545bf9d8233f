#include "padprobe/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace padprobe {
namespace {

struct MemWriter {
  std::vector<uint8_t>* out;
};

void mem_write(png_structp png, png_bytep data, png_size_t len) {
  auto* w = static_cast<MemWriter*>(png_get_io_ptr(png));
  w->out->insert(w->out->end(), data, data + len);
}

void mem_flush(png_structp) {}

struct MemReader {
  const uint8_t* data;
  size_t size;
  size_t pos;
};

void mem_read(png_structp png, png_bytep dst, png_size_t len) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + len > r->size) png_error(png, "png: truncated stream");
  std::memcpy(dst, r->data + r->pos, len);
  r->pos += len;
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& im) {
  if (im.width <= 0 || im.height <= 0 ||
      im.rgb.size() != static_cast<size_t>(im.width) * im.height * 3)
    throw std::invalid_argument("encode_png: malformed image");

  std::vector<uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encode failed");
  }
  MemWriter writer{&out};
  png_set_write_fn(png, &writer, mem_write, mem_flush);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, im.width, im.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < im.height; ++y)
    png_write_row(png, const_cast<png_bytep>(im.px(0, y)));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image decode_png(const uint8_t* data, size_t size) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png decode failed");
  }
  MemReader reader{data, size, 0};
  png_set_read_fn(png, &reader, mem_read);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  Image im(static_cast<int>(png_get_image_width(png, info)),
           static_cast<int>(png_get_image_height(png, info)));
  if (png_get_rowbytes(png, info) != static_cast<size_t>(im.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png decode: unexpected row size");
  }
  for (int y = 0; y < im.height; ++y) png_read_row(png, im.px(0, y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

void write_png(const std::filesystem::path& path, const Image& im) {
  const auto bytes = encode_png(im);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_png(bytes.data(), bytes.size());
}

}  // namespace padprobe
