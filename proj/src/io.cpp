#include "camid/io.hpp"

#include <png.h>

#include <fstream>
#include <iterator>
#include <string>

#include "camid/error.hpp"
#include "camid/jpeg.hpp"

namespace camid {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(Errc::IoError, "read failed for " + path.string());
  return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::IoError, "cannot rename onto " + path.string() + ": " + ec.message());
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

ImageU8 decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(Errc::FormatError, std::string("PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  const auto height = static_cast<int>(image.height);
  const auto width = static_cast<int>(image.width);
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(Errc::FormatError, "PNG: " + message);
  }
  return ImageU8(height, width, std::move(data));
}

}  // namespace

ImageU8 decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (jpeg::is_jpeg(bytes)) return jpeg::decode(bytes);
  throw Error(Errc::FormatError, "unrecognized image format");
}

ImageU8 read_image(const fs::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const Error& e) {
    if (e.code() == Errc::IoError) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  const auto pixels = img.data();
  if (!png_image_write_get_memory_size(image, size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::IoError, std::string("PNG encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::IoError, std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

void write_png(const fs::path& path, const ImageU8& img) { write_file_atomic(path, encode_png(img)); }

}  // namespace camid
