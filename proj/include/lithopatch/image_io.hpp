#pragma once

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/image.hpp"

namespace lithopatch {

namespace detail {

inline std::vector<std::uint8_t> read_png_pixels(const std::filesystem::path& path, std::uint32_t format, int& w, int& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + img.message);
  }
  w = static_cast<int>(img.width);
  h = static_cast<int>(img.height);
  return buf;
}

inline void write_png_pixels(const std::filesystem::path& path, const std::uint8_t* data, int w, int h, std::uint32_t format) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, tmp.c_str(), 0, data, 0, nullptr))
    throw Error(ErrorCode::IoError, path.string() + ": " + img.message);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  unsigned char sig[8] = {};
  is.read(reinterpret_cast<char*>(sig), 8);
  return is.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

}  // namespace detail

/// 8-bit RGB from PNG; alpha is dropped and gray is expanded.
inline Image8 read_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto px = detail::read_png_pixels(path, PNG_FORMAT_RGB, w, h);
  return Image8(w, h, 3, std::move(px));
}

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels() != 3 && img.channels() != 1)
    throw Error(ErrorCode::DimensionMismatch, "PNG output supports 1 or 3 channels");
  detail::write_png_pixels(path, img.data().data(), img.width(), img.height(),
                           img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY);
}

/// 8-bit RGB from a baseline or progressive JPEG.
inline Image8 read_jpeg(const std::filesystem::path& path) {
  FILE* file = std::fopen(path.c_str(), "rb");
  if (!file) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::jpeg_error_exit;
  std::vector<std::uint8_t> px;
  int w = 0, h = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(file);
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = static_cast<int>(cinfo.output_width);
  h = static_cast<int>(cinfo.output_height);
  px.resize(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  return Image8(w, h, 3, std::move(px));
}

/// PNG or JPEG, detected from the file signature.
inline Image8 read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "missing image " + path.string());
  return detail::has_png_signature(path) ? read_png(path) : read_jpeg(path);
}

/// Gray PNG mask; values >= 128 mark the fragment.
inline SegmentationMask read_mask(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "missing mask " + path.string());
  int w = 0, h = 0;
  const auto px = detail::read_png_pixels(path, PNG_FORMAT_GRAY, w, h);
  SegmentationMask mask(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mask.set(x, y, px[static_cast<std::size_t>(y) * w + x] >= 128);
  return mask;
}

inline void write_mask(const std::filesystem::path& path, const SegmentationMask& mask) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(mask.width()) * mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) px[static_cast<std::size_t>(y) * mask.width() + x] = mask.at(x, y) ? 255 : 0;
  detail::write_png_pixels(path, px.data(), mask.width(), mask.height(), PNG_FORMAT_GRAY);
}

}  // namespace lithopatch
