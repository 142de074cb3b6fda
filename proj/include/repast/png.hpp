#pragma once

// 8-bit RGB PNG encode/decode via libpng (link PNG::PNG, see the repast_png target).

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "repast/binio.hpp"
#include "repast/image.hpp"

namespace repast {

inline std::vector<std::uint8_t> encode_png(const ImageU8& im) {
    if (im.height <= 0 || im.width <= 0) throw std::invalid_argument("encode_png: empty image");
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.width);
    img.height = static_cast<png_uint_32>(im.height);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, im.data.data(), 0, nullptr))
        throw IoError(std::string("png: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, im.data.data(), 0, nullptr))
        throw IoError(std::string("png: ") + img.message);
    out.resize(size);
    return out;
}

inline ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw FormatError(std::string("png: ") + img.message);
    img.format = PNG_FORMAT_RGB;
    ImageU8 out(static_cast<int>(img.height), static_cast<int>(img.width));
    if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
        png_image_free(&img);
        throw FormatError(std::string("png: ") + img.message);
    }
    return out;
}

inline void write_png(const std::filesystem::path& path, const ImageU8& im) { write_file_atomic(path, encode_png(im)); }
inline ImageU8 read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

}  // namespace repast
