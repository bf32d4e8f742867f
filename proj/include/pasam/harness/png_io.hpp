#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "pasam/diff/error.hpp"

namespace pasam::harness {

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB), row-major.
struct Image8 {
    std::size_t width = 0, height = 0, channels = 1;
    std::vector<std::uint8_t> pixels;
};

inline void write_png(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3) throw ParameterError("write_png: channels must be 1 or 3");
    if (img.pixels.size() != img.width * img.height * img.channels) throw DimensionError("write_png: pixel buffer size mismatch");
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    im.width = png_uint_32(img.width);
    im.height = png_uint_32(img.height);
    im.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&im, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        throw IoError("cannot write " + path + ": " + im.message);
    }
}

/// Reads any PNG, converting to `channels` (1 or 3).
inline Image8 read_png(const std::string& path, std::size_t channels) {
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&im, path.c_str())) throw IoError("cannot read " + path + ": " + im.message);
    im.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image8 out;
    out.width = im.width;
    out.height = im.height;
    out.channels = channels;
    out.pixels.resize(PNG_IMAGE_SIZE(im));
    if (!png_image_finish_read(&im, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&im);
        throw IoError("cannot decode " + path + ": " + im.message);
    }
    return out;
}

}  // namespace pasam::harness
