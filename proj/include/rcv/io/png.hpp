#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rcv/error.hpp"
#include "rcv/image.hpp"

namespace rcv::io {

namespace detail {

struct PngBuffer {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t offset;
};

inline void png_write_to_string(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

inline void png_flush_noop(png_structp) {}

inline void png_read_from_buffer(png_structp png, png_bytep data, png_size_t length) {
    auto* in = static_cast<PngBuffer*>(png_get_io_ptr(png));
    if (in->offset + length > in->size) png_error(png, "truncated png");
    std::copy_n(in->data + in->offset, length, data);
    in->offset += length;
}

/// Encodes 8-bit RGB (bit_depth 8, channels 3) or 16-bit gray rows.
inline std::string encode(int width, int height, int bit_depth, int color_type, const std::vector<std::uint8_t>& bytes) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(ErrorKind::IoError, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::string out;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::IoError, "png encode failed");
    }
    png_set_write_fn(png, &out, png_write_to_string, png_flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = bytes.size() / static_cast<std::size_t>(height);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(bytes.data() + stride * static_cast<std::size_t>(y)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

struct Decoded {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::uint8_t> bytes;
};

inline Decoded decode(const std::string& blob) {
    if (blob.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(blob.data()), 0, 8) != 0) {
        fail(ErrorKind::IoError, "not a png file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(ErrorKind::IoError, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    Decoded d;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::IoError, "png decode failed");
    }
    PngBuffer buffer{reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size(), 0};
    png_set_read_fn(png, &buffer, png_read_from_buffer);
    png_read_info(png, info);
    d.width = static_cast<int>(png_get_image_width(png, info));
    d.height = static_cast<int>(png_get_image_height(png, info));
    d.bit_depth = png_get_bit_depth(png, info);
    d.color_type = png_get_color_type(png, info);
    if (d.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (d.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (d.bit_depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    d.bit_depth = png_get_bit_depth(png, info);
    d.color_type = png_get_color_type(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    d.bytes.resize(stride * static_cast<std::size_t>(d.height));
    for (int y = 0; y < d.height; ++y) png_read_row(png, d.bytes.data() + stride * static_cast<std::size_t>(y), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return d;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& blob) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace detail

inline std::string encode_png(const RgbImage& image) {
    if (image.empty()) fail(ErrorKind::InvalidArgument, "cannot encode empty image");
    return detail::encode(image.width, image.height, 8, PNG_COLOR_TYPE_RGB, image.data);
}

inline RgbImage decode_png(const std::string& blob) {
    const auto d = detail::decode(blob);
    if (d.bit_depth != 8) fail(ErrorKind::IoError, "expected an 8-bit png");
    RgbImage image(d.width, d.height);
    const std::size_t channels = d.bytes.size() / (static_cast<std::size_t>(d.width) * d.height);
    for (std::size_t i = 0; i < static_cast<std::size_t>(d.width) * d.height; ++i) {
        for (std::size_t c = 0; c < 3; ++c) image.data[i * 3 + c] = d.bytes[i * channels + (channels >= 3 ? c : 0)];
    }
    return image;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& image) {
    detail::write_file(path, encode_png(image));
}

inline RgbImage read_png(const std::filesystem::path& path) { return decode_png(detail::read_file(path)); }

/// 16-bit grayscale instance raster (big-endian samples per the PNG format).
inline void write_instance_png(const std::filesystem::path& path, const InstancePixelMap& map) {
    std::vector<std::uint8_t> bytes(map.ids.size() * 2);
    for (std::size_t i = 0; i < map.ids.size(); ++i) {
        if (map.ids[i] > 0xffff) fail(ErrorKind::InvalidArgument, "instance id exceeds 16 bits");
        bytes[2 * i] = static_cast<std::uint8_t>(map.ids[i] >> 8);
        bytes[2 * i + 1] = static_cast<std::uint8_t>(map.ids[i] & 0xff);
    }
    detail::write_file(path, detail::encode(map.width, map.height, 16, PNG_COLOR_TYPE_GRAY, bytes));
}

inline InstancePixelMap read_instance_png(const std::filesystem::path& path) {
    const auto d = detail::decode(detail::read_file(path));
    if (d.bit_depth != 16 || d.color_type != PNG_COLOR_TYPE_GRAY) fail(ErrorKind::IoError, "expected a 16-bit gray png");
    InstancePixelMap map(d.width, d.height);
    for (std::size_t i = 0; i < map.ids.size(); ++i) {
        map.ids[i] = (static_cast<std::uint32_t>(d.bytes[2 * i]) << 8) | d.bytes[2 * i + 1];
    }
    return map;
}

}  // namespace rcv::io
