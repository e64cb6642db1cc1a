#include "n4/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

namespace n4 {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw IoError(what + ": " + path.string());
}

}  // namespace

MultiChannelImage readPng(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) fail(path, "cannot open PNG");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(path, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "PNG decode error");
    }

    png_init_io(png, file.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    const int colorType = png_get_color_type(png, info);
    if (colorType == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (colorType == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (colorType == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3 && channels != 4) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, "unsupported PNG channel count " + std::to_string(channels));
    }

    std::vector<png_byte> rowBuf(static_cast<std::size_t>(width) * channels);
    MultiChannelImage image(channels, height, width);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, rowBuf.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                image.at(c, y, x) = rowBuf[static_cast<std::size_t>(x) * channels + c] / 255.0;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void writePng(const std::filesystem::path& path, const MultiChannelImage& image) {
    if (image.channels != 1 && image.channels != 3 && image.channels != 4)
        throw ArgumentError("writePng: only 1/3/4-channel images supported");
    if (image.empty()) throw ArgumentError("writePng: empty image");

    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) fail(path, "cannot create PNG");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) fail(path, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(path, "png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(path, "PNG encode error");
    }

    png_init_io(png, file.get());
    const int colorType = image.channels == 1   ? PNG_COLOR_TYPE_GRAY
                          : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                                : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, image.width, image.height, 8, colorType, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> rowBuf(static_cast<std::size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                rowBuf[static_cast<std::size_t>(x) * image.channels + c] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, rowBuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void writeU32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void writeF32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    writeU32(out, bits);
}

void writeF32Array(std::ostream& out, const double* values, std::size_t count) {
    std::vector<unsigned char> buf(count * 4);
    for (std::size_t i = 0; i < count; ++i) {
        const float f = static_cast<float>(values[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        buf[i * 4 + 0] = static_cast<unsigned char>(bits);
        buf[i * 4 + 1] = static_cast<unsigned char>(bits >> 8);
        buf[i * 4 + 2] = static_cast<unsigned char>(bits >> 16);
        buf[i * 4 + 3] = static_cast<unsigned char>(bits >> 24);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::uint32_t readU32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("unexpected end of binary container");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float readF32(std::istream& in) {
    std::uint32_t bits = readU32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void readF32Array(std::istream& in, double* values, std::size_t count) {
    std::vector<unsigned char> buf(count * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("unexpected end of binary container");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(buf[i * 4 + 0]) |
                             (static_cast<std::uint32_t>(buf[i * 4 + 1]) << 8) |
                             (static_cast<std::uint32_t>(buf[i * 4 + 2]) << 16) |
                             (static_cast<std::uint32_t>(buf[i * 4 + 3]) << 24);
        float v;
        std::memcpy(&v, &bits, 4);
        values[i] = v;
    }
}

void writeMagic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

void expectMagic(std::istream& in, const char magic[4], const char* what) {
    char got[4] = {};
    in.read(got, 4);
    if (!in || std::memcmp(got, magic, 4) != 0)
        throw IoError(std::string("bad magic, not a ") + what + " container");
}

void writeRawImage(const std::filesystem::path& path, const MultiChannelImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot create raw image");
    writeMagic(out, "N4IM");
    writeU32(out, static_cast<std::uint32_t>(image.channels));
    writeU32(out, static_cast<std::uint32_t>(image.height));
    writeU32(out, static_cast<std::uint32_t>(image.width));
    writeF32Array(out, image.data.data(), image.data.size());
    if (!out) fail(path, "write failure");
}

MultiChannelImage readRawImage(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open raw image");
    expectMagic(in, "N4IM", "N4IM");
    const std::uint32_t channels = readU32(in);
    const std::uint32_t height = readU32(in);
    const std::uint32_t width = readU32(in);
    if (channels == 0 || height == 0 || width == 0) fail(path, "degenerate raw image header");
    MultiChannelImage image(static_cast<int>(channels), static_cast<int>(height),
                            static_cast<int>(width));
    readF32Array(in, image.data.data(), image.data.size());
    return image;
}

}  // namespace n4
