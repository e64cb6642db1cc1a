#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "n4/image.hpp"

namespace n4 {

/// 8-bit PNG input, scaled to [0, 1]. Gray, gray+alpha (alpha dropped), RGB
/// and RGBA map to 1/1/3/4 channels; 16-bit files are reduced to 8 bits.
MultiChannelImage readPng(const std::filesystem::path& path);

/// 8-bit PNG output; values are clamped to [0, 1] and quantized. Only 1-, 3-
/// and 4-channel images can be written.
void writePng(const std::filesystem::path& path, const MultiChannelImage& image);

/// Raw float container: magic "N4IM", then channels/height/width as 32-bit
/// little-endian unsigned, then planar 32-bit little-endian floats. This is
/// the authoritative format for response maps; PNG output is for viewing.
void writeRawImage(const std::filesystem::path& path, const MultiChannelImage& image);
MultiChannelImage readRawImage(const std::filesystem::path& path);

// Little-endian primitives shared by the binary containers.
void writeU32(std::ostream& out, std::uint32_t v);
void writeF32(std::ostream& out, float v);
void writeF32Array(std::ostream& out, const double* values, std::size_t count);
std::uint32_t readU32(std::istream& in);
float readF32(std::istream& in);
void readF32Array(std::istream& in, double* values, std::size_t count);
void writeMagic(std::ostream& out, const char magic[4]);
void expectMagic(std::istream& in, const char magic[4], const char* what);

}  // namespace n4
