#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "n4/errors.hpp"

namespace n4 {

/// Dense C x H x W raster of real intensities. Storage is planar: one full
/// row-major H x W plane per channel. Channel counts 1/3/4 cover annotation,
/// RGB and RGBD images; arbitrary counts are allowed for feature maps.
struct MultiChannelImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;  // channels * height * width

    MultiChannelImage() = default;
    MultiChannelImage(int channels, int height, int width, double fill = 0.0)
        : channels(channels),
          height(height),
          width(width),
          data(static_cast<std::size_t>(channels) * height * width, fill) {}

    std::size_t planeSize() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double* plane(int c) { return data.data() + c * planeSize(); }
    const double* plane(int c) const { return data.data() + c * planeSize(); }

    double& at(int c, int y, int x) { return data[c * planeSize() + static_cast<std::size_t>(y) * width + x]; }
    double at(int c, int y, int x) const {
        return data[c * planeSize() + static_cast<std::size_t>(y) * width + x];
    }

    bool sameShape(const MultiChannelImage& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
};

/// Input/output window sizes of the patch transform. The output annotation
/// window sits centered inside the input window.
struct PatchGeometry {
    int inputSize = 34;   // M
    int outputSize = 16;  // N

    int centerOffset() const { return (inputSize - outputSize) / 2; }

    void validate() const {
        if (inputSize <= 0 || outputSize <= 0)
            throw ArgumentError("PatchGeometry: sizes must be positive");
        if (outputSize >= inputSize)
            throw ArgumentError("PatchGeometry: outputSize must be smaller than inputSize");
    }
};

/// An M x M pixel window together with its source location.
struct Patch {
    int row = 0;  // center coordinates in the source image
    int col = 0;
    PatchGeometry geometry;
    MultiChannelImage pixels;  // inputSize x inputSize, source channel count
};

/// Single-channel N x N annotation window with values in [0, 1]. Ground-truth
/// annotations are binary.
struct AnnotationPatch {
    int size = 0;
    std::vector<double> values;  // size * size, row-major

    AnnotationPatch() = default;
    explicit AnnotationPatch(int size, double fill = 0.0)
        : size(size), values(static_cast<std::size_t>(size) * size, fill) {}

    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * size + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * size + x]; }
};

/// A set of images with pixel-level annotations (one single-channel
/// annotation image per input image). Images and annotations share sizes.
struct AnnotatedImageSet {
    std::vector<MultiChannelImage> images;
    std::vector<MultiChannelImage> annotations;

    std::size_t size() const { return images.size(); }
    void validate() const;
};

/// Reflected index for single-fold mirror padding without edge repetition
/// (..., 2, 1, |0, 1, ..., n-1|, n-2, n-3, ...). Valid for i in
/// [-(n-1), 2n-2]; n must be at least 2 for out-of-range i.
int reflectIndex(int i, int n);

/// Smallest image extent that supports extraction of `windowSize` windows
/// centered at every pixel under the reflect padding policy.
int minExtentForWindow(int windowSize);

/// Copy the size x size window centered at (row, col), reflect-padded at the
/// borders. Even sizes use a half-open window: rows [row - size/2,
/// row + size/2).
MultiChannelImage extractWindow(const MultiChannelImage& image, int row, int col, int size);

/// M x M input patch centered at (row, col).
Patch extractPatch(const MultiChannelImage& image, int row, int col, const PatchGeometry& geometry);

/// N x N annotation window centered at (row, col) of a single-channel image.
AnnotationPatch extractAnnotation(const MultiChannelImage& annotation, int row, int col, int size);

/// Global per-channel means over a collection of images.
std::vector<double> perChannelMeans(const std::vector<MultiChannelImage>& images);

/// Subtract fixed channel means from one image (used at inference with the
/// means captured during training).
void subtractChannelMeans(MultiChannelImage& image, const std::vector<double>& means);

/// Subtract the global per-channel mean from every image; returns the means.
std::vector<double> perChannelMeanSubtract(std::vector<MultiChannelImage>& images);

/// Streaming accumulator for overlap averaging: each added annotation patch
/// contributes its pixels to the output; finish() divides by the actual
/// per-pixel contribution count (N^2 for interior pixels when every center
/// contributed, fewer near borders).
class OverlapAccumulator {
public:
    OverlapAccumulator(int height, int width, int patchSize);

    void add(int row, int col, const AnnotationPatch& patch);
    void merge(const OverlapAccumulator& other);
    MultiChannelImage finish() const;

    int patchSize() const { return patchSize_; }

private:
    int height_;
    int width_;
    int patchSize_;
    std::vector<double> sum_;
    std::vector<std::uint32_t> count_;
};

/// Overlap-average a full set of (center, patch) outputs into an H x W map.
MultiChannelImage accumulateOverlaps(
    const std::vector<std::pair<std::array<int, 2>, AnnotationPatch>>& outputs, int height,
    int width, int patchSize);

/// Quarter-turn rotation (counterclockwise) and horizontal mirror; both
/// require square images.
MultiChannelImage rotate90(const MultiChannelImage& image, int quarterTurns);
MultiChannelImage flipHorizontal(const MultiChannelImage& image);

}  // namespace n4
