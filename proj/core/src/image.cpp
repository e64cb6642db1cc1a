#include "n4/image.hpp"

#include <cstdint>
#include <string>

namespace n4 {

void AnnotatedImageSet::validate() const {
    if (images.size() != annotations.size())
        throw ShapeError("AnnotatedImageSet: image/annotation count mismatch");
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        const auto& ann = annotations[i];
        if (ann.channels != 1)
            throw ShapeError("AnnotatedImageSet: annotations must be single-channel");
        if (ann.height != img.height || ann.width != img.width)
            throw ShapeError("AnnotatedImageSet: annotation size mismatch at index " +
                             std::to_string(i));
        if (img.channels != images[0].channels)
            throw ShapeError("AnnotatedImageSet: images must share channel count");
    }
}

int reflectIndex(int i, int n) {
    if (i >= 0 && i < n) return i;
    if (n == 1) return 0;
    if (i < 0) {
        if (-i > n - 1) throw CoordinateError("reflectIndex: offset exceeds padding extent");
        return -i;
    }
    if (i > 2 * n - 2) throw CoordinateError("reflectIndex: offset exceeds padding extent");
    return 2 * n - 2 - i;
}

int minExtentForWindow(int windowSize) {
    // Window at center c covers [c - windowSize/2, c - windowSize/2 + windowSize).
    // Single-fold reflection reaches windowSize/2 pixels beyond either border,
    // which is the worst-case overhang for centers at the image edge.
    return windowSize / 2 + 1;
}

MultiChannelImage extractWindow(const MultiChannelImage& image, int row, int col, int size) {
    if (size <= 0) throw ArgumentError("extractWindow: size must be positive");
    if (row < 0 || row >= image.height || col < 0 || col >= image.width)
        throw CoordinateError("extractWindow: center outside image bounds");
    const int minExtent = minExtentForWindow(size);
    if (image.height < minExtent || image.width < minExtent)
        throw ShapeError("extractWindow: image too small for window under reflect padding");

    const int r0 = row - size / 2;
    const int c0 = col - size / 2;
    MultiChannelImage out(image.channels, size, size);
    for (int c = 0; c < image.channels; ++c) {
        const double* src = image.plane(c);
        double* dst = out.plane(c);
        for (int y = 0; y < size; ++y) {
            const int sy = reflectIndex(r0 + y, image.height);
            const double* srow = src + static_cast<std::size_t>(sy) * image.width;
            for (int x = 0; x < size; ++x) {
                dst[static_cast<std::size_t>(y) * size + x] = srow[reflectIndex(c0 + x, image.width)];
            }
        }
    }
    return out;
}

Patch extractPatch(const MultiChannelImage& image, int row, int col,
                   const PatchGeometry& geometry) {
    geometry.validate();
    Patch p;
    p.row = row;
    p.col = col;
    p.geometry = geometry;
    p.pixels = extractWindow(image, row, col, geometry.inputSize);
    return p;
}

AnnotationPatch extractAnnotation(const MultiChannelImage& annotation, int row, int col, int size) {
    if (annotation.channels != 1)
        throw ShapeError("extractAnnotation: annotation images are single-channel");
    MultiChannelImage w = extractWindow(annotation, row, col, size);
    AnnotationPatch out(size);
    out.values = std::move(w.data);
    return out;
}

std::vector<double> perChannelMeans(const std::vector<MultiChannelImage>& images) {
    if (images.empty()) throw ArgumentError("perChannelMeans: empty image collection");
    const int channels = images[0].channels;
    std::vector<double> sum(channels, 0.0);
    std::vector<std::size_t> count(channels, 0);
    for (const auto& img : images) {
        if (img.channels != channels)
            throw ShapeError("perChannelMeans: images must share channel count");
        for (int c = 0; c < channels; ++c) {
            const double* p = img.plane(c);
            double s = 0.0;
            for (std::size_t i = 0; i < img.planeSize(); ++i) s += p[i];
            sum[c] += s;
            count[c] += img.planeSize();
        }
    }
    for (int c = 0; c < channels; ++c) sum[c] = count[c] ? sum[c] / count[c] : 0.0;
    return sum;
}

void subtractChannelMeans(MultiChannelImage& image, const std::vector<double>& means) {
    if (static_cast<int>(means.size()) != image.channels)
        throw ShapeError("subtractChannelMeans: channel count mismatch");
    for (int c = 0; c < image.channels; ++c) {
        double* p = image.plane(c);
        for (std::size_t i = 0; i < image.planeSize(); ++i) p[i] -= means[c];
    }
}

std::vector<double> perChannelMeanSubtract(std::vector<MultiChannelImage>& images) {
    std::vector<double> means = perChannelMeans(images);
    for (auto& img : images) subtractChannelMeans(img, means);
    return means;
}

OverlapAccumulator::OverlapAccumulator(int height, int width, int patchSize)
    : height_(height),
      width_(width),
      patchSize_(patchSize),
      sum_(static_cast<std::size_t>(height) * width, 0.0),
      count_(static_cast<std::size_t>(height) * width, 0) {
    if (height <= 0 || width <= 0 || patchSize <= 0)
        throw ArgumentError("OverlapAccumulator: sizes must be positive");
}

void OverlapAccumulator::add(int row, int col, const AnnotationPatch& patch) {
    if (patch.size != patchSize_) throw ShapeError("OverlapAccumulator: patch size mismatch");
    if (row < 0 || row >= height_ || col < 0 || col >= width_)
        throw CoordinateError("OverlapAccumulator: center outside image");
    const int r0 = row - patchSize_ / 2;
    const int c0 = col - patchSize_ / 2;
    const int yBegin = std::max(0, -r0);
    const int yEnd = std::min(patchSize_, height_ - r0);
    const int xBegin = std::max(0, -c0);
    const int xEnd = std::min(patchSize_, width_ - c0);
    for (int y = yBegin; y < yEnd; ++y) {
        const std::size_t dstRow = static_cast<std::size_t>(r0 + y) * width_;
        const std::size_t srcRow = static_cast<std::size_t>(y) * patchSize_;
        for (int x = xBegin; x < xEnd; ++x) {
            sum_[dstRow + c0 + x] += patch.values[srcRow + x];
            count_[dstRow + c0 + x] += 1;
        }
    }
}

void OverlapAccumulator::merge(const OverlapAccumulator& other) {
    if (other.height_ != height_ || other.width_ != width_ || other.patchSize_ != patchSize_)
        throw ShapeError("OverlapAccumulator: merge shape mismatch");
    for (std::size_t i = 0; i < sum_.size(); ++i) {
        sum_[i] += other.sum_[i];
        count_[i] += other.count_[i];
    }
}

MultiChannelImage OverlapAccumulator::finish() const {
    MultiChannelImage out(1, height_, width_);
    for (std::size_t i = 0; i < sum_.size(); ++i)
        out.data[i] = count_[i] ? sum_[i] / count_[i] : 0.0;
    return out;
}

MultiChannelImage accumulateOverlaps(
    const std::vector<std::pair<std::array<int, 2>, AnnotationPatch>>& outputs, int height,
    int width, int patchSize) {
    OverlapAccumulator acc(height, width, patchSize);
    for (const auto& [center, patch] : outputs) acc.add(center[0], center[1], patch);
    return acc.finish();
}

MultiChannelImage rotate90(const MultiChannelImage& image, int quarterTurns) {
    if (image.height != image.width) throw ShapeError("rotate90: image must be square");
    int k = ((quarterTurns % 4) + 4) % 4;
    if (k == 0) return image;
    const int n = image.height;
    MultiChannelImage out(image.channels, n, n);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                int sy = y, sx = x;
                // Destination (y, x) pulled from the source rotated clockwise
                // k times, so the output appears rotated counterclockwise.
                switch (k) {
                    case 1: sy = x; sx = n - 1 - y; break;
                    case 2: sy = n - 1 - y; sx = n - 1 - x; break;
                    case 3: sy = n - 1 - x; sx = y; break;
                }
                out.at(c, y, x) = image.at(c, sy, sx);
            }
        }
    }
    return out;
}

MultiChannelImage flipHorizontal(const MultiChannelImage& image) {
    MultiChannelImage out(image.channels, image.height, image.width);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
        }
    }
    return out;
}

}  // namespace n4
