#include <cstring>
#include <functional>
#include <limits>

#include "n4/net.hpp"

namespace n4 {

namespace {

// Interleaved (h x w x c) activation map used only inside dense application.
struct FeatureMap {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c)
        : h(h), w(w), c(c), data(static_cast<std::size_t>(std::max(h, 0)) * std::max(w, 0) * c) {}

    bool empty() const { return h <= 0 || w <= 0; }
    double* at(int y, int x) { return data.data() + (static_cast<std::size_t>(y) * w + x) * c; }
    const double* at(int y, int x) const {
        return data.data() + (static_cast<std::size_t>(y) * w + x) * c;
    }
};

// Valid stride-1 convolution (or the first fully connected layer viewed as a
// kernel covering the per-patch spatial extent). Kernel may be rectangular.
FeatureMap convolveMap(const FeatureMap& in, int kh, int kw, const Eigen::MatrixXd& weights,
                       const Eigen::VectorXd& bias) {
    const int oh = in.h - kh + 1;
    const int ow = in.w - kw + 1;
    if (oh <= 0 || ow <= 0) return {};
    const int outC = static_cast<int>(weights.cols());
    RowMat col(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(kh) * kw * in.c);
    const std::size_t span = static_cast<std::size_t>(kw) * in.c;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* dst = col.data() + (static_cast<std::size_t>(oy) * ow + ox) * col.cols();
            for (int ky = 0; ky < kh; ++ky)
                std::memcpy(dst + ky * span, in.at(oy + ky, ox), span * sizeof(double));
        }
    }
    FeatureMap out(oh, ow, outC);
    Eigen::Map<RowMat> flat(out.data.data(), static_cast<Eigen::Index>(oh) * ow, outC);
    flat.noalias() = col * weights;
    flat.rowwise() += bias.transpose();
    return out;
}

FeatureMap reluMap(FeatureMap in) {
    for (double& v : in.data) v = std::max(v, 0.0);
    return in;
}

// Max-pool windows starting at (offY + stride*q, offX + stride*p).
FeatureMap poolPhase(const FeatureMap& in, int window, int stride, int offY, int offX) {
    const int availH = in.h - offY;
    const int availW = in.w - offX;
    if (availH < window || availW < window) return {};
    const int oh = (availH - window) / stride + 1;
    const int ow = (availW - window) / stride + 1;
    FeatureMap out(oh, ow, in.c);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* dst = out.at(oy, ox);
            for (int ch = 0; ch < in.c; ++ch) dst[ch] = -std::numeric_limits<double>::infinity();
            for (int ky = 0; ky < window; ++ky) {
                const double* src = in.at(offY + oy * stride + ky, offX + ox * stride);
                for (int kx = 0; kx < window; ++kx) {
                    for (int ch = 0; ch < in.c; ++ch)
                        dst[ch] = std::max(dst[ch], src[kx * in.c + ch]);
                }
            }
        }
    }
    return out;
}

// Stride-1 sliding max (pool layers declared with stride 1).
FeatureMap slidingMax(const FeatureMap& in, int window) { return poolPhase(in, window, 1, 0, 0); }

FeatureMap subsamplePhase(const FeatureMap& in, int stride, int offY, int offX) {
    if (in.h <= offY || in.w <= offX) return {};
    const int oh = (in.h - 1 - offY) / stride + 1;
    const int ow = (in.w - 1 - offX) / stride + 1;
    FeatureMap out(oh, ow, in.c);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox)
            std::memcpy(out.at(oy, ox), in.at(offY + oy * stride, offX + ox * stride),
                        static_cast<std::size_t>(in.c) * sizeof(double));
    }
    return out;
}

FeatureMap denseRec(const ConvNet& net, std::size_t layerIdx, const FeatureMap& map);

// Recurse into each of stride^2 grid phases and interleave the per-center
// results back into full-resolution coordinates.
FeatureMap phaseSplit(const ConvNet& net, std::size_t nextLayer, const FeatureMap& map, int stride,
                      const std::function<FeatureMap(int, int)>& phase) {
    std::vector<FeatureMap> subs(static_cast<std::size_t>(stride) * stride);
    int outH = std::numeric_limits<int>::max();
    int outW = std::numeric_limits<int>::max();
    int channels = 0;
    for (int a = 0; a < stride; ++a) {
        for (int b = 0; b < stride; ++b) {
            FeatureMap sub = denseRec(net, nextLayer, phase(a, b));
            outH = std::min(outH, a + stride * sub.h);
            outW = std::min(outW, b + stride * sub.w);
            if (!sub.empty()) channels = sub.c;
            subs[static_cast<std::size_t>(a) * stride + b] = std::move(sub);
        }
    }
    if (outH <= 0 || outW <= 0 || channels == 0) return {};
    FeatureMap out(outH, outW, channels);
    for (int u = 0; u < outH; ++u) {
        const int a = u % stride;
        for (int v = 0; v < outW; ++v) {
            const int b = v % stride;
            const FeatureMap& sub = subs[static_cast<std::size_t>(a) * stride + b];
            std::memcpy(out.at(u, v), sub.at(u / stride, v / stride),
                        static_cast<std::size_t>(channels) * sizeof(double));
        }
    }
    return out;
}

FeatureMap denseRec(const ConvNet& net, std::size_t layerIdx, const FeatureMap& map) {
    if (map.empty()) return {};
    if (layerIdx == net.layers.size()) {
        // Per-center output: flatten the remaining per-patch window.
        const LayerShape& fin = net.shapes.back();
        const int oh = map.h - fin.h + 1;
        const int ow = map.w - fin.w + 1;
        if (oh <= 0 || ow <= 0) return {};
        FeatureMap out(oh, ow, fin.dim());
        const std::size_t span = static_cast<std::size_t>(fin.w) * map.c;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double* dst = out.at(oy, ox);
                for (int ky = 0; ky < fin.h; ++ky)
                    std::memcpy(dst + ky * span, map.at(oy + ky, ox), span * sizeof(double));
            }
        }
        return out;
    }

    const LayerSpec& l = net.layers[layerIdx];
    switch (l.kind) {
        case LayerKind::Convolution: {
            FeatureMap conv = convolveMap(map, l.kernel, l.kernel, net.weights[layerIdx],
                                          net.biases[layerIdx]);
            if (l.stride == 1) return denseRec(net, layerIdx + 1, conv);
            return phaseSplit(net, layerIdx + 1, conv, l.stride, [&conv, &l](int a, int b) {
                return subsamplePhase(conv, l.stride, a, b);
            });
        }
        case LayerKind::MaxPool: {
            if (l.stride == 1) return denseRec(net, layerIdx + 1, slidingMax(map, l.kernel));
            return phaseSplit(net, layerIdx + 1, map, l.stride, [&map, &l](int a, int b) {
                return poolPhase(map, l.kernel, l.stride, a, b);
            });
        }
        case LayerKind::Relu:
            return denseRec(net, layerIdx + 1, reluMap(map));
        case LayerKind::Dropout:
            return denseRec(net, layerIdx + 1, map);  // inference: identity
        case LayerKind::FullyConnected: {
            const LayerShape& s = net.shapes[layerIdx];
            FeatureMap out =
                convolveMap(map, s.h, s.w, net.weights[layerIdx], net.biases[layerIdx]);
            return denseRec(net, layerIdx + 1, out);
        }
    }
    return {};
}

}  // namespace

MultiChannelImage denseApply(const ConvNet& net, const MultiChannelImage& image) {
    if (image.channels != net.input.channels)
        throw ShapeError("denseApply: image channel count does not match network");
    const int m = net.input.size;
    const int minExtent = minExtentForWindow(m);
    if (image.height < minExtent || image.width < minExtent)
        throw ShapeError("denseApply: image too small for the input window after padding");

    const int pad = m / 2;
    FeatureMap padded(image.height + m - 1, image.width + m - 1, image.channels);
    for (int y = 0; y < padded.h; ++y) {
        const int sy = reflectIndex(y - pad, image.height);
        for (int x = 0; x < padded.w; ++x) {
            const int sx = reflectIndex(x - pad, image.width);
            double* dst = padded.at(y, x);
            for (int c = 0; c < image.channels; ++c) dst[c] = image.at(c, sy, sx);
        }
    }

    FeatureMap field = denseRec(net, 0, padded);
    if (field.h < image.height || field.w < image.width)
        throw StateError("denseApply: dense evaluation produced a short field");

    const int outDim = net.outputDim();
    MultiChannelImage out(outDim, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double* src = field.at(y, x);
            for (int k = 0; k < outDim; ++k) out.at(k, y, x) = src[k];
        }
    }
    return out;
}

}  // namespace n4
