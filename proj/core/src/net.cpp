#include "n4/net.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "n4/image_io.hpp"

namespace n4 {

std::vector<LayerShape> planShapes(const std::vector<LayerSpec>& layers, NetInput input) {
    if (input.size <= 0 || input.channels <= 0)
        throw ConfigError("planShapes: invalid input geometry");
    if (layers.empty()) throw ConfigError("planShapes: empty layer stack");

    std::vector<LayerShape> shapes;
    shapes.reserve(layers.size() + 1);
    shapes.push_back({input.size, input.size, input.channels, true});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const LayerShape& s = shapes.back();
        LayerShape out = s;
        switch (l.kind) {
            case LayerKind::Convolution: {
                if (!s.spatial) throw ConfigError("planShapes: convolution after fully connected");
                if (l.kernel < 1 || l.stride < 1 || l.units < 1)
                    throw ConfigError("planShapes: bad convolution parameters");
                if (s.h < l.kernel || s.w < l.kernel)
                    throw ConfigError("planShapes: convolution kernel exceeds activation size");
                out.h = (s.h - l.kernel) / l.stride + 1;
                out.w = (s.w - l.kernel) / l.stride + 1;
                out.c = l.units;
                break;
            }
            case LayerKind::MaxPool: {
                if (!s.spatial) throw ConfigError("planShapes: pooling after fully connected");
                if (l.kernel < 1 || l.stride < 1)
                    throw ConfigError("planShapes: bad pooling parameters");
                if (s.h < l.kernel || s.w < l.kernel)
                    throw ConfigError("planShapes: pool window exceeds activation size");
                out.h = (s.h - l.kernel) / l.stride + 1;
                out.w = (s.w - l.kernel) / l.stride + 1;
                break;
            }
            case LayerKind::Relu:
            case LayerKind::Dropout:
                break;
            case LayerKind::FullyConnected: {
                if (l.units < 1) throw ConfigError("planShapes: bad fully connected units");
                out = {1, 1, l.units, false};
                break;
            }
        }
        shapes.push_back(out);
    }
    return shapes;
}

std::vector<LayerSpec> resolveDropout(std::vector<LayerSpec> layers, double defaultRate) {
    for (auto& l : layers) {
        if (l.kind == LayerKind::Dropout && l.rate < 0.0) l.rate = defaultRate;
    }
    return layers;
}

std::size_t ConvNet::parameterCount() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        n += static_cast<std::size_t>(weights[i].size()) + static_cast<std::size_t>(biases[i].size());
    return n;
}

ConvNet initNet(const std::vector<LayerSpec>& layers, NetInput input, double initSigma,
                std::uint64_t seed) {
    ConvNet net;
    net.input = input;
    net.layers = layers;
    net.shapes = planShapes(layers, input);
    net.weights.resize(layers.size());
    net.biases.resize(layers.size());

    RandomStream rng(seed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const LayerShape& in = net.shapes[i];
        if (l.kind == LayerKind::Convolution) {
            net.weights[i].resize(l.kernel * l.kernel * in.c, l.units);
            net.biases[i] = Eigen::VectorXd::Zero(l.units);
        } else if (l.kind == LayerKind::FullyConnected) {
            net.weights[i].resize(in.dim(), l.units);
            net.biases[i] = Eigen::VectorXd::Zero(l.units);
        } else if (l.kind == LayerKind::Dropout) {
            if (l.rate < 0.0 || l.rate >= 1.0)
                throw ConfigError("initNet: dropout rate must be resolved into [0, 1)");
        }
        double* w = net.weights[i].data();
        for (Eigen::Index j = 0; j < net.weights[i].size(); ++j) w[j] = rng.gaussian(0.0, initSigma);
    }
    return net;
}

Eigen::VectorXd toInterleavedRow(const MultiChannelImage& image) {
    Eigen::VectorXd row(static_cast<Eigen::Index>(image.size()));
    const std::size_t plane = image.planeSize();
    std::size_t j = 0;
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < image.channels; ++c) row[static_cast<Eigen::Index>(j++)] = image.data[c * plane + p];
    }
    return row;
}

namespace {

// col is (B*oh*ow) x (k*k*C); both the source span (kx, c) and the
// destination span are contiguous, so each (row, ky) pair is one memcpy.
void im2col(const RowMat& in, int B, int h, int w, int C, int k, int stride, int oh, int ow,
            RowMat& col) {
    col.resize(static_cast<Eigen::Index>(B) * oh * ow, static_cast<Eigen::Index>(k) * k * C);
    const std::size_t span = static_cast<std::size_t>(k) * C;
    for (int b = 0; b < B; ++b) {
        const double* src = in.data() + static_cast<std::size_t>(b) * in.cols();
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double* dst =
                    col.data() + (static_cast<std::size_t>(b) * oh * ow + static_cast<std::size_t>(oy) * ow + ox) * col.cols();
                for (int ky = 0; ky < k; ++ky) {
                    const std::size_t srcOff =
                        (static_cast<std::size_t>(oy * stride + ky) * w + static_cast<std::size_t>(ox) * stride) * C;
                    std::memcpy(dst + ky * span, src + srcOff, span * sizeof(double));
                }
            }
        }
    }
}

void col2im(const RowMat& dCol, int B, int h, int w, int C, int k, int stride, int oh, int ow,
            RowMat& dIn) {
    dIn.setZero(B, static_cast<Eigen::Index>(h) * w * C);
    const std::size_t span = static_cast<std::size_t>(k) * C;
    for (int b = 0; b < B; ++b) {
        double* dst = dIn.data() + static_cast<std::size_t>(b) * dIn.cols();
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double* src =
                    dCol.data() + (static_cast<std::size_t>(b) * oh * ow + static_cast<std::size_t>(oy) * ow + ox) * dCol.cols();
                for (int ky = 0; ky < k; ++ky) {
                    const std::size_t dstOff =
                        (static_cast<std::size_t>(oy * stride + ky) * w + static_cast<std::size_t>(ox) * stride) * C;
                    for (std::size_t j = 0; j < span; ++j) dst[dstOff + j] += src[ky * span + j];
                }
            }
        }
    }
}

}  // namespace

RowMat forwardBatch(const ConvNet& net, const RowMat& inputs, Mode mode, RandomStream* rng,
                    ForwardCache* cachePtr, bool reuseMasks) {
    const int B = static_cast<int>(inputs.rows());
    if (B == 0) throw ArgumentError("forwardBatch: empty batch");
    if (inputs.cols() != net.shapes.front().dim())
        throw ShapeError("forwardBatch: input does not match network geometry");

    ForwardCache local;
    ForwardCache& cache = cachePtr ? *cachePtr : local;
    const std::size_t L = net.layers.size();
    if (reuseMasks) {
        if (cache.dropMask.size() != L)
            throw StateError("forwardBatch: no cached dropout masks to reuse");
    } else {
        cache.dropMask.assign(L, RowMat());
    }
    cache.batch = B;
    cache.mode = mode;
    cache.acts.assign(L + 1, RowMat());
    cache.cols.assign(L, RowMat());
    cache.poolArg.assign(L, {});
    cache.acts[0] = inputs;

    for (std::size_t i = 0; i < L; ++i) {
        const LayerSpec& l = net.layers[i];
        const LayerShape& si = net.shapes[i];
        const LayerShape& so = net.shapes[i + 1];
        const RowMat& in = cache.acts[i];
        RowMat out;
        switch (l.kind) {
            case LayerKind::Convolution: {
                im2col(in, B, si.h, si.w, si.c, l.kernel, l.stride, so.h, so.w, cache.cols[i]);
                out.resize(B, so.dim());
                Eigen::Map<RowMat> flat(out.data(), static_cast<Eigen::Index>(B) * so.h * so.w, so.c);
                flat.noalias() = cache.cols[i] * net.weights[i];
                flat.rowwise() += net.biases[i].transpose();
                break;
            }
            case LayerKind::MaxPool: {
                out.resize(B, so.dim());
                auto& arg = cache.poolArg[i];
                arg.resize(static_cast<std::size_t>(B) * so.dim());
                for (int b = 0; b < B; ++b) {
                    const double* src = in.data() + static_cast<std::size_t>(b) * in.cols();
                    double* dst = out.data() + static_cast<std::size_t>(b) * out.cols();
                    std::int32_t* am = arg.data() + static_cast<std::size_t>(b) * so.dim();
                    for (int oy = 0; oy < so.h; ++oy) {
                        for (int ox = 0; ox < so.w; ++ox) {
                            for (int c = 0; c < so.c; ++c) {
                                double best = -std::numeric_limits<double>::infinity();
                                std::int32_t bestIdx = 0;
                                for (int ky = 0; ky < l.kernel; ++ky) {
                                    for (int kx = 0; kx < l.kernel; ++kx) {
                                        const std::int32_t idx =
                                            ((oy * l.stride + ky) * si.w + ox * l.stride + kx) * si.c + c;
                                        const double v = src[idx];
                                        if (v > best) {
                                            best = v;
                                            bestIdx = idx;
                                        }
                                    }
                                }
                                dst[(oy * so.w + ox) * so.c + c] = best;
                                am[(oy * so.w + ox) * so.c + c] = bestIdx;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::Relu:
                out = in.cwiseMax(0.0);
                break;
            case LayerKind::Dropout: {
                if (mode == Mode::Infer || l.rate == 0.0) {
                    out = in;
                    cache.dropMask[i] = RowMat();
                } else {
                    RowMat& mask = cache.dropMask[i];
                    if (reuseMasks) {
                        if (mask.rows() != B || mask.cols() != in.cols())
                            throw StateError("forwardBatch: cached dropout mask shape mismatch");
                    } else {
                        if (!rng)
                            throw ArgumentError(
                                "forwardBatch: train-mode dropout requires a random stream");
                        mask.resize(B, in.cols());
                        // Inverted dropout: keep with probability 1-rate and
                        // scale, so inference needs no rescaling.
                        const double scale = 1.0 / (1.0 - l.rate);
                        for (Eigen::Index j = 0; j < mask.size(); ++j)
                            mask.data()[j] = rng->uniform() >= l.rate ? scale : 0.0;
                    }
                    out = in.cwiseProduct(mask);
                }
                break;
            }
            case LayerKind::FullyConnected: {
                out.noalias() = in * net.weights[i];
                out.rowwise() += net.biases[i].transpose();
                break;
            }
        }
        cache.acts[i + 1] = std::move(out);
    }
    return cache.acts[L];
}

Eigen::VectorXd forward(const ConvNet& net, const Patch& patch, Mode mode, RandomStream* rng,
                        ForwardCache* cache) {
    if (patch.pixels.channels != net.input.channels || patch.pixels.height != net.input.size ||
        patch.pixels.width != net.input.size)
        throw ShapeError("forward: patch does not match network input geometry");
    RowMat row(1, net.shapes.front().dim());
    row.row(0) = toInterleavedRow(patch.pixels).transpose();
    RowMat out = forwardBatch(net, row, mode, rng, cache);
    return out.row(0).transpose();
}

Gradients backwardBatch(const ConvNet& net, const ForwardCache& cache, const RowMat& outputGrad) {
    const std::size_t L = net.layers.size();
    if (cache.mode != Mode::Train || cache.batch == 0 || cache.acts.size() != L + 1)
        throw StateError("backwardBatch: cache missing or not from a train-mode forward");
    if (outputGrad.rows() != cache.batch || outputGrad.cols() != net.outputDim())
        throw ShapeError("backwardBatch: output gradient shape mismatch");

    Gradients grads;
    grads.weights.resize(L);
    grads.biases.resize(L);

    const int B = cache.batch;
    RowMat g = outputGrad;
    for (std::size_t ii = L; ii-- > 0;) {
        const LayerSpec& l = net.layers[ii];
        const LayerShape& si = net.shapes[ii];
        const LayerShape& so = net.shapes[ii + 1];
        const RowMat& in = cache.acts[ii];
        switch (l.kind) {
            case LayerKind::Convolution: {
                Eigen::Map<const RowMat> G(g.data(), static_cast<Eigen::Index>(B) * so.h * so.w,
                                           so.c);
                grads.weights[ii].noalias() = cache.cols[ii].transpose() * G;
                grads.biases[ii] = G.colwise().sum().transpose();
                RowMat dCol(G.rows(), net.weights[ii].rows());
                dCol.noalias() = G * net.weights[ii].transpose();
                RowMat dIn;
                col2im(dCol, B, si.h, si.w, si.c, l.kernel, l.stride, so.h, so.w, dIn);
                g = std::move(dIn);
                break;
            }
            case LayerKind::MaxPool: {
                RowMat dIn = RowMat::Zero(B, si.dim());
                const auto& arg = cache.poolArg[ii];
                for (int b = 0; b < B; ++b) {
                    const double* gs = g.data() + static_cast<std::size_t>(b) * g.cols();
                    double* dst = dIn.data() + static_cast<std::size_t>(b) * dIn.cols();
                    const std::int32_t* am = arg.data() + static_cast<std::size_t>(b) * so.dim();
                    for (int j = 0; j < so.dim(); ++j) dst[am[j]] += gs[j];
                }
                g = std::move(dIn);
                break;
            }
            case LayerKind::Relu: {
                for (Eigen::Index j = 0; j < g.size(); ++j) {
                    if (in.data()[j] <= 0.0) g.data()[j] = 0.0;
                }
                break;
            }
            case LayerKind::Dropout: {
                if (cache.dropMask[ii].size() > 0) g = g.cwiseProduct(cache.dropMask[ii]);
                break;
            }
            case LayerKind::FullyConnected: {
                grads.weights[ii].noalias() = in.transpose() * g;
                grads.biases[ii] = g.colwise().sum().transpose();
                RowMat dIn(B, si.dim());
                dIn.noalias() = g * net.weights[ii].transpose();
                g = std::move(dIn);
                break;
            }
        }
    }
    return grads;
}

void saveNet(const std::filesystem::path& path, const ConvNet& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create model file: " + path.string());
    writeMagic(out, "N4NN");
    writeU32(out, 1);  // format version
    writeU32(out, static_cast<std::uint32_t>(net.input.size));
    writeU32(out, static_cast<std::uint32_t>(net.input.channels));
    writeU32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const LayerSpec& l : net.layers) {
        writeU32(out, static_cast<std::uint32_t>(l.kind));
        writeU32(out, static_cast<std::uint32_t>(l.kernel));
        writeU32(out, static_cast<std::uint32_t>(l.stride));
        writeU32(out, static_cast<std::uint32_t>(l.units));
        writeF32(out, static_cast<float>(l.rate));
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        writeF32Array(out, net.weights[i].data(), static_cast<std::size_t>(net.weights[i].size()));
        writeF32Array(out, net.biases[i].data(), static_cast<std::size_t>(net.biases[i].size()));
    }
    if (!out) throw IoError("write failure: " + path.string());
}

ConvNet loadNet(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path.string());
    expectMagic(in, "N4NN", "N4NN");
    const std::uint32_t version = readU32(in);
    if (version != 1) throw IoError("unsupported model version: " + path.string());
    ConvNet net;
    net.input.size = static_cast<int>(readU32(in));
    net.input.channels = static_cast<int>(readU32(in));
    const std::uint32_t count = readU32(in);
    net.layers.resize(count);
    for (auto& l : net.layers) {
        const std::uint32_t kind = readU32(in);
        if (kind > static_cast<std::uint32_t>(LayerKind::Dropout))
            throw IoError("corrupt layer table: " + path.string());
        l.kind = static_cast<LayerKind>(kind);
        l.kernel = static_cast<int>(readU32(in));
        l.stride = static_cast<int>(readU32(in));
        l.units = static_cast<int>(readU32(in));
        l.rate = readF32(in);
    }
    net.shapes = planShapes(net.layers, net.input);
    net.weights.resize(count);
    net.biases.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const LayerSpec& l = net.layers[i];
        const LayerShape& s = net.shapes[i];
        if (l.kind == LayerKind::Convolution) {
            net.weights[i].resize(l.kernel * l.kernel * s.c, l.units);
            net.biases[i].resize(l.units);
        } else if (l.kind == LayerKind::FullyConnected) {
            net.weights[i].resize(s.dim(), l.units);
            net.biases[i].resize(l.units);
        }
        readF32Array(in, net.weights[i].data(), static_cast<std::size_t>(net.weights[i].size()));
        readF32Array(in, net.biases[i].data(), static_cast<std::size_t>(net.biases[i].size()));
    }
    return net;
}

std::vector<LayerSpec> parseStack(const std::string& text) {
    std::vector<LayerSpec> layers;
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ',')) {
        // trim
        const auto b = token.find_first_not_of(" \t");
        const auto e = token.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        token = token.substr(b, e - b + 1);

        auto bad = [&token]() -> ConfigError {
            return ConfigError("parseStack: bad layer token '" + token + "'");
        };
        if (token == "relu") {
            layers.push_back(LayerSpec::relu());
        } else if (token == "dropout") {
            layers.push_back(LayerSpec::dropout());
        } else if (token.rfind("dropout:", 0) == 0) {
            layers.push_back(LayerSpec::dropout(std::stod(token.substr(8))));
        } else if (token.rfind("fc:", 0) == 0) {
            layers.push_back(LayerSpec::fullyConnected(std::stoi(token.substr(3))));
        } else if (token.rfind("pool:", 0) == 0) {
            std::string rest = token.substr(5);
            const auto at = rest.find('@');
            int window = std::stoi(rest.substr(0, at));
            int stride = at == std::string::npos ? 0 : std::stoi(rest.substr(at + 1));
            layers.push_back(LayerSpec::maxPool(window, stride));
        } else if (token.rfind("conv:", 0) == 0) {
            std::string rest = token.substr(5);
            const auto x = rest.find('x');
            if (x == std::string::npos) throw bad();
            const auto at = rest.find('@');
            int kernel = std::stoi(rest.substr(0, x));
            int channels = std::stoi(rest.substr(x + 1, at == std::string::npos ? std::string::npos : at - x - 1));
            int stride = at == std::string::npos ? 1 : std::stoi(rest.substr(at + 1));
            layers.push_back(LayerSpec::convolution(kernel, channels, stride));
        } else {
            throw bad();
        }
    }
    if (layers.empty()) throw ConfigError("parseStack: empty stack");
    return layers;
}

std::string formatStack(const std::vector<LayerSpec>& layers) {
    std::ostringstream out;
    bool first = true;
    for (const LayerSpec& l : layers) {
        if (!first) out << ",";
        first = false;
        switch (l.kind) {
            case LayerKind::Convolution:
                out << "conv:" << l.kernel << "x" << l.units;
                if (l.stride != 1) out << "@" << l.stride;
                break;
            case LayerKind::MaxPool:
                out << "pool:" << l.kernel;
                if (l.stride != l.kernel) out << "@" << l.stride;
                break;
            case LayerKind::Relu:
                out << "relu";
                break;
            case LayerKind::Dropout:
                if (l.rate >= 0.0)
                    out << "dropout:" << l.rate;
                else
                    out << "dropout";
                break;
            case LayerKind::FullyConnected:
                out << "fc:" << l.units;
                break;
        }
    }
    return out.str();
}

std::vector<LayerSpec> defaultStack(int codeDim) {
    return {LayerSpec::convolution(5, 48),
            LayerSpec::relu(),
            LayerSpec::maxPool(2),
            LayerSpec::convolution(3, 64),
            LayerSpec::relu(),
            LayerSpec::maxPool(2),
            LayerSpec::fullyConnected(512),
            LayerSpec::relu(),
            LayerSpec::dropout(0.5),
            LayerSpec::fullyConnected(512),
            LayerSpec::relu(),
            LayerSpec::dropout(0.5),
            LayerSpec::fullyConnected(codeDim)};
}

std::vector<LayerSpec> withFinalUnits(std::vector<LayerSpec> layers, int units) {
    for (std::size_t i = layers.size(); i-- > 0;) {
        if (layers[i].kind == LayerKind::FullyConnected) {
            layers[i].units = units;
            return layers;
        }
    }
    throw ConfigError("withFinalUnits: stack has no fully connected layer");
}

}  // namespace n4
