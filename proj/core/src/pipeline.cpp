#include "n4/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include "n4/parallel.hpp"

namespace fs = std::filesystem;

namespace n4 {

void FieldModel::validate() const {
    geometry.validate();
    if (net.outputDim() != codec.codeDim)
        throw ShapeError("FieldModel: network output does not match codec codeDim");
    if (dict.codeDim != codec.codeDim)
        throw ShapeError("FieldModel: dictionary codeDim does not match codec");
    if (dict.annotationSize != geometry.outputSize)
        throw ShapeError("FieldModel: dictionary annotation size does not match geometry");
    if (static_cast<int>(channelMeans.size()) != net.input.channels)
        throw ShapeError("FieldModel: channel mean count does not match network input");
    if (net.input.size != geometry.inputSize)
        throw ShapeError("FieldModel: network input size does not match geometry");
}

void InferenceConfig::validate() const {
    if (scales.empty()) throw ArgumentError("InferenceConfig: scales must be non-empty");
    for (double s : scales) {
        if (s <= 0.0) throw ArgumentError("InferenceConfig: scales must be positive");
    }
    if (stride < 1) throw ArgumentError("InferenceConfig: stride must be >= 1");
    search.validate();
}

namespace {

struct SampledCenter {
    std::size_t image;
    int row;
    int col;
};

SampledCenter drawCenter(const AnnotatedImageSet& set, RandomStream& rng) {
    const std::size_t img = static_cast<std::size_t>(rng.uniformIndex(set.size()));
    const int row = static_cast<int>(rng.uniformIndex(static_cast<std::uint64_t>(set.images[img].height)));
    const int col = static_cast<int>(rng.uniformIndex(static_cast<std::uint64_t>(set.images[img].width)));
    return {img, row, col};
}

PcaCodec fitCodec(const AnnotatedImageSet& set, const FieldTrainOptions& options,
                  RandomStream rng) {
    const int n = options.geometry.outputSize;
    if (options.encoding == EncodingKind::Raw) {
        const std::size_t samples = std::max<std::size_t>(options.pcaSampleCount,
                                                          static_cast<std::size_t>(options.codeDim));
        Eigen::MatrixXd data(static_cast<Eigen::Index>(samples), n * n);
        for (std::size_t s = 0; s < samples; ++s) {
            const SampledCenter c = drawCenter(set, rng);
            const AnnotationPatch patch = extractAnnotation(set.annotations[c.image], c.row, c.col, n);
            for (int i = 0; i < n * n; ++i)
                data(static_cast<Eigen::Index>(s), i) = patch.values[static_cast<std::size_t>(i)];
        }
        return fitPca(data, options.codeDim);
    }

    // Alternative encoding: the Gram fit is quadratic in the sample count, so
    // cap the subset; a 16-d subspace stabilizes well below this.
    const std::size_t samples =
        std::clamp<std::size_t>(options.pcaSampleCount, static_cast<std::size_t>(options.codeDim),
                                2000);
    const PairwiseEncoding enc(n);
    std::vector<std::vector<int>> segmentations;
    segmentations.reserve(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        const SampledCenter c = drawCenter(set, rng);
        const AnnotationPatch patch = extractAnnotation(set.annotations[c.image], c.row, c.col, n);
        segmentations.push_back(segmentsFromEdgeMask(patch));
    }
    return fitAlternativeCodec(segmentations, enc, options.codeDim);
}

std::vector<TrainSample> drawTrainingSamples(const AnnotatedImageSet& set,
                                             const FieldTrainOptions& options, RandomStream rng) {
    const std::size_t count = std::max<std::size_t>(1, options.sampleCount);
    std::vector<TrainSample> samples;
    samples.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const SampledCenter c = drawCenter(set, rng);
        TrainSample sample;
        sample.input = extractPatch(set.images[c.image], c.row, c.col, options.geometry).pixels;
        sample.annotation =
            extractAnnotation(set.annotations[c.image], c.row, c.col, options.geometry.outputSize);
        samples.push_back(std::move(sample));
    }
    return samples;
}

}  // namespace

TargetEncoder makeTargetEncoder(const PcaCodec& codec, EncodingKind encoding, int patchSize) {
    if (encoding == EncodingKind::Raw) {
        return [codec](const AnnotationPatch& a) { return pcaEncode(codec, a); };
    }
    const auto enc = std::make_shared<PairwiseEncoding>(patchSize);
    return [codec, enc](const AnnotationPatch& a) {
        return encodePairwise(codec, segmentsFromEdgeMask(a), *enc);
    };
}

FieldTrainResult trainField(const AnnotatedImageSet& trainSet, const FieldTrainOptions& options) {
    trainSet.validate();
    if (trainSet.size() == 0) throw ArgumentError("trainField: empty training set");
    options.geometry.validate();
    options.train.validate();

    AnnotatedImageSet set = trainSet;
    const std::vector<double> means = perChannelMeanSubtract(set.images);

    RandomStream root(options.train.seed);

    // Step 1: annotation codec.
    PcaCodec codec = fitCodec(set, options, root.fork("codec-sample"));

    // Step 2: patch regressor on encoded targets.
    std::vector<TrainSample> samples = drawTrainingSamples(set, options, root.fork("patch-sample"));
    const TargetEncoder encoder =
        makeTargetEncoder(codec, options.encoding, options.geometry.outputSize);
    const NetInput input{options.geometry.inputSize, set.images[0].channels};
    std::vector<LayerSpec> stack = withFinalUnits(options.stack, options.codeDim);
    TrainResult trained = trainRegressor(samples, encoder, stack, input, options.train);

    // Step 3: dictionary from the trained network.
    std::uint64_t available = 0;
    for (const auto& img : set.images)
        available += static_cast<std::uint64_t>(img.height) * static_cast<std::uint64_t>(img.width);
    const std::size_t dictSize =
        static_cast<std::size_t>(std::min<std::uint64_t>(options.dictionarySize, available));
    const std::uint64_t dictSeed = root.fork("dictionary").uniformIndex(std::numeric_limits<std::uint32_t>::max());

    FieldTrainResult result;
    result.model.net = std::move(trained.net);
    result.model.codec = std::move(codec);
    result.model.dict =
        buildDictionary(result.model.net, set, options.geometry, dictSize, dictSeed);
    result.model.geometry = options.geometry;
    result.model.channelMeans = means;
    result.model.encoding = options.encoding;
    result.model.validate();
    result.curve = std::move(trained.curve);
    result.checkpoints = std::move(trained.checkpoints);
    result.diverged = trained.diverged;
    return result;
}

namespace {

/// Shared overlap-transfer loop: worker-chunked rows, merged in row order so
/// the result does not depend on the thread count.
MultiChannelImage transferAndAverage(
    const MultiChannelImage& field, int patchSize, int stride,
    const std::function<AnnotationPatch(const Eigen::VectorXd&)>& annotate) {
    const int h = field.height, w = field.width;
    constexpr int kRowsPerChunk = 16;
    const int chunks = (h + kRowsPerChunk - 1) / kRowsPerChunk;
    std::vector<std::unique_ptr<OverlapAccumulator>> parts(static_cast<std::size_t>(chunks));

    parallelFor(static_cast<std::size_t>(chunks), [&](std::size_t chunk) {
        auto acc = std::make_unique<OverlapAccumulator>(h, w, patchSize);
        Eigen::VectorXd query(field.channels);
        const int rowEnd = std::min(h, (static_cast<int>(chunk) + 1) * kRowsPerChunk);
        for (int r = static_cast<int>(chunk) * kRowsPerChunk; r < rowEnd; ++r) {
            if (r % stride != 0) continue;
            for (int c = 0; c < w; c += stride) {
                for (int k = 0; k < field.channels; ++k) query(k) = field.at(k, r, c);
                acc->add(r, c, annotate(query));
            }
        }
        parts[chunk] = std::move(acc);
    });

    OverlapAccumulator total(h, w, patchSize);
    for (const auto& part : parts) total.merge(*part);
    return total.finish();
}

}  // namespace

MultiChannelImage applyField(const FieldModel& model, const MultiChannelImage& image,
                             const SearchConfig& search, int stride) {
    model.validate();
    search.validate();
    if (stride < 1) throw ArgumentError("applyField: stride must be >= 1");
    if (image.channels != model.net.input.channels)
        throw ShapeError("applyField: image channel count does not match the model");

    MultiChannelImage centered = image;
    subtractChannelMeans(centered, model.channelMeans);
    const MultiChannelImage field = denseApply(model.net, centered);

    return transferAndAverage(field, model.geometry.outputSize, stride,
                              [&model, &search](const Eigen::VectorXd& query) {
                                  return transferAnnotation(model.dict, query, search);
                              });
}

MultiChannelImage applyMultiScale(const FieldModel& model, const MultiChannelImage& image,
                                  const InferenceConfig& config) {
    config.validate();
    std::vector<double> scales = config.scales;
    std::sort(scales.begin(), scales.end());

    const int minExtent = minExtentForWindow(model.geometry.inputSize);
    MultiChannelImage sum(1, image.height, image.width);
    int used = 0;
    for (double scale : scales) {
        MultiChannelImage response;
        if (scale == 1.0) {
            response = applyField(model, image, config.search, config.stride);
        } else {
            const int sh = static_cast<int>(std::lround(image.height * scale));
            const int sw = static_cast<int>(std::lround(image.width * scale));
            if (sh < minExtent || sw < minExtent) {
                std::cerr << "applyMultiScale: skipping scale " << scale
                          << " (resized image smaller than the input window)\n";
                continue;
            }
            const MultiChannelImage scaled = resizeBilinear(image, sh, sw);
            response = resizeBilinear(applyField(model, scaled, config.search, config.stride),
                                      image.height, image.width);
        }
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += response.data[i];
        ++used;
    }
    if (used == 0) throw ArgumentError("applyMultiScale: every scale was skipped");
    for (double& v : sum.data) v /= used;
    return sum;
}

MultiChannelImage applyCommittee(const std::vector<FieldModel>& committee,
                                 const MultiChannelImage& image, const InferenceConfig& config) {
    if (committee.empty()) throw ArgumentError("applyCommittee: empty committee");
    for (const FieldModel& m : committee) {
        if (m.geometry.inputSize != committee[0].geometry.inputSize ||
            m.geometry.outputSize != committee[0].geometry.outputSize)
            throw ShapeError("applyCommittee: committee members must share geometry");
    }
    MultiChannelImage sum(1, image.height, image.width);
    for (const FieldModel& m : committee) {
        const MultiChannelImage r = applyMultiScale(m, image, config);
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += r.data[i];
    }
    for (double& v : sum.data) v /= static_cast<double>(committee.size());
    return sum;
}

BaselineTrainResult trainBaseline(const AnnotatedImageSet& trainSet, BaselineMode mode,
                                  const FieldTrainOptions& options) {
    trainSet.validate();
    if (trainSet.size() == 0) throw ArgumentError("trainBaseline: empty training set");
    options.geometry.validate();
    options.train.validate();

    AnnotatedImageSet set = trainSet;
    const std::vector<double> means = perChannelMeanSubtract(set.images);

    RandomStream root(options.train.seed);
    root.fork("codec-sample");  // keep the stream layout aligned with trainField
    std::vector<TrainSample> samples = drawTrainingSamples(set, options, root.fork("patch-sample"));

    const int n = options.geometry.outputSize;
    const int units = mode == BaselineMode::Central ? 1 : n * n;
    std::vector<LayerSpec> stack = withFinalUnits(options.stack, units);

    TargetEncoder encoder;
    if (mode == BaselineMode::Central) {
        const int center = (n / 2) * n + n / 2;
        encoder = [center](const AnnotationPatch& a) {
            Eigen::VectorXd t(1);
            t(0) = a.values[static_cast<std::size_t>(center)];
            return t;
        };
    } else {
        encoder = [](const AnnotationPatch& a) {
            Eigen::VectorXd t(static_cast<Eigen::Index>(a.values.size()));
            for (std::size_t i = 0; i < a.values.size(); ++i) t(static_cast<Eigen::Index>(i)) = a.values[i];
            return t;
        };
    }

    const NetInput input{options.geometry.inputSize, set.images[0].channels};
    TrainResult trained = trainRegressor(samples, encoder, stack, input, options.train);

    BaselineTrainResult result;
    result.model.net = std::move(trained.net);
    result.model.geometry = options.geometry;
    result.model.channelMeans = means;
    result.model.mode = mode;
    result.curve = std::move(trained.curve);
    result.checkpoints = std::move(trained.checkpoints);
    result.diverged = trained.diverged;
    return result;
}

MultiChannelImage applyBaseline(const BaselineModel& model, const MultiChannelImage& image,
                                int stride) {
    if (stride < 1) throw ArgumentError("applyBaseline: stride must be >= 1");
    if (image.channels != model.net.input.channels)
        throw ShapeError("applyBaseline: image channel count does not match the model");

    MultiChannelImage centered = image;
    subtractChannelMeans(centered, model.channelMeans);
    const MultiChannelImage field = denseApply(model.net, centered);

    if (model.mode == BaselineMode::Central) {
        MultiChannelImage out(1, image.height, image.width);
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::clamp(field.data[i], 0.0, 1.0);
        return out;
    }

    const int n = model.geometry.outputSize;
    return transferAndAverage(field, n, stride, [n](const Eigen::VectorXd& outputs) {
        AnnotationPatch patch(n);
        for (int i = 0; i < n * n; ++i)
            patch.values[static_cast<std::size_t>(i)] = std::clamp(outputs(i), 0.0, 1.0);
        return patch;
    });
}

MultiChannelImage applyBaselineMultiScale(const BaselineModel& model,
                                          const MultiChannelImage& image,
                                          const InferenceConfig& config) {
    config.validate();
    std::vector<double> scales = config.scales;
    std::sort(scales.begin(), scales.end());
    const int minExtent = minExtentForWindow(model.geometry.inputSize);
    MultiChannelImage sum(1, image.height, image.width);
    int used = 0;
    for (double scale : scales) {
        MultiChannelImage response;
        if (scale == 1.0) {
            response = applyBaseline(model, image, config.stride);
        } else {
            const int sh = static_cast<int>(std::lround(image.height * scale));
            const int sw = static_cast<int>(std::lround(image.width * scale));
            if (sh < minExtent || sw < minExtent) {
                std::cerr << "applyBaselineMultiScale: skipping scale " << scale << "\n";
                continue;
            }
            response = resizeBilinear(
                applyBaseline(model, resizeBilinear(image, sh, sw), config.stride), image.height,
                image.width);
        }
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += response.data[i];
        ++used;
    }
    if (used == 0) throw ArgumentError("applyBaselineMultiScale: every scale was skipped");
    for (double& v : sum.data) v /= used;
    return sum;
}

MultiChannelImage resizeBilinear(const MultiChannelImage& image, int outHeight, int outWidth) {
    if (outHeight < 1 || outWidth < 1) throw ArgumentError("resizeBilinear: bad output size");
    MultiChannelImage out(image.channels, outHeight, outWidth);
    const double sy = static_cast<double>(image.height) / outHeight;
    const double sx = static_cast<double>(image.width) / outWidth;
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < outHeight; ++y) {
            double fy = (y + 0.5) * sy - 0.5;
            fy = std::clamp(fy, 0.0, static_cast<double>(image.height - 1));
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, image.height - 1);
            const double wy = fy - y0;
            for (int x = 0; x < outWidth; ++x) {
                double fx = (x + 0.5) * sx - 0.5;
                fx = std::clamp(fx, 0.0, static_cast<double>(image.width - 1));
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, image.width - 1);
                const double wx = fx - x0;
                out.at(c, y, x) = (1 - wy) * ((1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1)) +
                                  wy * ((1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1));
            }
        }
    }
    return out;
}

namespace {

constexpr const char* kManifestName = "manifest.txt";

std::string formatMeans(const std::vector<double>& means) {
    std::ostringstream out;
    char buf[40];
    for (std::size_t i = 0; i < means.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", means[i]);
        if (i) out << " ";
        out << buf;
    }
    return out.str();
}

std::map<std::string, std::string> readManifest(const fs::path& dir) {
    std::ifstream in(dir / kManifestName);
    if (!in) throw IoError("cannot open bundle manifest: " + (dir / kManifestName).string());
    std::string header;
    std::getline(in, header);
    if (header != "n4bundle 1") throw IoError("unsupported bundle manifest: " + dir.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos) throw IoError("malformed manifest line: " + line);
        kv[line.substr(0, space)] = line.substr(space + 1);
    }
    return kv;
}

std::vector<double> parseMeans(const std::string& text) {
    std::vector<double> means;
    std::istringstream in(text);
    double v;
    while (in >> v) means.push_back(v);
    return means;
}

}  // namespace

void saveFieldModel(const fs::path& dir, const FieldModel& model) {
    model.validate();
    fs::create_directories(dir);
    saveNet(dir / "net.n4nn", model.net);
    saveCodec(dir / "codec.n4pc", model.codec);
    saveDictionary(dir / "dict.n4dc", model.dict);
    std::ofstream out(dir / kManifestName);
    if (!out) throw IoError("cannot create bundle manifest in " + dir.string());
    out << "n4bundle 1\n";
    out << "kind field\n";
    out << "encoding " << (model.encoding == EncodingKind::Raw ? "raw" : "alternative") << "\n";
    out << "geometry.inputSize " << model.geometry.inputSize << "\n";
    out << "geometry.outputSize " << model.geometry.outputSize << "\n";
    out << "channels " << model.net.input.channels << "\n";
    out << "channelMeans " << formatMeans(model.channelMeans) << "\n";
    out << "net net.n4nn\ncodec codec.n4pc\ndictionary dict.n4dc\n";
}

FieldModel loadFieldModel(const fs::path& dir) {
    const auto kv = readManifest(dir);
    if (kv.at("kind") != "field") throw IoError("bundle is not a field model: " + dir.string());
    FieldModel model;
    model.net = loadNet(dir / kv.at("net"));
    model.codec = loadCodec(dir / kv.at("codec"));
    model.dict = loadDictionary(dir / kv.at("dictionary"));
    model.geometry.inputSize = std::stoi(kv.at("geometry.inputSize"));
    model.geometry.outputSize = std::stoi(kv.at("geometry.outputSize"));
    model.channelMeans = parseMeans(kv.at("channelMeans"));
    model.encoding = kv.at("encoding") == "alternative" ? EncodingKind::Alternative : EncodingKind::Raw;
    model.validate();
    return model;
}

void saveBaselineModel(const fs::path& dir, const BaselineModel& model) {
    fs::create_directories(dir);
    saveNet(dir / "net.n4nn", model.net);
    std::ofstream out(dir / kManifestName);
    if (!out) throw IoError("cannot create bundle manifest in " + dir.string());
    out << "n4bundle 1\n";
    out << "kind " << (model.mode == BaselineMode::Central ? "baseline-central" : "baseline-patch")
        << "\n";
    out << "geometry.inputSize " << model.geometry.inputSize << "\n";
    out << "geometry.outputSize " << model.geometry.outputSize << "\n";
    out << "channels " << model.net.input.channels << "\n";
    out << "channelMeans " << formatMeans(model.channelMeans) << "\n";
    out << "net net.n4nn\n";
}

BaselineModel loadBaselineModel(const fs::path& dir) {
    const auto kv = readManifest(dir);
    const std::string kind = kv.at("kind");
    if (kind != "baseline-central" && kind != "baseline-patch")
        throw IoError("bundle is not a baseline model: " + dir.string());
    BaselineModel model;
    model.net = loadNet(dir / kv.at("net"));
    model.geometry.inputSize = std::stoi(kv.at("geometry.inputSize"));
    model.geometry.outputSize = std::stoi(kv.at("geometry.outputSize"));
    model.channelMeans = parseMeans(kv.at("channelMeans"));
    model.mode = kind == "baseline-central" ? BaselineMode::Central : BaselineMode::Patch;
    return model;
}

ModelBundle loadBundle(const fs::path& dir) {
    const auto kv = readManifest(dir);
    ModelBundle bundle;
    if (kv.at("kind") == "field")
        bundle.field = loadFieldModel(dir);
    else
        bundle.baseline = loadBaselineModel(dir);
    return bundle;
}

}  // namespace n4
