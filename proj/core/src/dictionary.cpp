#include "n4/dictionary.hpp"

#include <fstream>

#include "n4/image_io.hpp"

namespace n4 {

void CodeDictionary::rebuildIndex() {
    if (codes.rows() == 0) throw StateError("CodeDictionary: no entries to index");
    index.build(codes);
}

CodeDictionary buildDictionary(const ConvNet& net, const AnnotatedImageSet& corpus,
                               const PatchGeometry& geometry, std::size_t T, std::uint64_t seed) {
    geometry.validate();
    corpus.validate();
    if (corpus.size() == 0) throw ArgumentError("buildDictionary: empty corpus");

    // Any pixel of any training image is a candidate center.
    std::vector<std::uint64_t> imageOffsets(corpus.size() + 1, 0);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        imageOffsets[i + 1] =
            imageOffsets[i] + static_cast<std::uint64_t>(corpus.images[i].height) *
                                  static_cast<std::uint64_t>(corpus.images[i].width);
    }
    const std::uint64_t available = imageOffsets.back();
    if (T == 0 || T > available)
        throw ArgumentError("buildDictionary: T must be in [1, available patch positions]");

    RandomStream rng(seed);
    const std::vector<std::uint64_t> picks = rng.sampleWithoutReplacement(available, T);

    CodeDictionary dict;
    dict.codeDim = net.outputDim();
    dict.annotationSize = geometry.outputSize;
    dict.codes.resize(static_cast<Eigen::Index>(T), dict.codeDim);
    dict.annotations.reserve(T);
    dict.provenance.reserve(T);

    // Batched forwards keep the GEMMs large enough to matter.
    constexpr std::size_t kBatch = 256;
    RowMat batch;
    std::size_t img = 0;
    std::size_t done = 0;
    while (done < T) {
        const std::size_t count = std::min(kBatch, T - done);
        batch.resize(static_cast<Eigen::Index>(count), net.shapes.front().dim());
        for (std::size_t b = 0; b < count; ++b) {
            const std::uint64_t flat = picks[done + b];
            while (flat >= imageOffsets[img + 1]) ++img;
            const std::uint64_t local = flat - imageOffsets[img];
            const int width = corpus.images[img].width;
            const int row = static_cast<int>(local / static_cast<std::uint64_t>(width));
            const int col = static_cast<int>(local % static_cast<std::uint64_t>(width));
            const Patch patch = extractPatch(corpus.images[img], row, col, geometry);
            batch.row(static_cast<Eigen::Index>(b)) = toInterleavedRow(patch.pixels).transpose();
            dict.annotations.push_back(
                extractAnnotation(corpus.annotations[img], row, col, geometry.outputSize));
            dict.provenance.push_back({static_cast<int>(img), {row, col}});
        }
        RowMat codes = forwardBatch(net, batch, Mode::Infer, nullptr, nullptr);
        dict.codes.middleRows(static_cast<Eigen::Index>(done), static_cast<Eigen::Index>(count)) =
            codes;
        done += count;
    }

    dict.rebuildIndex();
    return dict;
}

NearestEntry nearest(const CodeDictionary& dict, const Eigen::VectorXd& query,
                     const SearchConfig& config) {
    config.validate();
    if (dict.size() == 0) throw StateError("nearest: empty dictionary");
    if (query.size() != dict.codeDim) throw ShapeError("nearest: query length mismatch");
    if (dict.index.empty()) throw StateError("nearest: dictionary index not built");

    const std::size_t budget =
        config.exact ? KdTree::kUnbounded : static_cast<std::size_t>(config.maxComparisons);
    const KdTree::Result r = dict.index.nearest(query.data(), budget);
    return {r.index, r.distanceSquared};
}

const AnnotationPatch& transferAnnotation(const CodeDictionary& dict, const Eigen::VectorXd& query,
                                          const SearchConfig& config) {
    return dict.annotations[nearest(dict, query, config).index];
}

void saveDictionary(const std::filesystem::path& path, const CodeDictionary& dict) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create dictionary file: " + path.string());
    writeMagic(out, "N4DC");
    writeU32(out, static_cast<std::uint32_t>(dict.size()));
    writeU32(out, static_cast<std::uint32_t>(dict.codeDim));
    writeU32(out, static_cast<std::uint32_t>(dict.annotationSize));
    Eigen::VectorXd row(dict.codeDim);
    for (Eigen::Index i = 0; i < dict.codes.rows(); ++i) {
        row = dict.codes.row(i).transpose();
        writeF32Array(out, row.data(), static_cast<std::size_t>(row.size()));
    }
    for (const AnnotationPatch& a : dict.annotations)
        writeF32Array(out, a.values.data(), a.values.size());
    if (!out) throw IoError("write failure: " + path.string());
}

CodeDictionary loadDictionary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dictionary file: " + path.string());
    expectMagic(in, "N4DC", "N4DC");
    const std::uint32_t T = readU32(in);
    CodeDictionary dict;
    dict.codeDim = static_cast<int>(readU32(in));
    dict.annotationSize = static_cast<int>(readU32(in));
    if (T == 0 || dict.codeDim <= 0 || dict.annotationSize <= 0)
        throw IoError("corrupt dictionary header: " + path.string());
    dict.codes.resize(T, dict.codeDim);
    Eigen::VectorXd row(dict.codeDim);
    for (std::uint32_t i = 0; i < T; ++i) {
        readF32Array(in, row.data(), static_cast<std::size_t>(row.size()));
        dict.codes.row(i) = row.transpose();
    }
    dict.annotations.reserve(T);
    for (std::uint32_t i = 0; i < T; ++i) {
        AnnotationPatch a(dict.annotationSize);
        readF32Array(in, a.values.data(), a.values.size());
        dict.annotations.push_back(std::move(a));
    }
    dict.rebuildIndex();
    return dict;
}

}  // namespace n4
