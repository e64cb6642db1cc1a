#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "n4/dictionary.hpp"
#include "support/oracles.hpp"

using namespace n4;

namespace {

Eigen::MatrixXd gaussianCodes(RandomStream& rng, int count, int dim) {
    Eigen::MatrixXd m(count, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian();
    return m;
}

CodeDictionary makeDictionary(RandomStream& rng, int count, int dim, int annotationSize) {
    CodeDictionary dict;
    dict.codeDim = dim;
    dict.annotationSize = annotationSize;
    dict.codes = gaussianCodes(rng, count, dim);
    for (int i = 0; i < count; ++i) dict.annotations.push_back(oracle::randomAnnotation(rng, annotationSize));
    dict.rebuildIndex();
    return dict;
}

AnnotatedImageSet tinyCorpus(RandomStream& rng, int images, int size, int channels = 1) {
    AnnotatedImageSet set;
    for (int i = 0; i < images; ++i) {
        set.images.push_back(oracle::randomImage(rng, channels, size, size));
        MultiChannelImage ann(1, size, size);
        for (double& v : ann.data) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
        set.annotations.push_back(std::move(ann));
    }
    return set;
}

const std::vector<LayerSpec> kTinyStack{LayerSpec::convolution(3, 2), LayerSpec::relu(),
                                        LayerSpec::maxPool(2), LayerSpec::fullyConnected(6)};

}  // namespace

TEST_CASE("kd-tree: exact search equals brute force, including ties") {
    RandomStream rng(70);
    for (int trial = 0; trial < 4; ++trial) {
        const int count = 200 + trial * 400;
        Eigen::MatrixXd codes = gaussianCodes(rng, count, 8);
        // Force duplicates so tie-breaking is exercised.
        codes.row(5) = codes.row(17);
        codes.row(100) = codes.row(42);
        KdTree tree;
        tree.build(codes);
        for (int q = 0; q < 100; ++q) {
            Eigen::VectorXd query(8);
            for (int j = 0; j < 8; ++j) query(j) = rng.gaussian();
            if (q % 7 == 0) query = codes.row(static_cast<Eigen::Index>(rng.uniformIndex(count))).transpose();
            const KdTree::Result got = tree.nearest(query.data());
            const auto [wantIdx, wantDist] = oracle::bruteNearest(codes, query);
            CHECK(got.index == wantIdx);
            CHECK(got.distanceSquared == doctest::Approx(wantDist).epsilon(1e-12));
        }
    }
}

TEST_CASE("kd-tree: structure is invariant to input permutation") {
    RandomStream rng(71);
    const Eigen::MatrixXd codes = gaussianCodes(rng, 500, 6);
    KdTree tree;
    tree.build(codes);
    const auto want = tree.structure();

    std::vector<int> perm(500);
    for (int i = 0; i < 500; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int trial = 0; trial < 3; ++trial) {
        rng.shuffle(perm);
        Eigen::MatrixXd shuffled(500, 6);
        for (int i = 0; i < 500; ++i) shuffled.row(i) = codes.row(perm[static_cast<std::size_t>(i)]);
        KdTree other;
        other.build(shuffled);
        CHECK(other.structure() == want);
    }
}

TEST_CASE("nearest: member query returns distance zero in both modes") {
    RandomStream rng(72);
    const CodeDictionary dict = makeDictionary(rng, 300, 16, 4);
    for (int i : {0, 7, 299}) {
        const Eigen::VectorXd q = dict.codes.row(i).transpose();
        const NearestEntry exact = nearest(dict, q, {30, true});
        CHECK(exact.index == static_cast<std::size_t>(i));
        CHECK(exact.distanceSquared == 0.0);
        const NearestEntry approx = nearest(dict, q, {30, false});
        CHECK(approx.distanceSquared == 0.0);
    }
}

TEST_CASE("nearest: approximate distance >= exact; exact equals scan") {
    RandomStream rng(73);
    const CodeDictionary dict = makeDictionary(rng, 1000, 16, 4);
    int recalled = 0;
    const int queries = 200;
    for (int q = 0; q < queries; ++q) {
        Eigen::VectorXd query(16);
        for (int j = 0; j < 16; ++j) query(j) = rng.gaussian();
        const NearestEntry exact = nearest(dict, query, {1, true});
        const auto [wantIdx, wantDist] = oracle::bruteNearest(dict.codes, query);
        CHECK(exact.index == wantIdx);
        CHECK(exact.distanceSquared == doctest::Approx(wantDist).epsilon(1e-12));
        const NearestEntry approx = nearest(dict, query, {30, false});
        CHECK(approx.distanceSquared >= exact.distanceSquared - 1e-15);
        if (approx.index == exact.index) ++recalled;
    }
    // recall@1 at a budget of 30 leaf visits; reported and bounded below.
    INFO("recall@1 = ", static_cast<double>(recalled) / queries);
    CHECK(recalled >= static_cast<int>(0.8 * queries));
}

TEST_CASE("nearest: budget of T leaf visits degenerates to exact") {
    RandomStream rng(74);
    const CodeDictionary dict = makeDictionary(rng, 400, 8, 4);
    for (int q = 0; q < 100; ++q) {
        Eigen::VectorXd query(8);
        for (int j = 0; j < 8; ++j) query(j) = rng.gaussian();
        const NearestEntry exact = nearest(dict, query, {1, true});
        const NearestEntry full = nearest(dict, query, {400, false});
        CHECK(full.index == exact.index);
        CHECK(full.distanceSquared == exact.distanceSquared);
    }
}

TEST_CASE("nearest: empty dictionary and bad queries raise") {
    CodeDictionary dict;
    dict.codeDim = 4;
    CHECK_THROWS_AS(nearest(dict, Eigen::VectorXd::Zero(4), {30, false}), StateError);
    RandomStream rng(75);
    const CodeDictionary ok = makeDictionary(rng, 10, 4, 2);
    CHECK_THROWS_AS(nearest(ok, Eigen::VectorXd::Zero(5), {30, false}), ShapeError);
    CHECK_THROWS_AS(nearest(ok, Eigen::VectorXd::Zero(4), {0, false}), ArgumentError);
}

TEST_CASE("transferAnnotation: returns the argmin annotation verbatim") {
    RandomStream rng(76);
    const CodeDictionary dict = makeDictionary(rng, 500, 8, 4);
    for (int q = 0; q < 50; ++q) {
        Eigen::VectorXd query(8);
        for (int j = 0; j < 8; ++j) query(j) = rng.gaussian();
        const auto [wantIdx, wantDist] = oracle::bruteNearest(dict.codes, query);
        const AnnotationPatch& got = transferAnnotation(dict, query, {30, true});
        CHECK(got.values == dict.annotations[wantIdx].values);
    }
}

TEST_CASE("transferAnnotation: outputs are always verbatim dictionary entries") {
    RandomStream rng(77);
    const CodeDictionary dict = makeDictionary(rng, 64, 6, 3);
    for (int q = 0; q < 40; ++q) {
        Eigen::VectorXd query(6);
        for (int j = 0; j < 6; ++j) query(j) = rng.gaussian();
        const AnnotationPatch& got = transferAnnotation(dict, query, {5, false});
        bool found = false;
        for (const auto& a : dict.annotations) found = found || a.values == got.values;
        CHECK(found);
    }
}

TEST_CASE("buildDictionary: singleton dictionary answers every query") {
    RandomStream rng(78);
    const AnnotatedImageSet corpus = tinyCorpus(rng, 2, 16);
    const ConvNet net = initNet(kTinyStack, {8, 1}, 0.2, 79);
    const CodeDictionary dict = buildDictionary(net, corpus, {8, 4}, 1, 80);
    CHECK(dict.size() == 1);
    Eigen::VectorXd query = Eigen::VectorXd::Constant(6, 9.0);
    const AnnotationPatch& got = transferAnnotation(dict, query, {30, false});
    CHECK(got.values == dict.annotations[0].values);
}

TEST_CASE("buildDictionary: fixed seed reproduces the dictionary") {
    RandomStream rng(81);
    const AnnotatedImageSet corpus = tinyCorpus(rng, 3, 14);
    const ConvNet net = initNet(kTinyStack, {8, 1}, 0.2, 82);
    const CodeDictionary a = buildDictionary(net, corpus, {8, 4}, 50, 83);
    const CodeDictionary b = buildDictionary(net, corpus, {8, 4}, 50, 83);
    CHECK((a.codes - b.codes).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.annotations[i].values == b.annotations[i].values);
    const CodeDictionary c = buildDictionary(net, corpus, {8, 4}, 50, 84);
    CHECK((a.codes - c.codes).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("buildDictionary: entry codes equal the dense field at their centers") {
    RandomStream rng(85);
    const AnnotatedImageSet corpus = tinyCorpus(rng, 2, 16);
    const ConvNet net = initNet(kTinyStack, {8, 1}, 0.3, 86);
    const CodeDictionary dict = buildDictionary(net, corpus, {8, 4}, 40, 87);
    std::vector<MultiChannelImage> fields;
    for (const auto& img : corpus.images) fields.push_back(denseApply(net, img));
    for (std::size_t i = 0; i < dict.size(); ++i) {
        const auto& prov = dict.provenance[i];
        for (int k = 0; k < dict.codeDim; ++k) {
            CHECK(std::abs(dict.codes(static_cast<Eigen::Index>(i), k) -
                           fields[static_cast<std::size_t>(prov.imageIndex)].at(k, prov.center[0], prov.center[1])) <
                  1e-5);
        }
        // The stored annotation is the raw window at the same center.
        const AnnotationPatch want = extractAnnotation(
            corpus.annotations[static_cast<std::size_t>(prov.imageIndex)], prov.center[0], prov.center[1], 4);
        CHECK(dict.annotations[i].values == want.values);
    }
}

TEST_CASE("buildDictionary: T exceeding available positions raises") {
    RandomStream rng(88);
    const AnnotatedImageSet corpus = tinyCorpus(rng, 1, 10);
    const ConvNet net = initNet(kTinyStack, {8, 1}, 0.2, 89);
    CHECK_THROWS_AS(buildDictionary(net, corpus, {8, 4}, 101, 90), ArgumentError);
    CHECK_THROWS_AS(buildDictionary(net, corpus, {8, 4}, 0, 90), ArgumentError);
}

TEST_CASE("dictionary persistence: behavior identical after reload") {
    RandomStream rng(91);
    const CodeDictionary dict = makeDictionary(rng, 200, 8, 4);
    const auto path = std::filesystem::temp_directory_path() / "n4_test_dict.n4dc";
    saveDictionary(path, dict);
    const CodeDictionary back = loadDictionary(path);
    CHECK(back.size() == dict.size());
    CHECK(back.codeDim == dict.codeDim);
    CHECK(back.annotationSize == dict.annotationSize);
    CHECK(back.provenance.empty());
    for (int q = 0; q < 50; ++q) {
        Eigen::VectorXd query(8);
        for (int j = 0; j < 8; ++j) query(j) = rng.gaussian();
        // Same probe behavior (codes went through float32, so compare the
        // reloaded dictionary against itself across save/load cycles).
        const NearestEntry first = nearest(back, query, {30, false});
        const auto path2 = std::filesystem::temp_directory_path() / "n4_test_dict2.n4dc";
        saveDictionary(path2, back);
        const CodeDictionary again = loadDictionary(path2);
        const NearestEntry second = nearest(again, query, {30, false});
        CHECK(first.index == second.index);
        CHECK(first.distanceSquared == second.distanceSquared);
        std::filesystem::remove(path2);
        if (q >= 3) break;  // a few cycles suffice
    }
    std::filesystem::remove(path);
}
