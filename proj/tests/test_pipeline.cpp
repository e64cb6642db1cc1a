#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "n4/pipeline.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace n4;

namespace {

AnnotatedImageSet syntheticEdgeCorpus(RandomStream& rng, int images, int size) {
    // Blocky two-level images with a vertical boundary at a random column.
    AnnotatedImageSet set;
    for (int i = 0; i < images; ++i) {
        const int split = 6 + static_cast<int>(rng.uniformIndex(static_cast<std::uint64_t>(size - 12)));
        MultiChannelImage img(1, size, size);
        MultiChannelImage ann(1, size, size);
        const double lo = rng.uniform(0.1, 0.4), hi = rng.uniform(0.6, 0.9);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                img.at(0, y, x) = (x < split ? lo : hi) + rng.gaussian(0.0, 0.03);
                if (x == split - 1) ann.at(0, y, x) = 1.0;
            }
        }
        set.images.push_back(std::move(img));
        set.annotations.push_back(std::move(ann));
    }
    return set;
}

FieldTrainOptions tinyOptions(std::uint64_t seed) {
    FieldTrainOptions opt;
    opt.geometry = {10, 4};
    opt.stack = {LayerSpec::convolution(3, 4), LayerSpec::relu(), LayerSpec::maxPool(2),
                 LayerSpec::fullyConnected(12), LayerSpec::relu(), LayerSpec::fullyConnected(6)};
    opt.train.batchSize = 32;
    opt.train.epochs = 8;
    opt.train.learningRate = 0.05;
    opt.train.seed = seed;
    opt.codeDim = 6;
    opt.sampleCount = 600;
    opt.pcaSampleCount = 400;
    opt.dictionarySize = 500;
    return opt;
}

}  // namespace

TEST_CASE("trainField: assembles a consistent model; raw codec dims as configured") {
    RandomStream rng(300);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 4, 24);
    FieldTrainOptions opt = tinyOptions(1);
    const FieldTrainResult result = trainField(corpus, opt);
    CHECK(result.model.codec.inputDim == 16);  // N^2
    CHECK(result.model.codec.codeDim == 6);
    CHECK(result.model.net.outputDim() == 6);
    CHECK(result.model.dict.size() == 500);
    CHECK(!result.curve.empty());
    CHECK_NOTHROW(result.model.validate());
}

TEST_CASE("trainField: raw encoding with default geometry gives a 256-d codec") {
    RandomStream rng(301);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 40);
    FieldTrainOptions opt;
    opt.geometry = {34, 16};
    opt.stack = {LayerSpec::convolution(5, 2), LayerSpec::relu(), LayerSpec::maxPool(2),
                 LayerSpec::fullyConnected(16)};
    opt.train.epochs = 1;
    opt.train.batchSize = 16;
    opt.train.seed = 2;
    opt.codeDim = 16;
    opt.sampleCount = 64;
    opt.pcaSampleCount = 80;
    opt.dictionarySize = 100;
    const FieldTrainResult result = trainField(corpus, opt);
    CHECK(result.model.codec.inputDim == 256);
    CHECK(result.model.codec.codeDim == 16);
}

TEST_CASE("applyField: all-ones dictionary annotations give an all-ones response") {
    RandomStream rng(302);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 3, 20);
    FieldTrainOptions opt = tinyOptions(3);
    FieldTrainResult result = trainField(corpus, opt);
    for (auto& a : result.model.dict.annotations)
        std::fill(a.values.begin(), a.values.end(), 1.0);
    const MultiChannelImage response =
        applyField(result.model, corpus.images[0], SearchConfig{30, false});
    for (double v : response.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("applyField: singleton dictionary gives constant-annotation averages") {
    RandomStream rng(303);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 20);
    FieldTrainOptions opt = tinyOptions(4);
    opt.dictionarySize = 1;
    const FieldTrainResult result = trainField(corpus, opt);
    CHECK(result.model.dict.size() == 1);
    const MultiChannelImage response =
        applyField(result.model, corpus.images[1], SearchConfig{30, false});
    // Every pixel is the average of the same annotation's overlapping values;
    // interior pixels all see the full window.
    const MultiChannelImage again =
        applyField(result.model, corpus.images[0], SearchConfig{30, false});
    const int n = opt.geometry.outputSize;
    double mean = 0.0;
    for (double v : result.model.dict.annotations[0].values) mean += v;
    mean /= static_cast<double>(n * n);
    for (int y = n; y < response.height - n; ++y)
        for (int x = n; x < response.width - n; ++x) {
            CHECK(response.at(0, y, x) == doctest::Approx(mean).epsilon(1e-9));
            CHECK(again.at(0, y, x) == doctest::Approx(mean).epsilon(1e-9));
        }
}

TEST_CASE("applyField: exact-mode pipeline equals a monolithic brute-force reference") {
    RandomStream rng(304);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 20);
    FieldTrainOptions opt = tinyOptions(5);
    opt.dictionarySize = 50;
    const FieldTrainResult trained = trainField(corpus, opt);
    const FieldModel& model = trained.model;

    const MultiChannelImage image = corpus.images[0];
    const MultiChannelImage got = applyField(model, image, SearchConfig{30, true});

    // Reference: per-patch forward, linear dictionary scan, brute averaging.
    MultiChannelImage centered = image;
    subtractChannelMeans(centered, model.channelMeans);
    std::vector<std::pair<std::array<int, 2>, AnnotationPatch>> outputs;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const Eigen::VectorXd code =
                forward(model.net, extractPatch(centered, y, x, model.geometry), Mode::Infer);
            const auto [idx, dist] = oracle::bruteNearest(model.dict.codes, code);
            outputs.push_back({{y, x}, model.dict.annotations[idx]});
        }
    }
    const MultiChannelImage want =
        oracle::bruteAccumulate(outputs, image.height, image.width, model.geometry.outputSize);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-6);
}

TEST_CASE("applyField: responses stay in [0,1]; channel mismatch raises") {
    RandomStream rng(305);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 18);
    const FieldTrainResult result = trainField(corpus, tinyOptions(6));
    const MultiChannelImage response =
        applyField(result.model, corpus.images[0], SearchConfig{10, false});
    for (double v : response.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(applyField(result.model, MultiChannelImage(3, 18, 18), SearchConfig{}),
                    ShapeError);
}

TEST_CASE("applyMultiScale: singleton scale equals applyField") {
    RandomStream rng(306);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 20);
    const FieldTrainResult result = trainField(corpus, tinyOptions(7));
    InferenceConfig config;
    config.scales = {1.0};
    const MultiChannelImage a = applyMultiScale(result.model, corpus.images[0], config);
    const MultiChannelImage b = applyField(result.model, corpus.images[0], config.search);
    CHECK(a.data == b.data);
}

TEST_CASE("applyMultiScale: equals the hand-composed average of single-scale runs") {
    RandomStream rng(307);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 24);
    const FieldTrainResult result = trainField(corpus, tinyOptions(8));
    const MultiChannelImage& image = corpus.images[0];
    InferenceConfig config;
    config.scales = {0.75, 1.0, 1.5};
    const MultiChannelImage got = applyMultiScale(result.model, image, config);

    MultiChannelImage sum(1, image.height, image.width);
    for (double s : config.scales) {
        MultiChannelImage r;
        if (s == 1.0) {
            r = applyField(result.model, image, config.search);
        } else {
            const int sh = static_cast<int>(std::lround(image.height * s));
            const int sw = static_cast<int>(std::lround(image.width * s));
            r = resizeBilinear(applyField(result.model, resizeBilinear(image, sh, sw), config.search),
                               image.height, image.width);
        }
        for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += r.data[i];
    }
    for (double& v : sum.data) v /= 3.0;
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - sum.data[i]) < 1e-6);
}

TEST_CASE("applyMultiScale: scale permutation invariance and undersized-scale skipping") {
    RandomStream rng(308);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 20);
    const FieldTrainResult result = trainField(corpus, tinyOptions(9));
    InferenceConfig a, b;
    a.scales = {0.75, 1.0, 1.5};
    b.scales = {1.5, 0.75, 1.0};
    const MultiChannelImage ra = applyMultiScale(result.model, corpus.images[0], a);
    const MultiChannelImage rb = applyMultiScale(result.model, corpus.images[0], b);
    CHECK(ra.data == rb.data);

    // 0.1 scale of a 20px image is below the minimum extent and is skipped.
    InferenceConfig c;
    c.scales = {0.1, 1.0};
    const MultiChannelImage rc = applyMultiScale(result.model, corpus.images[0], c);
    InferenceConfig d;
    d.scales = {1.0};
    CHECK(rc.data == applyMultiScale(result.model, corpus.images[0], d).data);
}

TEST_CASE("applyCommittee: committee of one equals multi-scale; identical members are idempotent") {
    RandomStream rng(309);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 20);
    const FieldTrainResult result = trainField(corpus, tinyOptions(10));
    InferenceConfig config;
    config.scales = {1.0};
    const MultiChannelImage single = applyMultiScale(result.model, corpus.images[0], config);
    const MultiChannelImage one = applyCommittee({result.model}, corpus.images[0], config);
    CHECK(one.data == single.data);
    const MultiChannelImage three =
        applyCommittee({result.model, result.model, result.model}, corpus.images[0], config);
    for (std::size_t i = 0; i < three.data.size(); ++i)
        CHECK(three.data[i] == doctest::Approx(single.data[i]).epsilon(1e-12));
    CHECK_THROWS_AS(applyCommittee({}, corpus.images[0], config), ArgumentError);
}

TEST_CASE("trainBaseline: patch mode resizes the final layer to N^2") {
    RandomStream rng(310);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 3, 20);
    FieldTrainOptions opt = tinyOptions(11);
    const BaselineTrainResult patch = trainBaseline(corpus, BaselineMode::Patch, opt);
    CHECK(patch.model.net.outputDim() == 16);  // N = 4
    const BaselineTrainResult central = trainBaseline(corpus, BaselineMode::Central, opt);
    CHECK(central.model.net.outputDim() == 1);

    FieldTrainOptions big = opt;
    big.geometry = {34, 16};
    big.stack = {LayerSpec::convolution(5, 2), LayerSpec::relu(), LayerSpec::maxPool(2),
                 LayerSpec::fullyConnected(8)};
    big.sampleCount = 32;
    big.train.epochs = 1;
    RandomStream rng2(311);
    const AnnotatedImageSet bigCorpus = syntheticEdgeCorpus(rng2, 2, 40);
    const BaselineTrainResult bigPatch = trainBaseline(bigCorpus, BaselineMode::Patch, big);
    CHECK(bigPatch.model.net.outputDim() == 256);
}

TEST_CASE("trainBaseline: central mode on constant labels gives a constant response") {
    RandomStream rng(312);
    AnnotatedImageSet corpus;
    for (int i = 0; i < 2; ++i) {
        corpus.images.push_back(oracle::randomImage(rng, 1, 20, 20));
        corpus.annotations.push_back(MultiChannelImage(1, 20, 20, 1.0));
    }
    FieldTrainOptions opt = tinyOptions(12);
    opt.train.epochs = 60;
    opt.train.learningRate = 0.05;
    opt.sampleCount = 400;
    const BaselineTrainResult result = trainBaseline(corpus, BaselineMode::Central, opt);
    const MultiChannelImage response = applyBaseline(result.model, corpus.images[0]);
    for (double v : response.data) CHECK(v == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("applyBaseline: patch-mode inference equals the overlap-average oracle") {
    RandomStream rng(313);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 18);
    FieldTrainOptions opt = tinyOptions(13);
    opt.train.epochs = 2;
    const BaselineTrainResult trained = trainBaseline(corpus, BaselineMode::Patch, opt);
    const BaselineModel& model = trained.model;
    const MultiChannelImage& image = corpus.images[0];
    const MultiChannelImage got = applyBaseline(model, image);

    MultiChannelImage centered = image;
    subtractChannelMeans(centered, model.channelMeans);
    const int n = model.geometry.outputSize;
    std::vector<std::pair<std::array<int, 2>, AnnotationPatch>> outputs;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const Eigen::VectorXd out =
                forward(model.net, extractPatch(centered, y, x, model.geometry), Mode::Infer);
            AnnotationPatch p(n);
            for (int j = 0; j < n * n; ++j) p.values[static_cast<std::size_t>(j)] = std::clamp(out(j), 0.0, 1.0);
            outputs.push_back({{y, x}, p});
        }
    }
    const MultiChannelImage want = oracle::bruteAccumulate(outputs, image.height, image.width, n);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-6);
}

TEST_CASE("model bundles: save/load round trip preserves probe behavior") {
    RandomStream rng(314);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 20);
    const FieldTrainResult result = trainField(corpus, tinyOptions(14));
    const fs::path dir = fs::temp_directory_path() / "n4_test_bundle";
    fs::remove_all(dir);
    saveFieldModel(dir, result.model);
    const FieldModel back = loadFieldModel(dir);
    CHECK(back.channelMeans == result.model.channelMeans);
    CHECK(back.geometry.inputSize == result.model.geometry.inputSize);

    // Probe: the loaded model behaves identically across a save/load cycle.
    const fs::path dir2 = fs::temp_directory_path() / "n4_test_bundle2";
    fs::remove_all(dir2);
    saveFieldModel(dir2, back);
    const FieldModel again = loadFieldModel(dir2);
    const MultiChannelImage ra = applyField(back, corpus.images[0], SearchConfig{10, false});
    const MultiChannelImage rb = applyField(again, corpus.images[0], SearchConfig{10, false});
    CHECK(ra.data == rb.data);

    const ModelBundle bundle = loadBundle(dir);
    CHECK(bundle.field.has_value());
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("baseline bundles round trip") {
    RandomStream rng(315);
    const AnnotatedImageSet corpus = syntheticEdgeCorpus(rng, 2, 18);
    FieldTrainOptions opt = tinyOptions(15);
    opt.train.epochs = 1;
    const BaselineTrainResult result = trainBaseline(corpus, BaselineMode::Central, opt);
    const fs::path dir = fs::temp_directory_path() / "n4_test_baseline_bundle";
    fs::remove_all(dir);
    saveBaselineModel(dir, result.model);
    const BaselineModel back = loadBaselineModel(dir);
    CHECK(back.mode == BaselineMode::Central);
    const ModelBundle bundle = loadBundle(dir);
    CHECK(bundle.baseline.has_value());
    const MultiChannelImage ra = applyBaseline(result.model, corpus.images[0]);
    const MultiChannelImage rb = applyBaseline(back, corpus.images[0]);
    for (std::size_t i = 0; i < ra.data.size(); ++i)
        CHECK(rb.data[i] == doctest::Approx(ra.data[i]).epsilon(1e-5));
    fs::remove_all(dir);
}

TEST_CASE("resizeBilinear: identity at the same size; constant images stay constant") {
    RandomStream rng(316);
    const MultiChannelImage img = oracle::randomImage(rng, 2, 12, 15);
    const MultiChannelImage same = resizeBilinear(img, 12, 15);
    CHECK(same.data == img.data);
    const MultiChannelImage constant(1, 10, 10, 0.42);
    const MultiChannelImage scaled = resizeBilinear(constant, 23, 7);
    for (double v : scaled.data) CHECK(v == doctest::Approx(0.42));
}
