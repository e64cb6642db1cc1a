#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "n4/dataset.hpp"
#include "n4/image_io.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace n4;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<unsigned char> readBytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Segment count of the non-boundary pixels (4-connected), used to check
/// that the polygon ground truth separates the gray-level regions.
int regionCount(const MultiChannelImage& image, const MultiChannelImage& gt) {
    const int h = image.height, w = image.width;
    std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
    int next = 0;
    for (int start = 0; start < h * w; ++start) {
        if (label[static_cast<std::size_t>(start)] != -1) continue;
        if (gt.data[static_cast<std::size_t>(start)] >= 0.5) {
            label[static_cast<std::size_t>(start)] = -2;
            continue;
        }
        std::vector<int> stack{start};
        label[static_cast<std::size_t>(start)] = next;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / w, x = p % w;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int d = 0; d < 4; ++d) {
                if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
                const int q = ny[d] * w + nx[d];
                if (label[static_cast<std::size_t>(q)] != -1) continue;
                if (gt.data[static_cast<std::size_t>(q)] >= 0.5) continue;
                label[static_cast<std::size_t>(q)] = next;
                stack.push_back(q);
            }
        }
        ++next;
    }
    return next;
}

}  // namespace

TEST_CASE("labelBoundaries: east/south convention is one pixel wide") {
    // Two half-planes split at column 3.
    std::vector<int> labels(6 * 6, 0);
    for (int y = 0; y < 6; ++y)
        for (int x = 3; x < 6; ++x) labels[static_cast<std::size_t>(y) * 6 + x] = 1;
    const MultiChannelImage gt = labelBoundaries(labels, 6, 6);
    for (int y = 0; y < 6; ++y) {
        CHECK(gt.at(0, y, 2) == 1.0);
        CHECK(gt.at(0, y, 3) == 0.0);
        CHECK(gt.at(0, y, 1) == 0.0);
    }
}

TEST_CASE("generateSynthetic: fixed seed gives a byte-identical corpus") {
    TempDir a("n4_synth_a"), b("n4_synth_b");
    generateSynthetic(SyntheticKind::Polygons, 3, 48, 123, a.path);
    generateSynthetic(SyntheticKind::Polygons, 3, 48, 123, b.path);
    for (const auto& entry : fs::directory_iterator(a.path)) {
        const fs::path other = b.path / entry.path().filename();
        REQUIRE(fs::exists(other));
        CHECK(readBytes(entry.path()) == readBytes(other));
    }
    TempDir c("n4_synth_c");
    generateSynthetic(SyntheticKind::Polygons, 1, 48, 124, c.path);
    CHECK(readBytes(a.path / "img_0000.png") != readBytes(c.path / "img_0000.png"));
}

TEST_CASE("generateSynthetic: polygon ground truth bounds the gray regions") {
    TempDir dir("n4_synth_poly");
    const DatasetManifest manifest = generateSynthetic(SyntheticKind::Polygons, 4, 64, 9, dir.path);
    REQUIRE(manifest.valid());
    const LoadedSplit split = loadSplit(manifest, "all");
    for (std::size_t i = 0; i < split.images.size(); ++i) {
        const MultiChannelImage& gt = split.annotations[i][0];
        // Several separated regions and a plausible boundary density.
        CHECK(regionCount(split.images[i], gt) >= 2);
        double density = 0.0;
        for (double v : gt.data) density += v;
        density /= static_cast<double>(gt.data.size());
        CHECK(density > 0.005);
        CHECK(density < 0.25);
        // Boundaries are thin: no 2x2 block is fully set.
        for (int y = 0; y + 1 < gt.height; ++y) {
            for (int x = 0; x + 1 < gt.width; ++x) {
                const double block = gt.at(0, y, x) + gt.at(0, y, x + 1) + gt.at(0, y + 1, x) +
                                     gt.at(0, y + 1, x + 1);
                CHECK(block <= 3.0);
            }
        }
    }
}

TEST_CASE("generateSynthetic: vessel mask density stays in the configured band") {
    TempDir dir("n4_synth_vessel");
    const DatasetManifest manifest = generateSynthetic(SyntheticKind::Vessels, 4, 96, 21, dir.path);
    REQUIRE(manifest.valid());
    const LoadedSplit split = loadSplit(manifest, "all");
    for (std::size_t i = 0; i < split.images.size(); ++i) {
        REQUIRE(!split.rois[i].empty());
        double roiArea = 0.0, maskArea = 0.0;
        for (std::size_t j = 0; j < split.rois[i].data.size(); ++j) {
            roiArea += split.rois[i].data[j];
            maskArea += split.annotations[i][0].data[j];
        }
        const double density = maskArea / roiArea;
        CHECK(density >= 0.01);
        CHECK(density <= 0.05);
    }
}

TEST_CASE("generateSynthetic: undersized images are rejected") {
    TempDir dir("n4_synth_small");
    CHECK_THROWS_AS(generateSynthetic(SyntheticKind::Polygons, 1, 20, 1, dir.path, 34),
                    ArgumentError);
}

TEST_CASE("ingestDataset: empty directory yields a validation failure") {
    TempDir dir("n4_ingest_empty");
    const DatasetManifest manifest = ingestDataset(dir.path, DatasetLayout::Flat);
    CHECK(!manifest.valid());
    CHECK(manifest.splits["all"].empty());
}

TEST_CASE("ingestDataset: flat directory with valid pairs") {
    TempDir dir("n4_ingest_flat");
    RandomStream rng(200);
    for (int i = 0; i < 3; ++i) {
        const std::string stem = "pic" + std::to_string(i);
        writePng(dir.path / (stem + ".png"), oracle::randomImage(rng, 1, 40, 40));
        MultiChannelImage gt(1, 40, 40);
        gt.at(0, 5, 5) = 1.0;
        writePng(dir.path / (stem + ".gt.png"), gt);
    }
    const DatasetManifest manifest = ingestDataset(dir.path, DatasetLayout::Flat);
    REQUIRE(manifest.valid());
    CHECK(manifest.splits.at("all").size() == 3);
    CHECK(manifest.channels == 1);
}

TEST_CASE("ingestDataset: missing ground truth is reported") {
    TempDir dir("n4_ingest_missing");
    RandomStream rng(201);
    writePng(dir.path / "ok.png", oracle::randomImage(rng, 1, 40, 40));
    writePng(dir.path / "ok.gt.png", MultiChannelImage(1, 40, 40));
    writePng(dir.path / "orphan.png", oracle::randomImage(rng, 1, 40, 40));
    const DatasetManifest manifest = ingestDataset(dir.path, DatasetLayout::Flat);
    CHECK(!manifest.valid());
    bool named = false;
    for (const std::string& err : manifest.errors) named = named || err.find("orphan") != std::string::npos;
    CHECK(named);
}

TEST_CASE("ingestDataset: mixed channel counts name the offending file") {
    TempDir dir("n4_ingest_mixed");
    RandomStream rng(202);
    writePng(dir.path / "a.png", oracle::randomImage(rng, 1, 40, 40));
    writePng(dir.path / "a.gt.png", MultiChannelImage(1, 40, 40));
    writePng(dir.path / "b.png", oracle::randomImage(rng, 3, 40, 40));
    writePng(dir.path / "b.gt.png", MultiChannelImage(1, 40, 40));
    const DatasetManifest manifest = ingestDataset(dir.path, DatasetLayout::Flat);
    CHECK(!manifest.valid());
    bool named = false;
    for (const std::string& err : manifest.errors) named = named || err.find("b.png") != std::string::npos;
    CHECK(named);
}

TEST_CASE("ingestDataset: bsds layout with multiple annotators") {
    TempDir dir("n4_ingest_bsds");
    RandomStream rng(203);
    fs::create_directories(dir.path / "images" / "train");
    fs::create_directories(dir.path / "groundTruth" / "train");
    for (int i = 0; i < 2; ++i) {
        const std::string stem = "im" + std::to_string(i);
        writePng(dir.path / "images" / "train" / (stem + ".png"), oracle::randomImage(rng, 3, 40, 40));
        writePng(dir.path / "groundTruth" / "train" / (stem + ".gt0.png"), MultiChannelImage(1, 40, 40));
        writePng(dir.path / "groundTruth" / "train" / (stem + ".gt1.png"), MultiChannelImage(1, 40, 40));
    }
    const DatasetManifest manifest = ingestDataset(dir.path, DatasetLayout::Bsds);
    REQUIRE(manifest.valid());
    REQUIRE(manifest.splits.at("train").size() == 2);
    CHECK(manifest.splits.at("train")[0].annotationPaths.size() == 2);
    const LoadedSplit split = loadSplit(manifest, "train");
    CHECK(split.annotations[0].size() == 2);
}

TEST_CASE("loadSplit: ground truth is binarized") {
    TempDir dir("n4_ingest_binarize");
    RandomStream rng(204);
    writePng(dir.path / "x.png", oracle::randomImage(rng, 1, 40, 40));
    MultiChannelImage soft(1, 40, 40);
    soft.at(0, 1, 1) = 0.8;
    soft.at(0, 2, 2) = 0.3;
    writePng(dir.path / "x.gt.png", soft);
    const DatasetManifest manifest = ingestDataset(dir.path, DatasetLayout::Flat);
    REQUIRE(manifest.valid());
    const LoadedSplit split = loadSplit(manifest, "all");
    CHECK(split.annotations[0][0].at(0, 1, 1) == 1.0);
    CHECK(split.annotations[0][0].at(0, 2, 2) == 0.0);
}
