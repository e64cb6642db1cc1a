#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "n4/image.hpp"

namespace n4 {

enum class DatasetLayout { Bsds, Flat };

struct DatasetEntry {
    std::string name;
    std::filesystem::path imagePath;
    std::vector<std::filesystem::path> annotationPaths;  // one per annotator
    std::filesystem::path roiPath;                       // empty when absent
};

/// Validated listing of a dataset directory. Ingestion parses every listed
/// file; any problem lands in `errors` and the CLI refuses to start a run on
/// a manifest with errors.
struct DatasetManifest {
    std::map<std::string, std::vector<DatasetEntry>> splits;
    int channels = 0;
    std::string sourceTag;
    std::vector<std::string> errors;

    bool valid() const { return errors.empty(); }
};

/// Scan a dataset directory.
///   bsds: images/{train,val,test}/<stem>.png with
///         groundTruth/<split>/<stem>.gt[K].png (one or more annotators).
///   flat: <stem>.png + <stem>.gt.png (+ optional <stem>.roi.png) in one
///         directory, single split "all".
DatasetManifest ingestDataset(const std::filesystem::path& root, DatasetLayout layout);

enum class SyntheticKind { Polygons, Vessels };

/// Deterministic synthetic corpora written as a flat-layout directory.
///   polygons: random filled convex polygons with distinct gray levels plus
///             additive Gaussian noise (sigma 0.05); ground truth is the
///             1-pixel-wide rasterized region boundary.
///   vessels:  smooth curved strokes of width 1-3 px on a textured
///             background inside a circular region of interest; ground truth
///             is the stroke mask.
DatasetManifest generateSynthetic(SyntheticKind kind, int count, int size, std::uint64_t seed,
                                  const std::filesystem::path& outDir, int minimumSize = 34);

/// A split loaded into memory; ground truth is binarized at 0.5.
struct LoadedSplit {
    std::vector<std::string> names;
    std::vector<MultiChannelImage> images;
    std::vector<std::vector<MultiChannelImage>> annotations;
    std::vector<MultiChannelImage> rois;  // empty image when a file is absent
};

LoadedSplit loadSplit(const DatasetManifest& manifest, const std::string& split);

/// Training view: first annotator of each image.
AnnotatedImageSet toTrainingSet(const LoadedSplit& split);

/// Region-boundary ground truth of a label raster: a pixel is marked when
/// its label differs from its east or south neighbor.
MultiChannelImage labelBoundaries(const std::vector<int>& labels, int height, int width);

}  // namespace n4
