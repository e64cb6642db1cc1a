#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "n4/image.hpp"

namespace n4 {

/// Uniform binarization levels i/(count+1), i = 1..count.
std::vector<double> uniformThresholds(int count);

struct MatchConfig {
    double tolerance = 0.75e-2;  // fraction of the image diagonal
    std::vector<double> thresholds = uniformThresholds(99);

    void validate() const;
};

/// Thin a soft boundary map: a pixel survives iff its response is a strict
/// maximum against its two neighbors along the discretized normal of the
/// local edge orientation (orientation from Sobel gradients of a
/// sigma = 1 Gaussian smoothing of the response). Never increases a value.
MultiChannelImage nonMaxSuppress(const MultiChannelImage& response);

struct MatchCounts {
    std::size_t matchedPred = 0;
    std::size_t matchedGt = 0;
    std::size_t totalPred = 0;
    std::size_t totalGt = 0;
};

/// Greedy one-to-one matching between binary boundary maps: candidate pairs
/// within radius tolerance * diagonal are consumed nearest-first (ties by a
/// role-symmetric pixel key). The original benchmark solves a min-cost
/// assignment instead; the greedy matcher is the documented stand-in and is
/// monitored against an assignment oracle in the tests.
MatchCounts matchBoundaries(const MultiChannelImage& pred, const MultiChannelImage& gt,
                            double tolerance);

struct ThresholdScore {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

struct ScoreReport {
    std::vector<ThresholdScore> curve;  // dataset-pooled, one row per threshold
    double odsThreshold = 0.0;
    double odsPrecision = 0.0;
    double odsRecall = 0.0;
    double ods = 0.0;  // best fixed-threshold F
    double ois = 0.0;  // mean of per-image best F
    double ap = 0.0;   // area under the interpolated PR curve
};

/// Boundary-detection scores over a dataset. `predictions` are pre-NMS
/// response maps in [0, 1]; thinning happens internally before
/// thresholding. Multiple annotators per image are matched independently;
/// recall pools matched/total ground-truth counts over annotators while
/// precision counts prediction pixels matched to at least one annotator.
ScoreReport scoreDataset(const std::vector<MultiChannelImage>& predictions,
                         const std::vector<std::vector<MultiChannelImage>>& groundTruths,
                         const MatchConfig& config);

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct PixelCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// Confusion counts of response >= threshold against a binary ground truth,
/// restricted to the roi when given. Throws on an empty region of interest.
PixelCounts pixelConfusion(const MultiChannelImage& response, const MultiChannelImage& gt,
                           const MultiChannelImage* roi, double threshold);

/// Plain pixelwise precision/recall (segmentation protocol, no tolerance
/// matching). `roi` restricts the scored pixels when present.
std::vector<PrPoint> pixelPrecisionRecall(const MultiChannelImage& response,
                                          const MultiChannelImage& gt,
                                          const MultiChannelImage* roi,
                                          const std::vector<double>& thresholds);

/// Trapezoidal area under the interpolated precision envelope of a PR curve.
double averagePrecision(const std::vector<std::pair<double, double>>& recallPrecision);

/// CSV report: one "threshold,precision,recall,f" row per threshold plus a
/// summary row; the key-value summary carries ODS/OIS/AP for machines.
void writeScoreReportCsv(const std::filesystem::path& path, const ScoreReport& report);
void writeScoreSummary(const std::filesystem::path& path, const ScoreReport& report);

}  // namespace n4
