#include "n4/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "n4/parallel.hpp"

namespace n4 {

std::vector<double> uniformThresholds(int count) {
    if (count < 1) throw ArgumentError("uniformThresholds: count must be >= 1");
    std::vector<double> t(static_cast<std::size_t>(count));
    for (int i = 1; i <= count; ++i) t[static_cast<std::size_t>(i - 1)] = i / (count + 1.0);
    return t;
}

void MatchConfig::validate() const {
    if (tolerance <= 0.0) throw ArgumentError("MatchConfig: tolerance must be positive");
    if (thresholds.empty()) throw ArgumentError("MatchConfig: no thresholds");
    double prev = 0.0;
    for (double t : thresholds) {
        if (t <= prev || t >= 1.0)
            throw ArgumentError("MatchConfig: thresholds must be strictly increasing in (0, 1)");
        prev = t;
    }
}

namespace {

int foldIndex(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

void gaussianSmooth(const std::vector<double>& in, std::vector<double>& out, int h, int w) {
    // sigma = 1, radius 3, separable.
    constexpr int radius = 3;
    double kernel[2 * radius + 1];
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i);
        norm += kernel[i + radius];
    }
    for (double& k : kernel) k /= norm;

    std::vector<double> tmp(in.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kernel[i + radius] * in[static_cast<std::size_t>(y) * w + foldIndex(x + i, w)];
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
    out.resize(in.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += kernel[i + radius] * tmp[static_cast<std::size_t>(foldIndex(y + i, h)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
}

}  // namespace

MultiChannelImage nonMaxSuppress(const MultiChannelImage& response) {
    if (response.channels != 1) throw ShapeError("nonMaxSuppress: response must be single-channel");
    const int h = response.height, w = response.width;

    std::vector<double> smooth;
    gaussianSmooth(response.data, smooth, h, w);

    // Sobel gradients of the smoothed response.
    std::vector<double> gx(smooth.size()), gy(smooth.size());
    auto s = [&](int y, int x) {
        return smooth[static_cast<std::size_t>(foldIndex(y, h)) * w + foldIndex(x, w)];
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            gx[static_cast<std::size_t>(y) * w + x] =
                (s(y - 1, x + 1) + 2 * s(y, x + 1) + s(y + 1, x + 1)) -
                (s(y - 1, x - 1) + 2 * s(y, x - 1) + s(y + 1, x - 1));
            gy[static_cast<std::size_t>(y) * w + x] =
                (s(y + 1, x - 1) + 2 * s(y + 1, x) + s(y + 1, x + 1)) -
                (s(y - 1, x - 1) + 2 * s(y - 1, x) + s(y - 1, x + 1));
        }
    }

    // Local structure tensor so the normal direction is defined on the ridge
    // itself, where the raw gradient vanishes.
    std::vector<double> jxx(smooth.size()), jxy(smooth.size()), jyy(smooth.size());
    for (std::size_t i = 0; i < smooth.size(); ++i) {
        jxx[i] = gx[i] * gx[i];
        jxy[i] = gx[i] * gy[i];
        jyy[i] = gy[i] * gy[i];
    }
    std::vector<double> sxx, sxy, syy;
    gaussianSmooth(jxx, sxx, h, w);
    gaussianSmooth(jxy, sxy, h, w);
    gaussianSmooth(jyy, syy, h, w);

    MultiChannelImage out(1, h, w);
    auto value = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return response.at(0, y, x);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double v = response.data[i];
            if (v <= 0.0) continue;
            // Dominant gradient direction (edge normal) of the tensor.
            double theta = 0.5 * std::atan2(2.0 * sxy[i], sxx[i] - syy[i]);
            if (theta < 0.0) theta += M_PI;
            int dy = 0, dx = 1;
            if (theta < M_PI / 8.0 || theta >= 7.0 * M_PI / 8.0) {
                dy = 0;
                dx = 1;
            } else if (theta < 3.0 * M_PI / 8.0) {
                dy = 1;
                dx = 1;
            } else if (theta < 5.0 * M_PI / 8.0) {
                dy = 1;
                dx = 0;
            } else {
                dy = 1;
                dx = -1;
            }
            if (v > value(y + dy, x + dx) && v > value(y - dy, x - dx)) out.data[i] = v;
        }
    }
    return out;
}

namespace {

std::vector<int> boundaryPixels(const MultiChannelImage& map) {
    std::vector<int> pixels;
    for (int i = 0; i < map.height * map.width; ++i) {
        if (map.data[static_cast<std::size_t>(i)] >= 0.5) pixels.push_back(i);
    }
    return pixels;
}

struct CandidateEdge {
    double d2;
    int lowFlat;   // role-symmetric tie keys
    int highFlat;
    int predFlat;
    int gtFlat;
    std::int32_t predIdx;
    std::int32_t gtIdx;
};

/// Greedy nearest-first one-to-one matching; fills matchedPred flags (by
/// pred list index) and returns the match count.
std::size_t greedyMatch(const std::vector<int>& pred, const std::vector<int>& gt, int h, int w,
                        double radius, std::vector<std::uint8_t>* matchedPredFlags) {
    if (pred.empty() || gt.empty()) {
        if (matchedPredFlags) matchedPredFlags->assign(pred.size(), 0);
        return 0;
    }
    const double r2 = radius * radius;
    const int cell = std::max(1, static_cast<int>(std::ceil(radius)));
    const int gw = (w + cell - 1) / cell;
    const int gh = (h + cell - 1) / cell;
    std::vector<std::vector<std::int32_t>> grid(static_cast<std::size_t>(gw) * gh);
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
        const int y = gt[gi] / w, x = gt[gi] % w;
        grid[static_cast<std::size_t>(y / cell) * gw + x / cell].push_back(
            static_cast<std::int32_t>(gi));
    }

    std::vector<CandidateEdge> edges;
    for (std::size_t pi = 0; pi < pred.size(); ++pi) {
        const int py = pred[pi] / w, px = pred[pi] % w;
        const int cy = py / cell, cx = px / cell;
        for (int ny = std::max(0, cy - 1); ny <= std::min(gh - 1, cy + 1); ++ny) {
            for (int nx = std::max(0, cx - 1); nx <= std::min(gw - 1, cx + 1); ++nx) {
                for (std::int32_t gi : grid[static_cast<std::size_t>(ny) * gw + nx]) {
                    const int gy = gt[static_cast<std::size_t>(gi)] / w;
                    const int gxx = gt[static_cast<std::size_t>(gi)] % w;
                    const double d2 = static_cast<double>(py - gy) * (py - gy) +
                                      static_cast<double>(px - gxx) * (px - gxx);
                    if (d2 <= r2) {
                        edges.push_back({d2, std::min(pred[pi], gt[static_cast<std::size_t>(gi)]),
                                         std::max(pred[pi], gt[static_cast<std::size_t>(gi)]),
                                         pred[pi], gt[static_cast<std::size_t>(gi)],
                                         static_cast<std::int32_t>(pi), gi});
                    }
                }
            }
        }
    }
    std::sort(edges.begin(), edges.end(), [](const CandidateEdge& a, const CandidateEdge& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        if (a.lowFlat != b.lowFlat) return a.lowFlat < b.lowFlat;
        if (a.highFlat != b.highFlat) return a.highFlat < b.highFlat;
        if (a.predFlat != b.predFlat) return a.predFlat < b.predFlat;
        return a.gtFlat < b.gtFlat;
    });

    std::vector<std::uint8_t> usedPred(pred.size(), 0), usedGt(gt.size(), 0);
    std::size_t matches = 0;
    for (const CandidateEdge& e : edges) {
        if (usedPred[static_cast<std::size_t>(e.predIdx)] ||
            usedGt[static_cast<std::size_t>(e.gtIdx)])
            continue;
        usedPred[static_cast<std::size_t>(e.predIdx)] = 1;
        usedGt[static_cast<std::size_t>(e.gtIdx)] = 1;
        ++matches;
    }
    if (matchedPredFlags) *matchedPredFlags = std::move(usedPred);
    return matches;
}

double matchRadius(int h, int w, double tolerance) {
    return tolerance * std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
}

}  // namespace

MatchCounts matchBoundaries(const MultiChannelImage& pred, const MultiChannelImage& gt,
                            double tolerance) {
    if (pred.channels != 1 || gt.channels != 1)
        throw ShapeError("matchBoundaries: maps must be single-channel");
    if (pred.height != gt.height || pred.width != gt.width)
        throw ShapeError("matchBoundaries: size mismatch");
    if (tolerance <= 0.0) throw ArgumentError("matchBoundaries: tolerance must be positive");

    const std::vector<int> p = boundaryPixels(pred);
    const std::vector<int> g = boundaryPixels(gt);
    const std::size_t matches =
        greedyMatch(p, g, pred.height, pred.width, matchRadius(pred.height, pred.width, tolerance),
                    nullptr);
    return {matches, matches, p.size(), g.size()};
}

namespace {

struct ImageCounts {
    // per threshold
    std::vector<std::size_t> matchedPred, totalPred, matchedGt, totalGt;
};

double safeDiv(std::size_t num, std::size_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

double fMeasure(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

ScoreReport scoreDataset(const std::vector<MultiChannelImage>& predictions,
                         const std::vector<std::vector<MultiChannelImage>>& groundTruths,
                         const MatchConfig& config) {
    config.validate();
    if (predictions.empty()) throw ArgumentError("scoreDataset: empty dataset");
    if (predictions.size() != groundTruths.size())
        throw ShapeError("scoreDataset: prediction/ground-truth count mismatch");
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (groundTruths[i].empty())
            throw ArgumentError("scoreDataset: image without ground-truth annotation");
    }

    const std::size_t nt = config.thresholds.size();
    std::vector<ImageCounts> perImage(predictions.size());

    parallelFor(predictions.size(), [&](std::size_t i) {
        const MultiChannelImage& predMap = predictions[i];
        ImageCounts& counts = perImage[i];
        counts.matchedPred.assign(nt, 0);
        counts.totalPred.assign(nt, 0);
        counts.matchedGt.assign(nt, 0);
        counts.totalGt.assign(nt, 0);

        const MultiChannelImage thinned = nonMaxSuppress(predMap);
        const double radius = matchRadius(predMap.height, predMap.width, config.tolerance);

        std::vector<std::vector<int>> gtPixels;
        for (const MultiChannelImage& gt : groundTruths[i]) {
            if (gt.height != predMap.height || gt.width != predMap.width || gt.channels != 1)
                throw ShapeError("scoreDataset: ground-truth size mismatch");
            gtPixels.push_back(boundaryPixels(gt));
        }

        for (std::size_t t = 0; t < nt; ++t) {
            std::vector<int> predPixels;
            for (int p = 0; p < predMap.height * predMap.width; ++p) {
                if (thinned.data[static_cast<std::size_t>(p)] >= config.thresholds[t])
                    predPixels.push_back(p);
            }
            counts.totalPred[t] = predPixels.size();
            std::vector<std::uint8_t> unionMatched(predPixels.size(), 0);
            for (const auto& gset : gtPixels) {
                std::vector<std::uint8_t> matchedFlags;
                const std::size_t m = greedyMatch(predPixels, gset, predMap.height, predMap.width,
                                                  radius, &matchedFlags);
                counts.matchedGt[t] += m;
                counts.totalGt[t] += gset.size();
                for (std::size_t j = 0; j < matchedFlags.size(); ++j)
                    unionMatched[j] |= matchedFlags[j];
            }
            for (std::uint8_t f : unionMatched) counts.matchedPred[t] += f;
        }
    });

    ScoreReport report;
    report.curve.resize(nt);
    double bestF = -1.0;
    for (std::size_t t = 0; t < nt; ++t) {
        std::size_t mp = 0, tp = 0, mg = 0, tg = 0;
        for (const ImageCounts& c : perImage) {
            mp += c.matchedPred[t];
            tp += c.totalPred[t];
            mg += c.matchedGt[t];
            tg += c.totalGt[t];
        }
        ThresholdScore& s = report.curve[t];
        s.threshold = config.thresholds[t];
        s.precision = safeDiv(mp, tp);
        s.recall = safeDiv(mg, tg);
        s.f = fMeasure(s.precision, s.recall);
        if (s.f > bestF) {
            bestF = s.f;
            report.ods = s.f;
            report.odsThreshold = s.threshold;
            report.odsPrecision = s.precision;
            report.odsRecall = s.recall;
        }
    }

    double oisSum = 0.0;
    for (const ImageCounts& c : perImage) {
        double best = 0.0;
        for (std::size_t t = 0; t < nt; ++t) {
            const double f = fMeasure(safeDiv(c.matchedPred[t], c.totalPred[t]),
                                      safeDiv(c.matchedGt[t], c.totalGt[t]));
            best = std::max(best, f);
        }
        oisSum += best;
    }
    report.ois = oisSum / static_cast<double>(perImage.size());

    std::vector<std::pair<double, double>> rp;
    rp.reserve(nt);
    for (const ThresholdScore& s : report.curve) rp.emplace_back(s.recall, s.precision);
    report.ap = averagePrecision(rp);
    return report;
}

double averagePrecision(const std::vector<std::pair<double, double>>& recallPrecision) {
    if (recallPrecision.empty()) return 0.0;
    std::vector<std::pair<double, double>> pts = recallPrecision;
    std::sort(pts.begin(), pts.end());
    // Interpolated precision: envelope from the high-recall side.
    for (std::size_t i = pts.size() - 1; i-- > 0;)
        pts[i].second = std::max(pts[i].second, pts[i + 1].second);
    // Merge duplicate recalls (envelope already maximal at each).
    std::vector<std::pair<double, double>> uniq;
    for (const auto& p : pts) {
        if (!uniq.empty() && uniq.back().first == p.first)
            uniq.back().second = std::max(uniq.back().second, p.second);
        else
            uniq.push_back(p);
    }
    double ap = uniq.front().first * uniq.front().second;  // constant extension to recall 0
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) {
        ap += (uniq[i + 1].first - uniq[i].first) * 0.5 * (uniq[i].second + uniq[i + 1].second);
    }
    return ap;
}

PixelCounts pixelConfusion(const MultiChannelImage& response, const MultiChannelImage& gt,
                           const MultiChannelImage* roi, double threshold) {
    if (response.channels != 1 || gt.channels != 1)
        throw ShapeError("pixelConfusion: maps must be single-channel");
    if (response.height != gt.height || response.width != gt.width)
        throw ShapeError("pixelConfusion: size mismatch");
    if (roi && (roi->height != gt.height || roi->width != gt.width || roi->channels != 1))
        throw ShapeError("pixelConfusion: roi size mismatch");

    PixelCounts counts;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < response.data.size(); ++i) {
        if (roi && roi->data[i] < 0.5) continue;
        ++scored;
        const bool predicted = response.data[i] >= threshold;
        const bool positive = gt.data[i] >= 0.5;
        if (predicted && positive)
            ++counts.tp;
        else if (predicted)
            ++counts.fp;
        else if (positive)
            ++counts.fn;
    }
    if (scored == 0) throw ArgumentError("pixelConfusion: empty region of interest");
    return counts;
}

std::vector<PrPoint> pixelPrecisionRecall(const MultiChannelImage& response,
                                          const MultiChannelImage& gt,
                                          const MultiChannelImage* roi,
                                          const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw ArgumentError("pixelPrecisionRecall: no thresholds");
    std::vector<PrPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        const PixelCounts c = pixelConfusion(response, gt, roi, t);
        PrPoint p;
        p.threshold = t;
        p.precision = (c.tp + c.fp) == 0
                          ? 1.0
                          : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
        p.recall = (c.tp + c.fn) == 0 ? 1.0
                                      : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
        out.push_back(p);
    }
    return out;
}

void writeScoreReportCsv(const std::filesystem::path& path, const ScoreReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot create report file: " + path.string());
    out << "threshold,precision,recall,f\n";
    char line[160];
    for (const ThresholdScore& s : report.curve) {
        std::snprintf(line, sizeof(line), "%.6f,%.9g,%.9g,%.9g\n", s.threshold, s.precision,
                      s.recall, s.f);
        out << line;
    }
    std::snprintf(line, sizeof(line), "summary,ods=%.9g,ois=%.9g,ap=%.9g\n", report.ods, report.ois,
                  report.ap);
    out << line;
}

void writeScoreSummary(const std::filesystem::path& path, const ScoreReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot create summary file: " + path.string());
    char line[160];
    std::snprintf(line, sizeof(line),
                  "ods %.9g\nodsThreshold %.9g\nodsPrecision %.9g\nodsRecall %.9g\nois %.9g\nap "
                  "%.9g\n",
                  report.ods, report.odsThreshold, report.odsPrecision, report.odsRecall,
                  report.ois, report.ap);
    out << line;
}

}  // namespace n4
