#include "n4/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "n4/image_io.hpp"
#include "n4/random.hpp"

namespace fs = std::filesystem;

namespace n4 {

namespace {

bool endsWith(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Checks that a PNG parses; records its channel count.
bool probeImage(const fs::path& path, int& channels, std::vector<std::string>& errors) {
    try {
        const MultiChannelImage img = readPng(path);
        channels = img.channels;
        return true;
    } catch (const std::exception& e) {
        errors.push_back(std::string("unreadable image ") + path.string() + ": " + e.what());
        return false;
    }
}

void scanFlatDirectory(const fs::path& dir, const std::string& split, DatasetManifest& manifest) {
    if (!fs::exists(dir) || !fs::is_directory(dir)) {
        manifest.errors.push_back("missing directory: " + dir.string());
        return;
    }
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (!endsWith(name, ".png")) continue;
        const std::string base = name.substr(0, name.size() - 4);
        if (endsWith(base, ".roi") || base.find(".gt") != std::string::npos) continue;
        stems.push_back(base);
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) {
        manifest.errors.push_back("no images found in " + dir.string());
        return;
    }

    auto& entries = manifest.splits[split];
    for (const std::string& stem : stems) {
        DatasetEntry entry;
        entry.name = stem;
        entry.imagePath = dir / (stem + ".png");

        if (fs::exists(dir / (stem + ".gt.png"))) entry.annotationPaths.push_back(dir / (stem + ".gt.png"));
        for (int k = 0; k < 100; ++k) {
            const fs::path p = dir / (stem + ".gt" + std::to_string(k) + ".png");
            if (fs::exists(p))
                entry.annotationPaths.push_back(p);
            else
                break;
        }
        if (entry.annotationPaths.empty()) {
            manifest.errors.push_back("missing ground truth for " + entry.imagePath.string());
            continue;
        }
        const fs::path roi = dir / (stem + ".roi.png");
        if (fs::exists(roi)) entry.roiPath = roi;

        int channels = 0;
        if (!probeImage(entry.imagePath, channels, manifest.errors)) continue;
        if (manifest.channels == 0) manifest.channels = channels;
        if (channels != manifest.channels) {
            manifest.errors.push_back("channel count mismatch (" + std::to_string(channels) +
                                      " vs " + std::to_string(manifest.channels) + ") in " +
                                      entry.imagePath.string());
            continue;
        }
        int annChannels = 0;
        bool ok = true;
        for (const fs::path& a : entry.annotationPaths) {
            if (!probeImage(a, annChannels, manifest.errors)) ok = false;
            else if (annChannels != 1) {
                manifest.errors.push_back("annotation must be single-channel: " + a.string());
                ok = false;
            }
        }
        if (!entry.roiPath.empty()) {
            int roiChannels = 0;
            if (!probeImage(entry.roiPath, roiChannels, manifest.errors) || roiChannels != 1) {
                manifest.errors.push_back("roi must be a single-channel image: " +
                                          entry.roiPath.string());
                ok = false;
            }
        }
        if (ok) entries.push_back(std::move(entry));
    }
}

void scanBsdsSplit(const fs::path& root, const std::string& split, DatasetManifest& manifest) {
    const fs::path imgDir = root / "images" / split;
    const fs::path gtDir = root / "groundTruth" / split;
    if (!fs::exists(imgDir)) return;  // split absent is fine; at least one must exist overall

    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(imgDir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (endsWith(name, ".png")) stems.push_back(name.substr(0, name.size() - 4));
    }
    std::sort(stems.begin(), stems.end());

    auto& entries = manifest.splits[split];
    for (const std::string& stem : stems) {
        DatasetEntry entry;
        entry.name = stem;
        entry.imagePath = imgDir / (stem + ".png");
        if (fs::exists(gtDir / (stem + ".gt.png")))
            entry.annotationPaths.push_back(gtDir / (stem + ".gt.png"));
        for (int k = 0; k < 100; ++k) {
            const fs::path p = gtDir / (stem + ".gt" + std::to_string(k) + ".png");
            if (fs::exists(p))
                entry.annotationPaths.push_back(p);
            else
                break;
        }
        if (entry.annotationPaths.empty()) {
            manifest.errors.push_back("missing ground truth for " + entry.imagePath.string());
            continue;
        }
        int channels = 0;
        if (!probeImage(entry.imagePath, channels, manifest.errors)) continue;
        if (manifest.channels == 0) manifest.channels = channels;
        if (channels != manifest.channels) {
            manifest.errors.push_back("channel count mismatch (" + std::to_string(channels) +
                                      " vs " + std::to_string(manifest.channels) + ") in " +
                                      entry.imagePath.string());
            continue;
        }
        bool ok = true;
        for (const fs::path& a : entry.annotationPaths) {
            int annChannels = 0;
            if (!probeImage(a, annChannels, manifest.errors)) ok = false;
            else if (annChannels != 1) {
                manifest.errors.push_back("annotation must be single-channel: " + a.string());
                ok = false;
            }
        }
        if (ok) entries.push_back(std::move(entry));
    }
}

}  // namespace

DatasetManifest ingestDataset(const fs::path& root, DatasetLayout layout) {
    DatasetManifest manifest;
    if (!fs::exists(root) || !fs::is_directory(root)) {
        manifest.errors.push_back("dataset root does not exist: " + root.string());
        return manifest;
    }
    if (layout == DatasetLayout::Flat) {
        manifest.sourceTag = "flat:" + root.string();
        scanFlatDirectory(root, "all", manifest);
    } else {
        manifest.sourceTag = "bsds:" + root.string();
        for (const char* split : {"train", "val", "test"}) scanBsdsSplit(root, split, manifest);
        bool any = false;
        for (const auto& [name, entries] : manifest.splits) any = any || !entries.empty();
        if (!any) manifest.errors.push_back("no splits found under " + root.string());
    }
    return manifest;
}

LoadedSplit loadSplit(const DatasetManifest& manifest, const std::string& split) {
    if (!manifest.valid()) throw ArgumentError("loadSplit: manifest has validation errors");
    const auto it = manifest.splits.find(split);
    if (it == manifest.splits.end() || it->second.empty())
        throw ArgumentError("loadSplit: split not present: " + split);

    LoadedSplit out;
    for (const DatasetEntry& entry : it->second) {
        out.names.push_back(entry.name);
        out.images.push_back(readPng(entry.imagePath));
        std::vector<MultiChannelImage> anns;
        for (const fs::path& a : entry.annotationPaths) {
            MultiChannelImage gt = readPng(a);
            for (double& v : gt.data) v = v >= 0.5 ? 1.0 : 0.0;
            anns.push_back(std::move(gt));
        }
        out.annotations.push_back(std::move(anns));
        if (!entry.roiPath.empty()) {
            MultiChannelImage roi = readPng(entry.roiPath);
            for (double& v : roi.data) v = v >= 0.5 ? 1.0 : 0.0;
            out.rois.push_back(std::move(roi));
        } else {
            out.rois.emplace_back();
        }
    }
    return out;
}

AnnotatedImageSet toTrainingSet(const LoadedSplit& split) {
    AnnotatedImageSet set;
    set.images = split.images;
    for (const auto& anns : split.annotations) set.annotations.push_back(anns.front());
    set.validate();
    return set;
}

MultiChannelImage labelBoundaries(const std::vector<int>& labels, int height, int width) {
    if (labels.size() != static_cast<std::size_t>(height) * width)
        throw ShapeError("labelBoundaries: label raster size mismatch");
    MultiChannelImage gt(1, height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int l = labels[static_cast<std::size_t>(y) * width + x];
            const bool east = x + 1 < width && labels[static_cast<std::size_t>(y) * width + x + 1] != l;
            const bool south =
                y + 1 < height && labels[(static_cast<std::size_t>(y) + 1) * width + x] != l;
            if (east || south) gt.at(0, y, x) = 1.0;
        }
    }
    return gt;
}

namespace {

struct Point {
    double x, y;
};

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Andrew monotone chain; returns counterclockwise hull.
std::vector<Point> convexHull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(),
              [](const Point& a, const Point& b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
    const std::size_t n = pts.size();
    if (n < 3) return pts;
    std::vector<Point> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const std::size_t lower = k + 1;
    for (std::size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

bool insideConvex(const std::vector<Point>& hull, double px, double py) {
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Point& a = hull[i];
        const Point& b = hull[(i + 1) % hull.size()];
        if (cross(a, b, {px, py}) < 0) return false;
    }
    return true;
}

void generatePolygonImage(int size, RandomStream rng, MultiChannelImage& image,
                          MultiChannelImage& gt) {
    const int regionCount = 3 + static_cast<int>(rng.uniformIndex(5));

    // Distinct gray levels, background first.
    std::vector<double> levels;
    while (static_cast<int>(levels.size()) < regionCount + 1) {
        const double candidate = rng.uniform(0.05, 0.95);
        bool distinct = true;
        for (double l : levels) distinct = distinct && std::abs(l - candidate) > 0.06;
        if (distinct || levels.size() > 200) levels.push_back(candidate);
    }

    std::vector<int> labels(static_cast<std::size_t>(size) * size, 0);
    for (int k = 0; k < regionCount; ++k) {
        const double cx = rng.uniform(0.15, 0.85) * size;
        const double cy = rng.uniform(0.15, 0.85) * size;
        const double radius = rng.uniform(0.12, 0.32) * size;
        const int vertices = 3 + static_cast<int>(rng.uniformIndex(6));
        std::vector<Point> pts;
        for (int v = 0; v < vertices; ++v) {
            const double angle = rng.uniform(0.0, 2.0 * M_PI);
            const double r = radius * rng.uniform(0.55, 1.0);
            pts.push_back({cx + r * std::cos(angle), cy + r * std::sin(angle)});
        }
        const std::vector<Point> hull = convexHull(pts);
        if (hull.size() < 3) continue;
        double loX = size, hiX = 0, loY = size, hiY = 0;
        for (const Point& p : hull) {
            loX = std::min(loX, p.x);
            hiX = std::max(hiX, p.x);
            loY = std::min(loY, p.y);
            hiY = std::max(hiY, p.y);
        }
        for (int y = std::max(0, static_cast<int>(loY)); y <= std::min(size - 1, static_cast<int>(hiY)); ++y) {
            for (int x = std::max(0, static_cast<int>(loX)); x <= std::min(size - 1, static_cast<int>(hiX)); ++x) {
                if (insideConvex(hull, x, y)) labels[static_cast<std::size_t>(y) * size + x] = k + 1;
            }
        }
    }

    image = MultiChannelImage(1, size, size);
    for (int i = 0; i < size * size; ++i) {
        const double noisy = levels[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] +
                             rng.gaussian(0.0, 0.05);
        image.data[static_cast<std::size_t>(i)] = std::clamp(noisy, 0.0, 1.0);
    }
    gt = labelBoundaries(labels, size, size);
}

void generateVesselImage(int size, RandomStream rng, MultiChannelImage& image,
                         MultiChannelImage& gt, MultiChannelImage& roi) {
    image = MultiChannelImage(1, size, size);
    gt = MultiChannelImage(1, size, size);
    roi = MultiChannelImage(1, size, size);

    const double cx = size / 2.0, cy = size / 2.0;
    const double roiRadius = 0.47 * size;
    std::size_t roiArea = 0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            if (d <= roiRadius) {
                roi.at(0, y, x) = 1.0;
                ++roiArea;
            }
        }
    }

    // Smooth textured background inside the region of interest.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 3; ++i) {
        const double freq = rng.uniform(1.5, 4.5) * 2.0 * M_PI / size;
        const double dir = rng.uniform(0.0, 2.0 * M_PI);
        waves.push_back({freq * std::cos(dir), freq * std::sin(dir), rng.uniform(0.0, 2.0 * M_PI),
                         rng.uniform(0.02, 0.045)});
    }
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (roi.at(0, y, x) < 0.5) {
                image.at(0, y, x) = 0.08;
                continue;
            }
            double v = 0.78;
            for (const Wave& w : waves) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
            v += rng.gaussian(0.0, 0.015);
            image.at(0, y, x) = std::clamp(v, 0.0, 1.0);
        }
    }

    // Add strokes until the mask density lands in the configured band.
    const double targetDensity = rng.uniform(0.018, 0.032);
    std::size_t maskPixels = 0;
    int strokes = 0;
    while (maskPixels < targetDensity * roiArea && strokes < 64) {
        ++strokes;
        const double a0 = rng.uniform(0.0, 2.0 * M_PI);
        const double r0 = rng.uniform(0.0, 0.8) * roiRadius;
        Point p0{cx + r0 * std::cos(a0), cy + r0 * std::sin(a0)};
        const double dir = rng.uniform(0.0, 2.0 * M_PI);
        const double len = rng.uniform(0.35, 0.75) * size;
        Point p3{p0.x + len * std::cos(dir), p0.y + len * std::sin(dir)};
        const double bendA = rng.uniform(-0.25, 0.25) * len;
        const double bendB = rng.uniform(-0.25, 0.25) * len;
        Point p1{p0.x + (p3.x - p0.x) / 3.0 - bendA * std::sin(dir),
                 p0.y + (p3.y - p0.y) / 3.0 + bendA * std::cos(dir)};
        Point p2{p0.x + 2.0 * (p3.x - p0.x) / 3.0 - bendB * std::sin(dir),
                 p0.y + 2.0 * (p3.y - p0.y) / 3.0 + bendB * std::cos(dir)};
        const double width = 1.0 + static_cast<double>(rng.uniformIndex(3));  // 1..3 px
        const double shade = rng.uniform(0.25, 0.4);

        const int steps = std::max(8, static_cast<int>(len * 4.0));
        for (int s = 0; s <= steps; ++s) {
            const double t = static_cast<double>(s) / steps;
            const double u = 1.0 - t;
            const double bx = u * u * u * p0.x + 3 * u * u * t * p1.x + 3 * u * t * t * p2.x +
                              t * t * t * p3.x;
            const double by = u * u * u * p0.y + 3 * u * u * t * p1.y + 3 * u * t * t * p2.y +
                              t * t * t * p3.y;
            const int rad = static_cast<int>(std::ceil(width / 2.0));
            for (int y = static_cast<int>(by) - rad; y <= static_cast<int>(by) + rad; ++y) {
                for (int x = static_cast<int>(bx) - rad; x <= static_cast<int>(bx) + rad; ++x) {
                    if (y < 0 || y >= size || x < 0 || x >= size) continue;
                    if (roi.at(0, y, x) < 0.5) continue;
                    if (std::hypot(x - bx, y - by) > width / 2.0) continue;
                    if (gt.at(0, y, x) < 0.5) {
                        gt.at(0, y, x) = 1.0;
                        ++maskPixels;
                    }
                    image.at(0, y, x) = std::clamp(image.at(0, y, x) - shade, 0.0, 1.0);
                }
            }
        }
    }
}

}  // namespace

DatasetManifest generateSynthetic(SyntheticKind kind, int count, int size, std::uint64_t seed,
                                  const fs::path& outDir, int minimumSize) {
    if (count < 1) throw ArgumentError("generateSynthetic: count must be >= 1");
    if (size < minimumSize)
        throw ArgumentError("generateSynthetic: size must be at least the input window (" +
                            std::to_string(minimumSize) + ")");
    fs::create_directories(outDir);

    RandomStream root(seed);
    char name[32];
    for (int i = 0; i < count; ++i) {
        std::snprintf(name, sizeof(name), "img_%04d", i);
        MultiChannelImage image, gt, roi;
        if (kind == SyntheticKind::Polygons) {
            generatePolygonImage(size, root.fork("image", static_cast<std::uint64_t>(i)), image, gt);
        } else {
            generateVesselImage(size, root.fork("image", static_cast<std::uint64_t>(i)), image, gt,
                                roi);
        }
        writePng(outDir / (std::string(name) + ".png"), image);
        writePng(outDir / (std::string(name) + ".gt.png"), gt);
        if (kind == SyntheticKind::Vessels) writePng(outDir / (std::string(name) + ".roi.png"), roi);
    }
    return ingestDataset(outDir, DatasetLayout::Flat);
}

}  // namespace n4
