#pragma once

#include <array>
#include <filesystem>

#include "n4/kdtree.hpp"
#include "n4/net.hpp"

namespace n4 {

struct SearchConfig {
    int maxComparisons = 30;  // budget in kd-tree leaf visits
    bool exact = false;       // force the exhaustive result

    void validate() const {
        if (maxComparisons < 1) throw ArgumentError("SearchConfig: maxComparisons must be >= 1");
    }
};

/// Where a dictionary entry was sampled from; kept in memory only, not
/// persisted.
struct EntryProvenance {
    int imageIndex = 0;
    std::array<int, 2> center{0, 0};
};

/// T pairs (neural code, raw annotation patch) with a kd-tree over the codes.
struct CodeDictionary {
    int codeDim = 0;
    int annotationSize = 0;                 // N
    Eigen::MatrixXd codes;                  // T x codeDim
    std::vector<AnnotationPatch> annotations;
    std::vector<EntryProvenance> provenance;  // empty after load
    KdTree index;

    std::size_t size() const { return annotations.size(); }

    /// (Re)build the search index over the current codes.
    void rebuildIndex();
};

/// Draw T distinct patch centers uniformly over all pixels of the training
/// images, store each center's infer-mode code and raw N x N annotation, and
/// index the codes. Images must already carry the training-time channel-mean
/// subtraction.
CodeDictionary buildDictionary(const ConvNet& net, const AnnotatedImageSet& corpus,
                               const PatchGeometry& geometry, std::size_t T, std::uint64_t seed);

struct NearestEntry {
    std::size_t index = 0;
    double distanceSquared = 0.0;
};

/// Entry with the closest code by (squared) Euclidean distance. Exact mode
/// scans until proven optimal; approximate mode stops after the comparison
/// budget. Ties break toward the lowest entry index.
NearestEntry nearest(const CodeDictionary& dict, const Eigen::VectorXd& query,
                     const SearchConfig& config);

/// Annotation of the nearest entry, unmodified (1st neighbor only).
const AnnotationPatch& transferAnnotation(const CodeDictionary& dict, const Eigen::VectorXd& query,
                                          const SearchConfig& config);

/// Persistence: magic "N4DC", T/codeDim/N as little-endian 32-bit unsigned,
/// then codes and annotations as little-endian 32-bit floats. The tree is
/// rebuilt on load.
void saveDictionary(const std::filesystem::path& path, const CodeDictionary& dict);
CodeDictionary loadDictionary(const std::filesystem::path& path);

}  // namespace n4
