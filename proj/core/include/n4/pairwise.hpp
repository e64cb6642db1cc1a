#pragma once

#include <cstdint>
#include <vector>

#include "n4/pca.hpp"

namespace n4 {

/// Canonical enumeration of unordered pixel pairs of an N x N patch:
/// lexicographic over flattened indices (l, m) with l < m, stable across
/// runs. L = N^2 (N^2 - 1) / 2.
struct PairwiseEncoding {
    int patchSide = 0;

    explicit PairwiseEncoding(int n);

    std::int64_t length() const { return length_; }
    std::pair<int, int> pairAt(std::int64_t i) const { return pairs_[static_cast<std::size_t>(i)]; }
    const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }

private:
    std::int64_t length_ = 0;
    std::vector<std::pair<int, int>> pairs_;
};

/// Binary vector over all pixel pairs: entry i is 1 iff the two pixels of
/// pair i carry equal segment labels.
std::vector<std::uint8_t> pairwiseVector(const std::vector<int>& segmentation,
                                         const PairwiseEncoding& enc);

/// Same vector bit-packed into 64-bit words (little-endian bit order), used
/// by the Gram-route codec fit to avoid materializing dense samples.
std::vector<std::uint64_t> pairwiseBits(const std::vector<int>& segmentation,
                                        const PairwiseEncoding& enc);

/// Segment labels for a patch that only carries a binary edge mask:
/// 4-connected components of the non-edge pixels; all edge pixels share one
/// sentinel label.
std::vector<int> segmentsFromEdgeMask(const AnnotationPatch& edges);

/// PCA codec over pairwise vectors of a segmentation corpus. Fitting always
/// runs through the Gram route (the pair dimension dwarfs any reasonable
/// sample count).
PcaCodec fitAlternativeCodec(const std::vector<std::vector<int>>& segmentations,
                             const PairwiseEncoding& enc, int codeDim);

/// Encode one segmentation without materializing the dense pair vector.
Eigen::VectorXd encodePairwise(const PcaCodec& codec, const std::vector<int>& segmentation,
                               const PairwiseEncoding& enc);

}  // namespace n4
