#include "n4/pairwise.hpp"

#include <bit>

namespace n4 {

PairwiseEncoding::PairwiseEncoding(int n) : patchSide(n) {
    if (n <= 0) throw ArgumentError("PairwiseEncoding: patch side must be positive");
    const std::int64_t p = static_cast<std::int64_t>(n) * n;
    length_ = p * (p - 1) / 2;
    pairs_.reserve(static_cast<std::size_t>(length_));
    for (int l = 0; l < p; ++l) {
        for (int m = l + 1; m < p; ++m) pairs_.emplace_back(l, m);
    }
}

namespace {

void checkSegmentation(const std::vector<int>& segmentation, const PairwiseEncoding& enc) {
    const std::size_t expect =
        static_cast<std::size_t>(enc.patchSide) * static_cast<std::size_t>(enc.patchSide);
    if (segmentation.size() != expect)
        throw ShapeError("pairwiseVector: segmentation size does not match encoding");
}

}  // namespace

std::vector<std::uint8_t> pairwiseVector(const std::vector<int>& segmentation,
                                         const PairwiseEncoding& enc) {
    checkSegmentation(segmentation, enc);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(enc.length()));
    std::size_t i = 0;
    for (const auto& [l, m] : enc.pairs())
        out[i++] = segmentation[static_cast<std::size_t>(l)] ==
                           segmentation[static_cast<std::size_t>(m)]
                       ? 1
                       : 0;
    return out;
}

std::vector<std::uint64_t> pairwiseBits(const std::vector<int>& segmentation,
                                        const PairwiseEncoding& enc) {
    checkSegmentation(segmentation, enc);
    std::vector<std::uint64_t> out((static_cast<std::size_t>(enc.length()) + 63) / 64, 0);
    std::size_t i = 0;
    for (const auto& [l, m] : enc.pairs()) {
        if (segmentation[static_cast<std::size_t>(l)] == segmentation[static_cast<std::size_t>(m)])
            out[i >> 6] |= (1ull << (i & 63));
        ++i;
    }
    return out;
}

std::vector<int> segmentsFromEdgeMask(const AnnotationPatch& edges) {
    const int n = edges.size;
    const int total = n * n;
    constexpr int kEdgeLabel = 0;
    std::vector<int> labels(total, -1);
    int next = kEdgeLabel + 1;
    std::vector<int> stack;
    for (int start = 0; start < total; ++start) {
        if (labels[start] != -1) continue;
        if (edges.values[start] >= 0.5) {
            labels[start] = kEdgeLabel;
            continue;
        }
        const int label = next++;
        stack.assign(1, start);
        labels[start] = label;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / n, x = p % n;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int d = 0; d < 4; ++d) {
                if (ny[d] < 0 || ny[d] >= n || nx[d] < 0 || nx[d] >= n) continue;
                const int q = ny[d] * n + nx[d];
                if (labels[q] != -1 || edges.values[q] >= 0.5) continue;
                labels[q] = label;
                stack.push_back(q);
            }
        }
    }
    for (int p = 0; p < total; ++p) {
        if (labels[p] == -1) labels[p] = kEdgeLabel;
    }
    return labels;
}

PcaCodec fitAlternativeCodec(const std::vector<std::vector<int>>& segmentations,
                             const PairwiseEncoding& enc, int codeDim) {
    const int s = static_cast<int>(segmentations.size());
    if (s < codeDim) throw ArgumentError("fitAlternativeCodec: need at least codeDim samples");
    const std::int64_t dim = enc.length();
    if (codeDim > dim) throw ArgumentError("fitAlternativeCodec: codeDim exceeds pair count");

    std::vector<std::vector<std::uint64_t>> packed;
    packed.reserve(s);
    for (const auto& seg : segmentations) packed.push_back(pairwiseBits(seg, enc));
    const std::size_t words = packed[0].size();

    // Mean over binary samples, and per-sample dot with the mean.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& bits : packed) {
        for (std::int64_t i = 0; i < dim; ++i) {
            if (bits[static_cast<std::size_t>(i) >> 6] & (1ull << (i & 63))) mean(i) += 1.0;
        }
    }
    mean /= static_cast<double>(s);

    Eigen::VectorXd meanDot(s);
    double meanSq = mean.squaredNorm();
    for (int a = 0; a < s; ++a) {
        double d = 0.0;
        for (std::int64_t i = 0; i < dim; ++i) {
            if (packed[a][static_cast<std::size_t>(i) >> 6] & (1ull << (i & 63))) d += mean(i);
        }
        meanDot(a) = d;
    }

    // Gram of centered samples via popcounts:
    // (x_a - m) . (x_b - m) = popcount(x_a & x_b) - m.x_a - m.x_b + m.m
    Eigen::MatrixXd gram(s, s);
    for (int a = 0; a < s; ++a) {
        for (int b = a; b < s; ++b) {
            std::int64_t common = 0;
            for (std::size_t w = 0; w < words; ++w)
                common += std::popcount(packed[a][w] & packed[b][w]);
            const double g = static_cast<double>(common) - meanDot(a) - meanDot(b) + meanSq;
            gram(a, b) = g;
            gram(b, a) = g;
        }
    }

    return fitPcaFromGram(
        gram, mean,
        [&packed, dim](int i, Eigen::VectorXd& acc) {
            const auto& bits = packed[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < dim; ++j) {
                if (bits[static_cast<std::size_t>(j) >> 6] & (1ull << (j & 63))) acc(j) += 1.0;
            }
        },
        codeDim, s);
}

Eigen::VectorXd encodePairwise(const PcaCodec& codec, const std::vector<int>& segmentation,
                               const PairwiseEncoding& enc) {
    if (codec.inputDim != enc.length())
        throw ShapeError("encodePairwise: codec dimension does not match encoding");
    checkSegmentation(segmentation, enc);
    // code = B (v - mean) with binary v: sum the basis columns of the set bits.
    Eigen::VectorXd code = -(codec.basis * codec.mean);
    std::int64_t i = 0;
    for (const auto& [l, m] : enc.pairs()) {
        if (segmentation[static_cast<std::size_t>(l)] == segmentation[static_cast<std::size_t>(m)])
            code += codec.basis.col(i);
        ++i;
    }
    return code;
}

}  // namespace n4
