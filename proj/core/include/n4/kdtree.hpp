#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <tuple>
#include <vector>

namespace n4 {

/// Static kd-tree over row-wise points. Split axis is the one of maximal
/// spread (lowest axis on ties); the split point is the median after a
/// canonical sort, so the tree shape depends only on the point multiset,
/// not on input order.
class KdTree {
public:
    static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

    KdTree() = default;

    void build(const Eigen::MatrixXd& points, int leafSize = 8);

    struct Result {
        std::size_t index = 0;
        double distanceSquared = std::numeric_limits<double>::infinity();
        std::size_t leafVisits = 0;
    };

    /// Nearest neighbor by squared Euclidean distance, ties broken toward
    /// the lowest point index. `maxLeafVisits` bounds the number of leaves
    /// scanned in best-first order; kUnbounded gives the exact result.
    Result nearest(const double* query, std::size_t maxLeafVisits = kUnbounded) const;

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    bool empty() const { return size() == 0; }

    /// Preorder (axis, split, count) triples; leaves use axis -1. Exposed for
    /// structural tests.
    std::vector<std::tuple<int, double, int>> structure() const;

private:
    struct Node {
        int axis = -1;         // -1 for leaves
        double split = 0.0;    // first coordinate of the right subtree
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::int32_t begin = 0;  // leaf range in order_
        std::int32_t end = 0;
    };

    std::int32_t buildNode(std::int32_t begin, std::int32_t end);

    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> points_;
    std::vector<std::int32_t> order_;
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
    int leafSize_ = 8;
};

}  // namespace n4
