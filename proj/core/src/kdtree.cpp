#include "n4/kdtree.hpp"

#include <algorithm>
#include <queue>

#include "n4/errors.hpp"

namespace n4 {

void KdTree::build(const Eigen::MatrixXd& points, int leafSize) {
    if (points.rows() == 0) throw ArgumentError("KdTree: no points");
    if (leafSize < 1) throw ArgumentError("KdTree: leafSize must be >= 1");
    points_ = points;
    leafSize_ = leafSize;
    order_.resize(static_cast<std::size_t>(points.rows()));
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int32_t>(i);
    nodes_.clear();
    nodes_.reserve(2 * order_.size() / static_cast<std::size_t>(leafSize) + 8);
    root_ = buildNode(0, static_cast<std::int32_t>(order_.size()));
}

std::int32_t KdTree::buildNode(std::int32_t begin, std::int32_t end) {
    const std::int32_t id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= leafSize_) {
        // Canonical leaf order: sort by point index for permutation invariance.
        std::sort(order_.begin() + begin, order_.begin() + end);
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }

    const int dim = static_cast<int>(points_.cols());
    int axis = 0;
    double bestSpread = -1.0;
    for (int d = 0; d < dim; ++d) {
        double lo = points_(order_[begin], d), hi = lo;
        for (std::int32_t i = begin + 1; i < end; ++i) {
            const double v = points_(order_[i], d);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo > bestSpread) {
            bestSpread = hi - lo;
            axis = d;
        }
    }

    // Full canonical sort on (axis value, whole vector lexicographically):
    // identical multisets always produce identical partitions.
    std::sort(order_.begin() + begin, order_.begin() + end,
              [this, axis, dim](std::int32_t a, std::int32_t b) {
                  const double va = points_(a, axis), vb = points_(b, axis);
                  if (va != vb) return va < vb;
                  for (int d = 0; d < dim; ++d) {
                      if (points_(a, d) != points_(b, d)) return points_(a, d) < points_(b, d);
                  }
                  return false;
              });

    const std::int32_t mid = begin + (end - begin) / 2;
    nodes_[id].axis = axis;
    nodes_[id].split = points_(order_[mid], axis);
    const std::int32_t left = buildNode(begin, mid);
    const std::int32_t right = buildNode(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

KdTree::Result KdTree::nearest(const double* query, std::size_t maxLeafVisits) const {
    if (empty()) throw StateError("KdTree: nearest on an empty tree");
    const int dim = static_cast<int>(points_.cols());

    struct Entry {
        double bound;
        std::int32_t node;
        std::vector<double> offsets;  // per-axis offsets composing `bound`

        bool operator>(const Entry& other) const { return bound > other.bound; }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> frontier;
    frontier.push({0.0, root_, std::vector<double>(static_cast<std::size_t>(dim), 0.0)});

    Result best;
    std::size_t visits = 0;
    while (!frontier.empty()) {
        Entry e = frontier.top();
        frontier.pop();
        // Prune on strict greater so equal-distance candidates with lower
        // indices are still reachable.
        if (e.bound > best.distanceSquared) break;
        std::int32_t cur = e.node;
        // Descend to the nearest leaf, deferring far children.
        while (nodes_[cur].axis >= 0) {
            const Node& n = nodes_[cur];
            const double delta = query[n.axis] - n.split;
            std::int32_t near = n.left, far = n.right;
            if (delta >= 0.0) {
                near = n.right;
                far = n.left;
            }
            Entry farEntry{0.0, far, e.offsets};
            const double oldOff = farEntry.offsets[static_cast<std::size_t>(n.axis)];
            const double newOff = delta * delta;
            if (newOff > oldOff) {
                farEntry.offsets[static_cast<std::size_t>(n.axis)] = newOff;
                farEntry.bound = e.bound - oldOff + newOff;
            } else {
                farEntry.bound = e.bound;
            }
            frontier.push(std::move(farEntry));
            cur = near;
        }
        const Node& leaf = nodes_[cur];
        ++visits;
        for (std::int32_t i = leaf.begin; i < leaf.end; ++i) {
            const std::int32_t idx = order_[static_cast<std::size_t>(i)];
            double d = 0.0;
            const double* p = points_.data() + static_cast<std::size_t>(idx) * dim;
            for (int k = 0; k < dim; ++k) {
                const double diff = query[k] - p[k];
                d += diff * diff;
            }
            if (d < best.distanceSquared ||
                (d == best.distanceSquared && static_cast<std::size_t>(idx) < best.index)) {
                best.distanceSquared = d;
                best.index = static_cast<std::size_t>(idx);
            }
        }
        if (visits >= maxLeafVisits) break;
    }
    best.leafVisits = visits;
    return best;
}

std::vector<std::tuple<int, double, int>> KdTree::structure() const {
    std::vector<std::tuple<int, double, int>> out;
    std::vector<std::int32_t> stack{root_};
    while (!stack.empty()) {
        const std::int32_t id = stack.back();
        stack.pop_back();
        if (id < 0) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.axis < 0) {
            out.emplace_back(-1, 0.0, n.end - n.begin);
        } else {
            out.emplace_back(n.axis, n.split, 0);
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
    return out;
}

}  // namespace n4
