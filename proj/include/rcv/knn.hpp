#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "rcv/geometry.hpp"

namespace rcv {

/// Static 3D kd-tree for k-nearest-neighbor queries. Ties in distance are
/// broken by point index so results do not depend on traversal order.
class KdTree {
public:
    explicit KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), 0u);
        nodes_.reserve(points_.size());
        if (!points_.empty()) build(0, order_.size(), 0);
    }

    std::size_t size() const noexcept { return points_.size(); }

    /// Indices of the k nearest points to `query` (including coincident ones),
    /// nearest first.
    std::vector<std::uint32_t> nearest(const Vec3& query, std::size_t k) const {
        k = std::min(k, points_.size());
        Heap heap;
        if (k > 0) search(root_, query, k, heap);
        std::vector<std::uint32_t> out(heap.size());
        for (std::size_t i = out.size(); i-- > 0;) {
            out[i] = heap.top().second;
            heap.pop();
        }
        return out;
    }

private:
    struct Node {
        std::uint32_t point;
        int axis;
        std::int32_t left = -1;
        std::int32_t right = -1;
    };
    using Entry = std::pair<double, std::uint32_t>;
    using Heap = std::priority_queue<Entry>;  // max-heap on (distance, index)

    std::int32_t build(std::size_t lo, std::size_t hi, int depth) {
        if (lo >= hi) return -1;
        const int axis = depth % 3;
        const std::size_t mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](std::uint32_t a, std::uint32_t b) {
                             const double pa = points_[a][axis], pb = points_[b][axis];
                             return pa < pb || (pa == pb && a < b);
                         });
        const auto id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back({order_[mid], axis});
        if (depth == 0) root_ = id;
        const auto left = build(lo, mid, depth + 1);
        const auto right = build(mid + 1, hi, depth + 1);
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    void search(std::int32_t id, const Vec3& q, std::size_t k, Heap& heap) const {
        if (id < 0) return;
        const Node& node = nodes_[id];
        const Entry e{(points_[node.point] - q).squaredNorm(), node.point};
        if (heap.size() < k) {
            heap.push(e);
        } else if (e < heap.top()) {
            heap.pop();
            heap.push(e);
        }
        const double diff = q[node.axis] - points_[node.point][node.axis];
        const auto near = diff < 0 ? node.left : node.right;
        const auto far = diff < 0 ? node.right : node.left;
        search(near, q, k, heap);
        if (heap.size() < k || diff * diff <= heap.top().first) search(far, q, k, heap);
    }

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
};

}  // namespace rcv
