#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

namespace contour_context {

/*
 * Static KD-tree for exact k-nearest-neighbor search under the Euclidean
 * metric. Points are stored row-major with a runtime dimension; the tree is
 * rebuilt from scratch rather than updated in place.
 */
class KdTree {
  public:
    struct Neighbor {
        std::size_t index;
        double sq_dist;
    };

    KdTree() = default;
    KdTree(std::vector<double> points, std::size_t dim, std::size_t leaf_size = 12)
        : dim_(dim), leaf_size_(std::max<std::size_t>(1, leaf_size)), points_(std::move(points)) {
        const std::size_t n = dim_ ? points_.size() / dim_ : 0;
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (n) build(0, n);
    }

    std::size_t size() const { return order_.size(); }
    std::size_t dim() const { return dim_; }
    std::span<const double> point(std::size_t i) const { return {points_.data() + i * dim_, dim_}; }

    /// Up to k neighbors ascending by distance; ties broken by index.
    std::vector<Neighbor> knn(std::span<const double> query, std::size_t k) const {
        std::vector<Neighbor> out;
        if (k == 0 || order_.empty()) return out;
        Heap heap;
        search(0, query, k, heap);
        out.reserve(heap.size());
        while (!heap.empty()) {
            out.push_back(heap.top());
            heap.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

  private:
    struct Node {
        std::size_t begin, end;  // range in order_
        std::size_t split_dim = 0;
        double split = 0.0;
        int left = -1, right = -1;
    };
    struct Farther {
        bool operator()(const Neighbor& a, const Neighbor& b) const {
            return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.index < b.index);
        }
    };
    using Heap = std::priority_queue<Neighbor, std::vector<Neighbor>, Farther>;

    double coord(std::size_t idx, std::size_t d) const { return points_[idx * dim_ + d]; }

    int build(std::size_t begin, std::size_t end) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({begin, end});
        if (end - begin <= leaf_size_) return id;

        std::size_t best_dim = 0;
        double best_spread = -1.0;
        for (std::size_t d = 0; d < dim_; ++d) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t k = begin; k < end; ++k) {
                lo = std::min(lo, coord(order_[k], d));
                hi = std::max(hi, coord(order_[k], d));
            }
            if (hi - lo > best_spread) {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if (best_spread <= 0.0) return id;  // all points identical

        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::size_t a, std::size_t b) { return coord(a, best_dim) < coord(b, best_dim); });
        nodes_[id].split_dim = best_dim;
        nodes_[id].split = coord(order_[mid], best_dim);
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    double sq_dist(std::size_t idx, std::span<const double> q) const {
        double s = 0.0;
        for (std::size_t d = 0; d < dim_; ++d) {
            const double diff = coord(idx, d) - q[d];
            s += diff * diff;
        }
        return s;
    }

    void search(int node_id, std::span<const double> q, std::size_t k, Heap& heap) const {
        const Node& node = nodes_[node_id];
        if (node.left < 0) {
            for (std::size_t p = node.begin; p < node.end; ++p) {
                const Neighbor cand{order_[p], sq_dist(order_[p], q)};
                if (heap.size() < k) {
                    heap.push(cand);
                } else if (Farther{}(cand, heap.top())) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            return;
        }
        const double diff = q[node.split_dim] - node.split;
        const int near = diff < 0.0 ? node.left : node.right;
        const int far = diff < 0.0 ? node.right : node.left;
        search(near, q, k, heap);
        // Points equal to the split value can lie on either side, hence <=.
        if (heap.size() < k || diff * diff <= heap.top().sq_dist) search(far, q, k, heap);
    }

    std::size_t dim_ = 0;
    std::size_t leaf_size_ = 12;
    std::vector<double> points_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
};

}  // namespace contour_context
