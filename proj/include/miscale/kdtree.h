#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "miscale/dataset.h"

namespace miscale::knn {

/// Nearest-neighbour queries under the Chebyshev (max) metric over the rows
/// of a point matrix. Uses a k-d tree up to tree_max_dim dimensions and a
/// linear scan above it. Read-only after construction, so concurrent
/// queries are safe.
class ChebyshevIndex {
public:
    ChebyshevIndex(Matrix points, std::size_t tree_max_dim = 30, std::size_t leaf_size = 16);

    std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
    bool uses_tree() const { return !nodes_.empty(); }
    const Matrix& points() const { return points_; }

    /// Distance from point `self` to its k-th nearest other point.
    double kth_neighbor_distance(std::size_t self, std::size_t k) const;

    /// Number of points strictly closer than radius to point `self`, excluding itself.
    std::size_t count_within(std::size_t self, double radius) const;

private:
    struct Node {
        std::size_t begin = 0, end = 0;  // range in order_
        std::size_t left = 0, right = 0; // child node ids, 0 for leaves
        std::size_t split_dim = 0;
        double split = 0.0;
    };

    std::size_t build(std::size_t begin, std::size_t end);
    double box_distance(std::size_t node, const double* q) const;
    double box_far_distance(std::size_t node, const double* q) const;
    double distance(std::size_t a, const double* q, double bound) const;

    Matrix points_;
    std::size_t leaf_size_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    std::vector<double> box_lo_, box_hi_; // nodes x dim
};

} // namespace miscale::knn
