#include "miscale/kdtree.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace miscale::knn {

ChebyshevIndex::ChebyshevIndex(Matrix points, std::size_t tree_max_dim, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size))
{
    order_.resize(size());
    std::iota(order_.begin(), order_.end(), 0);
    if (dim() <= tree_max_dim && size() > leaf_size_) {
        nodes_.reserve(2 * size() / leaf_size_ + 2);
        build(0, size());
    }
}

std::size_t ChebyshevIndex::build(std::size_t begin, std::size_t end)
{
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end, 0, 0, 0, 0.0});
    const std::size_t d = dim();
    box_lo_.resize((id + 1) * d);
    box_hi_.resize((id + 1) * d);
    for (std::size_t j = 0; j < d; ++j) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = begin; i < end; ++i) {
            const double v = points_(static_cast<Eigen::Index>(order_[i]), static_cast<Eigen::Index>(j));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        box_lo_[id * d + j] = lo;
        box_hi_[id * d + j] = hi;
    }
    if (end - begin <= leaf_size_) return id;

    std::size_t split_dim = 0;
    double widest = -1.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double w = box_hi_[id * d + j] - box_lo_[id * d + j];
        if (w > widest) {
            widest = w;
            split_dim = j;
        }
    }
    if (widest <= 0.0) return id; // all points identical

    const std::size_t mid = begin + (end - begin) / 2;
    const auto col = static_cast<Eigen::Index>(split_dim);
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                         return points_(static_cast<Eigen::Index>(a), col) < points_(static_cast<Eigen::Index>(b), col);
                     });
    nodes_[id].split_dim = split_dim;
    nodes_[id].split = points_(static_cast<Eigen::Index>(order_[mid]), col);
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

double ChebyshevIndex::box_distance(std::size_t node, const double* q) const
{
    const std::size_t d = dim();
    double best = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double lo = box_lo_[node * d + j], hi = box_hi_[node * d + j];
        best = std::max(best, std::max(lo - q[j], q[j] - hi));
    }
    return best;
}

double ChebyshevIndex::box_far_distance(std::size_t node, const double* q) const
{
    const std::size_t d = dim();
    double worst = 0.0;
    for (std::size_t j = 0; j < d; ++j)
        worst = std::max(worst, std::max(std::abs(q[j] - box_lo_[node * d + j]), std::abs(box_hi_[node * d + j] - q[j])));
    return worst;
}

double ChebyshevIndex::distance(std::size_t a, const double* q, double bound) const
{
    const double* p = points_.row(static_cast<Eigen::Index>(a)).data();
    const std::size_t d = dim();
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        m = std::max(m, std::abs(p[j] - q[j]));
        if (m >= bound) return m;
    }
    return m;
}

double ChebyshevIndex::kth_neighbor_distance(std::size_t self, std::size_t k) const
{
    if (k == 0 || k >= size()) throw Error(ErrorKind::Bounds, "k must lie in [1, N)");
    const double* q = points_.row(static_cast<Eigen::Index>(self)).data();
    std::priority_queue<double> heap;
    auto bound = [&] { return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top(); };
    auto offer = [&](std::size_t idx) {
        if (idx == self) return;
        const double dist = distance(idx, q, bound());
        if (heap.size() < k) {
            heap.push(dist);
        } else if (dist < heap.top()) {
            heap.pop();
            heap.push(dist);
        }
    };

    if (nodes_.empty()) {
        for (std::size_t i = 0; i < size(); ++i) offer(i);
        return heap.top();
    }

    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        const std::size_t id = stack.back();
        stack.pop_back();
        if (box_distance(id, q) >= bound()) continue;
        const Node& n = nodes_[id];
        if (n.left == 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) offer(order_[i]);
            continue;
        }
        // Push the far child first so the near one is explored first.
        const bool go_left = q[n.split_dim] < n.split;
        stack.push_back(go_left ? n.right : n.left);
        stack.push_back(go_left ? n.left : n.right);
    }
    return heap.top();
}

std::size_t ChebyshevIndex::count_within(std::size_t self, double radius) const
{
    if (!(radius > 0.0)) return 0;
    const double* q = points_.row(static_cast<Eigen::Index>(self)).data();
    std::size_t count = 0;
    if (nodes_.empty()) {
        for (std::size_t i = 0; i < size(); ++i)
            if (distance(i, q, radius) < radius) ++count;
        return count - 1;
    }
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        const std::size_t id = stack.back();
        stack.pop_back();
        if (box_distance(id, q) >= radius) continue;
        const Node& n = nodes_[id];
        if (box_far_distance(id, q) < radius) {
            count += n.end - n.begin;
            continue;
        }
        if (n.left == 0) {
            for (std::size_t i = n.begin; i < n.end; ++i)
                if (distance(order_[i], q, radius) < radius) ++count;
            continue;
        }
        stack.push_back(n.left);
        stack.push_back(n.right);
    }
    return count - 1; // the query point itself
}

} // namespace miscale::knn
