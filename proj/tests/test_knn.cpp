#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/digamma.hpp>

#include "doctest.h"

#include "miscale/kdtree.h"
#include "miscale/knn.h"
#include "miscale/synthetic.h"
#include "support.h"

using namespace miscale;
using namespace miscale::knn;

namespace {

Partition first_vs_rest(std::size_t na, std::size_t d)
{
    Partition p;
    for (std::size_t i = 0; i < d; ++i) (i < na ? p.idx_a : p.idx_b).push_back(i);
    return p;
}

Dataset rho_pair(std::size_t n, std::uint64_t seed)
{
    return synth::sample_gaussian(synth::correlated_pair(0.9), n, seed);
}

double cheb(const Matrix& m, Eigen::Index i, Eigen::Index j, Eigen::Index c0, Eigen::Index nc)
{
    return (m.row(i).segment(c0, nc) - m.row(j).segment(c0, nc)).cwiseAbs().maxCoeff();
}

// KSG algorithm 1 by brute force, O(N^2)
double brute_ksg(const Matrix& x, std::size_t da, std::size_t k)
{
    const Eigen::Index n = x.rows(), d = x.cols(), a = Eigen::Index(da);
    double acc = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> dist;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) dist.push_back(cheb(x, i, j, 0, d));
        std::nth_element(dist.begin(), dist.begin() + Eigen::Index(k) - 1, dist.end());
        const double eps = dist[k - 1];
        int nx = 0, ny = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            nx += cheb(x, i, j, 0, a) < eps;
            ny += cheb(x, i, j, a, d - a) < eps;
        }
        acc += boost::math::digamma(nx + 1.0) + boost::math::digamma(ny + 1.0);
    }
    return boost::math::digamma(double(k)) + boost::math::digamma(double(n)) - acc / double(n);
}

} // namespace

TEST_CASE("chebyshev index agrees with a linear scan")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    Matrix pts(500, 4);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = nd(rng);
    const ChebyshevIndex tree(pts, 30, 8), scan(pts, 0);
    CHECK(tree.uses_tree());
    CHECK_FALSE(scan.uses_tree());
    for (std::size_t i = 0; i < 500; i += 7) {
        std::vector<double> dist;
        for (Eigen::Index j = 0; j < 500; ++j)
            if (j != Eigen::Index(i)) dist.push_back(cheb(pts, Eigen::Index(i), j, 0, 4));
        std::sort(dist.begin(), dist.end());
        for (std::size_t k : {1, 3, 10}) {
            CHECK(tree.kth_neighbor_distance(i, k) == dist[k - 1]);
            CHECK(scan.kth_neighbor_distance(i, k) == dist[k - 1]);
        }
        const double r = dist[20];
        const auto strictly = std::size_t(std::lower_bound(dist.begin(), dist.end(), r) - dist.begin());
        CHECK(tree.count_within(i, r) == strictly);
        CHECK(scan.count_within(i, r) == strictly);
    }
}

TEST_CASE("KSG matches a brute-force implementation")
{
    const Dataset d = synth::sample_gaussian(synth::ar1_chain(3, 0.6), 300, 2);
    KnnConfig cfg;
    cfg.noise_amplitude = 0.0;
    for (std::size_t k : {1, 4}) {
        const auto est = knn_mi(d, first_vs_rest(1, 3), cfg = KnnConfig{k, 0.0});
        CHECK(est.diagnostics.at("raw") == doctest::Approx(brute_ksg(d.samples(), 1, k)).epsilon(1e-12));
    }
}

TEST_CASE("entropy examples")
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u;
    Matrix m(10000, 1);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    CHECK(std::abs(knn_entropy(Dataset(m, Modality::CategoricalSynthetic), {})) < 0.05);

    const Dataset g = synth::sample_gaussian(synth::independent_blocks(1, 0), 10000, 2);
    CHECK(knn_entropy(g, {}) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi * std::numbers::e)).epsilon(0.05 / 1.4189));

    const Dataset two = synth::sample_gaussian(synth::correlated_pair(0.5), 5000, 3);
    const Dataset twice(two.samples() * 2.0, two.modality());
    CHECK(knn_entropy(twice, {}) - knn_entropy(two, {}) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));

    // many exact duplicates with no jitter
    Matrix dup = Matrix::Zero(50, 2);
    KnnConfig none;
    none.noise_amplitude = 0.0;
    CHECK_ERROR_KIND(knn_entropy(Dataset(dup, Modality::CategoricalSynthetic), none), ErrorKind::Degenerate);
    CHECK_ERROR_KIND(knn_entropy(g.head(5), {}), ErrorKind::Bounds);
}

TEST_CASE("MI examples")
{
    const auto indep = knn_mi(synth::sample_gaussian(synth::independent_blocks(1, 1), 10000, 4), first_vs_rest(1, 2), {});
    CHECK(std::abs(indep.value) < 0.03);
    CHECK(indep.value >= 0.0);

    const auto est = knn_mi(rho_pair(10000, 5), first_vs_rest(1, 2), {});
    CHECK(std::abs(est.value - 0.8304) < 0.05);
    CHECK(est.sigma > 0.0);
    CHECK(est.sigma < 0.05);
    CHECK(est.method == "knn");
    CHECK(est.diagnostics.at("mean_n_a") > 0.0);

    const Dataset d = rho_pair(100, 1);
    CHECK_ERROR_KIND(knn_mi(d, first_vs_rest(0, 2), {}), ErrorKind::Partition);
    CHECK_ERROR_KIND(knn_mi(d, first_vs_rest(2, 2), {}), ErrorKind::Partition);
    CHECK_ERROR_KIND(knn_mi(d, first_vs_rest(1, 3), {}), ErrorKind::Partition);
    CHECK_ERROR_KIND(knn_mi(d, first_vs_rest(1, 2), {100}), ErrorKind::Bounds);
}

TEST_CASE("MI properties")
{
    const Dataset d = rho_pair(10000, 6);
    const auto base = knn_mi(d, first_vs_rest(1, 2), {});

    Matrix t = d.samples();
    t.col(0) = t.col(0).array().cube() + t.col(0).array();
    CHECK(std::abs(knn_mi(Dataset(t, d.modality()), first_vs_rest(1, 2), {}).value - base.value) < 0.05);

    Partition swapped;
    swapped.idx_a = {1};
    swapped.idx_b = {0};
    CHECK(knn_mi(d, swapped, {}).value == base.value);

    // independent data can dip below zero before the clamp
    int clamped = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto e = knn_mi(synth::sample_gaussian(synth::independent_blocks(1, 1), 2000, 100 + s), first_vs_rest(1, 2), {});
        CHECK(e.value >= 0.0);
        clamped += e.diagnostics.at("clamped") > 0;
        if (e.diagnostics.at("clamped") > 0) CHECK(e.diagnostics.at("raw") < 0.0);
    }
    CHECK(clamped > 0);

    double small = 0, big = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        small += std::abs(knn_mi(rho_pair(2000, 200 + s), first_vs_rest(1, 2), {}).value - 0.8304);
        big += std::abs(knn_mi(rho_pair(20000, 300 + s), first_vs_rest(1, 2), {}).value - 0.8304);
    }
    CHECK(big <= small);

    // threads do not change the answer
    KnnConfig one;
    one.threads = 1;
    KnnConfig four;
    four.threads = 4;
    CHECK(knn_mi(d, first_vs_rest(1, 2), one).value == knn_mi(d, first_vs_rest(1, 2), four).value);
}

TEST_CASE("collapse check")
{
    const Dataset d = synth::sample_gaussian(synth::ar1_chain(8, 0.8), 4000, 7);
    const std::vector<std::size_t> Ls{0, 2, 4, 8};
    const auto one = knn_collapse_check(d, PartitionFamily::LR, Ls, {{5, 4000}}, {});
    REQUIRE(one.size() == 1);
    CHECK(one[0].points.front().I == 0.0);
    CHECK(one[0].points.back().I == 0.0);
    const auto geom = PartitionGeometry::of(d);
    CHECK(one[0].points[1].I == knn_mi(d, make_partition(PartitionFamily::LR, 2, geom), {}).value);

    const auto two = knn_collapse_check(d, PartitionFamily::LR, {4}, {{3, 2000}, {6, 4000}}, {});
    CHECK(two.size() == 2);
    CHECK(two[0].points[0].I == knn_mi(d.head(2000), make_partition(PartitionFamily::LR, 4, geom), {3}).value);

    CHECK_ERROR_KIND(knn_collapse_check(d, PartitionFamily::LR, Ls, {{10, 10}}, {}), ErrorKind::Bounds);
    CHECK_ERROR_KIND(knn_collapse_check(d, PartitionFamily::LR, Ls, {{5, 5000}}, {}), ErrorKind::Bounds);
}
