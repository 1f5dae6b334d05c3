#include "miscale/knn.h"

#include <cmath>
#include <random>
#include <thread>

#include <boost/math/special_functions/digamma.hpp>

#include "miscale/kdtree.h"

namespace miscale::knn {

double digamma(double x) { return boost::math::digamma(x); }

namespace {

Matrix jittered(const Dataset& data, const KnnConfig& cfg)
{
    Matrix m = data.samples();
    if (cfg.noise_amplitude > 0.0) {
        std::mt19937_64 rng(cfg.jitter_seed);
        std::normal_distribution<double> normal(0.0, cfg.noise_amplitude);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += normal(rng);
    }
    return m;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn)
{
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

void check_k(std::size_t k, std::size_t n)
{
    if (k == 0 || k >= n)
        throw Error(ErrorKind::Bounds, "k=" + std::to_string(k) + " must satisfy 1 <= k < N=" + std::to_string(n));
}

} // namespace

double knn_entropy(const Dataset& data, const KnnConfig& cfg)
{
    const std::size_t n = data.size();
    check_k(cfg.k, n);
    const ChebyshevIndex index(jittered(data, cfg), cfg.tree_max_dim);
    std::vector<double> log_eps(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        const double eps = index.kth_neighbor_distance(i, cfg.k);
        log_eps[i] = eps > 0.0 ? std::log(2.0 * eps) : -std::numeric_limits<double>::infinity();
    });
    double sum = 0.0;
    for (double v : log_eps) {
        if (!std::isfinite(v)) throw Error(ErrorKind::Degenerate, "zero k-th neighbour distance after jitter");
        sum += v;
    }
    const double d = static_cast<double>(data.dim());
    return digamma(static_cast<double>(n)) - digamma(static_cast<double>(cfg.k)) + d * sum / static_cast<double>(n);
}

MIEstimate knn_mi(const Dataset& data, const Partition& partition, const KnnConfig& cfg)
{
    if (partition.idx_a.empty() || partition.idx_b.empty())
        throw Error(ErrorKind::Partition, "KSG needs two non-empty blocks");
    if (partition.dim() != data.dim()) throw Error(ErrorKind::Partition, "partition does not cover the dataset");
    const std::size_t n = data.size();
    check_k(cfg.k, n);

    const Matrix all = jittered(data, cfg);
    const Matrix a = select_columns(all, partition.idx_a);
    const Matrix b = select_columns(all, partition.idx_b);
    Matrix joint(a.rows(), a.cols() + b.cols());
    joint << a, b;

    const ChebyshevIndex joint_index(std::move(joint), cfg.tree_max_dim);
    const ChebyshevIndex a_index(a, cfg.tree_max_dim);
    const ChebyshevIndex b_index(b, cfg.tree_max_dim);

    std::vector<double> term(n);
    std::vector<std::size_t> na(n), nb(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        const double eps = joint_index.kth_neighbor_distance(i, cfg.k);
        na[i] = a_index.count_within(i, eps);
        nb[i] = b_index.count_within(i, eps);
        term[i] = digamma(static_cast<double>(na[i] + 1)) + digamma(static_cast<double>(nb[i] + 1));
    });

    const double nd = static_cast<double>(n);
    double mean = 0.0, mean_na = 0.0, mean_nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean += term[i];
        mean_na += static_cast<double>(na[i]);
        mean_nb += static_cast<double>(nb[i]);
    }
    mean /= nd;
    double var = 0.0;
    for (double t : term) var += (t - mean) * (t - mean);
    var /= std::max(1.0, nd - 1.0);

    const double raw = digamma(static_cast<double>(cfg.k)) + digamma(nd) - mean;
    MIEstimate est;
    est.method = "knn";
    est.value = std::max(raw, 0.0);
    est.sigma = std::sqrt(var / nd);
    est.diagnostics = {{"raw", raw},
                       {"k", static_cast<double>(cfg.k)},
                       {"samples", nd},
                       {"mean_n_a", mean_na / nd},
                       {"mean_n_b", mean_nb / nd},
                       {"clamped", raw < 0.0 ? 1.0 : 0.0},
                       {"tree", joint_index.uses_tree() ? 1.0 : 0.0}};
    return est;
}

std::vector<ScalingCurve> knn_collapse_check(const Dataset& data, PartitionFamily family,
                                             const std::vector<std::size_t>& Ls,
                                             const std::vector<std::pair<std::size_t, std::size_t>>& k_n,
                                             const KnnConfig& cfg)
{
    for (const auto& [k, n] : k_n)
        if (k == 0 || k >= n || n > data.size())
            throw Error(ErrorKind::Bounds, "collapse entry (k=" + std::to_string(k) + ", n=" + std::to_string(n)
                                               + ") needs k < n <= N=" + std::to_string(data.size()));

    const PartitionGeometry geom = PartitionGeometry::of(data);
    std::vector<ScalingCurve> curves;
    for (const auto& [k, n] : k_n) {
        const Dataset subset = data.head(n);
        KnnConfig c = cfg;
        c.k = k;
        ScalingCurve curve;
        curve.family = family;
        curve.Lmax = partition_extent(family, geom);
        curve.method = "knn_k" + std::to_string(k) + "_n" + std::to_string(n);
        for (std::size_t L : Ls) {
            const Partition p = make_partition(family, L, geom);
            if (p.idx_a.empty() || p.idx_b.empty()) {
                curve.points.push_back({L, 0.0, 0.0});
                continue;
            }
            const MIEstimate e = knn_mi(subset, p, c);
            curve.points.push_back({L, e.value, e.sigma});
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

} // namespace miscale::knn
