#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "miscale/curve.h"
#include "miscale/dataset.h"

namespace miscale::knn {

struct KnnConfig {
    std::size_t k = 5;
    /// Scale of the deterministic Gaussian jitter that breaks exact ties.
    double noise_amplitude = 1e-10;
    std::uint64_t jitter_seed = 0x5eed;
    /// Above this dimension neighbour queries fall back to a linear scan.
    std::size_t tree_max_dim = 30;
    /// Worker threads for per-sample statistics; 0 = hardware concurrency.
    std::size_t threads = 0;
};

/// Kozachenko-Leonenko entropy in nats (max-norm balls).
double knn_entropy(const Dataset& data, const KnnConfig& cfg);

/// Kraskov-Stoegbauer-Grassberger estimator (algorithm 1), clamped at 0.
/// sigma is the standard error of the per-sample digamma terms.
MIEstimate knn_mi(const Dataset& data, const Partition& partition, const KnnConfig& cfg);

/// One curve per (k, n) pair, each computed on the first n samples.
std::vector<ScalingCurve> knn_collapse_check(const Dataset& data, PartitionFamily family,
                                             const std::vector<std::size_t>& Ls,
                                             const std::vector<std::pair<std::size_t, std::size_t>>& k_n,
                                             const KnnConfig& cfg);

/// Digamma via boost.
double digamma(double x);

} // namespace miscale::knn
