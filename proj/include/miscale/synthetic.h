#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miscale/curve.h"
#include "miscale/dataset.h"

namespace miscale::synth {

/// Lattice of n_sites grouped into maximally correlated pairs whose
/// separations follow |x - y|^-alpha (or are uniform when all_to_all).
struct RandomPairSpec {
    std::size_t n_sites = 64;
    double alpha = 1.5;
    int alphabet = 2;
    bool all_to_all = false;

    void validate() const;
    std::string to_json() const;
    static RandomPairSpec from_json(const std::string& text);
};

struct PairMatching {
    std::vector<std::size_t> partner;

    std::size_t size() const { return partner.size(); }
    /// True when partner is a fixed-point-free involution.
    bool valid() const;
};

PairMatching sample_matching(const RandomPairSpec& spec, std::uint64_t seed);

/// Each pair draws one uniform symbol in [0, V) and both sites copy it.
Dataset sample_pairs(const PairMatching& matching, int alphabet, std::size_t n_samples, std::uint64_t seed);

/// Crossing count of the cut [0, L) times ln V.
double exact_pair_mi(const PairMatching& matching, int alphabet, std::size_t L);

/// Mean exact MI over n_seeds matchings, sigma = standard error. For
/// all_to_all the closed form L (Lmax - L) / (Lmax - 1) ln V is returned.
ScalingCurve expected_pair_mi_curve(const RandomPairSpec& spec, const std::vector<std::size_t>& Ls,
                                    std::size_t n_seeds, std::uint64_t seed = 0);

struct GaussianSpec {
    Vector mean;
    Matrix covariance;
    std::optional<GridShape> grid;

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
    void validate() const;
    std::string to_json() const;
    static GaussianSpec from_json(const std::string& text);
};

Dataset sample_gaussian(const GaussianSpec& spec, std::size_t n_samples, std::uint64_t seed);

/// 0.5 (ln det S_AA + ln det S_BB - ln det S) for the partition blocks.
double exact_gaussian_mi(const GaussianSpec& spec, const Partition& partition);

/// Log-determinant of a symmetric positive-definite matrix; throws NumericalRank otherwise.
double logdet_spd(const Matrix& m);

// Oracle constructions.

/// Two unit-variance coordinates with correlation rho.
GaussianSpec correlated_pair(double rho);

/// Two independent blocks of width dim_a and dim_b (identity covariance).
GaussianSpec independent_blocks(std::size_t dim_a, std::size_t dim_b);

/// Stationary AR(1) chain with lag-one correlation rho.
GaussianSpec ar1_chain(std::size_t n, double rho);

/// A ~ N(0, I_k) followed by B = A + eps * noise.
GaussianSpec duplicated_block(std::size_t k, double eps);

/// Field on a rows x cols grid with covariance a_row^|dy| * a_col^|dx|. Its
/// precision is a Kronecker product of tridiagonal chains, so every site
/// couples only to its 3x3 neighbourhood.
GaussianSpec separable_field(std::size_t rows, std::size_t cols, double a_row, double a_col);

/// rows x cols bit grids whose bottom half repeats the top half.
Dataset duplicated_bit_grid(std::size_t rows, std::size_t cols, std::size_t n_samples, std::uint64_t seed);

Dataset fair_bits(std::size_t dim, std::size_t n_samples, std::uint64_t seed);

} // namespace miscale::synth
