#include "miscale/synthetic.h"

#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace miscale::synth {

void RandomPairSpec::validate() const
{
    if (n_sites < 2 || n_sites % 2 != 0) throw Error(ErrorKind::Spec, "random pair model needs an even n_sites >= 2");
    if (alphabet < 2) throw Error(ErrorKind::Spec, "alphabet must have at least 2 symbols");
    if (!all_to_all && !(alpha > 1.0)) throw Error(ErrorKind::Spec, "alpha must exceed 1 unless all_to_all is set");
}

std::string RandomPairSpec::to_json() const
{
    nlohmann::json j;
    j["model"] = "randompair";
    j["n_sites"] = n_sites;
    j["alpha"] = alpha;
    j["alphabet"] = alphabet;
    j["all_to_all"] = all_to_all;
    return j.dump();
}

RandomPairSpec RandomPairSpec::from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    RandomPairSpec s;
    s.n_sites = j.at("n_sites").get<std::size_t>();
    s.alpha = j.value("alpha", 0.0);
    s.alphabet = j.at("alphabet").get<int>();
    s.all_to_all = j.value("all_to_all", false);
    s.validate();
    return s;
}

bool PairMatching::valid() const
{
    for (std::size_t x = 0; x < partner.size(); ++x) {
        const std::size_t y = partner[x];
        if (y >= partner.size() || y == x || partner[y] != x) return false;
    }
    return true;
}

PairMatching sample_matching(const RandomPairSpec& spec, std::uint64_t seed)
{
    spec.validate();
    const std::size_t n = spec.n_sites;
    std::vector<double> weight(n, 1.0);
    if (!spec.all_to_all)
        for (std::size_t d = 1; d < n; ++d) weight[d] = std::pow(static_cast<double>(d), -spec.alpha);

    std::mt19937_64 rng(seed);
    constexpr std::size_t unmatched = static_cast<std::size_t>(-1);
    PairMatching m{std::vector<std::size_t>(n, unmatched)};
    std::vector<double> cumulative;
    std::vector<std::size_t> candidates;
    cumulative.reserve(n);
    candidates.reserve(n);

    // Sites left of x are always matched, so candidates are the free sites right of x.
    for (std::size_t x = 0; x < n; ++x) {
        if (m.partner[x] != unmatched) continue;
        candidates.clear();
        cumulative.clear();
        double total = 0.0;
        for (std::size_t y = x + 1; y < n; ++y) {
            if (m.partner[y] != unmatched) continue;
            total += weight[y - x];
            candidates.push_back(y);
            cumulative.push_back(total);
        }
        const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        const std::size_t y = candidates[static_cast<std::size_t>(it - cumulative.begin())];
        m.partner[x] = y;
        m.partner[y] = x;
    }
    return m;
}

Dataset sample_pairs(const PairMatching& matching, int alphabet, std::size_t n_samples, std::uint64_t seed)
{
    if (!matching.valid()) throw Error(ErrorKind::Spec, "partner array is not a perfect matching");
    if (alphabet < 2) throw Error(ErrorKind::Spec, "alphabet must have at least 2 symbols");
    const std::size_t n = matching.size();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> symbol(0, alphabet - 1);

    Matrix out(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n_samples; ++i) {
        auto row = out.row(static_cast<Eigen::Index>(i));
        for (std::size_t x = 0; x < n; ++x) {
            const std::size_t y = matching.partner[x];
            if (y < x) continue;
            const double s = symbol(rng);
            row(static_cast<Eigen::Index>(x)) = s;
            row(static_cast<Eigen::Index>(y)) = s;
        }
    }
    return Dataset(std::move(out), Modality::CategoricalSynthetic);
}

double exact_pair_mi(const PairMatching& matching, int alphabet, std::size_t L)
{
    if (L > matching.size()) throw Error(ErrorKind::Bounds, "cut beyond the lattice");
    std::size_t crossings = 0;
    for (std::size_t x = 0; x < L; ++x)
        if (matching.partner[x] >= L) ++crossings;
    return static_cast<double>(crossings) * std::log(static_cast<double>(alphabet));
}

ScalingCurve expected_pair_mi_curve(const RandomPairSpec& spec, const std::vector<std::size_t>& Ls,
                                    std::size_t n_seeds, std::uint64_t seed)
{
    spec.validate();
    ScalingCurve curve;
    curve.family = PartitionFamily::LR;
    curve.Lmax = spec.n_sites;
    const double lnv = std::log(static_cast<double>(spec.alphabet));

    if (spec.all_to_all) {
        curve.method = "exact_all_to_all";
        const double lmax = static_cast<double>(spec.n_sites);
        for (std::size_t L : Ls) {
            if (L > spec.n_sites) throw Error(ErrorKind::Bounds, "cut beyond the lattice");
            const double l = static_cast<double>(L);
            curve.points.push_back({L, l * (lmax - l) / (lmax - 1.0) * lnv, 0.0});
        }
        return curve;
    }

    if (n_seeds == 0) throw Error(ErrorKind::Spec, "need at least one matching");
    curve.method = "exact_pair_mc";
    std::vector<double> sum(Ls.size(), 0.0), sumsq(Ls.size(), 0.0);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        const PairMatching m = sample_matching(spec, seed + s);
        for (std::size_t j = 0; j < Ls.size(); ++j) {
            const double v = exact_pair_mi(m, spec.alphabet, Ls[j]);
            sum[j] += v;
            sumsq[j] += v * v;
        }
    }
    const double ns = static_cast<double>(n_seeds);
    for (std::size_t j = 0; j < Ls.size(); ++j) {
        const double mean = sum[j] / ns;
        const double var = n_seeds > 1 ? std::max(0.0, (sumsq[j] - ns * mean * mean) / (ns - 1.0)) : 0.0;
        curve.points.push_back({Ls[j], mean, std::sqrt(var / ns)});
    }
    return curve;
}

void GaussianSpec::validate() const
{
    const auto d = mean.size();
    if (d < 1 || covariance.rows() != d || covariance.cols() != d)
        throw Error(ErrorKind::Spec, "covariance must be D x D with D = mean length");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw Error(ErrorKind::Spec, "covariance is not symmetric");
    if (grid && grid->size() != dim()) throw Error(ErrorKind::Spec, "grid shape does not match dimension");
    Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::Spec, "covariance is not positive definite");
}

std::string GaussianSpec::to_json() const
{
    nlohmann::json j;
    j["model"] = "gauss";
    j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < covariance.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(covariance.cols()));
        for (Eigen::Index c = 0; c < covariance.cols(); ++c) row[static_cast<std::size_t>(c)] = covariance(r, c);
        rows.push_back(row);
    }
    j["covariance"] = rows;
    if (grid) j["grid_shape"] = {grid->rows, grid->cols, grid->channels};
    return j.dump();
}

GaussianSpec GaussianSpec::from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("covariance").get<std::vector<std::vector<double>>>();
    GaussianSpec s;
    s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.covariance.resize(static_cast<Eigen::Index>(cov.size()), static_cast<Eigen::Index>(cov.size()));
    for (std::size_t r = 0; r < cov.size(); ++r) {
        if (cov[r].size() != cov.size()) throw Error(ErrorKind::Spec, "covariance is not square");
        for (std::size_t c = 0; c < cov.size(); ++c)
            s.covariance(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cov[r][c];
    }
    if (j.contains("grid_shape")) {
        const auto& g = j["grid_shape"];
        s.grid = GridShape{g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), g.at(2).get<std::size_t>()};
    }
    s.validate();
    return s;
}

Dataset sample_gaussian(const GaussianSpec& spec, std::size_t n_samples, std::uint64_t seed)
{
    spec.validate();
    const Eigen::Index d = static_cast<Eigen::Index>(spec.dim());
    const Eigen::MatrixXd lower = Eigen::LLT<Eigen::MatrixXd>(spec.covariance).matrixL();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd z(d, static_cast<Eigen::Index>(n_samples));
    for (Eigen::Index c = 0; c < z.cols(); ++c)
        for (Eigen::Index r = 0; r < d; ++r) z(r, c) = normal(rng);

    Matrix out = (lower * z).transpose();
    out.rowwise() += spec.mean.transpose();
    return Dataset(std::move(out), Modality::CategoricalSynthetic, spec.grid);
}

double logdet_spd(const Matrix& m)
{
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::NumericalRank, "block covariance is singular");
    const Eigen::VectorXd diag = llt.matrixLLT().diagonal();
    if ((diag.array() <= 0.0).any()) throw Error(ErrorKind::NumericalRank, "block covariance is singular");
    return 2.0 * diag.array().log().sum();
}

double exact_gaussian_mi(const GaussianSpec& spec, const Partition& partition)
{
    spec.validate();
    if (partition.dim() != spec.dim()) throw Error(ErrorKind::Partition, "partition does not cover the Gaussian");
    if (partition.idx_a.empty() || partition.idx_b.empty()) return 0.0;

    auto block = [&](const std::vector<std::size_t>& idx) {
        Matrix b(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < idx.size(); ++c)
                b(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))
                    = spec.covariance(static_cast<Eigen::Index>(idx[r]), static_cast<Eigen::Index>(idx[c]));
        return b;
    };
    const double mi = 0.5 * (logdet_spd(block(partition.idx_a)) + logdet_spd(block(partition.idx_b))
                             - logdet_spd(spec.covariance));
    return std::max(mi, 0.0);
}

GaussianSpec correlated_pair(double rho)
{
    if (!(std::abs(rho) < 1.0)) throw Error(ErrorKind::Spec, "|rho| must be below 1");
    GaussianSpec s;
    s.mean = Vector::Zero(2);
    s.covariance.resize(2, 2);
    s.covariance << 1.0, rho, rho, 1.0;
    return s;
}

GaussianSpec independent_blocks(std::size_t dim_a, std::size_t dim_b)
{
    const auto d = static_cast<Eigen::Index>(dim_a + dim_b);
    return GaussianSpec{Vector::Zero(d), Matrix::Identity(d, d), std::nullopt};
}

GaussianSpec ar1_chain(std::size_t n, double rho)
{
    if (!(std::abs(rho) < 1.0)) throw Error(ErrorKind::Spec, "|rho| must be below 1");
    const auto d = static_cast<Eigen::Index>(n);
    GaussianSpec s{Vector::Zero(d), Matrix(d, d), std::nullopt};
    for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c) s.covariance(r, c) = std::pow(rho, static_cast<double>(std::abs(r - c)));
    return s;
}

GaussianSpec duplicated_block(std::size_t k, double eps)
{
    const auto n = static_cast<Eigen::Index>(k);
    GaussianSpec s{Vector::Zero(2 * n), Matrix::Zero(2 * n, 2 * n), std::nullopt};
    s.covariance.topLeftCorner(n, n).setIdentity();
    s.covariance.topRightCorner(n, n).setIdentity();
    s.covariance.bottomLeftCorner(n, n).setIdentity();
    s.covariance.bottomRightCorner(n, n) = Matrix::Identity(n, n) * (1.0 + eps * eps);
    return s;
}

GaussianSpec separable_field(std::size_t rows, std::size_t cols, double a_row, double a_col)
{
    const auto d = static_cast<Eigen::Index>(rows * cols);
    GaussianSpec s{Vector::Zero(d), Matrix(d, d), GridShape{rows, cols, 1}};
    for (Eigen::Index i = 0; i < d; ++i) {
        const auto ri = i / static_cast<Eigen::Index>(cols), ci = i % static_cast<Eigen::Index>(cols);
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto rj = j / static_cast<Eigen::Index>(cols), cj = j % static_cast<Eigen::Index>(cols);
            s.covariance(i, j) = std::pow(a_row, static_cast<double>(std::abs(ri - rj)))
                               * std::pow(a_col, static_cast<double>(std::abs(ci - cj)));
        }
    }
    return s;
}

Dataset duplicated_bit_grid(std::size_t rows, std::size_t cols, std::size_t n_samples, std::uint64_t seed)
{
    if (rows % 2 != 0) throw Error(ErrorKind::Spec, "duplicated grid needs an even row count");
    const std::size_t half = rows / 2 * cols;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution bit(0.5);
    Matrix out(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(rows * cols));
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < half; ++j) {
            const double b = bit(rng) ? 1.0 : 0.0;
            out(i, static_cast<Eigen::Index>(j)) = b;
            out(i, static_cast<Eigen::Index>(j + half)) = b;
        }
    return Dataset(std::move(out), Modality::CategoricalSynthetic, GridShape{rows, cols, 1});
}

Dataset fair_bits(std::size_t dim, std::size_t n_samples, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution bit(0.5);
    Matrix out(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = bit(rng) ? 1.0 : 0.0;
    return Dataset(std::move(out), Modality::CategoricalSynthetic);
}

} // namespace miscale::synth
