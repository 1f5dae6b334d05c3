#include "miscale/dataset.h"

#include <algorithm>
#include <cmath>
#include <random>

namespace miscale {

const char* to_string(Modality m)
{
    switch (m) {
    case Modality::Image: return "image";
    case Modality::TextEmbedding: return "text_embedding";
    case Modality::CategoricalSynthetic: return "categorical_synthetic";
    }
    return "unknown";
}

Modality modality_from_string(const std::string& s)
{
    if (s == "image") return Modality::Image;
    if (s == "text_embedding") return Modality::TextEmbedding;
    if (s == "categorical_synthetic") return Modality::CategoricalSynthetic;
    throw Error(ErrorKind::Format, "unknown modality '" + s + "'");
}

Dataset::Dataset(Matrix samples, Modality modality, std::optional<GridShape> grid,
                 std::optional<std::size_t> embed_dim)
    : samples_(std::move(samples)), modality_(modality), grid_(grid), embed_dim_(embed_dim)
{
    if (samples_.rows() < 1 || samples_.cols() < 1)
        throw Error(ErrorKind::Spec, "dataset needs N >= 1 and D >= 1");
    if (grid_ && grid_->size() != dim())
        throw Error(ErrorKind::Spec, "grid shape does not match sample width");
    if (modality_ == Modality::TextEmbedding) {
        if (!embed_dim_ || *embed_dim_ == 0 || dim() % *embed_dim_ != 0)
            throw Error(ErrorKind::Spec, "text data needs an embed_dim dividing D");
    }
    if (!samples_.allFinite())
        throw Error(ErrorKind::Spec, "dataset contains non-finite values");
}

std::optional<std::size_t> Dataset::seq_len() const
{
    if (modality_ != Modality::TextEmbedding) return std::nullopt;
    return dim() / *embed_dim_;
}

Dataset Dataset::head(std::size_t n) const
{
    n = std::min(n, size());
    return Dataset(samples_.topRows(static_cast<Eigen::Index>(n)), modality_, grid_, embed_dim_);
}

Dataset Dataset::rows(std::span<const std::size_t> indices) const
{
    Matrix out(static_cast<Eigen::Index>(indices.size()), samples_.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw Error(ErrorKind::Bounds, "row index out of range");
        out.row(static_cast<Eigen::Index>(i)) = samples_.row(static_cast<Eigen::Index>(indices[i]));
    }
    return Dataset(std::move(out), modality_, grid_, embed_dim_);
}

bool Dataset::operator==(const Dataset& other) const
{
    return modality_ == other.modality_ && grid_ == other.grid_ && embed_dim_ == other.embed_dim_
        && samples_.rows() == other.samples_.rows() && samples_.cols() == other.samples_.cols()
        && samples_ == other.samples_;
}

const char* to_string(PartitionFamily f)
{
    switch (f) {
    case PartitionFamily::LR: return "LR";
    case PartitionFamily::TB: return "TB";
    case PartitionFamily::CS: return "CS";
    }
    return "?";
}

PartitionFamily family_from_string(const std::string& s)
{
    if (s == "LR") return PartitionFamily::LR;
    if (s == "TB") return PartitionFamily::TB;
    if (s == "CS") return PartitionFamily::CS;
    throw Error(ErrorKind::Family, "unknown partition family '" + s + "'");
}

PartitionGeometry PartitionGeometry::of(const Dataset& data)
{
    PartitionGeometry g;
    g.grid = data.grid();
    if (data.modality() == Modality::TextEmbedding) {
        g.seq_len = data.seq_len();
        g.embed_dim = *data.embed_dim();
    } else if (!g.grid) {
        g.seq_len = data.dim();
    }
    return g;
}

std::size_t partition_extent(PartitionFamily family, const PartitionGeometry& geom)
{
    if (geom.grid) {
        switch (family) {
        case PartitionFamily::TB: return geom.grid->rows;
        case PartitionFamily::LR: return geom.grid->cols;
        case PartitionFamily::CS: return std::min(geom.grid->rows, geom.grid->cols);
        }
    }
    if (!geom.seq_len) throw Error(ErrorKind::Family, "partition needs a grid shape or a sequence length");
    if (family != PartitionFamily::LR)
        throw Error(ErrorKind::Family, std::string(to_string(family)) + " partition requires 2-D grid data");
    return *geom.seq_len;
}

Partition make_partition(PartitionFamily family, std::size_t L, const PartitionGeometry& geom)
{
    const std::size_t lmax = partition_extent(family, geom);
    if (L > lmax)
        throw Error(ErrorKind::Bounds, "cut L=" + std::to_string(L) + " exceeds Lmax=" + std::to_string(lmax));

    Partition p;
    p.family = family;
    p.L = L;
    p.Lmax = lmax;

    std::size_t total = 0;
    std::vector<char> in_a;
    if (geom.grid) {
        const auto& g = *geom.grid;
        total = g.size();
        in_a.assign(total, 0);
        std::size_t r0 = 0, r1 = g.rows, c0 = 0, c1 = g.cols;
        switch (family) {
        case PartitionFamily::TB: r1 = L; break;
        case PartitionFamily::LR: c1 = L; break;
        case PartitionFamily::CS:
            r0 = (g.rows - L) / 2;
            c0 = (g.cols - L) / 2;
            r1 = r0 + L;
            c1 = c0 + L;
            break;
        }
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c)
                for (std::size_t ch = 0; ch < g.channels; ++ch)
                    in_a[(r * g.cols + c) * g.channels + ch] = 1;
    } else {
        total = *geom.seq_len * geom.embed_dim;
        in_a.assign(total, 0);
        std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(L * geom.embed_dim), 1);
    }

    for (std::size_t i = 0; i < total; ++i)
        (in_a[i] ? p.idx_a : p.idx_b).push_back(i);
    return p;
}

Matrix select_columns(const Matrix& samples, std::span<const std::size_t> columns)
{
    Matrix out(samples.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = samples.col(static_cast<Eigen::Index>(columns[j]));
    return out;
}

void DiscretizationSpec::validate() const
{
    if (bins < 2) throw Error(ErrorKind::Spec, "discretization needs at least 2 bins");
    if (!(lo < hi)) throw Error(ErrorKind::Spec, "discretization range needs lo < hi");
}

int DiscretizationSpec::bin_of(double v) const
{
    const double c = std::clamp(v, lo, hi);
    const int b = static_cast<int>(std::floor((c - lo) / (hi - lo) * bins));
    return std::min(b, bins - 1);
}

Dataset discretize(const Dataset& data, const DiscretizationSpec& spec)
{
    spec.validate();
    Matrix out = data.samples().unaryExpr([&](double v) { return static_cast<double>(spec.bin_of(v)); });
    return Dataset(std::move(out), Modality::CategoricalSynthetic, data.grid(),
                   data.modality() == Modality::TextEmbedding ? data.embed_dim() : std::nullopt);
}

void cyclic_shift(std::span<const double> in, std::span<double> out, const GridShape& g,
                  std::size_t dy, std::size_t dx)
{
    for (std::size_t r = 0; r < g.rows; ++r) {
        const std::size_t rr = (r + dy) % g.rows;
        for (std::size_t c = 0; c < g.cols; ++c) {
            const std::size_t cc = (c + dx) % g.cols;
            for (std::size_t ch = 0; ch < g.channels; ++ch)
                out[(rr * g.cols + cc) * g.channels + ch] = in[(r * g.cols + c) * g.channels + ch];
        }
    }
}

Dataset random_shift(const Dataset& data, std::uint64_t seed)
{
    if (!data.grid()) throw Error(ErrorKind::Modality, "random_shift needs grid-shaped data");
    const GridShape g = *data.grid();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_row(0, g.rows - 1), pick_col(0, g.cols - 1);

    const Matrix& in = data.samples();
    Matrix out(in.rows(), in.cols());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
        const std::size_t dy = pick_row(rng);
        const std::size_t dx = pick_col(rng);
        cyclic_shift({in.row(i).data(), g.size()}, {out.row(i).data(), g.size()}, g, dy, dx);
    }
    return Dataset(std::move(out), data.modality(), data.grid(), data.embed_dim());
}

} // namespace miscale
