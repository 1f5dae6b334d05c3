#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "miscale/error.h"

namespace miscale {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Modality { Image, TextEmbedding, CategoricalSynthetic };

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct GridShape {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t channels = 1;

    std::size_t size() const { return rows * cols * channels; }
    bool operator==(const GridShape&) const = default;
};

/// N samples by D coordinates. Coordinates of a grid sample are laid out
/// row-major as (row, col, channel), channel fastest.
class Dataset {
public:
    Dataset(Matrix samples, Modality modality, std::optional<GridShape> grid = std::nullopt,
            std::optional<std::size_t> embed_dim = std::nullopt);

    std::size_t size() const { return static_cast<std::size_t>(samples_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(samples_.cols()); }

    const Matrix& samples() const { return samples_; }
    Modality modality() const { return modality_; }
    const std::optional<GridShape>& grid() const { return grid_; }
    const std::optional<std::size_t>& embed_dim() const { return embed_dim_; }

    /// Token count for text data (D / embed_dim).
    std::optional<std::size_t> seq_len() const;

    /// Copy of rows [0, n) keeping geometry.
    Dataset head(std::size_t n) const;
    Dataset rows(std::span<const std::size_t> indices) const;

    bool operator==(const Dataset& other) const;

private:
    Matrix samples_;
    Modality modality_;
    std::optional<GridShape> grid_;
    std::optional<std::size_t> embed_dim_;
};

enum class PartitionFamily { LR, TB, CS };

const char* to_string(PartitionFamily f);
PartitionFamily family_from_string(const std::string& s);

struct Partition {
    PartitionFamily family = PartitionFamily::TB;
    std::size_t L = 0;
    std::size_t Lmax = 0;
    std::vector<std::size_t> idx_a;
    std::vector<std::size_t> idx_b;

    std::size_t dim() const { return idx_a.size() + idx_b.size(); }
};

/// Geometry a partition is cut from. For text the axis is tokens of width
/// embed_dim; for grids it is rows (TB), columns (LR) or the centered block (CS).
struct PartitionGeometry {
    std::optional<GridShape> grid;
    std::optional<std::size_t> seq_len;
    std::size_t embed_dim = 1;

    static PartitionGeometry of(const Dataset& data);
};

/// Extent of the cut axis for the family.
std::size_t partition_extent(PartitionFamily family, const PartitionGeometry& geom);

Partition make_partition(PartitionFamily family, std::size_t L, const PartitionGeometry& geom);

/// Gathers the listed coordinates of every sample into a new matrix.
Matrix select_columns(const Matrix& samples, std::span<const std::size_t> columns);

struct DiscretizationSpec {
    int bins = 256;
    double lo = 0.0;
    double hi = 1.0;

    void validate() const;
    int bin_of(double v) const;
};

Dataset discretize(const Dataset& data, const DiscretizationSpec& spec);

/// Cyclic per-sample displacement by (dy, dx) uniform on the grid.
Dataset random_shift(const Dataset& data, std::uint64_t seed);

/// Shifts a single grid sample; exposed for testing the identity shift.
void cyclic_shift(std::span<const double> in, std::span<double> out, const GridShape& grid,
                  std::size_t dy, std::size_t dx);

} // namespace miscale
