#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "miscale/curve.h"
#include "miscale/dataset.h"
#include "miscale/nn.h"

namespace miscale::ar {

enum class Ordering { RasterForward, RasterReverse };

const char* to_string(Ordering o);

struct ArConfig {
    Ordering ordering = Ordering::RasterForward;
    int bins = 8;
    std::vector<std::size_t> hidden = {256};
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::size_t epochs = 20;
    std::uint64_t rng_seed = 0;
    double holdout_fraction = 0.2;

    void validate() const;
};

/// Masked dense network whose logits for the coordinate at ordering position
/// i depend only on positions < i. Output is D groups of `bins` logits.
nn::NetworkSpec made_network(std::size_t dim, int bins, const std::vector<std::size_t>& hidden, std::uint64_t seed);

struct ArModel {
    nn::Network net;
    Ordering ordering = Ordering::RasterForward;
    int bins = 2;
    std::vector<double> train_nll;   // per epoch, nats per sample
    std::vector<double> holdout_nll; // per epoch, nats per sample
    std::optional<Dataset> holdout;

    /// Column of the data visited at ordering position i.
    std::size_t column(std::size_t position) const;
    std::size_t dim() const { return net.spec().input.size(); }
};

/// Maximum-likelihood training on the non-holdout split.
ArModel ar_train(const Dataset& data, const ArConfig& cfg);

/// ln p(x_i | x_<i) for every sample (rows) and ordering position (columns).
Matrix conditional_log_probs(const ArModel& model, const Dataset& data);

/// Categorical conditionals for one sample: rows are ordering positions,
/// columns are bins.
Matrix conditionals(const ArModel& model, std::span<const double> sample);

/// Mean of -sum_{i<k} ln p(x_i | x_<i) over eval_data.
double ar_entropy_prefix(const ArModel& model, const Dataset& eval_data, std::size_t k);

/// S_fwd(A) + S_rev(B) - (S_fwd(A,B) + S_rev(A,B)) / 2 for a partition that
/// is a prefix under the forward ordering.
MIEstimate ar_mi_two_model(const ArModel& fwd, const ArModel& rev, const Dataset& eval_data, const Partition& partition);

/// Rows (L, S_fwd of the first L rows, S_rev of the last L rows) for a TB
/// sweep on grid data, or tokens on sequence data.
void write_entropy_curve_csv(const std::filesystem::path& path, const ArModel& fwd, const ArModel& rev,
                             const Dataset& eval_data, const std::vector<std::size_t>& Ls);

void save_model(const ArModel& model, const std::filesystem::path& descriptor, const std::filesystem::path& blob);
ArModel load_model(const std::filesystem::path& descriptor, const std::filesystem::path& blob);

} // namespace miscale::ar
