#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "miscale/curve.h"
#include "miscale/dataset.h"
#include "miscale/nn.h"

namespace miscale::mine {

/// How a (A, B) pair is laid out for the score network: concatenated
/// blocks, or both blocks written back into their grid positions.
enum class ScoreInput { Concat, Grid };

enum class ScoreKind { Ffnn, Cnn };

struct ScoreOptions {
    std::size_t hidden = 500;           // ffnn hidden width
    std::size_t conv_channels = 16;
    std::size_t cnn_hidden = 128;
    double dropout = 0.25;
};

/// ffnn: dense(D, hidden, sigmoid) -> dense(hidden, 1).
/// cnn:  conv(16, 3x3, relu) -> maxpool 2 -> dropout -> flatten -> dense(relu)
///       -> dropout -> dense(1). Text data convolves along tokens (3x1 kernel).
nn::NetworkSpec make_score_net(ScoreKind kind, const Dataset& data, const ScoreOptions& opts = {},
                               std::uint64_t init_seed = 0);

ScoreInput default_input(ScoreKind kind);

struct MineConfig {
    nn::NetworkSpec score_net;
    ScoreInput input = ScoreInput::Concat;
    std::size_t batch_size = 128;
    double learning_rate = 1e-4;
    std::size_t iterations = 5000;
    double ema_rate = 0.99;
    std::size_t eval_window = 500;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct MineTrace {
    /// Batch DV bound per iteration. For score nets with dropout the values
    /// inside the trailing eval window come from an eval-mode pass.
    std::vector<double> bound;
    std::vector<double> ema_denominator;
    MIEstimate estimate;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, MineTrace trace)
        : Error(ErrorKind::Instability, what), trace_(std::move(trace)) {}
    const MineTrace& trace() const { return trace_; }

private:
    MineTrace trace_;
};

/// mean(joint) - ln mean(exp(marginal)), evaluated with a max shift.
double dv_bound(std::span<const double> scores_joint, std::span<const double> scores_marginal);

double log_mean_exp(std::span<const double> values);

/// Uniformly random permutation of [0, n) without fixed points; n >= 2.
std::vector<std::size_t> derangement(std::size_t n, std::mt19937_64& rng);

/// Rows of batch_a beside a deranged copy of batch_b's rows.
Matrix shuffle_marginals(const Matrix& batch_a, const Matrix& batch_b, std::uint64_t seed);

MineTrace mine_train(const Dataset& data, const Partition& partition, const MineConfig& cfg);

/// CSV of (iteration, bound, ema_denominator).
void write_trace_csv(const std::filesystem::path& path, const MineTrace& trace);

} // namespace miscale::mine
