#include "miscale/mine.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace miscale::mine {

using nn::Activation;
using nn::LayerSpec;

nn::NetworkSpec make_score_net(ScoreKind kind, const Dataset& data, const ScoreOptions& opts, std::uint64_t init_seed)
{
    nn::NetworkSpec spec;
    spec.init_seed = init_seed;
    const std::size_t d = data.dim();
    if (kind == ScoreKind::Ffnn) {
        spec.input = {1, 1, d};
        spec.layers = {LayerSpec::dense(d, opts.hidden, Activation::Sigmoid), LayerSpec::dense(opts.hidden, 1)};
        return spec;
    }

    std::size_t kh = 3, kw = 3, ph = 2, pw = 2;
    if (data.grid()) {
        spec.input = {data.grid()->rows, data.grid()->cols, data.grid()->channels};
    } else if (data.modality() == Modality::TextEmbedding) {
        // Tokens along the height axis, embedding as channels.
        spec.input = {*data.seq_len(), 1, *data.embed_dim()};
        kw = 1;
        pw = 1;
    } else {
        throw Error(ErrorKind::Modality, "cnn score function needs grid or token geometry");
    }
    if (spec.input.height < kh + 1 || spec.input.width < kw)
        throw Error(ErrorKind::Modality, "input too small for the cnn score function");
    spec.layers = {LayerSpec::conv2d(opts.conv_channels, kh, kw, Activation::ReLU),
                   LayerSpec::maxpool2d(ph, pw),
                   LayerSpec::dropout(opts.dropout),
                   LayerSpec::flatten(),
                   LayerSpec::dense(0, opts.cnn_hidden, Activation::ReLU),
                   LayerSpec::dropout(opts.dropout),
                   LayerSpec::dense(opts.cnn_hidden, 1)};
    return spec;
}

ScoreInput default_input(ScoreKind kind) { return kind == ScoreKind::Cnn ? ScoreInput::Grid : ScoreInput::Concat; }

void MineConfig::validate() const
{
    if (batch_size < 2) throw Error(ErrorKind::Spec, "MINE batch size must be at least 2");
    if (!(ema_rate > 0.0 && ema_rate < 1.0)) throw Error(ErrorKind::Spec, "ema_rate must lie in (0, 1)");
    if (eval_window == 0 || iterations < eval_window) throw Error(ErrorKind::Spec, "need 0 < eval_window <= iterations");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::Spec, "learning rate must be positive");
}

double log_mean_exp(std::span<const double> values)
{
    if (values.empty()) throw Error(ErrorKind::Batch, "empty score batch");
    const double m = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : values) s += std::exp(v - m);
    return m + std::log(s / static_cast<double>(values.size()));
}

double dv_bound(std::span<const double> scores_joint, std::span<const double> scores_marginal)
{
    if (scores_joint.empty() || scores_marginal.empty()) throw Error(ErrorKind::Batch, "empty score batch");
    const double mean = std::accumulate(scores_joint.begin(), scores_joint.end(), 0.0)
                      / static_cast<double>(scores_joint.size());
    return mean - log_mean_exp(scores_marginal);
}

std::vector<std::size_t> derangement(std::size_t n, std::mt19937_64& rng)
{
    if (n < 2) throw Error(ErrorKind::Batch, "a product batch needs at least 2 rows");
    std::vector<std::size_t> perm(n);
    for (;;) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        bool fixed = false;
        for (std::size_t i = 0; i < n && !fixed; ++i) fixed = perm[i] == i;
        if (!fixed) return perm;
    }
}

Matrix shuffle_marginals(const Matrix& batch_a, const Matrix& batch_b, std::uint64_t seed)
{
    if (batch_a.rows() != batch_b.rows()) throw Error(ErrorKind::Batch, "marginal batches differ in size");
    std::mt19937_64 rng(seed);
    const auto perm = derangement(static_cast<std::size_t>(batch_a.rows()), rng);
    Matrix out(batch_a.rows(), batch_a.cols() + batch_b.cols());
    for (Eigen::Index i = 0; i < batch_a.rows(); ++i) {
        out.row(i).head(batch_a.cols()) = batch_a.row(i);
        out.row(i).tail(batch_b.cols()) = batch_b.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    }
    return out;
}

namespace {

bool has_dropout(const nn::NetworkSpec& spec)
{
    return std::any_of(spec.layers.begin(), spec.layers.end(),
                       [](const LayerSpec& l) { return l.kind == nn::LayerKind::Dropout && l.rate > 0.0; });
}

std::uint64_t mix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

MineTrace mine_train(const Dataset& data, const Partition& partition, const MineConfig& cfg)
{
    cfg.validate();
    if (partition.idx_a.empty() || partition.idx_b.empty())
        throw Error(ErrorKind::Partition, "MINE needs two non-empty blocks");
    if (partition.dim() != data.dim()) throw Error(ErrorKind::Partition, "partition does not cover the dataset");
    if (data.size() < cfg.batch_size) throw Error(ErrorKind::InsufficientData, "fewer samples than one batch");

    const Matrix a = select_columns(data.samples(), partition.idx_a);
    const Matrix b = select_columns(data.samples(), partition.idx_b);
    const auto da = a.cols(), db = b.cols();

    nn::NetworkSpec spec = cfg.score_net;
    spec.init_seed ^= mix(cfg.rng_seed);
    nn::Network net(std::move(spec));
    if (net.spec().input.size() != data.dim())
        throw Error(ErrorKind::Composition, "score network input width differs from the dataset dimension");
    if (net.output_shape().size() != 1) throw Error(ErrorKind::Composition, "score network must output one value");
    const bool eval_pass = has_dropout(net.spec());

    nn::AdamState adam;
    adam.learning_rate = cfg.learning_rate;

    std::mt19937_64 rng(mix(cfg.rng_seed ^ 0xa5a5a5a5ULL));
    std::vector<std::size_t> pool(data.size());
    std::iota(pool.begin(), pool.end(), 0);

    const std::size_t bs = cfg.batch_size;
    const auto rows = static_cast<Eigen::Index>(bs);
    Matrix x(2 * rows, static_cast<Eigen::Index>(data.dim()));
    auto place = [&](Eigen::Index row, std::size_t ia, std::size_t ib) {
        if (cfg.input == ScoreInput::Concat) {
            x.row(row).head(da) = a.row(static_cast<Eigen::Index>(ia));
            x.row(row).tail(db) = b.row(static_cast<Eigen::Index>(ib));
            return;
        }
        for (Eigen::Index j = 0; j < da; ++j)
            x(row, static_cast<Eigen::Index>(partition.idx_a[static_cast<std::size_t>(j)])) = a(static_cast<Eigen::Index>(ia), j);
        for (Eigen::Index j = 0; j < db; ++j)
            x(row, static_cast<Eigen::Index>(partition.idx_b[static_cast<std::size_t>(j)])) = b(static_cast<Eigen::Index>(ib), j);
    };

    MineTrace trace;
    trace.bound.reserve(cfg.iterations);
    trace.ema_denominator.reserve(cfg.iterations);
    double log_ema = 0.0;
    const double log_keep = std::log(cfg.ema_rate), log_new = std::log1p(-cfg.ema_rate);
    std::vector<double> tj(bs), tm(bs);
    Matrix upstream(2 * rows, 1);

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t j = 0; j < bs; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
            std::swap(pool[j], pool[pick(rng)]);
        }
        const auto perm = derangement(bs, rng);
        for (std::size_t j = 0; j < bs; ++j) {
            place(static_cast<Eigen::Index>(j), pool[j], pool[j]);
            place(static_cast<Eigen::Index>(bs + j), pool[j], pool[perm[j]]);
        }

        const Matrix out = net.forward(x, true, rng());
        for (std::size_t j = 0; j < bs; ++j) {
            tj[j] = out(static_cast<Eigen::Index>(j), 0);
            tm[j] = out(static_cast<Eigen::Index>(bs + j), 0);
        }
        const double lme = log_mean_exp(tm);
        log_ema = it == 0 ? lme : std::max(log_keep + log_ema, log_new + lme)
                                      + std::log1p(std::exp(-std::abs((log_keep + log_ema) - (log_new + lme))));

        double bound = dv_bound(tj, tm);
        // Dropout nets: the trailing window reports the deterministic (eval) bound.
        if (eval_pass && it + cfg.eval_window >= cfg.iterations) {
            const Matrix eval = net.predict(x);
            for (std::size_t j = 0; j < bs; ++j) {
                tj[j] = eval(static_cast<Eigen::Index>(j), 0);
                tm[j] = eval(static_cast<Eigen::Index>(bs + j), 0);
            }
            bound = dv_bound(tj, tm);
        }
        trace.bound.push_back(bound);
        trace.ema_denominator.push_back(std::exp(log_ema));
        if (!std::isfinite(bound) || bound > 50.0 || !std::isfinite(log_ema))
            throw TrainingDiverged("MINE bound diverged at iteration " + std::to_string(it), trace);

        // Loss = -bound; the ln E[e^T] gradient uses the moving-average denominator.
        const double inv = 1.0 / static_cast<double>(bs);
        for (std::size_t j = 0; j < bs; ++j) {
            upstream(static_cast<Eigen::Index>(j), 0) = -inv;
            upstream(static_cast<Eigen::Index>(bs + j), 0) = inv * std::exp(out(static_cast<Eigen::Index>(bs + j), 0) - log_ema);
        }
        net.backward(upstream, false);
        nn::adam_step(adam, net.parameters());
    }

    const std::size_t w = cfg.eval_window;
    const auto first = trace.bound.end() - static_cast<std::ptrdiff_t>(w);
    const double mean = std::accumulate(first, trace.bound.end(), 0.0) / static_cast<double>(w);
    double var = 0.0;
    for (auto p = first; p != trace.bound.end(); ++p) var += (*p - mean) * (*p - mean);
    var /= std::max<double>(1.0, static_cast<double>(w) - 1.0);

    trace.estimate.method = "mine";
    trace.estimate.value = mean;
    trace.estimate.sigma = std::sqrt(var / static_cast<double>(w));
    trace.estimate.diagnostics = {{"iterations", static_cast<double>(cfg.iterations)},
                                  {"eval_window", static_cast<double>(w)},
                                  {"batch_size", static_cast<double>(bs)},
                                  {"window_std", std::sqrt(var)},
                                  {"samples", static_cast<double>(data.size())},
                                  {"parameters", static_cast<double>(net.parameter_count())}};
    return trace;
}

void write_trace_csv(const std::filesystem::path& path, const MineTrace& trace)
{
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "iteration,bound,ema_denominator\n" << std::setprecision(17);
    for (std::size_t i = 0; i < trace.bound.size(); ++i)
        out << i << "," << trace.bound[i] << "," << trace.ema_denominator[i] << "\n";
}

} // namespace miscale::mine
