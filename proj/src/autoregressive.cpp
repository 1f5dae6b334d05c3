#include "miscale/autoregressive.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace miscale::ar {

const char* to_string(Ordering o) { return o == Ordering::RasterForward ? "raster_forward" : "raster_reverse"; }

void ArConfig::validate() const
{
    if (bins < 2) throw Error(ErrorKind::Spec, "autoregressive model needs at least 2 bins");
    if (batch_size < 1 || epochs < 1) throw Error(ErrorKind::Spec, "batch size and epochs must be positive");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw Error(ErrorKind::Spec, "holdout fraction must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::Spec, "learning rate must be positive");
}

nn::NetworkSpec made_network(std::size_t dim, int bins, const std::vector<std::size_t>& hidden, std::uint64_t seed)
{
    if (dim == 0) throw Error(ErrorKind::Spec, "autoregressive model needs D >= 1");
    const auto nb = static_cast<std::size_t>(bins);
    nn::NetworkSpec spec;
    spec.input = {1, 1, dim};
    spec.init_seed = seed;

    // Degrees: input at position i has degree i+1; hidden units take degrees in
    // [1, D-1]; the output for position i may see hidden degrees <= i.
    std::vector<std::size_t> prev(dim);
    std::iota(prev.begin(), prev.end(), 1);
    const std::size_t span = std::max<std::size_t>(1, dim - 1);
    for (std::size_t width : hidden) {
        std::vector<std::size_t> deg(width);
        for (std::size_t h = 0; h < width; ++h) deg[h] = dim == 1 ? dim : h % span + 1;
        Matrix mask(static_cast<Eigen::Index>(prev.size()), static_cast<Eigen::Index>(width));
        for (std::size_t r = 0; r < prev.size(); ++r)
            for (std::size_t c = 0; c < width; ++c)
                mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = deg[c] >= prev[r] ? 1.0 : 0.0;
        nn::LayerSpec layer = nn::LayerSpec::dense(prev.size(), width, nn::Activation::ReLU);
        layer.mask = std::move(mask);
        spec.layers.push_back(std::move(layer));
        prev = std::move(deg);
    }
    Matrix mask(static_cast<Eigen::Index>(prev.size()), static_cast<Eigen::Index>(dim * nb));
    for (std::size_t r = 0; r < prev.size(); ++r)
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t v = 0; v < nb; ++v)
                mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i * nb + v)) = i + 1 > prev[r] ? 1.0 : 0.0;
    nn::LayerSpec out = nn::LayerSpec::dense(prev.size(), dim * nb);
    out.mask = std::move(mask);
    spec.layers.push_back(std::move(out));
    return spec;
}

std::size_t ArModel::column(std::size_t position) const
{
    return ordering == Ordering::RasterForward ? position : dim() - 1 - position;
}

namespace {

void check_discrete(const Dataset& data, int bins)
{
    const Matrix& m = data.samples();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double v = m.data()[i];
        if (v != std::floor(v) || v < 0.0 || v >= bins)
            throw Error(ErrorKind::Modality, "autoregressive estimator needs integer data in [0, bins); discretize first");
    }
}

// Rows in ordering order, scaled to [-1, 1].
Matrix encode(const Matrix& samples, Ordering ordering, int bins)
{
    Matrix x = samples;
    if (ordering == Ordering::RasterReverse) x = samples.rowwise().reverse();
    return x.array() * (2.0 / (bins - 1)) - 1.0;
}

// Per-position log-probabilities of the observed values; optionally the
// gradient of the summed negative log-likelihood w.r.t. the logits.
Matrix log_likelihoods(const Matrix& logits, const Matrix& ordered_values, int bins, Matrix* grad)
{
    const Eigen::Index n = logits.rows();
    const Eigen::Index d = ordered_values.cols();
    Matrix lp(n, d);
    if (grad) grad->resize(logits.rows(), logits.cols());
    for (Eigen::Index s = 0; s < n; ++s)
        for (Eigen::Index i = 0; i < d; ++i) {
            const double* z = logits.row(s).data() + i * bins;
            const double m = *std::max_element(z, z + bins);
            double sum = 0.0;
            for (int v = 0; v < bins; ++v) sum += std::exp(z[v] - m);
            const double lse = m + std::log(sum);
            const int obs = static_cast<int>(ordered_values(s, i));
            lp(s, i) = z[obs] - lse;
            if (grad) {
                double* g = grad->row(s).data() + i * bins;
                for (int v = 0; v < bins; ++v) g[v] = std::exp(z[v] - lse) - (v == obs ? 1.0 : 0.0);
            }
        }
    return lp;
}

Matrix ordered(const Matrix& samples, Ordering ordering)
{
    return ordering == Ordering::RasterReverse ? Matrix(samples.rowwise().reverse()) : samples;
}

} // namespace

ArModel ar_train(const Dataset& data, const ArConfig& cfg)
{
    cfg.validate();
    check_discrete(data, cfg.bins);
    const std::size_t n = data.size();
    const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.holdout_fraction * n)));
    if (n_hold >= n || n - n_hold < cfg.batch_size)
        throw Error(ErrorKind::InsufficientData, "training split smaller than one batch after holding out "
                                                     + std::to_string(n_hold) + " of " + std::to_string(n) + " samples");

    std::mt19937_64 rng(cfg.rng_seed);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::size_t> hold(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
    std::sort(hold.begin(), hold.end());

    ArModel model{nn::Network(made_network(data.dim(), cfg.bins, cfg.hidden, rng())), cfg.ordering, cfg.bins, {}, {},
                  data.rows(hold)};
    const Matrix x_all = encode(data.samples(), cfg.ordering, cfg.bins);
    const Matrix v_all = ordered(data.samples(), cfg.ordering);
    const Matrix x_hold = encode(model.holdout->samples(), cfg.ordering, cfg.bins);
    const Matrix v_hold = ordered(model.holdout->samples(), cfg.ordering);

    nn::AdamState adam;
    adam.learning_rate = cfg.learning_rate;
    const auto d = static_cast<Eigen::Index>(data.dim());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        double nll_sum = 0.0;
        for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(train.size(), start + cfg.batch_size);
            const auto bs = static_cast<Eigen::Index>(stop - start);
            Matrix xb(bs, d), vb(bs, d);
            for (Eigen::Index r = 0; r < bs; ++r) {
                xb.row(r) = x_all.row(static_cast<Eigen::Index>(train[start + static_cast<std::size_t>(r)]));
                vb.row(r) = v_all.row(static_cast<Eigen::Index>(train[start + static_cast<std::size_t>(r)]));
            }
            const Matrix logits = model.net.forward(xb, true, rng());
            Matrix grad;
            const Matrix lp = log_likelihoods(logits, vb, cfg.bins, &grad);
            nll_sum -= lp.sum();
            grad /= static_cast<double>(bs);
            model.net.backward(grad, false);
            nn::adam_step(adam, model.net.parameters());
        }
        model.train_nll.push_back(nll_sum / static_cast<double>(train.size()));
        const Matrix lp_hold = log_likelihoods(model.net.predict(x_hold), v_hold, cfg.bins, nullptr);
        model.holdout_nll.push_back(-lp_hold.sum() / static_cast<double>(n_hold));
    }
    return model;
}

Matrix conditional_log_probs(const ArModel& model, const Dataset& data)
{
    if (data.dim() != model.dim()) throw Error(ErrorKind::Bounds, "dataset width differs from the model");
    check_discrete(data, model.bins);
    return log_likelihoods(model.net.predict(encode(data.samples(), model.ordering, model.bins)),
                           ordered(data.samples(), model.ordering), model.bins, nullptr);
}

Matrix conditionals(const ArModel& model, std::span<const double> sample)
{
    if (sample.size() != model.dim()) throw Error(ErrorKind::Bounds, "sample width differs from the model");
    Matrix row(1, static_cast<Eigen::Index>(sample.size()));
    for (std::size_t j = 0; j < sample.size(); ++j) row(0, static_cast<Eigen::Index>(j)) = sample[j];
    const Matrix logits = model.net.predict(encode(row, model.ordering, model.bins));
    Matrix probs(static_cast<Eigen::Index>(sample.size()), model.bins);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const double* z = logits.row(0).data() + i * model.bins;
        const double m = *std::max_element(z, z + model.bins);
        double sum = 0.0;
        for (int v = 0; v < model.bins; ++v) sum += probs(i, v) = std::exp(z[v] - m);
        probs.row(i) /= sum;
    }
    return probs;
}

double ar_entropy_prefix(const ArModel& model, const Dataset& eval_data, std::size_t k)
{
    if (k > model.dim()) throw Error(ErrorKind::Bounds, "prefix length exceeds D");
    if (k == 0) return 0.0;
    const Matrix lp = conditional_log_probs(model, eval_data);
    return -lp.leftCols(static_cast<Eigen::Index>(k)).sum() / static_cast<double>(eval_data.size());
}

MIEstimate ar_mi_two_model(const ArModel& fwd, const ArModel& rev, const Dataset& eval_data, const Partition& partition)
{
    if (partition.family == PartitionFamily::CS)
        throw Error(ErrorKind::Ordering, "center:surroundings blocks are not prefixes of a raster ordering");
    if (fwd.ordering != Ordering::RasterForward || rev.ordering != Ordering::RasterReverse)
        throw Error(ErrorKind::Ordering, "need one forward-ordered and one reverse-ordered model");
    const std::size_t d = eval_data.dim();
    if (partition.dim() != d || fwd.dim() != d || rev.dim() != d)
        throw Error(ErrorKind::Partition, "partition, models and data disagree on D");
    const std::size_t na = partition.idx_a.size();
    for (std::size_t i = 0; i < na; ++i)
        if (partition.idx_a[i] != i)
            throw Error(ErrorKind::Ordering, std::string(to_string(partition.family))
                                                 + " block A is not a prefix of the raster ordering");

    const Matrix lf = conditional_log_probs(fwd, eval_data);
    const Matrix lr = conditional_log_probs(rev, eval_data);
    const auto ka = static_cast<Eigen::Index>(na), kb = static_cast<Eigen::Index>(d - na);
    const Vector s_a = -lf.leftCols(ka).rowwise().sum();
    const Vector s_b = -lr.leftCols(kb).rowwise().sum();
    const Vector s_ab_f = -lf.rowwise().sum();
    const Vector s_ab_r = -lr.rowwise().sum();
    const Vector per_sample = s_a + s_b - 0.5 * (s_ab_f + s_ab_r);

    const double n = static_cast<double>(eval_data.size());
    const double mean = per_sample.mean();
    const double var = n > 1 ? (per_sample.array() - mean).square().sum() / (n - 1.0) : 0.0;

    MIEstimate est;
    est.method = "ar";
    est.value = mean;
    est.sigma = std::sqrt(var / n);
    est.diagnostics = {{"S_fwd_A", s_a.mean()},
                       {"S_rev_B", s_b.mean()},
                       {"S_fwd_AB", s_ab_f.mean()},
                       {"S_rev_AB", s_ab_r.mean()},
                       {"consistency_gap", std::abs(s_ab_f.mean() - s_ab_r.mean())},
                       {"samples", n}};
    return est;
}

void write_entropy_curve_csv(const std::filesystem::path& path, const ArModel& fwd, const ArModel& rev,
                             const Dataset& eval_data, const std::vector<std::size_t>& Ls)
{
    const PartitionGeometry geom = PartitionGeometry::of(eval_data);
    const PartitionFamily family = geom.grid ? PartitionFamily::TB : PartitionFamily::LR;
    const Matrix lf = conditional_log_probs(fwd, eval_data);
    const Matrix lr = conditional_log_probs(rev, eval_data);
    const double n = static_cast<double>(eval_data.size());

    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "L,S_fwd,S_rev\n" << std::setprecision(17);
    for (std::size_t L : Ls) {
        const auto k = static_cast<Eigen::Index>(make_partition(family, L, geom).idx_a.size());
        // 0 - x keeps the empty prefix at 0 rather than -0
        out << L << "," << 0.0 - lf.leftCols(k).sum() / n << "," << 0.0 - lr.leftCols(k).sum() / n << "\n";
    }
}

void save_model(const ArModel& model, const std::filesystem::path& descriptor, const std::filesystem::path& blob)
{
    model.net.save(descriptor, blob, {{"ordering", to_string(model.ordering)}, {"bins", std::to_string(model.bins)}});
}

ArModel load_model(const std::filesystem::path& descriptor, const std::filesystem::path& blob)
{
    nn::Network net = nn::Network::load(descriptor, blob);
    std::ifstream in(descriptor);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const Ordering ordering
        = text.find("\"raster_reverse\"") != std::string::npos ? Ordering::RasterReverse : Ordering::RasterForward;
    const std::size_t out = net.output_shape().size();
    const int bins = static_cast<int>(out / net.spec().input.size());
    return ArModel{std::move(net), ordering, bins, {}, {}, std::nullopt};
}

} // namespace miscale::ar
