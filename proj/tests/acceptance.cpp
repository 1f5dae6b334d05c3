// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "miscale/analysis.h"
#include "miscale/autoregressive.h"
#include "miscale/knn.h"
#include "miscale/mine.h"
#include "miscale/nn.h"
#include "miscale/synthetic.h"

using namespace miscale;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi, std::size_t step = 1)
{
    std::vector<std::size_t> v;
    for (std::size_t L = lo; L <= hi; L += step) v.push_back(L);
    return v;
}

Partition lr_cut(const Dataset& d, std::size_t L)
{
    return make_partition(PartitionFamily::LR, L, PartitionGeometry::of(d));
}

nn::NetworkSpec dense_relu(std::size_t in, std::size_t width, std::uint64_t seed)
{
    nn::NetworkSpec s;
    s.input = {1, 1, in};
    s.init_seed = seed;
    s.layers = {nn::LayerSpec::dense(in, width, nn::Activation::ReLU), nn::LayerSpec::dense(width, width, nn::Activation::ReLU),
                nn::LayerSpec::dense(width, 1)};
    return s;
}

std::size_t rank_of(const std::vector<analysis::FitResult>& ranked, analysis::Model m)
{
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i].model == m) return i;
    return ranked.size();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const double rho_mi = -0.5 * std::log(1 - 0.81);

// ---------------------------------------------------------------------------

Verdict ac1()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto spec = synth::correlated_pair(0.9);
    const Dataset d = synth::sample_gaussian(spec, 10000, 1);
    const double exact = synth::exact_gaussian_mi(spec, lr_cut(d, 1));
    const double est = knn::knn_mi(d, lr_cut(d, 1), {}).value;
    const double dt = seconds_since(t0);
    const Dataset ind = synth::sample_gaussian(synth::independent_blocks(1, 1), 10000, 2);
    const double zero = knn::knn_mi(ind, lr_cut(ind, 1), {}).value;
    return {std::abs(est - exact) <= 0.05 && dt < 10 && std::abs(zero) < 0.03,
            fmt("rho=0.9: %.4f vs %.4f in %.2fs; independent: %.4f", est, exact, dt, zero)};
}

Verdict ac2()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto Ls = range(4, 64);
    const auto nu = [&](double alpha) {
        const auto c = synth::expected_pair_mi_curve({512, alpha, 2, false}, Ls, 200, 1);
        return analysis::fit(c, analysis::Model::Power, {4, 64}).param("nu");
    };
    const double nu15 = nu(1.5), nu118 = nu(1.18);
    const double dt = seconds_since(t0);
    return {nu15 >= 0.40 && nu15 <= 0.60 && nu118 >= 0.72 && nu118 <= 0.92 && dt < 30,
            fmt("alpha=1.5: nu=%.3f [0.40,0.60]; alpha=1.18: nu=%.3f [0.72,0.92]; %.1fs", nu15, nu118, dt)};
}

Verdict ac3()
{
    std::vector<ScalingCurve> curves;
    bool all = true;
    for (std::size_t lmax : {50, 100, 200}) {
        curves.push_back(synth::expected_pair_mi_curve({lmax, 0.0, 2, true}, range(0, lmax), 1));
        all = all && analysis::classify(curves.back()).front().model == analysis::Model::AllToAll;
    }
    const double rms = analysis::collapse_rms(analysis::rescale_align(curves, true).curves);
    return {all && rms < 0.05, fmt("verdict all_to_all for all sizes: %s; collapse rms %.2e", all ? "yes" : "no", rms)};
}

Verdict ac4()
{
    const auto t0 = std::chrono::steady_clock::now();
    int inside = 0;
    bool never_above = true;
    std::ostringstream vals;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Dataset d = synth::sample_gaussian(synth::correlated_pair(0.9), 10000, 100 + s);
        mine::MineConfig c;
        c.score_net = dense_relu(2, 64, s);
        c.rng_seed = s;
        const auto e = mine::mine_train(d, lr_cut(d, 1), c).estimate;
        inside += e.value >= 0.73 && e.value <= 0.86;
        never_above = never_above && e.value <= rho_mi + 3 * e.sigma;
        vals << fmt(" %.3f", e.value);
    }
    const double dt = seconds_since(t0);
    return {inside >= 8 && never_above && dt < 120,
            fmt("%d/10 in [0.73,0.86], below exact+3sigma: %s, %.0fs;", inside, never_above ? "yes" : "no", dt) + vals.str()};
}

Verdict ac5()
{
    const auto spec = synth::separable_field(16, 16, 0.3, 0.3);
    const Dataset d = synth::sample_gaussian(spec, 10000, 7);
    const Partition p = make_partition(PartitionFamily::TB, 8, PartitionGeometry::of(d));
    std::vector<double> cnn, ffnn;
    for (std::uint64_t s = 0; s < 10; ++s)
        for (auto kind : {mine::ScoreKind::Cnn, mine::ScoreKind::Ffnn}) {
            mine::MineConfig c;
            c.score_net = mine::make_score_net(kind, d, {}, s);
            c.input = mine::default_input(kind);
            c.iterations = 1000;
            c.eval_window = 100;
            c.rng_seed = s;
            (kind == mine::ScoreKind::Cnn ? cnn : ffnn).push_back(mine::mine_train(d, p, c).estimate.value);
        }
    const double mc = median(cnn), mf = median(ffnn);
    return {mc >= mf - 0.02, fmt("median cnn %.4f, ffnn %.4f, exact %.4f", mc, mf, synth::exact_gaussian_mi(spec, p))};
}

Verdict ac6()
{
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = synth::duplicated_bit_grid(8, 4, 10000, 3);
    ar::ArConfig c;
    c.bins = 2;
    c.hidden = {256};
    c.epochs = 20;
    const ar::ArModel f = ar::ar_train(d, c);
    c.ordering = ar::Ordering::RasterReverse;
    const ar::ArModel r = ar::ar_train(d, c);
    const auto e = ar::ar_mi_two_model(f, r, *f.holdout, make_partition(PartitionFamily::TB, 4, PartitionGeometry::of(d)));
    const double dt = seconds_since(t0);
    const double target = 16 * std::log(2.0);
    const double rel = std::abs(e.value / target - 1);
    const double gap = e.diagnostics.at("consistency_gap") / e.diagnostics.at("S_fwd_AB");
    return {rel <= 0.05 && gap <= 0.03 && dt < 180,
            fmt("%.3f vs %.3f (%.2f%%), consistency gap %.2f%% of S(AB), %.1fs", e.value, target, 100 * rel, 100 * gap, dt)};
}

Verdict ac7()
{
    const auto m = synth::sample_matching({64, 1.5, 2, false}, 3);
    const Dataset d = synth::sample_pairs(m, 2, 10000, 4);
    const Partition p = lr_cut(d, 32);
    const double exact = synth::exact_pair_mi(m, 2, 32);

    const double k = knn::knn_mi(d, p, {}).value;

    mine::MineConfig mc;
    mc.score_net = dense_relu(64, 128, 1);
    mc.rng_seed = 1;
    const double mi = mine::mine_train(d, p, mc).estimate.value;

    ar::ArConfig ac;
    ac.bins = 2;
    ac.hidden = {128};
    ac.epochs = 20;
    const ar::ArModel f = ar::ar_train(d, ac);
    ac.ordering = ar::Ordering::RasterReverse;
    const ar::ArModel r = ar::ar_train(d, ac);
    const double a = ar::ar_mi_two_model(f, r, *f.holdout, p).value;

    const auto ok = [&](double v) { return std::abs(v / exact - 1) <= 0.15; };
    return {ok(k) && ok(mi) && ok(a), fmt("exact %.3f; knn %.3f (%+.1f%%), mine %.3f (%+.1f%%), ar %.3f (%+.1f%%)", exact, k,
                                          100 * (k / exact - 1), mi, 100 * (mi / exact - 1), a, 100 * (a / exact - 1))};
}

Verdict ac8()
{
    const Dataset d = synth::sample_gaussian(synth::ar1_chain(12, 0.9), 10000, 11);
    const auto curves = knn::knn_collapse_check(d, PartitionFamily::LR, range(1, 11), {{5, 5000}, {10, 10000}}, {});
    const auto al = analysis::rescale_align(curves);
    const double dev = analysis::max_pointwise_deviation(al.curves);
    return {dev <= 0.10, fmt("max pointwise deviation %.2f%% after factor %.4f", 100 * dev, al.factors[1])};
}

Verdict ac9()
{
    const auto spec = synth::separable_field(16, 16, 0.3, 0.3);
    PartitionGeometry g;
    g.grid = GridShape{16, 16, 1};
    const auto cs = analysis::gaussian_oracle_curve(spec, PartitionFamily::CS, range(0, 16), g);
    const auto cs_rank = analysis::classify(cs);
    const bool area_first = rank_of(cs_rank, analysis::Model::Area) < rank_of(cs_rank, analysis::Model::Volume);

    const auto tb = analysis::gaussian_oracle_curve(spec, PartitionFamily::TB, range(0, 16), g);
    const auto w = analysis::interior_window(tb);
    double lo = 1e300, hi = -1e300, sig = 0;
    for (const auto& p : tb.points)
        if (p.L >= w.lo && p.L <= w.hi) {
            lo = std::min(lo, p.I);
            hi = std::max(hi, p.I);
            sig = std::max(sig, p.sigma);
        }
    // oracle sigma is 0, leave room for roundoff
    const bool flat = hi - lo <= 2 * sig + 1e-9;
    const bool plateau = analysis::classify(tb).front().model == analysis::Model::Plateau;
    return {area_first && flat && plateau, fmt("CS top=%s, area above volume: %s; TB interior spread %.1e, top=%s",
                                               analysis::to_string(cs_rank.front().model), area_first ? "yes" : "no",
                                               hi - lo, analysis::to_string(analysis::classify(tb).front().model))};
}

Verdict ac10()
{
    double worst = 0;
    for (const auto& r : nn::gradient_check_suite(1)) worst = std::max(worst, r.max_rel_error);

    // every estimator twice with the same seeds
    const Dataset g = synth::sample_gaussian(synth::correlated_pair(0.9), 3000, 5);
    const bool knn_same = knn::knn_mi(g, lr_cut(g, 1), {}).value == knn::knn_mi(g, lr_cut(g, 1), {}).value;
    mine::MineConfig mc;
    mc.score_net = mine::make_score_net(mine::ScoreKind::Ffnn, g, {16}, 2);
    mc.iterations = 200;
    mc.eval_window = 50;
    const auto m1 = mine::mine_train(g, lr_cut(g, 1), mc), m2 = mine::mine_train(g, lr_cut(g, 1), mc);
    const bool mine_same = m1.bound == m2.bound && m1.estimate.value == m2.estimate.value;
    const Dataset bits = synth::duplicated_bit_grid(2, 4, 1000, 6);
    ar::ArConfig ac;
    ac.bins = 2;
    ac.hidden = {32};
    ac.epochs = 2;
    const auto a1 = ar::ar_train(bits, ac), a2 = ar::ar_train(bits, ac);
    const bool ar_same = ar::conditional_log_probs(a1, *a1.holdout) == ar::conditional_log_probs(a2, *a2.holdout);
    const bool synth_same = synth::sample_gaussian(synth::ar1_chain(5, 0.5), 100, 9).samples() ==
                            synth::sample_gaussian(synth::ar1_chain(5, 0.5), 100, 9).samples();

    return {worst < 1e-4 && knn_same && mine_same && ar_same && synth_same,
            fmt("gradcheck max rel error %.2e; reproducible knn/mine/ar/synth: %d%d%d%d", worst, knn_same, mine_same, ar_same,
                synth_same)};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
        {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10},
    };
    // optional filter: acceptance AC3 AC9
    const std::vector<std::string> only(argv + 1, argv + argc);
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += !v.pass;
        std::printf("%s %s (%.1fs) %s\n", name, v.pass ? "PASS" : "FAIL", seconds_since(t0), v.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
