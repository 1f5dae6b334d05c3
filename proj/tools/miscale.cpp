// miscale: synthesize, ingest, estimate, scan, fit and report MI scaling curves.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "miscale/analysis.h"
#include "miscale/autoregressive.h"
#include "miscale/io.h"
#include "miscale/knn.h"
#include "miscale/mine.h"
#include "miscale/synthetic.h"

using namespace miscale;
using nlohmann::json;
using namespace miscale::io;

namespace {

// Exit codes: 2 usage / validation, 3 estimation failure.
struct Exit {
    int code;
    std::string message;
};

template <typename Fn>
auto estimating(Fn fn)
{
    try {
        return fn();
    } catch (const Error& e) {
        throw Exit{3, e.what()};
    }
}

std::vector<std::size_t> parse_Ls(const std::string& text)
{
    std::vector<std::size_t> out;
    try {
        if (text.find(':') != std::string::npos) {
            std::vector<std::size_t> f;
            std::stringstream ss(text);
            for (std::string cell; std::getline(ss, cell, ':');) f.push_back(std::stoul(cell));
            if (f.size() < 2 || f.size() > 3 || (f.size() == 3 && f[2] == 0) || f[0] > f[1]) throw std::invalid_argument("");
            const std::size_t step = f.size() == 3 ? f[2] : 1;
            for (std::size_t L = f[0]; L <= f[1]; L += step) out.push_back(L);
        } else {
            std::stringstream ss(text);
            for (std::string cell; std::getline(ss, cell, ',');) out.push_back(std::stoul(cell));
        }
    } catch (const std::logic_error&) {
        throw Error(ErrorKind::Spec, "bad L list '" + text + "'; use lo:hi[:step] or a,b,c");
    }
    if (out.empty()) throw Error(ErrorKind::Spec, "empty L list");
    return out;
}

analysis::Window parse_window(const std::string& text)
{
    const auto colon = text.find(':');
    try {
        if (colon == std::string::npos) throw std::invalid_argument("");
        return {std::stoul(text.substr(0, colon)), std::stoul(text.substr(colon + 1))};
    } catch (const std::logic_error&) {
        throw Error(ErrorKind::Spec, "bad window '" + text + "'; use lo:hi");
    }
}

void write_json(const std::string& path, const json& j)
{
    if (path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out << j.dump(2) << "\n";
}

// Every option of the subcommand as given or defaulted.
json resolved_config(const CLI::App* app)
{
    json cfg;
    cfg["command"] = app->get_name();
    for (const CLI::Option* opt : app->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config") continue;
        const auto& results = opt->results();
        if (!results.empty()) {
            // repeated single-valued flags (config file then command line) keep the last
            const bool last = opt->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeLast;
            cfg[name] = results.size() == 1 || last ? json(results.back()) : json(results);
        } else if (!opt->get_default_str().empty()) {
            cfg[name] = opt->get_default_str();
        }
    }
    for (const CLI::App* sub : app->get_subcommands()) cfg[sub->get_name()] = resolved_config(sub);
    return cfg;
}

struct Clock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// Estimator flags shared by estimate and scan.
struct EstimatorFlags {
    std::string data;
    std::string method = "knn";
    std::string family = "LR";
    std::size_t k = 5;
    double noise = 1e-10;
    std::string score = "ffnn";
    std::size_t hidden = 500;
    std::size_t conv_channels = 16;
    std::size_t cnn_hidden = 128;
    double dropout = 0.25;
    std::size_t iterations = 5000;
    std::size_t eval_window = 500;
    double ema = 0.99;
    std::size_t batch = 128;
    std::optional<double> lr;
    int bins = 8;
    std::size_t epochs = 20;
    std::vector<std::size_t> ar_hidden{256};
    double holdout = 0.2;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void attach(CLI::App* app)
    {
        app->add_option("--data", data, "raw tensor file")->required();
        app->add_option("--method", method, "knn | mine | ar")->check(CLI::IsMember({"knn", "mine", "ar"}))->capture_default_str();
        app->add_option("--family", family, "LR | TB | CS")->check(CLI::IsMember({"LR", "TB", "CS"}))->capture_default_str();
        app->add_option("--k", k, "kNN neighbour count")->capture_default_str();
        app->add_option("--noise", noise, "kNN tie-breaking jitter")->capture_default_str();
        app->add_option("--score", score, "MINE score network: ffnn | cnn")->check(CLI::IsMember({"ffnn", "cnn"}))->capture_default_str();
        app->add_option("--hidden", hidden, "ffnn hidden width")->capture_default_str();
        app->add_option("--conv-channels", conv_channels)->capture_default_str();
        app->add_option("--cnn-hidden", cnn_hidden)->capture_default_str();
        app->add_option("--dropout", dropout)->capture_default_str();
        app->add_option("--iterations", iterations, "MINE iterations")->capture_default_str();
        app->add_option("--eval-window", eval_window, "MINE trailing window")->capture_default_str();
        app->add_option("--ema", ema, "MINE moving-average rate")->capture_default_str();
        app->add_option("--batch", batch)->capture_default_str();
        app->add_option("--lr", lr, "learning rate (mine 1e-4, ar 1e-3)");
        app->add_option("--bins", bins, "AR categorical levels")->capture_default_str();
        app->add_option("--epochs", epochs, "AR epochs")->capture_default_str();
        app->add_option("--ar-hidden", ar_hidden, "AR hidden widths")->capture_default_str()->expected(1, 8);
        app->add_option("--holdout", holdout, "AR holdout fraction")->capture_default_str();
        app->add_option("--seed", seed)->capture_default_str();
        app->add_option("--jobs", jobs, "worker threads")->envname("MISCALE_JOBS")->capture_default_str();
    }

    analysis::EstimatorConfig make(const Dataset& d) const
    {
        if (method == "knn") {
            knn::KnnConfig c;
            c.k = k;
            c.noise_amplitude = noise;
            c.jitter_seed = seed;
            c.threads = jobs;
            return analysis::KnnEstimator{c};
        }
        if (method == "mine") {
            const auto kind = score == "cnn" ? mine::ScoreKind::Cnn : mine::ScoreKind::Ffnn;
            mine::MineConfig c;
            c.score_net = mine::make_score_net(kind, d, {hidden, conv_channels, cnn_hidden, dropout}, seed);
            c.input = mine::default_input(kind);
            c.batch_size = batch;
            c.learning_rate = lr.value_or(1e-4);
            c.iterations = iterations;
            c.ema_rate = ema;
            c.eval_window = eval_window;
            c.rng_seed = seed;
            c.validate();
            return analysis::MineEstimator{c};
        }
        ar::ArConfig c;
        c.bins = bins;
        c.hidden = ar_hidden;
        c.batch_size = batch;
        c.learning_rate = lr.value_or(1e-3);
        c.epochs = epochs;
        c.rng_seed = seed;
        c.holdout_fraction = holdout;
        c.validate();
        return analysis::ArEstimator{c};
    }
};

json estimate_json(const MIEstimate& e)
{
    return {{"value", e.value}, {"sigma", e.sigma}, {"method", e.method}, {"diagnostics", e.diagnostics}};
}

// synth ---------------------------------------------------------------------

struct SynthFlags {
    std::string model;
    std::optional<double> alpha;
    std::size_t sites = 64;
    int alphabet = 2;
    bool all_to_all = false;
    std::string kind = "pair";
    double rho = 0.9;
    std::size_t dim_a = 1, dim_b = 1, n = 16, rows = 16, cols = 16;
    double a_row = 0.5, a_col = 0.5;
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_synth(const SynthFlags& f, const CLI::App* app)
{
    const Clock clock;
    json meta;
    if (f.model == "randompair") {
        if (!f.alpha && !f.all_to_all) throw Error(ErrorKind::Spec, "--alpha is required unless --all-to-all is set");
        synth::RandomPairSpec spec{f.sites, f.alpha.value_or(0.0), f.alphabet, f.all_to_all};
        spec.validate();
        const auto matching = synth::sample_matching(spec, f.seed);
        const Dataset data = synth::sample_pairs(matching, f.alphabet, f.samples, f.seed + 1);

        ScalingCurve oracle;
        oracle.family = PartitionFamily::LR;
        oracle.Lmax = f.sites;
        oracle.method = "exact_pair";
        for (std::size_t L = 0; L <= f.sites; ++L) oracle.points.push_back({L, synth::exact_pair_mi(matching, f.alphabet, L), 0.0});
        analysis::write_curves_csv(f.out + ".oracle.csv", {oracle});

        meta["spec"] = json::parse(spec.to_json());
        meta["partner"] = matching.partner;
        meta["oracle_curve"] = f.out + ".oracle.csv";
        meta["config"] = resolved_config(app);
        meta["wall_clock_s"] = clock.seconds();
        write_raw(f.out, data, meta.dump());
        return;
    }

    synth::GaussianSpec spec;
    if (f.kind == "pair") spec = synth::correlated_pair(f.rho);
    else if (f.kind == "independent") spec = synth::independent_blocks(f.dim_a, f.dim_b);
    else if (f.kind == "ar1") spec = synth::ar1_chain(f.n, f.rho);
    else spec = synth::separable_field(f.rows, f.cols, f.a_row, f.a_col);
    spec.validate();
    const Dataset data = synth::sample_gaussian(spec, f.samples, f.seed);
    const PartitionGeometry geom = PartitionGeometry::of(data);

    if (f.kind == "pair") {
        meta["oracle_mi_nats"] = synth::exact_gaussian_mi(spec, make_partition(PartitionFamily::LR, 1, geom));
    } else {
        std::vector<ScalingCurve> curves;
        std::vector<PartitionFamily> families{PartitionFamily::LR};
        if (geom.grid) families = {PartitionFamily::TB, PartitionFamily::LR, PartitionFamily::CS};
        for (PartitionFamily fam : families) {
            std::vector<std::size_t> Ls;
            for (std::size_t L = 0; L <= partition_extent(fam, geom); ++L) Ls.push_back(L);
            curves.push_back(analysis::gaussian_oracle_curve(spec, fam, Ls, geom));
        }
        analysis::write_curves_csv(f.out + ".oracle.csv", curves);
        meta["oracle_curve"] = f.out + ".oracle.csv";
    }
    meta["spec"] = json::parse(spec.to_json());
    meta["config"] = resolved_config(app);
    meta["wall_clock_s"] = clock.seconds();
    write_raw(f.out, data, meta.dump());
}

// ingest --------------------------------------------------------------------

struct IngestFlags {
    std::string idx, corpus, embeddings, out;
    std::optional<std::size_t> limit;
    std::size_t seq_len = 32, stride = 1;
    std::optional<int> discretize;
    double lo = 0.0, hi = 1.0;
    std::optional<std::uint64_t> shift_seed;
};

void cmd_ingest(const IngestFlags& f, const CLI::App* app)
{
    const Clock clock;
    if (f.idx.empty() == f.corpus.empty()) throw Error(ErrorKind::Spec, "give exactly one of --idx or --corpus");
    Dataset data = !f.idx.empty() ? read_idx_images(f.idx, f.limit) : [&] {
        if (f.embeddings.empty()) throw Error(ErrorKind::Spec, "--corpus needs --embeddings");
        return ingest_embedded_text(f.corpus, f.embeddings, f.seq_len, f.stride);
    }();
    if (f.shift_seed) data = random_shift(data, *f.shift_seed);
    if (f.discretize) data = discretize(data, {*f.discretize, f.lo, f.hi});
    json meta;
    meta["config"] = resolved_config(app);
    meta["wall_clock_s"] = clock.seconds();
    write_raw(f.out, data, meta.dump());
}

// estimate / scan -----------------------------------------------------------

void cmd_estimate(const EstimatorFlags& f, std::size_t L, const std::string& out, const std::string& trace_path,
                  const std::string& entropy_path, const CLI::App* app)
{
    const Clock clock;
    const Dataset data = read_raw(f.data);
    const PartitionFamily family = family_from_string(f.family);
    const Partition p = make_partition(family, L, PartitionGeometry::of(data));
    const analysis::EstimatorConfig est = f.make(data);

    const MIEstimate e = estimating([&]() -> MIEstimate {
        if (const auto* k = std::get_if<analysis::KnnEstimator>(&est)) return knn::knn_mi(data, p, k->cfg);
        if (const auto* m = std::get_if<analysis::MineEstimator>(&est)) {
            const mine::MineTrace t = mine::mine_train(data, p, m->cfg);
            if (!trace_path.empty()) mine::write_trace_csv(trace_path, t);
            return t.estimate;
        }
        if (family == PartitionFamily::CS)
            throw Error(ErrorKind::Ordering, "center:surroundings blocks are not prefixes of a raster ordering; "
                                             "the autoregressive estimator supports TB and LR cuts only");
        ar::ArConfig c = std::get<analysis::ArEstimator>(est).cfg;
        c.ordering = ar::Ordering::RasterForward;
        const ar::ArModel fwd = ar::ar_train(data, c);
        c.ordering = ar::Ordering::RasterReverse;
        const ar::ArModel rev = ar::ar_train(data, c);
        if (!entropy_path.empty()) {
            std::vector<std::size_t> Ls;
            for (std::size_t l = 0; l <= partition_extent(family, PartitionGeometry::of(data)); ++l) Ls.push_back(l);
            ar::write_entropy_curve_csv(entropy_path, fwd, rev, *fwd.holdout, Ls);
        }
        return ar::ar_mi_two_model(fwd, rev, *fwd.holdout, p);
    });

    json j = estimate_json(e);
    j["L"] = L;
    j["family"] = f.family;
    j["config"] = resolved_config(app);
    j["wall_clock_s"] = clock.seconds();
    write_json(out, j);
}

void cmd_scan(const EstimatorFlags& f, const std::string& Ls_text, const std::string& out, const CLI::App* app)
{
    const Clock clock;
    const Dataset data = read_raw(f.data);
    const PartitionFamily family = family_from_string(f.family);
    const auto Ls = parse_Ls(Ls_text);
    const PartitionGeometry geom = PartitionGeometry::of(data);
    for (std::size_t L : Ls) make_partition(family, L, geom);
    const analysis::EstimatorConfig est = f.make(data);
    const ScalingCurve curve = estimating([&] { return analysis::sweep(data, family, Ls, est, f.jobs); });
    analysis::write_curves_csv(out, {curve});
    json meta;
    meta["config"] = resolved_config(app);
    meta["wall_clock_s"] = clock.seconds();
    write_json(out + ".json", meta);
}

// fit / report --------------------------------------------------------------

void cmd_fit(const std::string& curve_path, std::size_t index, const std::string& model, const std::string& window,
             const std::string& out, const CLI::App* app)
{
    const Clock clock;
    const auto curves = analysis::read_curves_csv(curve_path);
    if (index >= curves.size())
        throw Error(ErrorKind::Bounds, curve_path + " holds " + std::to_string(curves.size()) + " curve(s)");
    const analysis::FitResult r = analysis::fit(curves[index], analysis::model_from_string(model), parse_window(window));
    json j = analysis::to_json(r);
    j["curve"] = {{"family", to_string(curves[index].family)}, {"Lmax", curves[index].Lmax}, {"method", curves[index].method}};
    j["config"] = resolved_config(app);
    j["wall_clock_s"] = clock.seconds();
    write_json(out, j);
}

void cmd_report(const std::vector<std::string>& paths, const std::string& out, double boundary)
{
    std::vector<ScalingCurve> curves;
    for (const auto& p : paths)
        for (auto& c : analysis::read_curves_csv(p)) curves.push_back(std::move(c));
    if (curves.empty()) throw Error(ErrorKind::Domain, "no curves to report");

    const std::filesystem::path md(out);
    std::ofstream o(md);
    if (!o) throw Error(ErrorKind::Io, "cannot write " + out);
    o << "# MI scaling report\n\n";

    std::map<std::string, int> votes;
    std::string first_top;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        const ScalingCurve& c = curves[i];
        std::filesystem::path dat = md;
        dat.replace_extension("curve" + std::to_string(i) + ".dat");
        analysis::write_gnuplot(dat, c);
        o << "## Curve " << i << ": " << to_string(c.family) << ", Lmax=" << c.Lmax << ", " << c.method << "\n\n";
        o << "Points: " << c.points.size() << ". Plot data: `" << dat.filename().string() << "`\n\n";
        const auto ranked = analysis::classify(c, boundary);
        o << "| rank | model | params | rms/dof |\n|---|---|---|---|\n";
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            std::ostringstream ps;
            for (std::size_t q = 0; q < ranked[r].names.size(); ++q)
                ps << (q ? ", " : "") << ranked[r].names[q] << "=" << ranked[r].params[q] << " ± " << ranked[r].stderrs[q];
            o << "| " << r + 1 << " | " << to_string(ranked[r].model) << " | " << ps.str() << " | "
              << ranked[r].rms_per_dof << " |\n";
        }
        o << "\nWindow: " << ranked.front().L_lo << ":" << ranked.front().L_hi << "\n\n";
        const std::string top = to_string(ranked.front().model);
        ++votes[top];
        if (i == 0) first_top = top;
    }

    std::string verdict = first_top;
    for (const auto& [m, v] : votes)
        if (v > votes[verdict]) verdict = m;
    o << "## Verdict\n\n**" << verdict << "**";
    if (curves.size() > 1) {
        const auto aligned = analysis::rescale_align(curves, true);
        o << "\n\nRescale factors (normalized axis):";
        for (double f : aligned.factors) o << " " << f;
        if (verdict == "all_to_all") o << "\n\nCollapse RMS: " << analysis::collapse_rms(aligned.curves);
    }
    o << "\n";
}

// Splice key=value lines from --config in front of the explicit flags so
// that the explicit ones win.
std::vector<std::string> expand_config(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") path = args[i + 1];
    for (const auto& a : args)
        if (a.rfind("--config=", 0) == 0) path = a.substr(9);
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot read config file " + path);
    std::vector<std::string> extra;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
            return s;
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw Error(ErrorKind::Format, path + ": expected key=value, got '" + line + "'");
        extra.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
    std::size_t insert = 0;
    while (insert < args.size() && args[insert].rfind("-", 0) != 0) ++insert;
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert), extra.begin(), extra.end());
    return args;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Mutual-information scaling toolkit"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string config;

    SynthFlags sf;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with its exact MI");
    synth->add_option("--config", config, "key=value file; flags take precedence");
    synth->add_option("model", sf.model, "randompair | gauss")->required()->check(CLI::IsMember({"randompair", "gauss"}));
    synth->add_option("--alpha", sf.alpha, "pair distance exponent");
    synth->add_option("--sites", sf.sites)->capture_default_str();
    synth->add_option("--alphabet", sf.alphabet)->capture_default_str();
    synth->add_flag("--all-to-all", sf.all_to_all, "uniform pair distances");
    synth->add_option("--kind", sf.kind, "pair | independent | ar1 | separable")
        ->check(CLI::IsMember({"pair", "independent", "ar1", "separable"}))->capture_default_str();
    synth->add_option("--rho", sf.rho)->capture_default_str();
    synth->add_option("--dim-a", sf.dim_a)->capture_default_str();
    synth->add_option("--dim-b", sf.dim_b)->capture_default_str();
    synth->add_option("--n", sf.n, "ar1 chain length")->capture_default_str();
    synth->add_option("--rows", sf.rows)->capture_default_str();
    synth->add_option("--cols", sf.cols)->capture_default_str();
    synth->add_option("--a-row", sf.a_row)->capture_default_str();
    synth->add_option("--a-col", sf.a_col)->capture_default_str();
    synth->add_option("--samples", sf.samples)->capture_default_str();
    synth->add_option("--seed", sf.seed)->capture_default_str();
    synth->add_option("--out", sf.out, "raw tensor output path")->required();

    IngestFlags inf;
    auto* ingest = app.add_subcommand("ingest", "convert IDX images or embedded text to a raw tensor");
    ingest->add_option("--config", config);
    ingest->add_option("--idx", inf.idx, "IDX image file");
    ingest->add_option("--limit", inf.limit, "read at most this many images");
    ingest->add_option("--corpus", inf.corpus, "plain-text corpus");
    ingest->add_option("--embeddings", inf.embeddings, "token vector file");
    ingest->add_option("--seq-len", inf.seq_len)->capture_default_str();
    ingest->add_option("--stride", inf.stride)->capture_default_str();
    ingest->add_option("--discretize", inf.discretize, "bin count");
    ingest->add_option("--lo", inf.lo)->capture_default_str();
    ingest->add_option("--hi", inf.hi)->capture_default_str();
    ingest->add_option("--shift-seed", inf.shift_seed, "random cyclic displacement per image");
    ingest->add_option("--out", inf.out)->required();

    EstimatorFlags ef;
    std::size_t L = 0;
    std::string est_out, trace_path, entropy_path;
    auto* estimate = app.add_subcommand("estimate", "estimate I(A:B) for one cut");
    estimate->add_option("--config", config);
    ef.attach(estimate);
    estimate->add_option("--L", L, "cut position")->required();
    estimate->add_option("--out", est_out, "JSON output (stdout if omitted)");
    estimate->add_option("--trace", trace_path, "MINE training trace CSV");
    estimate->add_option("--entropy-curve", entropy_path, "AR entropy curve CSV");

    EstimatorFlags sc;
    std::string Ls_text, scan_out;
    auto* scan = app.add_subcommand("scan", "sweep the cut position and write a curve CSV");
    scan->add_option("--config", config);
    sc.attach(scan);
    scan->add_option("--Ls", Ls_text, "lo:hi[:step] or a,b,c")->required();
    scan->add_option("--out", scan_out)->required();

    std::string curve_path, model, window, fit_out;
    std::size_t curve_index = 0;
    auto* fitc = app.add_subcommand("fit", "fit one scaling model to a curve");
    fitc->add_option("--config", config);
    fitc->add_option("--curve", curve_path)->required();
    fitc->add_option("--index", curve_index, "curve within the CSV")->capture_default_str();
    fitc->add_option("--model", model, "power | log | plateau | all_to_all | area | volume")->required();
    fitc->add_option("--window", window, "lo:hi")->required();
    fitc->add_option("--out", fit_out, "JSON output (stdout if omitted)");

    std::vector<std::string> report_paths;
    std::string report_out;
    double boundary = 0.1;
    auto* report = app.add_subcommand("report", "classify curves and write a markdown report");
    report->add_option("--config", config);
    report->add_option("--curves", report_paths)->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    report->add_option("--out", report_out)->required();
    report->add_option("--boundary", boundary, "fraction of points dropped at each end")->capture_default_str();

    std::uint64_t gc_seed = 0;
    double gc_h = 1e-5, gc_tol = 1e-4;
    std::string gc_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer");
    gradcheck->add_option("--config", config);
    gradcheck->add_option("--seed", gc_seed)->capture_default_str();
    gradcheck->add_option("--step", gc_h, "finite-difference step")->capture_default_str();
    gradcheck->add_option("--tol", gc_tol)->capture_default_str();
    gradcheck->add_option("--out", gc_out, "JSON output");

    try {
        auto args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);

        if (*synth) cmd_synth(sf, synth);
        else if (*ingest) cmd_ingest(inf, ingest);
        else if (*estimate) cmd_estimate(ef, L, est_out, trace_path, entropy_path, estimate);
        else if (*scan) cmd_scan(sc, Ls_text, scan_out, scan);
        else if (*fitc) cmd_fit(curve_path, curve_index, model, window, fit_out, fitc);
        else if (*report) cmd_report(report_paths, report_out, boundary);
        else if (*gradcheck) {
            const auto results = estimating([&] { return nn::gradient_check_suite(gc_seed, gc_h); });
            json j = json::array();
            bool ok = true;
            for (const auto& r : results) {
                const bool pass = r.max_rel_error < gc_tol;
                ok = ok && pass;
                std::cout << (pass ? "ok   " : "FAIL ") << r.layer << " max_rel_error=" << r.max_rel_error
                          << " coords=" << r.checked << "\n";
                j.push_back({{"layer", r.layer}, {"max_rel_error", r.max_rel_error}, {"checked", r.checked}, {"pass", pass}});
            }
            if (!gc_out.empty()) write_json(gc_out, {{"results", j}, {"config", resolved_config(gradcheck)}});
            return ok ? 0 : 3;
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Exit& e) {
        std::cerr << "miscale: " << e.message << "\n";
        return e.code;
    } catch (const Error& e) {
        std::cerr << "miscale: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "miscale: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
