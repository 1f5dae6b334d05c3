#include "miscale/analysis.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace miscale {

void ScalingCurve::validate() const
{
    for (std::size_t i = 0; i < points.size(); ++i) {
        const CurvePoint& p = points[i];
        if (i > 0 && p.L <= points[i - 1].L) throw Error(ErrorKind::Domain, "curve L values must be strictly increasing");
        if (!(p.sigma >= 0.0)) throw Error(ErrorKind::Domain, "negative sigma at L=" + std::to_string(p.L));
        if (!std::isfinite(p.I)) throw Error(ErrorKind::Domain, "non-finite I at L=" + std::to_string(p.L));
        if ((p.L == 0 || p.L == Lmax) && std::abs(p.I) > 3.0 * p.sigma + 1e-12)
            throw Error(ErrorKind::Domain, "boundary point L=" + std::to_string(p.L) + " is not compatible with 0");
    }
}

namespace analysis {

const char* to_string(Model m)
{
    switch (m) {
    case Model::Power: return "power";
    case Model::Log: return "log";
    case Model::Plateau: return "plateau";
    case Model::AllToAll: return "all_to_all";
    case Model::Area: return "area";
    case Model::Volume: return "volume";
    }
    return "?";
}

Model model_from_string(const std::string& s)
{
    for (Model m : {Model::Power, Model::Log, Model::Plateau, Model::AllToAll, Model::Area, Model::Volume})
        if (s == to_string(m)) return m;
    throw Error(ErrorKind::Spec, "unknown scaling model '" + s + "'");
}

std::size_t parameter_count(Model m) { return m == Model::Plateau || m == Model::AllToAll ? 1 : 2; }

double FitResult::param(const std::string& name) const
{
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return params[i];
    throw Error(ErrorKind::Bounds, "fit has no parameter '" + name + "'");
}

double FitResult::predict(double L, std::size_t Lmax) const
{
    switch (model) {
    case Model::Power: return params[1] * std::pow(L, params[0]);
    case Model::Log: return params[0] * std::log(L) + params[1];
    case Model::Plateau: return params[0];
    case Model::AllToAll: return params[0] * L * (static_cast<double>(Lmax) - L);
    case Model::Area: return params[0] * L + params[1];
    case Model::Volume: return params[0] * L * L + params[1];
    }
    return 0.0;
}

nlohmann::json to_json(const FitResult& f)
{
    nlohmann::json params = nlohmann::json::object(), errs = nlohmann::json::object();
    for (std::size_t i = 0; i < f.names.size(); ++i) {
        params[f.names[i]] = f.params[i];
        errs[f.names[i]] = f.stderrs[i];
    }
    return {{"model", to_string(f.model)}, {"params", params},           {"stderr", errs},
            {"residual_rms", f.residual_rms}, {"rms_per_dof", f.rms_per_dof}, {"window", {f.L_lo, f.L_hi}},
            {"n_points", f.n_points}};
}

namespace {

struct Lsq {
    Vector beta;
    Vector stderrs;
};

// Weighted linear least squares with the covariance scaled by chi^2 / dof.
Lsq weighted_lsq(const Matrix& x, const Vector& y, const Vector& w)
{
    const Vector sw = w.array().sqrt();
    const Eigen::MatrixXd xw = sw.asDiagonal() * x;
    const Vector yw = sw.cwiseProduct(y);
    const Eigen::MatrixXd normal = xw.transpose() * xw;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xw);
    if (qr.rank() < x.cols()) throw Error(ErrorKind::Domain, "fit design matrix is rank deficient");
    Lsq out;
    out.beta = qr.solve(yw);
    const double chi2 = (yw - xw * out.beta).squaredNorm();
    const double dof = static_cast<double>(x.rows() - x.cols());
    const Eigen::MatrixXd cov = normal.inverse() * (dof > 0 ? chi2 / dof : 0.0);
    out.stderrs = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

} // namespace

FitResult fit(const ScalingCurve& curve, Model model, Window window)
{
    curve.validate();
    if (curve.points.empty()) throw Error(ErrorKind::Domain, "empty curve");
    if (window.lo >= window.hi || window.lo < curve.points.front().L || window.hi > curve.points.back().L)
        throw Error(ErrorKind::Domain, "fit window " + std::to_string(window.lo) + ":" + std::to_string(window.hi)
                                           + " is not inside the curve domain");
    std::vector<CurvePoint> pts;
    for (const CurvePoint& p : curve.points)
        if (p.L >= window.lo && p.L <= window.hi) pts.push_back(p);
    const std::size_t p_count = parameter_count(model);
    if (pts.size() < 3) throw Error(ErrorKind::Domain, "fewer than 3 points in the fit window");
    const bool log_space = model == Model::Power;
    if (model == Model::Power || model == Model::Log)
        for (const CurvePoint& p : pts)
            if (!(p.I > 0.0) || p.L == 0)
                throw Error(ErrorKind::Domain, std::string(to_string(model)) + " fit needs I > 0 and L > 0; L="
                                                   + std::to_string(p.L) + " has I=" + std::to_string(p.I));

    const auto n = static_cast<Eigen::Index>(pts.size());
    const bool weighted = std::all_of(pts.begin(), pts.end(), [](const CurvePoint& p) { return p.sigma > 0.0; });
    Matrix x(n, static_cast<Eigen::Index>(p_count));
    Vector y(n), w(n);
    const double lmax = static_cast<double>(curve.Lmax);
    for (Eigen::Index i = 0; i < n; ++i) {
        const CurvePoint& p = pts[static_cast<std::size_t>(i)];
        const double L = static_cast<double>(p.L);
        const double s = log_space ? p.sigma / p.I : p.sigma;
        w(i) = weighted ? 1.0 / (s * s) : 1.0;
        y(i) = log_space ? std::log(p.I) : p.I;
        switch (model) {
        case Model::Power: x.row(i) << std::log(L), 1.0; break;
        case Model::Log: x.row(i) << std::log(L), 1.0; break;
        case Model::Plateau: x(i, 0) = 1.0; break;
        case Model::AllToAll: x(i, 0) = L * (lmax - L); break;
        case Model::Area: x.row(i) << L, 1.0; break;
        case Model::Volume: x.row(i) << L * L, 1.0; break;
        }
    }
    const Lsq lsq = weighted_lsq(x, y, w);

    FitResult r;
    r.model = model;
    r.L_lo = window.lo;
    r.L_hi = window.hi;
    r.n_points = pts.size();
    switch (model) {
    case Model::Power: {
        const double amp = std::exp(lsq.beta(1));
        r.names = {"nu", "amplitude"};
        r.params = {lsq.beta(0), amp};
        r.stderrs = {lsq.stderrs(0), amp * lsq.stderrs(1)};
        break;
    }
    case Model::Log:
        r.names = {"amplitude", "offset"};
        break;
    case Model::Plateau:
        r.names = {"level"};
        break;
    case Model::AllToAll:
        r.names = {"amplitude"};
        break;
    case Model::Area:
    case Model::Volume:
        r.names = {"slope", "offset"};
        break;
    }
    if (model != Model::Power) {
        r.params.assign(lsq.beta.data(), lsq.beta.data() + lsq.beta.size());
        r.stderrs.assign(lsq.stderrs.data(), lsq.stderrs.data() + lsq.stderrs.size());
    }

    double ss = 0.0;
    for (const CurvePoint& p : pts) {
        const double res = p.I - r.predict(static_cast<double>(p.L), curve.Lmax);
        ss += res * res;
    }
    r.residual_rms = std::sqrt(ss / static_cast<double>(pts.size()));
    r.rms_per_dof = std::sqrt(ss / static_cast<double>(pts.size() - p_count));
    return r;
}

Window interior_window(const ScalingCurve& curve, double boundary_fraction)
{
    const std::size_t n = curve.points.size();
    const auto drop = static_cast<std::size_t>(std::ceil(boundary_fraction * static_cast<double>(n) - 1e-12));
    if (n < 2 * drop + 3) throw Error(ErrorKind::Domain, "too few interior points after boundary exclusion");
    return {curve.points[drop].L, curve.points[n - 1 - drop].L};
}

std::vector<FitResult> classify(const ScalingCurve& curve, double boundary_fraction)
{
    if (curve.points.size() < 5) throw Error(ErrorKind::Domain, "classify needs at least 5 points");
    const Window w = interior_window(curve, boundary_fraction);
    const std::vector<Model> models = curve.family == PartitionFamily::CS
                                          ? std::vector<Model>{Model::Area, Model::Volume, Model::Power, Model::Log,
                                                               Model::AllToAll}
                                          : std::vector<Model>{Model::Plateau, Model::Power, Model::Log, Model::AllToAll};
    std::vector<FitResult> fits;
    for (Model m : models) {
        try {
            fits.push_back(fit(curve, m, w));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Domain) throw;
        }
    }
    if (fits.empty()) throw Error(ErrorKind::Domain, "no scaling model could be fit");

    double scale = 0.0;
    for (const CurvePoint& p : curve.points) scale = std::max(scale, std::abs(p.I));
    const double tol = 1e-9 * scale;
    std::stable_sort(fits.begin(), fits.end(), [tol](const FitResult& a, const FitResult& b) {
        if (std::abs(a.rms_per_dof - b.rms_per_dof) <= tol)
            return parameter_count(a.model) < parameter_count(b.model);
        return a.rms_per_dof < b.rms_per_dof;
    });
    return fits;
}

namespace {

// Index pairs (i in ref, j in other) of shared abscissae.
std::vector<std::pair<std::size_t, std::size_t>> overlap(const ScalingCurve& ref, const ScalingCurve& other,
                                                         bool normalized_axis)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < ref.points.size(); ++i)
        for (std::size_t j = 0; j < other.points.size(); ++j) {
            const bool same = normalized_axis ? ref.points[i].L * other.Lmax == other.points[j].L * ref.Lmax
                                              : ref.points[i].L == other.points[j].L;
            if (same) out.emplace_back(i, j);
        }
    return out;
}

} // namespace

Alignment rescale_align(const std::vector<ScalingCurve>& curves, bool normalized_axis)
{
    if (curves.size() < 2) throw Error(ErrorKind::Domain, "rescale_align needs at least 2 curves");
    Alignment out;
    out.curves = curves;
    out.factors.assign(curves.size(), 1.0);
    const ScalingCurve& ref = curves.front();
    for (std::size_t c = 1; c < curves.size(); ++c) {
        const auto pairs = overlap(ref, curves[c], normalized_axis);
        if (pairs.empty()) throw Error(ErrorKind::Domain, "curve " + std::to_string(c) + " shares no L with the reference");
        double num = 0.0, den = 0.0;
        for (const auto& [i, j] : pairs) {
            num += curves[c].points[j].I * ref.points[i].I;
            den += curves[c].points[j].I * curves[c].points[j].I;
        }
        if (den == 0.0) throw Error(ErrorKind::Domain, "curve " + std::to_string(c) + " is zero on the overlap");
        const double f = num / den;
        out.factors[c] = f;
        ScalingCurve& s = out.curves[c];
        s.rescale *= f;
        for (CurvePoint& p : s.points) {
            p.I *= f;
            p.sigma *= std::abs(f);
        }
    }
    return out;
}

double collapse_rms(const std::vector<ScalingCurve>& curves)
{
    double num = 0.0, den = 0.0;
    std::size_t n = 0;
    for (const ScalingCurve& c : curves)
        for (const CurvePoint& p : c.points) {
            const double x = static_cast<double>(p.L) / static_cast<double>(c.Lmax);
            const double f = x * (1.0 - x);
            num += p.I * f;
            den += f * f;
            ++n;
        }
    if (n == 0 || den == 0.0) throw Error(ErrorKind::Domain, "no interior points to compare");
    const double a = num / den;
    double ss = 0.0;
    for (const ScalingCurve& c : curves)
        for (const CurvePoint& p : c.points) {
            const double x = static_cast<double>(p.L) / static_cast<double>(c.Lmax);
            const double r = p.I - a * x * (1.0 - x);
            ss += r * r;
        }
    return std::sqrt(ss / static_cast<double>(n)) / std::abs(a / 4.0);
}

double max_pointwise_deviation(const std::vector<ScalingCurve>& curves, double floor)
{
    if (curves.size() < 2) throw Error(ErrorKind::Domain, "need at least 2 curves");
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::size_t c = 1; c < curves.size(); ++c)
        for (const auto& [i, j] : overlap(curves[0], curves[c], false)) {
            const double ref = curves[0].points[i].I;
            if (!(ref > floor)) continue;
            worst = std::max(worst, std::abs(curves[c].points[j].I / ref - 1.0));
            ++compared;
        }
    if (compared == 0) throw Error(ErrorKind::Domain, "no shared points above the floor");
    return worst;
}

namespace {

template <typename Fn>
void run_jobs(std::size_t n, std::size_t jobs, Fn fn)
{
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min(jobs, n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += jobs) fn(i);
        });
    for (auto& th : pool) th.join();
}

std::string strip_prefix(const Error& e)
{
    std::string what = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + " error: ";
    return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

} // namespace

ScalingCurve sweep(const Dataset& data, PartitionFamily family, const std::vector<std::size_t>& Ls,
                   const EstimatorConfig& estimator, std::size_t jobs)
{
    const PartitionGeometry geom = PartitionGeometry::of(data);
    ScalingCurve curve;
    curve.family = family;
    curve.Lmax = partition_extent(family, geom);
    std::vector<Partition> parts;
    for (std::size_t L : Ls) parts.push_back(make_partition(family, L, geom));

    std::optional<ar::ArModel> fwd, rev;
    if (const auto* a = std::get_if<ArEstimator>(&estimator)) {
        if (family == PartitionFamily::CS)
            throw Error(ErrorKind::Ordering, "center:surroundings blocks are not prefixes of a raster ordering");
        ar::ArConfig c = a->cfg;
        c.ordering = ar::Ordering::RasterForward;
        fwd = ar::ar_train(data, c);
        c.ordering = ar::Ordering::RasterReverse;
        rev = ar::ar_train(data, c);
    }

    curve.points.resize(Ls.size());
    std::vector<std::string> errors(Ls.size());
    std::vector<ErrorKind> kinds(Ls.size(), ErrorKind::Domain);
    std::string method;
    run_jobs(Ls.size(), jobs, [&](std::size_t i) {
        const Partition& p = parts[i];
        curve.points[i] = {Ls[i], 0.0, 0.0};
        if (p.idx_a.empty() || p.idx_b.empty()) return;
        try {
            MIEstimate e;
            if (const auto* k = std::get_if<KnnEstimator>(&estimator))
                e = knn::knn_mi(data, p, k->cfg);
            else if (const auto* m = std::get_if<MineEstimator>(&estimator))
                e = mine::mine_train(data, p, m->cfg).estimate;
            else
                e = ar::ar_mi_two_model(*fwd, *rev, *fwd->holdout, p);
            curve.points[i] = {Ls[i], e.value, e.sigma};
        } catch (const Error& e) {
            errors[i] = strip_prefix(e);
            kinds[i] = e.kind();
        }
    });
    for (std::size_t i = 0; i < Ls.size(); ++i)
        if (!errors[i].empty()) throw Error(kinds[i], "at L=" + std::to_string(Ls[i]) + ": " + errors[i]);

    curve.method = std::visit(
        [](const auto& e) -> std::string {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, KnnEstimator>) return "knn";
            else if constexpr (std::is_same_v<T, MineEstimator>) return "mine";
            else return "ar";
        },
        estimator);
    return curve;
}

ScalingCurve gaussian_oracle_curve(const synth::GaussianSpec& spec, PartitionFamily family,
                                   const std::vector<std::size_t>& Ls, const PartitionGeometry& geometry)
{
    ScalingCurve curve;
    curve.family = family;
    curve.Lmax = partition_extent(family, geometry);
    curve.method = "exact_gaussian";
    for (std::size_t L : Ls) curve.points.push_back({L, synth::exact_gaussian_mi(spec, make_partition(family, L, geometry)), 0.0});
    return curve;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<ScalingCurve>& curves)
{
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "family,Lmax,method,L,I_nats,sigma_nats\n" << std::setprecision(17);
    for (const ScalingCurve& c : curves)
        if (c.method.find_first_of(",\n") != std::string::npos)
            throw Error(ErrorKind::Format, "method tag '" + c.method + "' cannot go in a CSV field");
    for (const ScalingCurve& c : curves)
        for (const CurvePoint& p : c.points)
            out << to_string(c.family) << "," << c.Lmax << "," << c.method << "," << p.L << "," << p.I << ","
                << p.sigma << "\n";
}

std::vector<ScalingCurve> read_curves_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("family,Lmax,method,L,I_nats,sigma_nats", 0) != 0)
        throw Error(ErrorKind::Format, path.string() + ": missing curve CSV header");
    std::vector<ScalingCurve> curves;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw Error(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
        try {
            const PartitionFamily fam = family_from_string(f[0]);
            const std::size_t lmax = std::stoul(f[1]);
            if (curves.empty() || curves.back().family != fam || curves.back().Lmax != lmax
                || curves.back().method != f[2]) {
                curves.push_back({});
                curves.back().family = fam;
                curves.back().Lmax = lmax;
                curves.back().method = f[2];
            }
            curves.back().points.push_back({std::stoul(f[3]), std::stod(f[4]), std::stod(f[5])});
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::Format, path.string() + ":" + std::to_string(lineno) + ": bad number");
        }
    }
    for (const ScalingCurve& c : curves) c.validate();
    return curves;
}

void write_gnuplot(const std::filesystem::path& path, const ScalingCurve& curve)
{
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "# " << to_string(curve.family) << " Lmax=" << curve.Lmax << " method=" << curve.method << "\n"
        << std::setprecision(17);
    for (const CurvePoint& p : curve.points) out << p.L << " " << p.I << "\n";
}

} // namespace analysis
} // namespace miscale
