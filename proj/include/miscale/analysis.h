#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "miscale/autoregressive.h"
#include "miscale/curve.h"
#include "miscale/knn.h"
#include "miscale/mine.h"
#include "miscale/synthetic.h"

namespace miscale::analysis {

// area and volume replace plateau for center:surroundings curves.
enum class Model { Power, Log, Plateau, AllToAll, Area, Volume };

const char* to_string(Model m);
Model model_from_string(const std::string& s);
std::size_t parameter_count(Model m);

struct FitResult {
    Model model = Model::Power;
    std::vector<std::string> names;
    std::vector<double> params;
    std::vector<double> stderrs;
    double residual_rms = 0.0;  // sqrt(mean r^2), r = I - model(L)
    double rms_per_dof = 0.0;   // sqrt(sum r^2 / (n - p))
    std::size_t L_lo = 0, L_hi = 0;
    std::size_t n_points = 0;

    double param(const std::string& name) const;
    double predict(double L, std::size_t Lmax) const;
};

nlohmann::json to_json(const FitResult& f);

struct Window {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

/// Weighted least squares of one model over the points with lo <= L <= hi.
/// Weights are 1/sigma^2 (sigma/I in log space) when every sigma is positive,
/// otherwise uniform. Standard errors are scaled by the reduced chi^2.
FitResult fit(const ScalingCurve& curve, Model model, Window window);

/// Points kept after dropping ceil(fraction * n) from each end.
Window interior_window(const ScalingCurve& curve, double boundary_fraction = 0.1);

/// Fits every applicable model on the interior window and ranks them by
/// rms_per_dof. Near-ties (relative 1e-9 of the curve scale) go to the model
/// with fewer parameters. Models whose preconditions fail are left out.
std::vector<FitResult> classify(const ScalingCurve& curve, double boundary_fraction = 0.1);

struct Alignment {
    std::vector<ScalingCurve> curves;
    std::vector<double> factors;
};

/// Scales curve j by sum(I_j I_ref) / sum(I_j^2) over the L values it shares
/// with curves[0]. With normalized_axis the overlap is matched on L/Lmax.
Alignment rescale_align(const std::vector<ScalingCurve>& curves, bool normalized_axis = false);

/// RMS deviation of all points from the best single-amplitude
/// a (L/Lmax)(1 - L/Lmax), relative to the peak a/4.
double collapse_rms(const std::vector<ScalingCurve>& curves);

/// Largest |I_j / I_ref - 1| over L values shared with curves[0] where
/// I_ref > floor.
double max_pointwise_deviation(const std::vector<ScalingCurve>& curves, double floor = 0.0);

struct KnnEstimator {
    knn::KnnConfig cfg;
};
struct MineEstimator {
    mine::MineConfig cfg;
};
/// Both orderings are trained once on the full data and shared by every L.
struct ArEstimator {
    ar::ArConfig cfg;
};
using EstimatorConfig = std::variant<KnnEstimator, MineEstimator, ArEstimator>;

/// One estimate per L; empty blocks give 0 +- 0. Failures are rethrown with
/// their L. jobs = 0 uses the hardware concurrency.
ScalingCurve sweep(const Dataset& data, PartitionFamily family, const std::vector<std::size_t>& Ls,
                   const EstimatorConfig& estimator, std::size_t jobs = 1);

/// Exact I(L) of a Gaussian with known covariance.
ScalingCurve gaussian_oracle_curve(const synth::GaussianSpec& spec, PartitionFamily family,
                                   const std::vector<std::size_t>& Ls, const PartitionGeometry& geometry);

void write_curves_csv(const std::filesystem::path& path, const std::vector<ScalingCurve>& curves);
std::vector<ScalingCurve> read_curves_csv(const std::filesystem::path& path);

/// "L I" rows preceded by a comment line, for gnuplot.
void write_gnuplot(const std::filesystem::path& path, const ScalingCurve& curve);

} // namespace miscale::analysis
