#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "miscale/dataset.h"

namespace miscale {

/// A mutual-information value in nats with its uncertainty.
struct MIEstimate {
    double value = 0.0;
    double sigma = 0.0;
    std::string method;
    std::map<std::string, double> diagnostics;
};

struct CurvePoint {
    std::size_t L = 0;
    double I = 0.0;
    double sigma = 0.0;
};

/// I(L) for one partition family at fixed Lmax.
struct ScalingCurve {
    PartitionFamily family = PartitionFamily::LR;
    std::size_t Lmax = 0;
    std::string method;
    double rescale = 1.0;
    std::vector<CurvePoint> points;

    /// Throws Domain if L is not strictly increasing or any sigma is negative.
    void validate() const;
};

} // namespace miscale
