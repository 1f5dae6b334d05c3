#pragma once

#include <stdexcept>
#include <string>

namespace miscale {

enum class ErrorKind {
    Format,        // malformed file contents
    Length,        // truncated payload
    Bounds,        // index or parameter out of range
    Modality,      // operation not valid for this kind of data
    Family,        // partition family not valid for this geometry
    Spec,          // invalid generator / config specification
    NumericalRank, // singular matrix where a full-rank one is required
    Composition,   // layer shapes do not compose
    State,         // operation called in the wrong lifecycle state
    Batch,         // empty or undersized batch
    Degenerate,    // data degenerate for the estimator
    Partition,     // empty block
    Instability,   // training diverged
    Ordering,      // partition incompatible with autoregressive ordering
    InsufficientData,
    Domain,        // fit / classify preconditions
    Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::Format: return "format";
    case ErrorKind::Length: return "length";
    case ErrorKind::Bounds: return "bounds";
    case ErrorKind::Modality: return "modality";
    case ErrorKind::Family: return "family";
    case ErrorKind::Spec: return "spec";
    case ErrorKind::NumericalRank: return "numerical-rank";
    case ErrorKind::Composition: return "composition";
    case ErrorKind::State: return "state";
    case ErrorKind::Batch: return "batch";
    case ErrorKind::Degenerate: return "degenerate-data";
    case ErrorKind::Partition: return "partition";
    case ErrorKind::Instability: return "training-instability";
    case ErrorKind::Ordering: return "ordering-incompatibility";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

} // namespace miscale
