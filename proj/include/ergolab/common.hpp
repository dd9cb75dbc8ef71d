// Shared error types, warning collection, and small formatting helpers.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ergolab {

// User-facing input problems: bad config keys, malformed files, missing stages.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A model failed a structural assumption check hard enough that downstream
// stages should not run (dissipativity/ellipticity verdict = fails).
struct AssumptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Iterative solver did not converge (horizon truncation, minimizer, coupling).
struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Evaluation outside a solution's valid window, missing prerequisites, etc.
struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Simulation state escaped the divergence threshold.
struct BlowupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Warnings = std::vector<std::string>;

// Shortest decimal form that round-trips a double; used by every writer so
// replayed runs produce byte-identical text.
std::string fmt_double(double v);

// FNV-1a over a string; stable fingerprints for models and configs.
std::uint64_t fnv1a(const std::string& s);

}  // namespace ergolab
