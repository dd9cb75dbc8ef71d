#pragma once

// Result bundles: a directory of JSON/CSV stage outputs plus a manifest that
// records scenario, seed, stages, resolved configuration, and a content hash
// per output so replayed runs can be verified byte for byte. Nothing written
// here depends on wall-clock time or absolute paths.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ergolab/adjoint.hpp"
#include "ergolab/config.hpp"
#include "ergolab/ebsde.hpp"
#include "ergolab/ergodicity.hpp"
#include "ergolab/model.hpp"
#include "ergolab/simulate.hpp"
#include "ergolab/smp.hpp"

namespace ergolab {

inline constexpr const char* kVersion = "0.1.0";

class ReportBundle {
  public:
    explicit ReportBundle(std::string dir);

    const std::string& dir() const { return dir_; }

    // Writes text under the bundle and records the relative path + hash.
    void write_text(const std::string& rel_path, const std::string& text);

    // UTF-8 CSV with a header row; numbers via shortest-round-trip formatting.
    void write_csv(const std::string& rel_path, const std::vector<std::string>& header,
                   const std::vector<Vec>& rows);
    void write_csv(const std::string& rel_path, const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows);

    void log(const std::string& line);

    // Flushes logs/run.log and manifest.json; returns the manifest path.
    std::string finalize(const Config& cfg, const std::string& scenario, std::uint64_t seed,
                         const std::vector<std::string>& stages);

    const std::vector<std::pair<std::string, std::uint64_t>>& outputs() const {
        return outputs_;
    }

  private:
    std::string dir_;
    std::vector<std::pair<std::string, std::uint64_t>> outputs_;
    std::vector<std::string> log_lines_;
};

// Manifest contents needed to reproduce and verify a run.
struct Manifest {
    std::string scenario;
    std::uint64_t seed = 0;
    std::vector<std::string> stages;
    Config config;
    std::vector<std::pair<std::string, std::uint64_t>> outputs;  // rel path, fnv1a
    std::string version;
};

Manifest parse_manifest(const std::string& path);

// Stage serializers (stable key order).
std::string to_json(const MomentFit& fit, const LongRunAverage& lra);
std::string to_json(const IhAdjointSolution& sol, const BoundCheck& bound);
std::string to_json(const ErgodicSolution& sol, const LambdaConsistency& lc,
                    const PeriodicFeatureCheck* periodic);
std::string to_json(const SmpCertificate& cert);

}  // namespace ergolab
