#pragma once

// Stage orchestration: resolves the requested stages against their
// prerequisites, runs them in order on one scenario, writes the result
// bundle, and supports byte-exact replay from a recorded manifest.

#include <string>
#include <vector>

#include "ergolab/config.hpp"

namespace ergolab {

// Canonical stage order; "all" expands to exactly this list.
const std::vector<std::string>& pipeline_stages();

// Expands "all", validates names, restores canonical order, and enforces
// prerequisites (everything needs check; smp additionally needs adjoint).
std::vector<std::string> resolve_stages(std::vector<std::string> requested);

struct RunResult {
    std::string bundle_dir;
    std::string manifest_path;
    std::string summary;  // one-page table for stdout
};

// Runs the configured scenario. Output root resolution: [run] out, then
// ERGOLAB_OUT, then ./ergolab-out; the bundle lands in
// <root>/<scenario>-s<seed> unless bundle_dir_override is given.
RunResult run_pipeline(const Config& cfg, const std::string& bundle_dir_override = "");

// Re-runs the recorded scenario/seed/stages/config into '<bundle>-replay'
// and compares every recorded output hash (and bytes, where the original
// files still exist). Throws SolverError on any difference.
RunResult replay_manifest(const std::string& manifest_path);

}  // namespace ergolab
