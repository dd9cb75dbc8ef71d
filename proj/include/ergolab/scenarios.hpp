#pragma once

// Registered benchmark scenarios: model + candidate law + sampling regions,
// with closed-form oracles attached where the model admits them. Oracle
// targets are computed at load time and cross-validated against each other;
// they are never embedded as literals.

#include <optional>
#include <string>
#include <vector>

#include "ergolab/model.hpp"
#include "ergolab/oracles.hpp"

namespace ergolab {

struct Scenario {
    std::string name;
    ControlledDiffusion model;
    ControlLaw law = ControlLaw::constant(Vec{0.0});
    Vec x0;
    SampleBox x_box;  // region for assumption checks and the convexity probe
    SampleBox u_box;
    std::optional<RiccatiOracle> riccati;  // set when the model is linear-quadratic
    std::optional<OuOracle> ou;            // set when the closed loop is an OU process
    std::string notes;
};

// Names accepted by make_scenario, in registry order.
std::vector<std::string> scenario_names();

// Throws ConfigError for unknown names; throws SolverError if the attached
// oracles fail their internal cross-validation.
Scenario make_scenario(const std::string& name);

// The linear-quadratic scenario with an arbitrary feedback gain u = -K x.
Scenario make_lq_scenario(double K);

}  // namespace ergolab
