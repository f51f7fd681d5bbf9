#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "alice/nn.hpp"
#include "alice/solver.hpp"

namespace alice {

using ordered_json = nlohmann::ordered_json;

ordered_json network_to_json(const Network& net);
Network network_from_json(const ordered_json& j);

ordered_json solver_config_to_json(const SolverConfig& cfg);
SolverConfig solver_config_from_json(const ordered_json& j);

// Everything a later stage needs to resume: weights, mode, solver settings.
struct Checkpoint {
    std::string stage;
    std::uint64_t seed = 0;
    Network net;
    SolverConfig solver;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace alice
