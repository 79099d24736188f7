#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "voxctl/morphology.hpp"
#include "voxctl/rl.hpp"

namespace voxctl {

inline constexpr const char* kCliVersion = "voxctl 0.1.0";

// FNV-1a (64-bit) over a canonical serialization of the set: name, shape and
// cells of every morphology in file order.
std::uint64_t morphology_set_hash(const std::vector<VoxelGrid>& grids);

// Provenance document written to the output directory before training
// starts: resolved model/ppo/env snapshot, morphology names and set hash,
// seed, code version, creation timestamp (UTC).
std::string make_manifest_json(const TrainRunConfig& config);

// Dispatches one invocation (args exclude the program name) and reports the
// process exit code: 0 success, 1 usage error, 2 runtime failure.  All
// output goes to the supplied streams so tests can run in-process.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace voxctl
