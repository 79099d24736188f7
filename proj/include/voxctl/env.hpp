#pragma once

// 2D mass-spring voxel soft body on flat ground.
//
// Each non-empty voxel contributes its four lattice corners as point masses,
// four edge springs and two diagonal shear springs; edges shared between
// neighboring voxels are instantiated once with summed stiffness.  Actuator
// voxels stretch or shrink the rest lengths of the springs they own, the
// body is integrated with semi-implicit Euler against gravity, spring
// damping, a penalty-based ground normal force and clamped Coulomb friction,
// and the per-step reward is the forward displacement of the center of mass.

#include <array>
#include <cstdint>
#include <vector>

#include "voxctl/morphology.hpp"

namespace voxctl {

struct EnvConfig {
  double voxel_size = 1.0;         // m
  double vertex_mass = 1.0;        // kg
  double stiffness_rigid = 800.0;  // N/m structural spring per voxel type
  double stiffness_soft = 120.0;
  double stiffness_actuator = 300.0;
  double shear_ratio = 0.5;        // diagonal stiffness as a fraction of structural
  double damping = 2.0;            // N·s/m axial spring damping
  double gravity = 9.81;           // m/s² downward
  double ground_stiffness = 2000.0;  // N/m penalty normal force below y = 0
  double ground_damping = 10.0;      // N·s/m normal damping
  double friction = 0.8;             // Coulomb coefficient
  double control_dt = 0.05;          // s per control step
  int substeps = 10;                 // integrator substeps per control step
  int horizon = 128;                 // control steps per episode
  double jitter = 1e-4;              // start-position jitter amplitude, m

  // positivity checks plus a short two-mass simulation that rejects
  // timesteps the integrator cannot keep bounded
  void validate() const;
};

std::string env_config_to_json(const EnvConfig& config);
// accepts partial objects; missing fields keep their defaults
EnvConfig env_config_from_json(const std::string& text);

enum class SpringAxis { Horizontal, Vertical, Diagonal };

struct Spring {
  int a = 0;  // vertex ids
  int b = 0;
  double rest = 0.0;
  double stiffness = 0.0;
  int owner = 0;  // voxel (graph node order) whose actuation drives `rest`
  SpringAxis axis = SpringAxis::Horizontal;
};

struct SoftBodyState {
  std::vector<double> px, py;  // vertex positions
  std::vector<double> vx, vy;  // vertex velocities
  std::vector<Spring> springs;
  int step_count = 0;
  bool done = false;
};

// one semi-implicit Euler substep over the current spring rest lengths
void integrate_substep(SoftBodyState& state, const EnvConfig& config);

// kinetic + spring potential + gravitational potential energy
double mechanical_energy(const SoftBodyState& state, const EnvConfig& config);

struct Observation {
  // node-major: 16 entries per voxel — its four corner positions relative to
  // the center of mass (TL,TR,BL,BR as x,y pairs), then the four corner
  // velocities in the same order
  std::vector<double> local;
  // center-of-mass velocity (x, y) and center-of-mass height
  std::array<double, 3> global{};
  int nodes = 0;
  static constexpr int kLocalDim = 16;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

class VoxelEnv {
 public:
  VoxelEnv(VoxelGrid grid, EnvConfig config, std::uint64_t seed);

  // rebuilds the body at the origin: lowest vertices on the ground, leftmost
  // at x = 0, zero velocities, geometric rest lengths, seeded position jitter
  Observation reset(std::uint64_t seed);

  // clamps actions to [-1,1], lets actuators rescale their owned rest
  // lengths (scale 1.1 + 0.5·a), integrates `substeps` substeps and rewards
  // the center-of-mass forward displacement; a non-finite state ends the
  // episode with reward -10
  StepResult step(const std::vector<double>& actions);

  // raw integration hook for physics tests; does not touch actuation,
  // rewards or the step counter
  void substep() { integrate_substep(state_, config_); }

  const SoftBodyState& state() const { return state_; }
  SoftBodyState& mutable_state() { return state_; }
  const EnvConfig& config() const { return config_; }
  const VoxelGrid& grid() const { return grid_; }
  int node_count() const { return static_cast<int>(voxel_types_.size()); }
  // compact vertex ids of node i's corners in TL,TR,BL,BR order
  const std::array<int, 4>& corners(int node) const { return corners_[node]; }
  std::array<double, 2> center_of_mass() const;
  Observation observe() const;

 private:
  void apply_actions(const std::vector<double>& actions);

  VoxelGrid grid_;
  EnvConfig config_;
  std::vector<int> voxel_types_;             // row-major node order
  std::vector<std::array<int, 4>> corners_;  // node -> TL,TR,BL,BR vertex ids
  SoftBodyState state_;
  Observation last_obs_;  // served when divergence makes a fresh one unsafe
};

// sum of per-step rewards
double episode_return(const std::vector<double>& rewards);

// full episode under independent uniform[-1,1] actions; the learning
// acceptance threshold is a multiple of this simulated baseline
double random_policy_return(const VoxelGrid& grid, const EnvConfig& config,
                            std::uint64_t env_seed, std::uint64_t action_seed);

}  // namespace voxctl
