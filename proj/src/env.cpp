#include "voxctl/env.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "json.hpp"

#include "voxctl/rand.hpp"

namespace voxctl {

namespace {

double structural_stiffness(int voxel_type, const EnvConfig& c) {
  switch (voxel_type) {
    case kRigid: return c.stiffness_rigid;
    case kSoft: return c.stiffness_soft;
    case kActuatorH:
    case kActuatorV: return c.stiffness_actuator;
    default: throw std::invalid_argument("unknown voxel type " + std::to_string(voxel_type));
  }
}

bool state_finite(const SoftBodyState& s) {
  for (const auto* v : {&s.px, &s.py, &s.vx, &s.vy})
    for (double x : *v)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

void EnvConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0))
      throw std::invalid_argument(std::string("env config: ") + what + " must be positive");
  };
  positive(voxel_size, "voxel_size");
  positive(vertex_mass, "vertex_mass");
  positive(stiffness_rigid, "stiffness_rigid");
  positive(stiffness_soft, "stiffness_soft");
  positive(stiffness_actuator, "stiffness_actuator");
  positive(shear_ratio, "shear_ratio");
  positive(damping, "damping");
  positive(gravity, "gravity");
  positive(ground_stiffness, "ground_stiffness");
  positive(ground_damping, "ground_damping");
  positive(friction, "friction");
  positive(control_dt, "control_dt");
  if (substeps < 1) throw std::invalid_argument("env config: substeps must be at least 1");
  if (horizon < 1) throw std::invalid_argument("env config: horizon must be at least 1");
  if (jitter < 0.0) throw std::invalid_argument("env config: jitter must be non-negative");

  // integrator probe: the stiffest spring the lattice can produce is a
  // shared edge between two rigid voxels; a ten-percent stretch must decay,
  // not explode, under the configured substep
  SoftBodyState probe;
  probe.px = {0.0, 1.1 * voxel_size};
  probe.py = {10.0 * voxel_size, 10.0 * voxel_size};
  probe.vx = {0.0, 0.0};
  probe.vy = {0.0, 0.0};
  probe.springs.push_back(
      {0, 1, voxel_size, 2.0 * stiffness_rigid, 0, SpringAxis::Horizontal});
  const double e0 = mechanical_energy(probe, *this);
  for (int i = 0; i < 100; ++i) {
    integrate_substep(probe, *this);
    if (!(mechanical_energy(probe, *this) <= e0 * 1.05))
      throw std::invalid_argument(
          "env config: integrator unstable at this control_dt/substeps (energy grows)");
  }
  if (!(mechanical_energy(probe, *this) < e0))
    throw std::invalid_argument("env config: integrator probe did not dissipate energy");
}

std::string env_config_to_json(const EnvConfig& c) {
  nlohmann::json j;
  j["voxel_size"] = c.voxel_size;
  j["vertex_mass"] = c.vertex_mass;
  j["stiffness_rigid"] = c.stiffness_rigid;
  j["stiffness_soft"] = c.stiffness_soft;
  j["stiffness_actuator"] = c.stiffness_actuator;
  j["shear_ratio"] = c.shear_ratio;
  j["damping"] = c.damping;
  j["gravity"] = c.gravity;
  j["ground_stiffness"] = c.ground_stiffness;
  j["ground_damping"] = c.ground_damping;
  j["friction"] = c.friction;
  j["control_dt"] = c.control_dt;
  j["substeps"] = c.substeps;
  j["horizon"] = c.horizon;
  j["jitter"] = c.jitter;
  return j.dump(2);
}

EnvConfig env_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("env config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("env config: expected a JSON object");
  EnvConfig c;
  c.voxel_size = j.value("voxel_size", c.voxel_size);
  c.vertex_mass = j.value("vertex_mass", c.vertex_mass);
  c.stiffness_rigid = j.value("stiffness_rigid", c.stiffness_rigid);
  c.stiffness_soft = j.value("stiffness_soft", c.stiffness_soft);
  c.stiffness_actuator = j.value("stiffness_actuator", c.stiffness_actuator);
  c.shear_ratio = j.value("shear_ratio", c.shear_ratio);
  c.damping = j.value("damping", c.damping);
  c.gravity = j.value("gravity", c.gravity);
  c.ground_stiffness = j.value("ground_stiffness", c.ground_stiffness);
  c.ground_damping = j.value("ground_damping", c.ground_damping);
  c.friction = j.value("friction", c.friction);
  c.control_dt = j.value("control_dt", c.control_dt);
  c.substeps = j.value("substeps", c.substeps);
  c.horizon = j.value("horizon", c.horizon);
  c.jitter = j.value("jitter", c.jitter);
  c.validate();
  return c;
}

void integrate_substep(SoftBodyState& s, const EnvConfig& c) {
  const double dt = c.control_dt / c.substeps;
  const std::size_t n = s.px.size();
  std::vector<double> fx(n, 0.0), fy(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) fy[i] -= c.vertex_mass * c.gravity;

  for (const Spring& sp : s.springs) {
    double dx = s.px[sp.b] - s.px[sp.a];
    double dy = s.py[sp.b] - s.py[sp.a];
    double len = std::sqrt(dx * dx + dy * dy);
    if (len < 1e-12) continue;  // coincident endpoints exert no defined force
    double ux = dx / len, uy = dy / len;
    // positive when stretched or separating; force then pulls a toward b
    double rate = (s.vx[sp.b] - s.vx[sp.a]) * ux + (s.vy[sp.b] - s.vy[sp.a]) * uy;
    double f = sp.stiffness * (len - sp.rest) + c.damping * rate;
    fx[sp.a] += f * ux;
    fy[sp.a] += f * uy;
    fx[sp.b] -= f * ux;
    fy[sp.b] -= f * uy;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (s.py[i] < 0.0) {
      double normal = c.ground_stiffness * -s.py[i] - c.ground_damping * s.vy[i];
      if (normal < 0.0) normal = 0.0;
      fy[i] += normal;
      // friction can at most stop the tangential motion within this substep
      double stopping = c.vertex_mass * std::abs(s.vx[i]) / dt;
      double ft = std::min(c.friction * normal, stopping);
      fx[i] += s.vx[i] > 0.0 ? -ft : ft;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    s.vx[i] += fx[i] / c.vertex_mass * dt;
    s.vy[i] += fy[i] / c.vertex_mass * dt;
    s.px[i] += s.vx[i] * dt;
    s.py[i] += s.vy[i] * dt;
  }
}

double mechanical_energy(const SoftBodyState& s, const EnvConfig& c) {
  double e = 0.0;
  for (std::size_t i = 0; i < s.px.size(); ++i) {
    e += 0.5 * c.vertex_mass * (s.vx[i] * s.vx[i] + s.vy[i] * s.vy[i]);
    e += c.vertex_mass * c.gravity * s.py[i];
  }
  for (const Spring& sp : s.springs) {
    double dx = s.px[sp.b] - s.px[sp.a];
    double dy = s.py[sp.b] - s.py[sp.a];
    double stretch = std::sqrt(dx * dx + dy * dy) - sp.rest;
    e += 0.5 * sp.stiffness * stretch * stretch;
  }
  return e;
}

VoxelEnv::VoxelEnv(VoxelGrid grid, EnvConfig config, std::uint64_t seed)
    : grid_(std::move(grid)), config_(config) {
  grid_.validate();
  config_.validate();
  reset(seed);
}

Observation VoxelEnv::reset(std::uint64_t seed) {
  voxel_types_.clear();
  corners_.clear();
  state_ = SoftBodyState{};

  // lattice corner (r, c) -> compact vertex id; row 0 is the top of the
  // grid, so its corners sit highest: y = (rows - r) * size
  const int vcols = grid_.cols + 1;
  std::map<int, int> vertex_of;
  auto vertex = [&](int r, int c) {
    int key = r * vcols + c;
    auto [it, fresh] = vertex_of.try_emplace(key, static_cast<int>(state_.px.size()));
    if (fresh) {
      state_.px.push_back(config_.voxel_size * c);
      state_.py.push_back(config_.voxel_size * (grid_.rows - r));
      state_.vx.push_back(0.0);
      state_.vy.push_back(0.0);
    }
    return it->second;
  };

  std::map<std::pair<int, int>, std::size_t> edge_spring;
  auto add_edge = [&](int va, int vb, double stiffness, int owner, SpringAxis axis) {
    std::pair<int, int> key{std::min(va, vb), std::max(va, vb)};
    auto it = edge_spring.find(key);
    if (it != edge_spring.end()) {
      // shared with an earlier voxel: stiffen it, keep the first owner
      state_.springs[it->second].stiffness += stiffness;
      return;
    }
    edge_spring.emplace(key, state_.springs.size());
    state_.springs.push_back({va, vb, config_.voxel_size, stiffness, owner, axis});
  };

  for (int r = 0; r < grid_.rows; ++r) {
    for (int c = 0; c < grid_.cols; ++c) {
      int type = grid_.at(r, c);
      if (type == kEmpty) continue;
      int node = static_cast<int>(voxel_types_.size());
      voxel_types_.push_back(type);
      int tl = vertex(r, c), tr = vertex(r, c + 1);
      int bl = vertex(r + 1, c), br = vertex(r + 1, c + 1);
      corners_.push_back({tl, tr, bl, br});

      double k = structural_stiffness(type, config_);
      add_edge(tl, tr, k, node, SpringAxis::Horizontal);
      add_edge(bl, br, k, node, SpringAxis::Horizontal);
      add_edge(tl, bl, k, node, SpringAxis::Vertical);
      add_edge(tr, br, k, node, SpringAxis::Vertical);
      double rest_diag = config_.voxel_size * std::sqrt(2.0);
      double k_shear = config_.shear_ratio * k;
      state_.springs.push_back({tl, br, rest_diag, k_shear, node, SpringAxis::Diagonal});
      state_.springs.push_back({tr, bl, rest_diag, k_shear, node, SpringAxis::Diagonal});
    }
  }

  // drop to the ground and flush left: lowest instantiated corners at y = 0,
  // leftmost at x = 0
  double min_x = state_.px[0], min_y = state_.py[0];
  for (double x : state_.px) min_x = std::min(min_x, x);
  for (double y : state_.py) min_y = std::min(min_y, y);
  for (double& x : state_.px) x -= min_x;
  for (double& y : state_.py) y -= min_y;

  if (config_.jitter > 0.0) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < state_.px.size(); ++i) {
      state_.px[i] += rnd::uniform_range(rng, -config_.jitter, config_.jitter);
      state_.py[i] += rnd::uniform_range(rng, -config_.jitter, config_.jitter);
    }
  }

  last_obs_ = observe();
  return last_obs_;
}

std::array<double, 2> VoxelEnv::center_of_mass() const {
  double sx = 0.0, sy = 0.0;
  for (double x : state_.px) sx += x;
  for (double y : state_.py) sy += y;
  double n = static_cast<double>(state_.px.size());
  return {sx / n, sy / n};
}

Observation VoxelEnv::observe() const {
  Observation obs;
  obs.nodes = node_count();
  obs.local.resize(static_cast<std::size_t>(obs.nodes) * Observation::kLocalDim);
  auto com = center_of_mass();
  for (int i = 0; i < obs.nodes; ++i) {
    double* row = obs.local.data() + static_cast<std::size_t>(i) * Observation::kLocalDim;
    for (int k = 0; k < 4; ++k) {
      int v = corners_[i][k];
      row[2 * k] = state_.px[v] - com[0];
      row[2 * k + 1] = state_.py[v] - com[1];
      row[8 + 2 * k] = state_.vx[v];
      row[8 + 2 * k + 1] = state_.vy[v];
    }
  }
  double svx = 0.0, svy = 0.0;
  for (double v : state_.vx) svx += v;
  for (double v : state_.vy) svy += v;
  double n = static_cast<double>(state_.px.size());
  obs.global = {svx / n, svy / n, com[1]};
  return obs;
}

void VoxelEnv::apply_actions(const std::vector<double>& actions) {
  // per-voxel cell dimensions under actuation: a horizontal actuator scales
  // its width, a vertical one its height, everything else keeps 1x1
  std::vector<double> width(voxel_types_.size(), 1.0), height(voxel_types_.size(), 1.0);
  for (std::size_t i = 0; i < voxel_types_.size(); ++i) {
    double a = std::clamp(actions[i], -1.0, 1.0);
    double scale = 1.1 + 0.5 * a;
    if (voxel_types_[i] == kActuatorH) width[i] = scale;
    if (voxel_types_[i] == kActuatorV) height[i] = scale;
  }
  for (Spring& sp : state_.springs) {
    double w = width[sp.owner] * config_.voxel_size;
    double h = height[sp.owner] * config_.voxel_size;
    switch (sp.axis) {
      case SpringAxis::Horizontal: sp.rest = w; break;
      case SpringAxis::Vertical: sp.rest = h; break;
      case SpringAxis::Diagonal: sp.rest = std::sqrt(w * w + h * h); break;
    }
  }
}

StepResult VoxelEnv::step(const std::vector<double>& actions) {
  if (state_.done) throw std::logic_error("step on a finished episode; reset first");
  if (static_cast<int>(actions.size()) != node_count())
    throw std::invalid_argument("expected " + std::to_string(node_count()) + " actions, got " +
                                std::to_string(actions.size()));

  const double x_before = center_of_mass()[0];
  apply_actions(actions);
  for (int i = 0; i < config_.substeps; ++i) integrate_substep(state_, config_);
  ++state_.step_count;

  StepResult result;
  if (!state_finite(state_)) {
    state_.done = true;
    result.reward = -10.0;
    result.obs = last_obs_;  // positions are unusable; serve the last finite view
  } else {
    result.reward = center_of_mass()[0] - x_before;
    state_.done = state_.step_count >= config_.horizon;
    result.obs = observe();
    last_obs_ = result.obs;
  }
  result.done = state_.done;
  return result;
}

double episode_return(const std::vector<double>& rewards) {
  double total = 0.0;
  for (double r : rewards) total += r;
  return total;
}

double random_policy_return(const VoxelGrid& grid, const EnvConfig& config,
                            std::uint64_t env_seed, std::uint64_t action_seed) {
  VoxelEnv env(grid, config, env_seed);
  std::mt19937_64 rng(action_seed);
  std::vector<double> actions(env.node_count());
  double total = 0.0;
  while (true) {
    for (double& a : actions) a = rnd::uniform_range(rng, -1.0, 1.0);
    StepResult r = env.step(actions);
    total += r.reward;
    if (r.done) break;
  }
  return total;
}

}  // namespace voxctl
