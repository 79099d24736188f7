#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "voxctl/env.hpp"
#include "voxctl/model.hpp"
#include "voxctl/morphology.hpp"
#include "voxctl/tensor.hpp"

namespace voxctl {

// Clipped-surrogate policy-gradient hyperparameters.  One "update" collects
// `horizon` steps from `envs_per_morph` environments per morphology and then
// optimizes the surrogate for `epochs` passes over that batch.
struct PPOConfig {
  double gamma = 0.99;
  double lam = 0.95;  // advantage-estimation decay
  double clip = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  int horizon = 128;
  int envs_per_morph = 4;
  int updates = 100;

  void validate() const;
  bool operator==(const PPOConfig&) const = default;
};

std::string ppo_config_to_json(const PPOConfig& config);
// accepts partial objects; missing fields keep their defaults
PPOConfig ppo_config_from_json(const std::string& text);

// Generalized advantage estimation over one trajectory segment.
//   delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
//   A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
// `values` holds V_t for each stored step; `bootstrap_value` stands in for
// V_T at the segment boundary.  Returns-to-go are A_t + V_t.
struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};
GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones, double bootstrap_value,
                      double gamma, double lam);

// Differentiable elementwise helpers built from relu so they stay on the tape.
Tensor tensor_min(const Tensor& a, const Tensor& b);
Tensor tensor_clamp(const Tensor& x, double lo, double hi);

// Per-sample clipped surrogate objective (the quantity that gets maximized):
//   min(ratio * adv, clamp(ratio, 1-clip, 1+clip) * adv)
Tensor clipped_objective(const Tensor& ratio, double advantage, double clip);

// One environment's slice of a collection batch.  All vectors are indexed by
// step; observations and actions are flattened row-major per node.
struct EnvRollout {
  std::vector<std::vector<double>> local_obs;   // horizon x (nodes*16)
  std::vector<std::array<double, 3>> global_obs;
  std::vector<std::vector<double>> actions;     // horizon x nodes
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<std::uint8_t> dones;
  double bootstrap_value = 0.0;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> episode_returns;  // episodes that finished inside this segment
};

struct MorphRollout {
  std::string name;
  int nodes = 0;
  std::vector<EnvRollout> envs;
  double mean_episode_return = 0.0;
};

using RolloutBatches = std::vector<MorphRollout>;

struct UpdateStats {
  double mean_return_overall = 0.0;
  std::vector<double> per_morph_return;  // aligned with the morphology order
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_frac = 0.0;
};

struct TrainRunConfig {
  std::vector<VoxelGrid> morphologies;
  ModelConfig model;
  PPOConfig ppo;
  EnvConfig env;
  std::uint64_t seed = 0;
  std::string out_dir;        // empty: keep everything in memory, write no files
  int checkpoint_every = 0;   // 0: only the final checkpoint

  void validate() const;
};

// Number of collection workers: min(task count, HM_THREADS if set, hardware
// concurrency).  Always at least one.
int worker_count(int task_count);

// Multi-morphology policy-gradient trainer.  Environments, their RNG streams,
// and optimizer state persist across updates; results are bit-identical for a
// given seed regardless of the worker count.
class Trainer {
 public:
  explicit Trainer(TrainRunConfig config);
  // start from existing parameters (fine-tuning); shapes must match the config
  Trainer(TrainRunConfig config, Parameters params);

  // one batch of experience from every (morphology, env) pair, with
  // advantages and returns already filled in
  RolloutBatches collect_rollouts();
  // epochs x minibatches of clipped-surrogate optimization on a batch;
  // normalizes advantages in place across the whole batch first
  UpdateStats ppo_update(RolloutBatches& batches);
  UpdateStats train_one_update();
  // the full loop: config().ppo.updates rounds, plus metrics.csv and
  // checkpoint files when out_dir is set
  std::vector<UpdateStats> run();

  const Parameters& params() const { return params_; }
  const TrainRunConfig& config() const { return config_; }
  std::vector<std::string> metrics_header() const;

 private:
  struct EnvSlot {
    std::unique_ptr<VoxelEnv> env;
    std::mt19937_64 stream;
    Observation obs;             // pending observation for the next step
    double episode_acc = 0.0;    // reward accumulated in the running episode
  };

  void setup();
  void collect_slot(int morph, int env_index, EnvRollout& out);
  void adam_step(const std::vector<Tensor>& grads);
  std::string checkpoint_meta() const;

  TrainRunConfig config_;
  Parameters params_;
  std::vector<HeteroGraph> graphs_;
  std::vector<GraphLayout> layouts_;
  std::vector<std::vector<EnvSlot>> slots_;  // [morph][env]
  std::mt19937_64 shuffle_rng_;
  std::vector<std::vector<double>> adam_m_;  // aligned with Parameters::flat()
  std::vector<std::vector<double>> adam_v_;
  std::int64_t adam_t_ = 0;
  int update_index_ = 0;
};

struct EvalResult {
  double mean_return = 0.0;
  std::vector<double> per_episode;
};

// Roll full episodes with the given parameters.  `deterministic` plays the
// action mean; otherwise actions are sampled with the configured log-std.
EvalResult evaluate(const Parameters& params, const ModelConfig& model, const VoxelGrid& grid,
                    const EnvConfig& env, int episodes, bool deterministic, std::uint64_t seed);

struct TransferOutcome {
  std::string name;
  double zero_shot = 0.0;
  std::optional<double> fine_tuned;  // absent in zero-shot mode
};

struct TransferReport {
  std::string mode;  // "zero_shot" or "fine_tune"
  std::uint64_t seed = 0;
  std::vector<TransferOutcome> per_morphology;
  std::string to_json() const;
};

// Transfer a trained checkpoint to morphologies it never saw.  Every unseen
// morphology is first scored as-is; with `fine_tune` set, the parameters are
// additionally trained on the unseen set for `budget` updates (fresh
// optimizer state) and scored again.  Unseen names must be disjoint from the
// checkpoint's recorded training set.
TransferReport transfer(const Checkpoint& checkpoint, const std::vector<VoxelGrid>& unseen,
                        const PPOConfig& ppo, const EnvConfig& env, bool fine_tune, int budget,
                        std::uint64_t seed, int eval_episodes = 4);

}  // namespace voxctl
