#include "voxctl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>
#include <utility>

#include "json.hpp"

#include "voxctl/rand.hpp"

namespace voxctl {

namespace {

constexpr double kPi = 3.14159265358979323846;

// shortest round-trippable decimal representation of a double
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> tensor_values(const Tensor& t) {
  auto d = t.data();
  return std::vector<double>(d.begin(), d.end());
}

// 1x1 constant matching the shape of model outputs like value and log-prob
Tensor unit_const(double v) { return Tensor::from({1, 1}, {v}); }

}  // namespace

void PPOConfig::validate() const {
  auto in_unit = [](double v, const char* what, bool open_low) {
    bool ok = open_low ? (v > 0.0 && v <= 1.0) : (v >= 0.0 && v <= 1.0);
    if (!ok)
      throw std::invalid_argument(std::string("ppo config: ") + what + " must lie in " +
                                  (open_low ? "(0, 1]" : "[0, 1]"));
  };
  in_unit(gamma, "gamma", true);
  in_unit(lam, "lam", false);
  if (!(clip > 0.0)) throw std::invalid_argument("ppo config: clip must be positive");
  if (epochs < 1) throw std::invalid_argument("ppo config: epochs must be at least 1");
  if (minibatches < 1) throw std::invalid_argument("ppo config: minibatches must be at least 1");
  if (!(learning_rate >= 0.0))
    throw std::invalid_argument("ppo config: learning_rate must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0))
    throw std::invalid_argument("ppo config: adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("ppo config: adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("ppo config: adam_eps must be positive");
  if (!(value_coef >= 0.0))
    throw std::invalid_argument("ppo config: value_coef must be non-negative");
  if (!(entropy_coef >= 0.0))
    throw std::invalid_argument("ppo config: entropy_coef must be non-negative");
  if (!(max_grad_norm > 0.0))
    throw std::invalid_argument("ppo config: max_grad_norm must be positive");
  if (horizon < 1) throw std::invalid_argument("ppo config: horizon must be at least 1");
  if (envs_per_morph < 1)
    throw std::invalid_argument("ppo config: envs_per_morph must be at least 1");
  if (updates < 0) throw std::invalid_argument("ppo config: updates must be non-negative");
}

std::string ppo_config_to_json(const PPOConfig& c) {
  nlohmann::json j;
  j["gamma"] = c.gamma;
  j["lam"] = c.lam;
  j["clip"] = c.clip;
  j["epochs"] = c.epochs;
  j["minibatches"] = c.minibatches;
  j["learning_rate"] = c.learning_rate;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["value_coef"] = c.value_coef;
  j["entropy_coef"] = c.entropy_coef;
  j["max_grad_norm"] = c.max_grad_norm;
  j["horizon"] = c.horizon;
  j["envs_per_morph"] = c.envs_per_morph;
  j["updates"] = c.updates;
  return j.dump(2);
}

PPOConfig ppo_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("ppo config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("ppo config: expected a JSON object");
  PPOConfig c;
  c.gamma = j.value("gamma", c.gamma);
  c.lam = j.value("lam", c.lam);
  c.clip = j.value("clip", c.clip);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatches = j.value("minibatches", c.minibatches);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.horizon = j.value("horizon", c.horizon);
  c.envs_per_morph = j.value("envs_per_morph", c.envs_per_morph);
  c.updates = j.value("updates", c.updates);
  c.validate();
  return c;
}

GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<std::uint8_t>& dones, double bootstrap_value,
                      double gamma, double lam) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n)
    throw std::invalid_argument("compute_gae: rewards, values and dones must share a length");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double next_value = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + gamma * next_value * not_done - values[i];
    running = delta + gamma * lam * not_done * running;
    out.advantages[i] = running;
    out.returns[i] = running + values[i];
  }
  return out;
}

Tensor tensor_min(const Tensor& a, const Tensor& b) {
  // min(a, b) = a - max(a - b, 0)
  return sub(a, relu(sub(a, b)));
}

Tensor tensor_clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("tensor_clamp: lo must not exceed hi");
  Tensor low = constant_like(x, lo);
  Tensor high = constant_like(x, hi);
  Tensor floored = add(low, relu(sub(x, low)));  // max(x, lo)
  return sub(high, relu(sub(high, floored)));    // min(max(x, lo), hi)
}

Tensor clipped_objective(const Tensor& ratio, double advantage, double clip) {
  Tensor unclipped = scalar_mul(ratio, advantage);
  Tensor clipped = scalar_mul(tensor_clamp(ratio, 1.0 - clip, 1.0 + clip), advantage);
  return tensor_min(unclipped, clipped);
}

void TrainRunConfig::validate() const {
  if (morphologies.empty())
    throw std::invalid_argument("train config: at least one morphology is required");
  std::set<std::string> names;
  for (const VoxelGrid& g : morphologies) {
    g.validate();
    if (!names.insert(g.name).second)
      throw std::invalid_argument("train config: duplicate morphology name '" + g.name + "'");
  }
  model.validate();
  ppo.validate();
  env.validate();
  if (checkpoint_every < 0)
    throw std::invalid_argument("train config: checkpoint_every must be non-negative");
}

int worker_count(int task_count) {
  if (task_count < 1) return 1;
  unsigned hw = std::thread::hardware_concurrency();
  int cap = hw == 0 ? 1 : static_cast<int>(hw);
  if (const char* v = std::getenv("HM_THREADS")) {
    char* end = nullptr;
    long parsed = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || parsed < 1)
      throw std::invalid_argument("HM_THREADS must be a positive integer, got '" +
                                  std::string(v) + "'");
    cap = static_cast<int>(std::min<long>(parsed, 1 << 20));
  }
  return std::max(1, std::min(cap, task_count));
}

// ------------------------------------------------------------- Trainer ----

Trainer::Trainer(TrainRunConfig config) : config_(std::move(config)) {
  config_.validate();
  params_ = init_parameters(config_.model, node_type_count(config_.model.scheme),
                            edge_type_count(config_.model.scheme), config_.seed);
  setup();
}

Trainer::Trainer(TrainRunConfig config, Parameters params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  setup();
}

void Trainer::setup() {
  const int morph_count = static_cast<int>(config_.morphologies.size());
  graphs_.reserve(morph_count);
  layouts_.reserve(morph_count);
  for (const VoxelGrid& grid : config_.morphologies) {
    graphs_.push_back(build_graph(grid, config_.model.scheme, config_.model.full_connectivity));
    layouts_.push_back(make_layout(graphs_.back(), config_.model));
  }

  slots_.resize(morph_count);
  for (int m = 0; m < morph_count; ++m) {
    slots_[m].resize(config_.ppo.envs_per_morph);
    for (int e = 0; e < config_.ppo.envs_per_morph; ++e) {
      EnvSlot& slot = slots_[m][e];
      // one stream per (morphology, env) pair feeds every random decision the
      // slot ever makes, so results cannot depend on the worker layout
      slot.stream = std::mt19937_64(
          rnd::mix_seed(config_.seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(e)));
      slot.env = std::make_unique<VoxelEnv>(config_.morphologies[m], config_.env, slot.stream());
      slot.obs = slot.env->observe();
    }
  }

  // minibatch shuffling gets its own stream so collection and optimization
  // never contend for draws
  shuffle_rng_ = std::mt19937_64(rnd::mix_seed(config_.seed, 0x00C0FFEEULL, 1));

  for (const auto& [name, tensor] : params_.flat()) {
    (void)name;
    adam_m_.emplace_back(tensor.size(), 0.0);
    adam_v_.emplace_back(tensor.size(), 0.0);
  }
}

void Trainer::collect_slot(int morph, int env_index, EnvRollout& out) {
  EnvSlot& slot = slots_[morph][env_index];
  const GraphLayout& layout = layouts_[morph];
  const ModelConfig& mc = config_.model;
  const int n = layout.node_count;
  const int horizon = config_.ppo.horizon;

  out = EnvRollout{};
  out.local_obs.reserve(horizon);
  out.global_obs.reserve(horizon);
  out.actions.reserve(horizon);
  out.log_probs.reserve(horizon);
  out.rewards.reserve(horizon);
  out.values.reserve(horizon);
  out.dones.reserve(horizon);

  for (int t = 0; t < horizon; ++t) {
    Tensor local = Tensor::from({n, mc.local_obs_dim}, slot.obs.local);
    Tensor global = Tensor::from(
        {1, mc.global_obs_dim}, {slot.obs.global[0], slot.obs.global[1], slot.obs.global[2]});
    PolicyOutput po = forward(local, global, layout, params_, mc);
    std::vector<double> mu = tensor_values(po.mu);
    std::vector<double> action = sample_action(mu, mc.log_std, slot.stream);
    double logp = gaussian_log_prob_value(mu, action, mc.log_std);

    StepResult sr = slot.env->step(action);

    out.global_obs.push_back(slot.obs.global);
    out.local_obs.push_back(std::move(slot.obs.local));
    out.actions.push_back(std::move(action));
    out.log_probs.push_back(logp);
    out.rewards.push_back(sr.reward);
    out.values.push_back(po.value.at(0));
    out.dones.push_back(sr.done ? 1 : 0);

    slot.episode_acc += sr.reward;
    if (sr.done) {
      out.episode_returns.push_back(slot.episode_acc);
      slot.episode_acc = 0.0;
      slot.obs = slot.env->reset(slot.stream());
    } else {
      slot.obs = std::move(sr.obs);
    }
  }

  Tensor local = Tensor::from({n, mc.local_obs_dim}, slot.obs.local);
  Tensor global = Tensor::from(
      {1, mc.global_obs_dim}, {slot.obs.global[0], slot.obs.global[1], slot.obs.global[2]});
  out.bootstrap_value = forward(local, global, layout, params_, mc).value.at(0);
}

RolloutBatches Trainer::collect_rollouts() {
  const int morph_count = static_cast<int>(config_.morphologies.size());
  const int envs = config_.ppo.envs_per_morph;

  RolloutBatches batches(morph_count);
  for (int m = 0; m < morph_count; ++m) {
    batches[m].name = config_.morphologies[m].name;
    batches[m].nodes = layouts_[m].node_count;
    batches[m].envs.resize(envs);
  }

  // every (morphology, env) slot is an independent task writing a disjoint
  // EnvRollout; contiguous task ranges go to min(tasks, HM_THREADS, cores)
  // workers
  std::vector<std::pair<int, int>> tasks;
  tasks.reserve(static_cast<std::size_t>(morph_count) * envs);
  for (int m = 0; m < morph_count; ++m)
    for (int e = 0; e < envs; ++e) tasks.emplace_back(m, e);

  const std::size_t workers =
      static_cast<std::size_t>(worker_count(static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(workers);
  const std::size_t per = (tasks.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = std::min(tasks.size(), w * per);
    const std::size_t hi = std::min(tasks.size(), lo + per);
    pool.emplace_back([this, &tasks, &batches, &failures, w, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i)
          collect_slot(tasks[i].first, tasks[i].second, batches[tasks[i].first].envs[tasks[i].second]);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& f : failures)
    if (f) std::rethrow_exception(f);

  for (int m = 0; m < morph_count; ++m) {
    double sum = 0.0;
    int count = 0;
    for (EnvRollout& r : batches[m].envs) {
      GaeResult g = compute_gae(r.rewards, r.values, r.dones, r.bootstrap_value,
                                config_.ppo.gamma, config_.ppo.lam);
      r.advantages = std::move(g.advantages);
      r.returns = std::move(g.returns);
      for (double er : r.episode_returns) {
        sum += er;
        ++count;
      }
    }
    if (count > 0) {
      batches[m].mean_episode_return = sum / count;
    } else {
      // no episode finished inside this segment: report the running partial
      // sums so the metric stays defined
      for (int e = 0; e < envs; ++e) sum += slots_[m][e].episode_acc;
      batches[m].mean_episode_return = sum / envs;
    }
  }
  return batches;
}

UpdateStats Trainer::ppo_update(RolloutBatches& batches) {
  const PPOConfig& ppo = config_.ppo;
  const ModelConfig& mc = config_.model;

  struct Ref {
    int m, e, t;
  };
  std::vector<Ref> refs;
  for (int m = 0; m < static_cast<int>(batches.size()); ++m)
    for (int e = 0; e < static_cast<int>(batches[m].envs.size()); ++e)
      for (int t = 0; t < static_cast<int>(batches[m].envs[e].rewards.size()); ++t)
        refs.push_back({m, e, t});
  if (refs.empty()) throw std::invalid_argument("ppo_update: empty batch");

  // one normalization over the whole batch, not per minibatch
  double mean = 0.0;
  for (const Ref& r : refs) mean += batches[r.m].envs[r.e].advantages[r.t];
  mean /= static_cast<double>(refs.size());
  double var = 0.0;
  for (const Ref& r : refs) {
    const double d = batches[r.m].envs[r.e].advantages[r.t] - mean;
    var += d * d;
  }
  var /= static_cast<double>(refs.size());
  const double denom = std::sqrt(var) + 1e-8;
  for (const Ref& r : refs) {
    double& a = batches[r.m].envs[r.e].advantages[r.t];
    a = (a - mean) / denom;
  }

  UpdateStats stats;
  stats.per_morph_return.reserve(batches.size());
  double overall = 0.0;
  for (const MorphRollout& mr : batches) {
    stats.per_morph_return.push_back(mr.mean_episode_return);
    overall += mr.mean_episode_return;
  }
  stats.mean_return_overall = overall / static_cast<double>(batches.size());

  const double entropy_per_node = mc.log_std + 0.5 * std::log(2.0 * kPi) + 0.5;
  const int passes = ppo.epochs * ppo.minibatches;
  const std::size_t total = refs.size();

  for (int epoch = 0; epoch < ppo.epochs; ++epoch) {
    // Fisher-Yates with the trainer's own stream keeps the visit order
    // reproducible whatever std::shuffle does on a given platform
    for (std::size_t i = total; i-- > 1;) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng_() % (i + 1));
      std::swap(refs[i], refs[j]);
    }

    for (int mb = 0; mb < ppo.minibatches; ++mb) {
      const std::size_t lo = total * mb / ppo.minibatches;
      const std::size_t hi = total * (mb + 1) / ppo.minibatches;
      if (lo == hi) continue;
      const double batch_size = static_cast<double>(hi - lo);

      std::vector<std::pair<std::string, Tensor>> flat;
      GradMap grads;
      double policy_val = 0.0, value_val = 0.0, entropy_val = 0.0;
      double kl_sum = 0.0;
      int clip_count = 0;
      {
        Tape tape;
        TapeScope scope(tape);
        flat = params_.flat();
        for (const auto& [name, tensor] : flat) {
          (void)name;
          tape.watch(tensor);
        }

        // the log-prob path is rank-1, the value path 1x1; each accumulator
        // matches its own path and the two meet as rank-1 at the very end
        Tensor obj_sum = Tensor::scalar(0.0);
        Tensor sq_sum = unit_const(0.0);
        double entropy_sum = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
          const Ref& s = refs[i];
          const EnvRollout& r = batches[s.m].envs[s.e];
          const int n = batches[s.m].nodes;
          Tensor local = Tensor::from({n, mc.local_obs_dim}, r.local_obs[s.t]);
          Tensor global = Tensor::from({1, mc.global_obs_dim},
                                       {r.global_obs[s.t][0], r.global_obs[s.t][1],
                                        r.global_obs[s.t][2]});
          PolicyOutput po = forward(local, global, layouts_[s.m], params_, mc);
          Tensor actions = Tensor::from({n, 1}, r.actions[s.t]);
          Tensor logp_new = gaussian_log_prob(po.mu, actions, mc.log_std);
          Tensor ratio = exp(sub(logp_new, Tensor::scalar(r.log_probs[s.t])));
          obj_sum = add(obj_sum, clipped_objective(ratio, r.advantages[s.t], ppo.clip));

          Tensor verr = sub(po.value, unit_const(r.returns[s.t]));
          sq_sum = add(sq_sum, mul(verr, verr));
          entropy_sum += n * entropy_per_node;

          kl_sum += r.log_probs[s.t] - logp_new.at(0);
          if (std::abs(ratio.at(0) - 1.0) > ppo.clip) ++clip_count;
        }

        Tensor policy_loss = scalar_mul(obj_sum, -1.0 / batch_size);
        Tensor value_loss = scalar_mul(sum(sq_sum, -1), 0.5 / batch_size);
        const double entropy_mean = entropy_sum / batch_size;
        Tensor loss = add(policy_loss, scalar_mul(value_loss, ppo.value_coef));
        // the entropy of a fixed-width Gaussian is constant, so this term
        // shifts the reported loss without touching any gradient
        loss = sub(loss, Tensor::scalar(ppo.entropy_coef * entropy_mean));

        policy_val = policy_loss.at(0);
        value_val = value_loss.at(0);
        entropy_val = entropy_mean;
        if (!std::isfinite(loss.at(0)))
          throw std::runtime_error(
              "ppo_update: non-finite loss at update " + std::to_string(update_index_) +
              ", epoch " + std::to_string(epoch) + ", minibatch " + std::to_string(mb) +
              " (policy " + fmt_double(policy_val) + ", value " + fmt_double(value_val) + ")");

        grads = tape.backward(loss);
      }

      std::vector<Tensor> aligned;
      aligned.reserve(flat.size());
      for (const auto& [name, tensor] : flat) {
        (void)name;
        aligned.push_back(grads.at(tensor.id()));
      }
      adam_step(aligned);

      stats.policy_loss += policy_val;
      stats.value_loss += value_val;
      stats.entropy += entropy_val;
      stats.approx_kl += kl_sum / batch_size;
      stats.clip_frac += static_cast<double>(clip_count) / batch_size;
    }
  }

  stats.policy_loss /= passes;
  stats.value_loss /= passes;
  stats.entropy /= passes;
  stats.approx_kl /= passes;
  stats.clip_frac /= passes;
  ++update_index_;
  return stats;
}

void Trainer::adam_step(const std::vector<Tensor>& grads) {
  const PPOConfig& ppo = config_.ppo;

  double sq_norm = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data()) sq_norm += v * v;
  const double norm = std::sqrt(sq_norm);
  if (!std::isfinite(norm))
    throw std::runtime_error("adam_step: non-finite gradient norm at update " +
                             std::to_string(update_index_));
  const double scale = norm > ppo.max_grad_norm ? ppo.max_grad_norm / norm : 1.0;

  ++adam_t_;
  const double bc1 = 1.0 - std::pow(ppo.adam_beta1, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(ppo.adam_beta2, static_cast<double>(adam_t_));

  std::size_t index = 0;
  params_.visit(std::function<void(const std::string&, Tensor&)>(
      [&](const std::string&, Tensor& t) {
        const auto g = grads[index].data();
        std::vector<double>& m = adam_m_[index];
        std::vector<double>& v = adam_v_[index];
        std::vector<double> next(t.data().begin(), t.data().end());
        for (std::size_t j = 0; j < next.size(); ++j) {
          const double gj = g[j] * scale;
          m[j] = ppo.adam_beta1 * m[j] + (1.0 - ppo.adam_beta1) * gj;
          v[j] = ppo.adam_beta2 * v[j] + (1.0 - ppo.adam_beta2) * gj * gj;
          next[j] -= ppo.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + ppo.adam_eps);
        }
        t = Tensor::from(t.shape(), std::move(next)).mark_parameter();
        ++index;
      }));
}

UpdateStats Trainer::train_one_update() {
  RolloutBatches batches = collect_rollouts();
  return ppo_update(batches);
}

std::vector<std::string> Trainer::metrics_header() const {
  std::vector<std::string> cols = {"update", "mean_return_overall"};
  for (const VoxelGrid& g : config_.morphologies) cols.push_back("mean_return_" + g.name);
  cols.insert(cols.end(), {"policy_loss", "value_loss", "kl", "clip_frac"});
  return cols;
}

std::string Trainer::checkpoint_meta() const {
  nlohmann::json meta;
  meta["trained_on"] = nlohmann::json::array();
  for (const VoxelGrid& g : config_.morphologies) meta["trained_on"].push_back(g.name);
  meta["seed"] = config_.seed;
  meta["updates"] = update_index_;
  return meta.dump();
}

std::vector<UpdateStats> Trainer::run() {
  namespace fs = std::filesystem;
  std::ofstream metrics;
  const bool to_disk = !config_.out_dir.empty();
  if (to_disk) {
    fs::create_directories(config_.out_dir);
    metrics.open(fs::path(config_.out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics.csv under " + config_.out_dir);
    const auto cols = metrics_header();
    for (std::size_t i = 0; i < cols.size(); ++i)
      metrics << (i ? "," : "") << cols[i];
    metrics << "\n" << std::flush;
  }

  std::vector<UpdateStats> history;
  history.reserve(config_.ppo.updates);
  for (int u = 0; u < config_.ppo.updates; ++u) {
    UpdateStats st = train_one_update();
    if (to_disk) {
      metrics << (u + 1) << "," << fmt_double(st.mean_return_overall);
      for (double r : st.per_morph_return) metrics << "," << fmt_double(r);
      metrics << "," << fmt_double(st.policy_loss) << "," << fmt_double(st.value_loss) << ","
              << fmt_double(st.approx_kl) << "," << fmt_double(st.clip_frac) << "\n"
              << std::flush;
      if (config_.checkpoint_every > 0 && (u + 1) % config_.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_update_%06d.ckpt", u + 1);
        save_checkpoint((fs::path(config_.out_dir) / name).string(), params_, config_.model,
                        checkpoint_meta());
      }
    }
    history.push_back(std::move(st));
  }
  if (to_disk)
    save_checkpoint((fs::path(config_.out_dir) / "checkpoint_final.ckpt").string(), params_,
                    config_.model, checkpoint_meta());
  return history;
}

// ------------------------------------------------- evaluation/transfer ----

EvalResult evaluate(const Parameters& params, const ModelConfig& model, const VoxelGrid& grid,
                    const EnvConfig& env_config, int episodes, bool deterministic,
                    std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be at least 1");
  grid.validate();
  const HeteroGraph graph = build_graph(grid, model.scheme, model.full_connectivity);
  const GraphLayout layout = make_layout(graph, model);
  const int n = layout.node_count;

  EvalResult result;
  result.per_episode.reserve(episodes);
  for (int ep = 0; ep < episodes; ++ep) {
    VoxelEnv env(grid, env_config, rnd::mix_seed(seed, static_cast<std::uint64_t>(ep), 0));
    std::mt19937_64 action_rng(rnd::mix_seed(seed, static_cast<std::uint64_t>(ep), 1));
    Observation obs = env.observe();
    double total = 0.0;
    while (true) {
      Tensor local = Tensor::from({n, model.local_obs_dim}, obs.local);
      Tensor global =
          Tensor::from({1, model.global_obs_dim}, {obs.global[0], obs.global[1], obs.global[2]});
      PolicyOutput po = forward(local, global, layout, params, model);
      std::vector<double> action = tensor_values(po.mu);
      if (!deterministic) action = sample_action(action, model.log_std, action_rng);
      StepResult sr = env.step(action);
      total += sr.reward;
      if (sr.done) break;
      obs = std::move(sr.obs);
    }
    result.per_episode.push_back(total);
    result.mean_return += total;
  }
  result.mean_return /= episodes;
  return result;
}

std::string TransferReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["seed"] = seed;
  j["per_morphology"] = nlohmann::json::array();
  for (const TransferOutcome& o : per_morphology) {
    nlohmann::json row;
    row["name"] = o.name;
    row["zero_shot"] = o.zero_shot;
    if (o.fine_tuned)
      row["fine_tuned"] = *o.fine_tuned;
    else
      row["fine_tuned"] = nullptr;
    j["per_morphology"].push_back(std::move(row));
  }
  return j.dump(2);
}

TransferReport transfer(const Checkpoint& checkpoint, const std::vector<VoxelGrid>& unseen,
                        const PPOConfig& ppo, const EnvConfig& env, bool fine_tune, int budget,
                        std::uint64_t seed, int eval_episodes) {
  if (unseen.empty()) throw std::invalid_argument("transfer: unseen set must not be empty");
  if (fine_tune && budget < 1)
    throw std::invalid_argument("transfer: fine-tune budget must be at least 1 update");

  std::set<std::string> unseen_names;
  for (const VoxelGrid& g : unseen) {
    g.validate();
    if (!unseen_names.insert(g.name).second)
      throw std::invalid_argument("transfer: duplicate unseen morphology name '" + g.name + "'");
  }
  // a checkpoint written by the trainer records its training set; transfer
  // to anything in that set would not measure generalization
  const nlohmann::json meta = nlohmann::json::parse(checkpoint.meta_json, nullptr, false);
  if (meta.is_object() && meta.contains("trained_on") && meta["trained_on"].is_array()) {
    for (const auto& entry : meta["trained_on"])
      if (entry.is_string() && unseen_names.count(entry.get<std::string>()))
        throw std::invalid_argument("transfer: morphology '" + entry.get<std::string>() +
                                    "' appears in both the training set and the unseen set");
  }

  TransferReport report;
  report.mode = fine_tune ? "fine_tune" : "zero_shot";
  report.seed = seed;

  for (std::size_t m = 0; m < unseen.size(); ++m) {
    TransferOutcome o;
    o.name = unseen[m].name;
    o.zero_shot = evaluate(checkpoint.params, checkpoint.config, unseen[m], env, eval_episodes,
                           /*deterministic=*/true, rnd::mix_seed(seed, m, 0xE0))
                      .mean_return;
    report.per_morphology.push_back(std::move(o));
  }

  if (fine_tune) {
    TrainRunConfig rc;
    rc.morphologies = unseen;
    rc.model = checkpoint.config;
    rc.ppo = ppo;
    rc.ppo.updates = budget;
    rc.env = env;
    rc.seed = seed;
    // fresh optimizer state: the checkpoint stores no Adam moments
    Trainer trainer(rc, checkpoint.params);
    trainer.run();
    for (std::size_t m = 0; m < unseen.size(); ++m) {
      report.per_morphology[m].fine_tuned =
          evaluate(trainer.params(), checkpoint.config, unseen[m], env, eval_episodes,
                   /*deterministic=*/true, rnd::mix_seed(seed, m, 0xF1))
              .mean_return;
    }
  }
  return report;
}

}  // namespace voxctl
