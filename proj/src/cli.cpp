#include "voxctl/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "voxctl/analysis.hpp"
#include "voxctl/env.hpp"
#include "voxctl/model.hpp"
#include "voxctl/morphology.hpp"
#include "voxctl/rl.hpp"

namespace voxctl {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing file " + path);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Resolved run settings: config-file sections first, then flag overrides.
struct FileConfig {
  ModelConfig model;
  PPOConfig ppo;
  EnvConfig env;
};

FileConfig load_config(const std::string& path) {
  FileConfig fc;
  if (path.empty()) return fc;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config file " + path + " is not valid JSON: " +
                                std::string(e.what()));
  }
  if (!j.is_object())
    throw std::invalid_argument("config file " + path + " must hold a JSON object");
  for (const auto& item : j.items()) {
    const std::string& key = item.key();
    if (key != "model" && key != "ppo" && key != "env")
      throw std::invalid_argument("config file " + path + " has unknown section '" + key +
                                  "' (expected model, ppo, env)");
  }
  if (j.contains("model")) fc.model = config_from_json(j["model"].dump());
  if (j.contains("ppo")) fc.ppo = ppo_config_from_json(j["ppo"].dump());
  if (j.contains("env")) fc.env = env_config_from_json(j["env"].dump());
  return fc;
}

EdgeScheme scheme_from_variant(const std::string& v) {
  if (v == "n") return EdgeScheme::NodePair;
  if (v == "d") return EdgeScheme::Direction;
  if (v == "homo") return EdgeScheme::Homogeneous;
  throw std::invalid_argument("unknown variant '" + v + "' (expected n, d or homo)");
}

std::vector<VoxelGrid> load_grid_set(const std::string& path) {
  return parse_grid_set(read_file(path));
}

// A single-morphology file may hold either one object or a one-element set.
VoxelGrid load_single_grid(const std::string& path) {
  const std::string text = read_file(path);
  const nlohmann::json probe = nlohmann::json::parse(text, nullptr, false);
  if (probe.is_array()) {
    std::vector<VoxelGrid> grids = parse_grid_set(text);
    if (grids.size() != 1)
      throw std::invalid_argument("file " + path + " holds " +
                                  std::to_string(grids.size()) +
                                  " morphologies; exactly one is needed here");
    return grids.front();
  }
  return parse_grid(text);
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::uint64_t morphology_set_hash(const std::vector<VoxelGrid>& grids) {
  // FNV-1a over a canonical rendering: name, shape, then cells in file order.
  std::string canon;
  for (const VoxelGrid& g : grids) {
    canon += g.name;
    canon += ';';
    canon += std::to_string(g.rows);
    canon += 'x';
    canon += std::to_string(g.cols);
    canon += ':';
    for (int cell : g.cells) {
      canon += std::to_string(cell);
      canon += ',';
    }
    canon += '|';
  }
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string make_manifest_json(const TrainRunConfig& config) {
  nlohmann::json j;
  j["version"] = kCliVersion;
  j["created_utc"] = utc_timestamp();
  j["seed"] = config.seed;
  std::vector<std::string> names;
  names.reserve(config.morphologies.size());
  for (const VoxelGrid& g : config.morphologies) names.push_back(g.name);
  j["morphologies"] = names;
  j["morphology_set_hash"] = hash_hex(morphology_set_hash(config.morphologies));
  j["model"] = nlohmann::json::parse(config_to_json(config.model));
  j["ppo"] = nlohmann::json::parse(ppo_config_to_json(config.ppo));
  j["env"] = nlohmann::json::parse(env_config_to_json(config.env));
  return j.dump(2);
}

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"universal voxel-robot controller"};
  app.name("voxctl");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kCliVersion));

  // train
  auto* train = app.add_subcommand("train", "train one policy over a morphology set");
  std::string train_config, train_morphs, train_variant = "n", train_out;
  std::uint64_t train_seed = 0;
  int train_updates = 0, train_ckpt_every = 0;
  train->add_option("--config", train_config, "JSON config with model/ppo/env sections");
  train->add_option("--morphs", train_morphs, "morphology-set JSON file")->required();
  train->add_option("--variant", train_variant, "edge typing: n (node-pair), d (direction), homo");
  train->add_option("--seed", train_seed, "run seed");
  train->add_option("--updates", train_updates, "PPO update count (overrides config)");
  train->add_option("--checkpoint-every", train_ckpt_every,
                    "also checkpoint every N updates (0: final only)");
  train->add_option("--out", train_out, "output directory for manifest/metrics/checkpoints")
      ->required();

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on one morphology");
  std::string eval_ckpt, eval_morph, eval_config;
  int eval_episodes = 1;
  std::uint64_t eval_seed = 0;
  bool eval_stochastic = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--morph", eval_morph, "morphology JSON file")->required();
  eval->add_option("--episodes", eval_episodes, "episode count");
  eval->add_option("--config", eval_config, "JSON config (env section applies)");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_flag("--stochastic", eval_stochastic, "sample actions instead of taking the mean");

  // transfer
  auto* transfer_cmd =
      app.add_subcommand("transfer", "score a checkpoint on unseen morphologies");
  std::string tr_ckpt, tr_morphs, tr_mode, tr_config, tr_out;
  int tr_budget = 0;
  std::uint64_t tr_seed = 0;
  transfer_cmd->add_option("--checkpoint", tr_ckpt, "checkpoint file")->required();
  transfer_cmd->add_option("--morphs", tr_morphs, "unseen morphology-set JSON file")->required();
  transfer_cmd->add_option("--mode", tr_mode, "zero-shot or fine-tune")
      ->required()
      ->check(CLI::IsMember({"zero-shot", "fine-tune"}));
  transfer_cmd->add_option("--budget", tr_budget, "fine-tune update budget");
  transfer_cmd->add_option("--config", tr_config, "JSON config (ppo/env sections apply)");
  transfer_cmd->add_option("--seed", tr_seed, "transfer seed");
  transfer_cmd->add_option("--out", tr_out, "output directory for transfer_report.json")
      ->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "trace attention and export stable-rank CSVs");
  std::string an_ckpt, an_morph, an_config, an_out;
  int an_steps = 128, an_layer = 0;
  std::uint64_t an_seed = 0;
  analyze->add_option("--checkpoint", an_ckpt, "checkpoint file")->required();
  analyze->add_option("--morph", an_morph, "morphology JSON file")->required();
  analyze->add_option("--steps", an_steps, "steps to trace");
  analyze->add_option("--layer", an_layer, "layer summarized on stdout");
  analyze->add_option("--config", an_config, "JSON config (env section applies)");
  analyze->add_option("--seed", an_seed, "environment seed");
  analyze->add_option("--out", an_out, "output directory for the CSV files")->required();

  // validate
  auto* validate = app.add_subcommand("validate", "check a morphology-set file");
  std::string va_morphs;
  validate->add_option("--morphs", va_morphs, "morphology-set JSON file")->required();

  try {
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kCliVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand(train)) {
      FileConfig fc = load_config(train_config);
      TrainRunConfig rc;
      rc.morphologies = load_grid_set(train_morphs);
      rc.model = fc.model;
      rc.ppo = fc.ppo;
      rc.env = fc.env;
      if (train->count("--variant") > 0 || train_config.empty())
        rc.model.scheme = scheme_from_variant(train_variant);
      if (train->count("--updates") > 0) rc.ppo.updates = train_updates;
      rc.seed = train_seed;
      rc.out_dir = train_out;
      rc.checkpoint_every = train_ckpt_every;
      rc.validate();

      std::filesystem::create_directories(train_out);
      write_file(train_out + "/manifest.json", make_manifest_json(rc));

      Trainer trainer(rc);
      std::vector<UpdateStats> history = trainer.run();
      out << "trained " << history.size() << " updates over " << rc.morphologies.size()
          << " morphologies (" << scheme_name(rc.model.scheme) << " edges)\n";
      if (!history.empty())
        out << "final mean return " << fmt_double(history.back().mean_return_overall) << "\n";
      out << "artifacts in " << train_out << "\n";
      return 0;
    }

    if (app.got_subcommand(eval)) {
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      const VoxelGrid grid = load_single_grid(eval_morph);
      const FileConfig fc = load_config(eval_config);
      const EvalResult res = evaluate(ck.params, ck.config, grid, fc.env, eval_episodes,
                                      !eval_stochastic, eval_seed);
      out << "morphology " << grid.name << "\n";
      out << "mean_return " << fmt_double(res.mean_return) << "\n";
      for (std::size_t i = 0; i < res.per_episode.size(); ++i)
        out << "episode " << i << " " << fmt_double(res.per_episode[i]) << "\n";
      return 0;
    }

    if (app.got_subcommand(transfer_cmd)) {
      const Checkpoint ck = load_checkpoint(tr_ckpt);
      const std::vector<VoxelGrid> unseen = load_grid_set(tr_morphs);
      const FileConfig fc = load_config(tr_config);
      const bool fine_tune = tr_mode == "fine-tune";
      const TransferReport report =
          transfer(ck, unseen, fc.ppo, fc.env, fine_tune, tr_budget, tr_seed);

      std::filesystem::create_directories(tr_out);
      const std::string report_path = tr_out + "/transfer_report.json";
      write_file(report_path, report.to_json() + "\n");
      out << "mode " << report.mode << "\n";
      for (const TransferOutcome& o : report.per_morphology) {
        out << o.name << " zero_shot " << fmt_double(o.zero_shot);
        if (o.fine_tuned) out << " fine_tuned " << fmt_double(*o.fine_tuned);
        out << "\n";
      }
      out << "report written to " << report_path << "\n";
      return 0;
    }

    if (app.got_subcommand(analyze)) {
      const Checkpoint ck = load_checkpoint(an_ckpt);
      const VoxelGrid grid = load_single_grid(an_morph);
      const FileConfig fc = load_config(an_config);
      if (an_layer < 0 || an_layer >= ck.config.layers)
        throw std::invalid_argument("--layer " + std::to_string(an_layer) +
                                    " out of range: checkpoint has " +
                                    std::to_string(ck.config.layers) + " layers");
      const AttentionTrace trace = trace_attention(ck, grid, fc.env, an_steps, an_seed);

      std::filesystem::create_directories(an_out);
      const std::string series_path = an_out + "/attention_series.csv";
      const std::string matrix_path = an_out + "/attention_matrices.csv";
      export_series_csv(trace, series_path);
      export_matrix_csv(trace, matrix_path);

      const std::vector<double>& series = trace.series[an_layer];
      const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
      int peaks = 0, valleys = 0;
      for (std::uint8_t f : trace.is_peak[an_layer]) peaks += f;
      for (std::uint8_t f : trace.is_valley[an_layer]) valleys += f;
      out << "traced " << trace.steps << " steps, " << trace.layers << " layers, "
          << trace.nodes << " nodes\n";
      out << "layer " << an_layer << " stable rank in [" << fmt_double(*lo) << ", "
          << fmt_double(*hi) << "], " << peaks << " peaks, " << valleys << " valleys\n";
      out << "wrote " << series_path << " and " << matrix_path << "\n";
      return 0;
    }

    if (app.got_subcommand(validate)) {
      const std::vector<VoxelGrid> grids = load_grid_set(va_morphs);
      for (const VoxelGrid& g : grids)
        out << "ok " << g.name << ": " << g.rows << "x" << g.cols << ", " << g.voxel_count()
            << " voxels, " << g.actuator_count() << " actuators\n";
      out << grids.size() << " morphologies valid (set hash "
          << hash_hex(morphology_set_hash(grids)) << ")\n";
      return 0;
    }

    err << "error: no subcommand selected\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace voxctl
