#include "voxctl/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace voxctl {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write CSV file " + path);
  return out;
}

}  // namespace

double stable_rank(const Tensor& a) {
  // tensors are finite by construction, so only the zero matrix is degenerate
  const std::vector<double> sigma = singular_values(a);
  if (sigma.empty() || sigma.front() <= 0.0)
    throw std::domain_error("stable_rank: all-zero matrix has no stable rank");
  double total = 0.0;
  for (double s : sigma) total += s * s;
  return total / (sigma.front() * sigma.front());
}

void mark_extrema(const std::vector<double>& series, int window,
                  std::vector<std::uint8_t>& peaks, std::vector<std::uint8_t>& valleys) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("mark_extrema: window must be odd and at least 3");
  const int n = static_cast<int>(series.size());
  const int half = window / 2;
  peaks.assign(series.size(), 0);
  valleys.assign(series.size(), 0);
  for (int t = half; t < n - half; ++t) {
    bool peak = true, valley = true;
    for (int k = t - half; k <= t + half; ++k) {
      if (k == t) continue;
      peak = peak && series[t] > series[k];
      valley = valley && series[t] < series[k];
    }
    peaks[t] = peak ? 1 : 0;
    valleys[t] = valley ? 1 : 0;
  }
}

AttentionTrace trace_attention(const Checkpoint& checkpoint, const VoxelGrid& grid,
                               const EnvConfig& env_config, int steps, std::uint64_t seed,
                               bool include_heads) {
  if (steps < 1) throw std::invalid_argument("trace_attention: steps must be at least 1");
  grid.validate();
  const ModelConfig& mc = checkpoint.config;
  const HeteroGraph graph = build_graph(grid, mc.scheme, mc.full_connectivity);
  const GraphLayout layout = make_layout(graph, mc);

  std::vector<std::string> labels;
  labels.reserve(graph.nodes.size());
  for (const GraphNode& node : graph.nodes)
    labels.push_back("r" + std::to_string(node.row) + "c" + std::to_string(node.col));

  AttentionTrace trace;
  trace.layers = mc.layers;
  trace.nodes = layout.node_count;
  trace.series.resize(mc.layers);
  trace.is_peak.resize(mc.layers);
  trace.is_valley.resize(mc.layers);

  VoxelEnv env(grid, env_config, seed);
  Observation obs = env.observe();
  for (int t = 0; t < steps; ++t) {
    Tensor local = Tensor::from({layout.node_count, mc.local_obs_dim}, obs.local);
    Tensor global =
        Tensor::from({1, mc.global_obs_dim}, {obs.global[0], obs.global[1], obs.global[2]});
    PolicyOutput po = forward(local, global, layout, checkpoint.params, mc);
    for (int l = 0; l < mc.layers; ++l) {
      AttentionRecord rec;
      rec.step = t;
      rec.layer = l;
      rec.matrix = po.attention[l];
      if (include_heads) rec.heads = po.attention_heads[l];
      rec.labels = labels;
      trace.records.push_back(std::move(rec));
      trace.series[l].push_back(stable_rank(po.attention[l]));
    }
    trace.steps = t + 1;

    std::vector<double> action(po.mu.data().begin(), po.mu.data().end());
    StepResult sr = env.step(action);
    if (sr.done) break;
    obs = std::move(sr.obs);
  }

  for (int l = 0; l < mc.layers; ++l)
    mark_extrema(trace.series[l], 5, trace.is_peak[l], trace.is_valley[l]);
  return trace;
}

void export_series_csv(const AttentionTrace& trace, const std::string& path) {
  if (trace.steps == 0 || trace.layers == 0)
    throw std::invalid_argument("export_series_csv: empty trace");
  std::ofstream out = open_csv(path);
  out << "step,layer,stable_rank,is_peak,is_valley\n";
  for (int t = 0; t < trace.steps; ++t)
    for (int l = 0; l < trace.layers; ++l)
      out << t << "," << l << "," << fmt_double(trace.series[l][t]) << ","
          << int(trace.is_peak[l][t]) << "," << int(trace.is_valley[l][t]) << "\n";
  if (!out) throw std::runtime_error("failed while writing " + path);
}

void export_matrix_csv(const AttentionTrace& trace, const std::string& path) {
  if (trace.records.empty()) throw std::invalid_argument("export_matrix_csv: empty trace");
  std::ofstream out = open_csv(path);
  out << "step,layer,row,col,weight\n";
  for (const AttentionRecord& rec : trace.records) {
    const Tensor& a = rec.matrix;
    for (std::int64_t r = 0; r < a.shape()[0]; ++r)
      for (std::int64_t c = 0; c < a.shape()[1]; ++c) {
        const double w = a.at(r, c);
        if (w != 0.0)
          out << rec.step << "," << rec.layer << "," << r << "," << c << "," << fmt_double(w)
              << "\n";
      }
  }
  if (!out) throw std::runtime_error("failed while writing " + path);
}

}  // namespace voxctl
