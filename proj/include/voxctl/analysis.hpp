#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxctl/env.hpp"
#include "voxctl/model.hpp"
#include "voxctl/morphology.hpp"
#include "voxctl/tensor.hpp"

namespace voxctl {

// sr(A) = sum(sigma_i^2) / sigma_max^2.  Always lies in [1, min(rows, cols)].
// Throws std::domain_error for an all-zero matrix.
double stable_rank(const Tensor& a);

// One attention matrix captured during a traced episode.  `matrix` is the
// head average (each head is row-stochastic over the node's neighborhood, so
// the average is too); `heads` is filled only when the trace asks for it.
struct AttentionRecord {
  int step = 0;
  int layer = 0;
  Tensor matrix;                    // n×n, row = target node, column = source
  std::vector<Tensor> heads;        // optional per-head matrices
  std::vector<std::string> labels;  // node labels in row-major grid order
};

struct AttentionTrace {
  std::vector<AttentionRecord> records;  // step-major, layer within step
  // stable-rank series and extremum flags, indexed [layer][step]
  std::vector<std::vector<double>> series;
  std::vector<std::vector<std::uint8_t>> is_peak;
  std::vector<std::vector<std::uint8_t>> is_valley;
  int steps = 0;
  int layers = 0;
  int nodes = 0;
};

// Strict local extrema over a centered window (window must be odd, >= 3).
// An index is flagged only when its full window fits inside the series and
// its value strictly dominates every other value in the window.
void mark_extrema(const std::vector<double>& series, int window,
                  std::vector<std::uint8_t>& peaks, std::vector<std::uint8_t>& valleys);

// Runs one deterministic episode (mean actions, seeded reset) of at most
// `steps` control steps, recording every layer's head-averaged attention at
// every step, the per-layer stable-rank series, and 5-step-window extremum
// flags.  Stops early only if the episode terminates.
AttentionTrace trace_attention(const Checkpoint& checkpoint, const VoxelGrid& grid,
                               const EnvConfig& env_config, int steps, std::uint64_t seed = 0,
                               bool include_heads = false);

// CSV artifacts: series rows are step,layer,stable_rank,is_peak,is_valley;
// matrix rows are step,layer,row,col,weight with only nonzero weights
// emitted.  Values print with 17 significant digits so parsing them back
// reproduces the doubles exactly.
void export_series_csv(const AttentionTrace& trace, const std::string& path);
void export_matrix_csv(const AttentionTrace& trace, const std::string& path);

}  // namespace voxctl
