#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "voxctl/analysis.hpp"
#include "voxctl/rand.hpp"

using namespace voxctl;

namespace {

VoxelGrid chain_grid() {
  VoxelGrid g;
  g.name = "triple";
  g.rows = 1;
  g.cols = 3;
  g.cells = {3, 1, 4};
  g.validate();
  return g;
}

Checkpoint make_checkpoint(int layers, std::uint64_t seed) {
  Checkpoint ck;
  ck.config.embed_dim = 8;
  ck.config.layers = layers;
  ck.config.heads = 2;
  ck.config.global_hidden = {4};
  ck.config.decoder_hidden = {4};
  ck.params = init_parameters(ck.config, node_type_count(ck.config.scheme),
                              edge_type_count(ck.config.scheme), seed);
  ck.meta_json = "{}";
  return ck;
}

std::string temp_file(const char* tag) {
  static int counter = 0;
  return (std::filesystem::temp_directory_path() /
          (std::string("voxctl_analysis_") + tag + "_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter++) + ".csv"))
      .string();
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

TEST_CASE("stable rank matches hand-computed spectra") {
  // identity: every singular value is 1, so sr = n
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(std::abs(stable_rank(eye) - 3.0) < 1e-12);

  // rank-1 outer product u v^T has a single nonzero singular value
  std::mt19937_64 rng(17);
  std::vector<double> outer(5 * 4);
  std::vector<double> u(5), v(4);
  for (double& x : u) x = rnd::uniform_range(rng, -2.0, 2.0);
  for (double& x : v) x = rnd::uniform_range(rng, -2.0, 2.0);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 4; ++c) outer[r * 4 + c] = u[r] * v[c];
  CHECK(std::abs(stable_rank(Tensor::from({5, 4}, outer)) - 1.0) < 1e-9);

  // diag(2, 1): sr = (4 + 1) / 4
  Tensor diag = Tensor::from({2, 2}, {2, 0, 0, 1});
  CHECK(std::abs(stable_rank(diag) - 1.25) < 1e-12);

  CHECK_THROWS_AS((void)stable_rank(Tensor::zeros({3, 3})), std::domain_error);
}

TEST_CASE("stable rank is scale invariant and bounded by the rank") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 2 + static_cast<int>(rng() % 5);
    const int cols = 2 + static_cast<int>(rng() % 5);
    std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
    for (double& x : vals) x = rnd::uniform_range(rng, -1.0, 1.0);
    Tensor a = Tensor::from({rows, cols}, vals);
    const double sr = stable_rank(a);

    CHECK(sr >= 1.0 - 1e-12);
    CHECK(sr <= std::min(rows, cols) + 1e-9);
    // sr never exceeds the numerical rank
    int rank = 0;
    for (double s : singular_values(a))
      if (s > 1e-10) ++rank;
    CHECK(sr <= rank + 1e-9);

    for (double c : {2.0, -3.0, 0.01}) {
      std::vector<double> scaled = vals;
      for (double& x : scaled) x *= c;
      CHECK(std::abs(stable_rank(Tensor::from({rows, cols}, scaled)) - sr) < 1e-9);
    }
  }
}

TEST_CASE("extremum marking flags strict interior peaks and valleys only") {
  std::vector<std::uint8_t> peaks, valleys;

  mark_extrema({0, 1, 2, 1, 0, -1, 0, 0}, 5, peaks, valleys);
  CHECK(peaks == std::vector<std::uint8_t>{0, 0, 1, 0, 0, 0, 0, 0});
  CHECK(valleys == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 0, 0});

  // plateaus are not strict extrema
  mark_extrema({0, 2, 2, 2, 0}, 5, peaks, valleys);
  CHECK(peaks == std::vector<std::uint8_t>(5, 0));
  CHECK(valleys == std::vector<std::uint8_t>(5, 0));

  // the window must fit: a 4-long series has no interior index for window 5
  mark_extrema({0, 9, 0, 0}, 5, peaks, valleys);
  CHECK(peaks == std::vector<std::uint8_t>(4, 0));

  // window 3 flags immediate neighbors' extrema
  mark_extrema({0, 1, 0}, 3, peaks, valleys);
  CHECK(peaks == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(valleys == std::vector<std::uint8_t>{0, 0, 0});

  CHECK_THROWS_AS(mark_extrema({1, 2, 3}, 4, peaks, valleys), std::invalid_argument);
  CHECK_THROWS_AS(mark_extrema({1, 2, 3}, 1, peaks, valleys), std::invalid_argument);
}

TEST_CASE("attention tracing records every layer each step and reproduces itself") {
  Checkpoint ck = make_checkpoint(2, 91);
  VoxelGrid grid = chain_grid();
  EnvConfig env;
  env.horizon = 32;

  AttentionTrace trace = trace_attention(ck, grid, env, 12, 7);
  CHECK(trace.steps == 12);
  CHECK(trace.layers == 2);
  CHECK(trace.nodes == 3);
  REQUIRE(trace.records.size() == 24);
  for (int l = 0; l < 2; ++l) {
    REQUIRE(trace.series[l].size() == 12);
    for (double sr : trace.series[l]) {
      CHECK(sr >= 1.0 - 1e-12);
      CHECK(sr <= 3.0 + 1e-9);
    }
  }

  // records arrive step-major with layer cycling fastest
  CHECK(trace.records[0].step == 0);
  CHECK(trace.records[0].layer == 0);
  CHECK(trace.records[1].layer == 1);
  CHECK(trace.records[2].step == 1);
  CHECK(trace.records[0].labels == std::vector<std::string>{"r0c0", "r0c1", "r0c2"});

  // head-averaged rows are stochastic over the chain neighborhoods and
  // exactly zero elsewhere (self and non-adjacent nodes)
  for (const AttentionRecord& rec : trace.records) {
    const Tensor& a = rec.matrix;
    CHECK(a.at(0, 0) == 0.0);
    CHECK(a.at(0, 2) == 0.0);
    CHECK(a.at(1, 1) == 0.0);
    CHECK(a.at(2, 0) == 0.0);
    CHECK(a.at(2, 2) == 0.0);
    CHECK(a.at(0, 1) == 1.0);  // single neighbor takes all the weight
    CHECK(a.at(2, 1) == 1.0);
    CHECK(std::abs(a.at(1, 0) + a.at(1, 2) - 1.0) < 1e-9);
    CHECK(a.at(1, 0) > 0.0);
    CHECK(a.at(1, 2) > 0.0);
    CHECK(rec.heads.empty());
  }

  // bitwise reproducible
  AttentionTrace again = trace_attention(ck, grid, env, 12, 7);
  for (int l = 0; l < 2; ++l)
    for (int t = 0; t < 12; ++t) CHECK(trace.series[l][t] == again.series[l][t]);
  for (std::size_t i = 0; i < trace.records.size(); ++i)
    for (std::int64_t r = 0; r < 3; ++r)
      for (std::int64_t c = 0; c < 3; ++c)
        CHECK(trace.records[i].matrix.at(r, c) == again.records[i].matrix.at(r, c));

  // a different seed jitters the start, changing the observations
  AttentionTrace other = trace_attention(ck, grid, env, 12, 8);
  bool any_diff = false;
  for (int t = 0; t < 12; ++t)
    any_diff = any_diff || other.series[1][t] != trace.series[1][t];
  CHECK(any_diff);

  // the episode boundary caps the trace
  EnvConfig short_env;
  short_env.horizon = 5;
  AttentionTrace capped = trace_attention(ck, grid, short_env, 12, 7);
  CHECK(capped.steps == 5);
  CHECK(capped.records.size() == 10);

  // per-head capture is opt-in
  AttentionTrace with_heads = trace_attention(ck, grid, env, 2, 7, true);
  REQUIRE(with_heads.records[0].heads.size() == 2);
  // heads average to the stored matrix
  for (std::int64_t r = 0; r < 3; ++r)
    for (std::int64_t c = 0; c < 3; ++c) {
      const double avg = 0.5 * (with_heads.records[0].heads[0].at(r, c) +
                                with_heads.records[0].heads[1].at(r, c));
      CHECK(std::abs(avg - with_heads.records[0].matrix.at(r, c)) < 1e-12);
    }

  CHECK_THROWS_AS((void)trace_attention(ck, grid, env, 0, 7), std::invalid_argument);
}

TEST_CASE("csv exports follow the schemas and round-trip exactly") {
  Checkpoint ck = make_checkpoint(3, 13);
  VoxelGrid grid = chain_grid();
  EnvConfig env;
  env.horizon = 16;
  AttentionTrace trace = trace_attention(ck, grid, env, 3, 1);

  const std::string series_path = temp_file("series");
  export_series_csv(trace, series_path);
  auto series_rows = read_csv(series_path);
  REQUIRE(series_rows.size() == 10);  // header + 3 steps x 3 layers
  CHECK(series_rows[0] == std::vector<std::string>{"step", "layer", "stable_rank", "is_peak",
                                                   "is_valley"});
  // step-major order with the layer cycling fastest
  CHECK(series_rows[1][0] == "0");
  CHECK(series_rows[1][1] == "0");
  CHECK(series_rows[2][1] == "1");
  CHECK(series_rows[4][0] == "1");
  for (std::size_t i = 1; i < series_rows.size(); ++i) {
    REQUIRE(series_rows[i].size() == 5);
    const int step = std::stoi(series_rows[i][0]);
    const int layer = std::stoi(series_rows[i][1]);
    // 17 significant digits reproduce the double bit for bit
    CHECK(std::stod(series_rows[i][2]) == trace.series[layer][step]);
    CHECK((series_rows[i][3] == "0" || series_rows[i][3] == "1"));
    CHECK((series_rows[i][4] == "0" || series_rows[i][4] == "1"));
  }

  const std::string matrix_path = temp_file("matrix");
  export_matrix_csv(trace, matrix_path);
  auto matrix_rows = read_csv(matrix_path);
  CHECK(matrix_rows[0] == std::vector<std::string>{"step", "layer", "row", "col", "weight"});
  // the 3-chain has 4 directed edges, so each (step, layer) emits 4 rows
  REQUIRE(matrix_rows.size() == 1 + 4ull * 3 * 3);
  int middle_row_entries = 0;
  for (std::size_t i = 1; i < matrix_rows.size(); ++i) {
    REQUIRE(matrix_rows[i].size() == 5);
    const int step = std::stoi(matrix_rows[i][0]);
    const int layer = std::stoi(matrix_rows[i][1]);
    const int r = std::stoi(matrix_rows[i][2]);
    const int c = std::stoi(matrix_rows[i][3]);
    const double w = std::stod(matrix_rows[i][4]);
    CHECK(w != 0.0);
    // find the matching record and compare exactly
    const AttentionRecord& rec = trace.records[static_cast<std::size_t>(step) * 3 + layer];
    CHECK(w == rec.matrix.at(r, c));
    if (step == 0 && layer == 0 && r == 1) ++middle_row_entries;
  }
  // the middle node has exactly two neighbors
  CHECK(middle_row_entries == 2);

  CHECK_THROWS_AS(export_series_csv(trace, "/nonexistent_dir_voxctl/out.csv"),
                  std::runtime_error);
  CHECK_THROWS_AS(export_matrix_csv(trace, "/nonexistent_dir_voxctl/out.csv"),
                  std::runtime_error);
  AttentionTrace empty;
  CHECK_THROWS_AS(export_series_csv(empty, temp_file("empty")), std::invalid_argument);
  CHECK_THROWS_AS(export_matrix_csv(empty, temp_file("empty")), std::invalid_argument);
}
