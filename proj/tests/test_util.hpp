#pragma once

// Shared helpers for the test binaries: finite-difference oracles, a
// power-iteration eigenvalue oracle, and small deterministic generators.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "voxctl/tensor.hpp"

namespace testutil {

// Relative error with a floor so that near-zero pairs (true zero gradients
// probed by noisy finite differences) do not blow up the ratio.
inline double rel_err(double a, double b, double floor_ = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

// Central finite differences of a scalar function of a flat input vector.
inline std::vector<double> central_diff(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f(x);
    x[i] = saved - step;
    const double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// Max relative error between the tape gradient of `make_loss` w.r.t. x and
// its central-difference estimate.
inline double max_grad_rel_err(
    voxctl::Shape shape, const std::vector<double>& x0,
    const std::function<voxctl::Tensor(const voxctl::Tensor&)>& make_loss, double step = 1e-5,
    double floor_ = 1e-3) {
  using voxctl::Tensor;
  Tensor x = Tensor::from(shape, x0);
  x.mark_parameter();
  voxctl::Tape tape;
  Tensor analytic;
  {
    voxctl::TapeScope scope(tape);
    Tensor loss = make_loss(x);
    tape.watch(x);
    auto grads = tape.backward(loss);
    analytic = grads.at(x.id());
  }
  auto f = [&](const std::vector<double>& v) {
    return make_loss(Tensor::from(shape, v)).value();
  };
  const auto fd = central_diff(f, x0, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    worst = std::max(worst, rel_err(analytic.at(static_cast<int64_t>(i)), fd[i], floor_));
  }
  return worst;
}

// Eigenvalues of a small symmetric PSD matrix by power iteration with
// deflation. Independent of the library's Jacobi path.
inline std::vector<double> psd_eigenvalues_power(std::vector<double> s, int n,
                                                 int iters = 50000) {
  std::mt19937_64 rng(20240811u);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> eigs;
  for (int e = 0; e < n; ++e) {
    std::vector<double> v(n), w(n);
    for (auto& x : v) x = unit(rng);
    for (int it = 0; it < iters; ++it) {
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += s[i * n + j] * v[j];
        w[i] = acc;
      }
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-300) break;  // remaining spectrum is (numerically) zero
      for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
    }
    double lam = 0.0;  // Rayleigh quotient
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += s[i * n + j] * v[j];
      lam += v[i] * acc;
    }
    eigs.push_back(lam);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s[i * n + j] -= lam * v[i] * v[j];
  }
  std::sort(eigs.begin(), eigs.end(), std::greater<double>());
  return eigs;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace testutil

#include "voxctl/morphology.hpp"

namespace testutil {

// Random valid robot: a 4-connected blob grown on a random rectangle, random
// voxel types, at least one actuator.
inline voxctl::VoxelGrid random_grid(std::mt19937_64& rng, int max_rows = 7, int max_cols = 7) {
  int rows = 1 + static_cast<int>(rng() % max_rows);
  int cols = 1 + static_cast<int>(rng() % max_cols);
  if (rows == 1 && cols == 1) cols = 2;
  const int total = rows * cols;
  const int target = 2 + static_cast<int>(rng() % (total - 1));

  std::vector<int> cells(total, 0);
  std::vector<int> blob;
  const int start = static_cast<int>(rng() % total);
  cells[start] = 1 + static_cast<int>(rng() % 4);
  blob.push_back(start);
  static const int dr[4] = {-1, 1, 0, 0};
  static const int dc[4] = {0, 0, -1, 1};
  while (static_cast<int>(blob.size()) < target) {
    const int cur = blob[rng() % blob.size()];
    const int k = static_cast<int>(rng() % 4);
    const int nr = cur / cols + dr[k], nc = cur % cols + dc[k];
    if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
    const int ni = nr * cols + nc;
    if (cells[ni] != 0) continue;
    cells[ni] = 1 + static_cast<int>(rng() % 4);
    blob.push_back(ni);
  }
  bool has_actuator = false;
  for (int c : cells) has_actuator = has_actuator || c == 3 || c == 4;
  if (!has_actuator) cells[blob[rng() % blob.size()]] = 3 + static_cast<int>(rng() % 2);

  voxctl::VoxelGrid grid;
  grid.name = "random-" + std::to_string(rng());
  grid.rows = rows;
  grid.cols = cols;
  grid.cells = std::move(cells);
  grid.validate();
  return grid;
}

}  // namespace testutil
