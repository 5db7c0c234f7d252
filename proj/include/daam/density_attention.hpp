#pragma once

#include "daam/common.hpp"

#include <string>
#include <vector>

namespace daam {

struct DaamConfig {
  int n_heads = 4;
  int n_gaussians = 24;
  int n_features = 40;
  double variance_floor = 1e-8;

  void validate() const;
  int rows_per_head() const { return n_features / n_heads; }
};

/// Per-head mean offsets and raw variance parameters, both n_heads x
/// n_gaussians. Variance is softplus(rho) + variance_floor.
struct DaamParams {
  Matrix delta;
  Matrix rho;

  /// delta = 0, variance = 1 for every Gaussian.
  static DaamParams identity(const DaamConfig& cfg);
  Matrix variance(double floor) const;
};

struct AttentionOutput {
  Matrix gated;  // X * gate, elementwise
  Matrix gate;   // in (0, 1], max 1 in every head slice
  std::vector<Matrix> per_head_log_density;  // summed log-pdf per head slice
};

struct DaamGradients {
  Matrix delta;
  Matrix rho;
  Matrix input;
};

/// log N(x; mean, var). Throws std::domain_error for var <= 0.
double gaussian_log_pdf(double x, double mean, double var);

/// Multi-head density gate. Rows of x split into n_heads contiguous slices;
/// each slice is gated by the product of its Gaussians centred at
/// (slice mean + delta_i), evaluated in the log domain and rescaled so the
/// slice maximum is exactly 1.
AttentionOutput daam_forward(const Matrix& x, const DaamParams& p, const DaamConfig& cfg);

/// Exact gradients of sum(upstream .* gated) with respect to delta, rho and
/// the input. The slice maximum acts as a hard selection routed to its first
/// row-major argmax.
DaamGradients daam_gradients(const Matrix& x, const DaamParams& p, const DaamConfig& cfg, const Matrix& upstream);

std::vector<Matrix> head_partition(const Matrix& x, int n_heads);
Matrix head_unpartition(const std::vector<Matrix>& slices);

struct HeadSummary {
  double delta_min, delta_max, variance_min, variance_max;
};

std::vector<HeadSummary> summarize_params(const DaamParams& p, double variance_floor = 1e-8);

/// Plain-text table: Head | Mean Offsets delta (Min, Max) | sigma^2 (Min, Max).
std::string format_head_summary(const std::vector<HeadSummary>& rows);

}  // namespace daam
