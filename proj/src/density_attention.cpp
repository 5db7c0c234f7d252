#include "daam/density_attention.hpp"

#include "daam/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

namespace daam {

void DaamConfig::validate() const {
  if (n_heads < 1 || n_features < 1) throw ValidationError("daam: n_heads and n_features must be >= 1");
  if (n_features % n_heads != 0) {
    throw ValidationError("daam: " + std::to_string(n_features) + " features not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
  if (n_gaussians < 1) throw ValidationError("daam: n_gaussians must be >= 1");
  if (!(variance_floor > 0)) throw ValidationError("daam: variance_floor must be positive");
}

DaamParams DaamParams::identity(const DaamConfig& cfg) {
  cfg.validate();
  DaamParams p;
  p.delta = Matrix::Zero(cfg.n_heads, cfg.n_gaussians);
  // softplus(rho) + floor == 1
  p.rho = Matrix::Constant(cfg.n_heads, cfg.n_gaussians, softplus_inverse(1.0 - cfg.variance_floor));
  return p;
}

Matrix DaamParams::variance(double floor) const {
  return rho.unaryExpr([floor](double r) { return softplus(r) + floor; });
}

double gaussian_log_pdf(double x, double mean, double var) {
  if (!(var > 0)) throw std::domain_error("gaussian_log_pdf: variance must be positive");
  const double d = x - mean;
  return -d * d / (2.0 * var) - 0.5 * std::log(2.0 * std::numbers::pi * var);
}

namespace {

void check_inputs(const Matrix& x, const DaamParams& p, const DaamConfig& cfg) {
  cfg.validate();
  if (x.rows() != cfg.n_features) {
    throw ValidationError("daam: input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(cfg.n_features));
  }
  if (p.delta.rows() != cfg.n_heads || p.delta.cols() != cfg.n_gaussians || p.rho.rows() != cfg.n_heads ||
      p.rho.cols() != cfg.n_gaussians) {
    throw ValidationError("daam: parameter shape does not match config");
  }
  if (!x.allFinite()) throw ValidationError("daam: non-finite input");
}

// Per-head quantities shared by forward and backward. q(k) is the summed
// scaled squared distance sum_i (x_k - mu - delta_i)^2 / (2 var_i), so the
// summed log-density is const - q.
struct HeadState {
  double mu = 0.0;
  Matrix q;
  Eigen::Index best_r = 0, best_c = 0;
};

HeadState head_state(const Eigen::Ref<const Matrix>& slice, const double* delta, const double* var, int g) {
  HeadState s;
  s.mu = slice.mean();
  s.q.resize(slice.rows(), slice.cols());
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < slice.rows(); ++r) {
    for (Eigen::Index c = 0; c < slice.cols(); ++c) {
      const double v = slice(r, c);
      double q = 0.0;
      for (int i = 0; i < g; ++i) {
        const double d = v - s.mu - delta[i];
        q += d * d / (2.0 * var[i]);
      }
      s.q(r, c) = q;
      if (q < best) {
        best = q;
        s.best_r = r;
        s.best_c = c;
      }
    }
  }
  return s;
}

// Smallest normal double; keeps every gate strictly positive.
const double kMinLogGate = std::log(std::numeric_limits<double>::min());

bool clamped(double log_gate) { return log_gate < kMinLogGate; }

double gate_of(double log_gate) { return std::exp(std::max(log_gate, kMinLogGate)); }

}  // namespace

AttentionOutput daam_forward(const Matrix& x, const DaamParams& p, const DaamConfig& cfg) {
  check_inputs(x, p, cfg);
  const int rows = cfg.rows_per_head();
  const int g = cfg.n_gaussians;
  const Matrix var = p.variance(cfg.variance_floor);

  AttentionOutput out;
  out.gate.resize(x.rows(), x.cols());
  out.per_head_log_density.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const auto slice = x.middleRows(h * rows, rows);
    const HeadState s = head_state(slice, p.delta.row(h).data(), var.row(h).data(), g);
    const double q_min = s.q(s.best_r, s.best_c);
    out.gate.middleRows(h * rows, rows) = (q_min - s.q.array()).unaryExpr(&gate_of).matrix();

    double log_norm = 0.0;
    for (int i = 0; i < g; ++i) log_norm += 0.5 * std::log(2.0 * std::numbers::pi * var(h, i));
    out.per_head_log_density.push_back((-s.q.array() - log_norm).matrix());
  }
  out.gated = x.cwiseProduct(out.gate);
  return out;
}

DaamGradients daam_gradients(const Matrix& x, const DaamParams& p, const DaamConfig& cfg, const Matrix& upstream) {
  check_inputs(x, p, cfg);
  if (upstream.rows() != x.rows() || upstream.cols() != x.cols()) throw ValidationError("daam: upstream shape mismatch");
  const int rows = cfg.rows_per_head();
  const int g = cfg.n_gaussians;
  const Matrix var = p.variance(cfg.variance_floor);

  DaamGradients grad;
  grad.delta = Matrix::Zero(cfg.n_heads, g);
  grad.rho = Matrix::Zero(cfg.n_heads, g);
  grad.input = Matrix::Zero(x.rows(), x.cols());

  std::vector<double> g_var(g);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const auto slice = x.middleRows(h * rows, rows);
    const HeadState s = head_state(slice, p.delta.row(h).data(), var.row(h).data(), g);
    const double q_min = s.q(s.best_r, s.best_c);

    // log gate_k = q_min - q_k; b = dLoss/dq. Clamped gates are constant.
    Matrix b(rows, x.cols());
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double log_gate = q_min - s.q(r, c);
        const double gate = gate_of(log_gate);
        grad.input(h * rows + r, c) = upstream(h * rows + r, c) * gate;
        if (clamped(log_gate)) {
          b(r, c) = 0.0;
          continue;
        }
        const double a = upstream(h * rows + r, c) * slice(r, c) * gate;
        b(r, c) = -a;
        total += a;
      }
    }
    b(s.best_r, s.best_c) += total;

    std::fill(g_var.begin(), g_var.end(), 0.0);
    double g_mu = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double bk = b(r, c);
        if (bk == 0.0) continue;
        const double v = slice(r, c);
        double dq_dx = 0.0;
        for (int i = 0; i < g; ++i) {
          const double d = v - s.mu - p.delta(h, i);
          const double z = d / var(h, i);
          dq_dx += z;
          grad.delta(h, i) -= bk * z;
          g_var[i] -= bk * 0.5 * z * z;
        }
        grad.input(h * rows + r, c) += bk * dq_dx;
        g_mu -= bk * dq_dx;
      }
    }
    grad.input.middleRows(h * rows, rows).array() += g_mu / static_cast<double>(slice.size());
    for (int i = 0; i < g; ++i) grad.rho(h, i) = g_var[i] * sigmoid(p.rho(h, i));
  }
  return grad;
}

std::vector<Matrix> head_partition(const Matrix& x, int n_heads) {
  if (n_heads < 1 || x.rows() % n_heads != 0) {
    throw ValidationError("head_partition: " + std::to_string(x.rows()) + " rows not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
  const Eigen::Index rows = x.rows() / n_heads;
  std::vector<Matrix> out;
  out.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) out.emplace_back(x.middleRows(h * rows, rows));
  return out;
}

Matrix head_unpartition(const std::vector<Matrix>& slices) {
  if (slices.empty()) throw ValidationError("head_unpartition: no slices");
  Eigen::Index rows = 0;
  const Eigen::Index cols = slices.front().cols();
  for (const auto& s : slices) {
    if (s.cols() != cols) throw ValidationError("head_unpartition: column mismatch");
    rows += s.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& s : slices) {
    out.middleRows(at, s.rows()) = s;
    at += s.rows();
  }
  return out;
}

std::vector<HeadSummary> summarize_params(const DaamParams& p, double variance_floor) {
  const Matrix var = p.variance(variance_floor);
  std::vector<HeadSummary> out;
  for (Eigen::Index h = 0; h < p.delta.rows(); ++h) {
    out.push_back({p.delta.row(h).minCoeff(), p.delta.row(h).maxCoeff(), var.row(h).minCoeff(), var.row(h).maxCoeff()});
  }
  return out;
}

std::string format_head_summary(const std::vector<HeadSummary>& rows) {
  std::ostringstream out;
  out << "Head | Mean Offsets delta (Min, Max) | sigma^2 (Min, Max)\n";
  char buf[160];
  for (std::size_t h = 0; h < rows.size(); ++h) {
    const auto& r = rows[h];
    std::snprintf(buf, sizeof buf, "%zu | (%.6g, %.6g) | (%.6g, %.6g)\n", h, r.delta_min, r.delta_max, r.variance_min,
                  r.variance_max);
    out << buf;
  }
  return out.str();
}

}  // namespace daam
