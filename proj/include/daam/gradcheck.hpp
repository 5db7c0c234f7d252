#pragma once

#include "daam/density_attention.hpp"
#include "daam/models.hpp"
#include "daam/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace daam {

struct TensorCheck {
  std::string name;
  int coordinates_checked = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Small random DAAM problem; `floor_fraction` of the Gaussians get their
/// variance pinned at the floor.
struct DaamCheckCase {
  DaamConfig cfg;
  DaamParams params;
  Matrix x;
  Matrix upstream;  // loss = sum(upstream .* gated)
  bool has_floor = false;
};

DaamCheckCase random_daam_case(std::uint64_t seed, std::uint64_t index, bool at_floor);

/// Analytic vs central-difference gradients of sum(upstream .* gated) for
/// delta, rho and (when no variance sits at the floor) the input.
std::vector<TensorCheck> check_daam_gradients(const DaamCheckCase& c, const FiniteDiffConfig& fd = {});

/// 10 mel bins x 24 frames with tiny layer sizes.
ModelConfig gradcheck_model_config(Architecture arch);

/// BCE-loss gradient check of every parameter tensor on one random segment.
/// At most `max_coords` coordinates per tensor are perturbed. With
/// `train_mode` the transformer runs with a fixed dropout stream.
std::vector<TensorCheck> check_model_gradients(const ModelConfig& cfg, std::uint64_t seed, bool train_mode,
                                               int max_coords = 6, const FiniteDiffConfig& fd = {1e-5, 1e-3, 1e-7});

std::string format_checks(const std::vector<TensorCheck>& checks);

}  // namespace daam
