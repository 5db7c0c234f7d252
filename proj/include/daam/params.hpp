#pragma once

#include "daam/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace daam {

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;

  std::size_t size() const { return data.size(); }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  /// Row-major 2-D view; a 1-D tensor is a single row.
  Eigen::Map<Matrix> mat();
  Eigen::Map<const Matrix> mat() const;
};

/// Ordered, named parameter tensors plus the metadata needed to rebuild the
/// model that owns them.
struct ModelParams {
  std::string architecture;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<Tensor> tensors;

  Tensor& add(std::string name, std::vector<int> shape);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  bool all_finite() const;

  /// Zero-filled tensors with identical names and shapes.
  ModelParams zeros_like() const;
};

std::size_t count_parameters(const ModelParams& p);

// Checkpoint layout (all integers little-endian):
//   8 bytes  "DAAMCKPT"
//   u32      format version (1)
//   u64      header length N
//   N bytes  UTF-8 JSON header: {"architecture", "config", "seed",
//            "tensors": [{"name", "shape", "offset", "count"}]}
//   tensor payload: f32 values, row-major, concatenated; "offset" is the
//            byte offset from the start of the payload.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& p);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Rounds every value to the nearest f32, the precision checkpoints store.
void round_to_f32(ModelParams& p);

}  // namespace daam
