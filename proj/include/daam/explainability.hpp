#pragma once

#include "daam/audio_frontend.hpp"
#include "daam/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace daam {

struct ImportanceMap {
  enum class Source { single, averaged };

  Matrix values;  // in [0, 1]
  Source source = Source::single;
  int n_samples_averaged = 1;
};

/// (GA - min GA) / (max GA - min GA) over the whole map. Throws
/// ValidationError("constant attention map") when max == min.
ImportanceMap importance_factor(const Matrix& gate);

/// Elementwise mean of equally shaped maps.
Matrix average_heatmap(const std::vector<Matrix>& maps);

struct MelBin {
  int index;
  double lower_hz, center_hz, upper_hz;
};
using BinTable = std::vector<MelBin>;

BinTable mel_bin_table(const SpectrogramConfig& cfg);

/// index,lower_hz,center_hz,upper_hz
void write_bin_table(const std::filesystem::path& path, const BinTable& bins);

/// Writes <stem>.csv (rows = mel bins, columns = frames, 6 decimals) and
/// <stem>.pgm (ASCII P2, pixel = round(255 * IF)). Returns both paths.
std::vector<std::filesystem::path> export_heatmap(const ImportanceMap& map, const std::filesystem::path& stem);

Matrix load_heatmap_csv(const std::filesystem::path& path);
Matrix load_pgm(const std::filesystem::path& path);

struct RankedBin {
  int index;
  double lower_hz, upper_hz;
  double mean_importance;
};

/// Bins ordered by mean importance over time (descending, lower index first
/// on ties). k larger than the bin count is clamped with a warning.
std::vector<RankedBin> rank_bins(const ImportanceMap& map, const BinTable& bins, int k);

}  // namespace daam
