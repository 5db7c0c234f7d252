#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace daam::wav {

struct Audio {
  std::uint32_t sample_rate = 0;
  std::vector<double> samples;  // mono, scaled to [-1, 1)
};

/// Reads a RIFF/WAVE file with 16-bit PCM samples. Multi-channel input is
/// rejected; unknown chunks are skipped.
Audio read(const std::filesystem::path& path);

/// Writes 16-bit mono PCM. Samples are clipped to [-1, 1] and rounded to
/// the nearest integer code.
void write(const std::filesystem::path& path, std::span<const double> samples, std::uint32_t sample_rate);

}  // namespace daam::wav
