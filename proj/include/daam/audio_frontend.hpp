#pragma once

#include "daam/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace daam {

struct SpectrogramConfig {
  int n_mels = 40;
  int window_len = 1024;
  int hop_len = 512;
  int sample_rate = 16000;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  void validate() const;
};

/// Log-power mel spectrogram, rows = mel bins, columns = frames.
struct MelSpectrogram {
  Matrix values;
  std::string recording_id;
  SpectrogramConfig config;

  int n_mels() const { return static_cast<int>(values.rows()); }
  int n_frames() const { return static_cast<int>(values.cols()); }
};

struct Segment {
  Matrix values;  // n_mels x segment length
  std::string recording_id;
  int label = 0;
  int segment_index = 0;
};

// Mel scale: m = 2595 log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels + 2 equally mel-spaced edge frequencies (Hz) from fmin to fmax.
/// Filter m spans edges[m]..edges[m + 2] and peaks at edges[m + 1].
std::vector<double> mel_band_edges(const SpectrogramConfig& cfg);

/// Triangular filterbank, n_mels x (window_len / 2 + 1), peak weight 1.
Matrix mel_filterbank(const SpectrogramConfig& cfg);

/// Periodic Hann window of length n: 0.5 - 0.5 cos(2 pi i / n).
std::vector<double> hann_window(int n);

/// Power spectra of Hann-windowed frames, (window_len / 2 + 1) x n_frames.
Matrix power_stft(std::span<const double> samples, const SpectrogramConfig& cfg);

inline int frame_count(std::size_t n_samples, const SpectrogramConfig& cfg) {
  if (n_samples < static_cast<std::size_t>(cfg.window_len)) return 0;
  return static_cast<int>((n_samples - cfg.window_len) / cfg.hop_len) + 1;
}

MelSpectrogram compute_mel_spectrogram(std::span<const double> samples, int sample_rate, const SpectrogramConfig& cfg,
                                       std::string recording_id = {});

/// Scalar mean/std over the whole matrix. A constant matrix (std < 1e-12)
/// becomes all zeros and a warning is emitted.
MelSpectrogram z_normalize(const MelSpectrogram& spec);

/// Keeps the leading T_min frames of every spectrogram.
std::vector<MelSpectrogram> crop_to_min_frames(std::vector<MelSpectrogram> specs);

inline constexpr int kSegmentFrames = 120;

/// Non-overlapping windows of seg_len frames; the remainder is dropped.
std::vector<Segment> segment(const MelSpectrogram& spec, int label, int seg_len = kSegmentFrames);

/// Keeps every D (label 1) segment and a seeded uniform sample of ND segments
/// of the same size, preserving input order.
std::vector<Segment> subsample_balance(const std::vector<Segment>& segments, std::uint64_t seed);

/// Index form of subsample_balance over a label vector.
std::vector<std::size_t> balanced_indices(std::span<const int> labels, std::uint64_t seed, std::uint64_t stream = 0);

// Feature cache: "DAAMFEAT", u32 version (1), u32 rows, u32 cols, then
// row-major f32, all little-endian.
void write_feature_file(const std::filesystem::path& path, const Matrix& values);
Matrix read_feature_file(const std::filesystem::path& path);

}  // namespace daam
