#pragma once

#include "daam/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace daam {

enum class Split { train, dev, test };
enum class Gender { female, male, unknown };

std::string_view to_string(Split s);
std::string_view to_string(Gender g);
/// Throws ValidationError listing the allowed values.
Split parse_split(std::string_view s);
Gender parse_gender(std::string_view s);

struct RecordingMeta {
  int participant_id = 0;
  Split split = Split::train;
  std::optional<int> phq8_score;
  int raw_label = 0;
  int corrected_label = 0;
  Gender gender = Gender::unknown;
  std::string audio_path;
  bool excluded = false;
  std::string exclusion_reason;
  double trim_start_s = 0.0;
};

struct Manifest {
  std::vector<RecordingMeta> recordings;
  std::filesystem::path source;

  const RecordingMeta* find(int participant_id) const;
  /// Recordings of one split that are not excluded.
  std::vector<RecordingMeta> usable(Split split) const;
};

/// Participants whose binary label is recorded as 0 despite a PHQ-8 score of
/// 10 or more, with that score.
inline constexpr std::array<std::pair<int, int>, 14> kLabelCorrections{{
    {320, 11}, {325, 10}, {335, 12}, {344, 11}, {352, 10}, {356, 10}, {380, 10},
    {386, 11}, {409, 10}, {413, 10}, {418, 10}, {422, 12}, {433, 10}, {459, 16},
}};

inline constexpr int kDepressionThreshold = 10;

/// Header: participant_id,split,phq8_score,raw_label,gender,audio_path,
/// excluded,exclusion_reason[,trim_start_s]. phq8_score may be empty.
/// corrected_label starts equal to raw_label.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view text, std::filesystem::path source = {});
void write_manifest(const std::filesystem::path& path, const Manifest& m);

Manifest apply_label_corrections(Manifest m);

/// (n_depressed, n_nondepressed) over non-excluded recordings, by corrected label.
std::pair<int, int> split_counts(const Manifest& m, Split split);
std::pair<int, int> split_counts(const Manifest& m, std::string_view split);

/// Line-oriented discrepancy report: label/score mismatches, missing
/// correction participants, and deviations from the published split sizes.
std::vector<std::string> validate_manifest(const Manifest& m);

struct SynthConfig {
  int n_per_class = 50;
  double duration_s = 8.0;
  int sample_rate = 16000;
  std::uint64_t seed = 7;
  std::pair<double, double> class0_band{100.0, 400.0};
  std::pair<double, double> class1_band{1500.0, 3000.0};
  double noise_level = 0.05;
  int tones_per_recording = 3;

  void validate(int window_len = 1024) const;
};

/// Writes 2 * n_per_class mono 16-bit WAV files plus manifest.csv into
/// out_dir and returns the manifest. Each class is split 70/30 train/dev.
Manifest generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Samples for a single synthetic recording; a pure function of (cfg, id, label).
std::vector<double> synthesize_recording(const SynthConfig& cfg, int participant_id, int label);

}  // namespace daam
