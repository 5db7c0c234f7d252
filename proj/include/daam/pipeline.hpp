#pragma once

#include "daam/audio_frontend.hpp"
#include "daam/dataset.hpp"
#include "daam/evaluation.hpp"
#include "daam/explainability.hpp"
#include "daam/models.hpp"
#include "daam/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace daam {

/// Everything a run needs; echoed as run_config.json into output directories.
struct RunConfig {
  SpectrogramConfig spectrogram;
  ModelConfig model = ModelConfig::reduced(Architecture::cnnlstm);
  TrainConfig train;
  SynthConfig synth;
  std::filesystem::path manifest, features, out, checkpoint;
  std::string split = "dev";
  int top_k = 10;
};

nlohmann::json to_json(const RunConfig& c);
/// Fields absent from `j` keep their value in `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
void write_run_config(const std::filesystem::path& dir, const RunConfig& c);

// Feature cache layout: <dir>/index.json plus one <participant_id>.daamfeat
// per usable recording.
inline constexpr const char* kIndexFile = "index.json";

struct PreprocessSummary {
  int written = 0;
  int excluded = 0;
  int labels_corrected = 0;
  std::vector<std::string> failures;  // one message per unreadable recording
};

/// Extract, normalize and per-split crop every non-excluded recording.
/// Recordings that fail are reported in `failures`; the rest are written.
PreprocessSummary preprocess(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                             const SpectrogramConfig& cfg);

FeatureCache load_feature_cache(const std::filesystem::path& dir);

struct TrainOutputs {
  std::filesystem::path checkpoint, history, run_config;
  TrainResult result;
};

/// Trains on the cache and writes model.ckpt, history.csv and run_config.json
/// into cfg.out.
TrainOutputs run_training(const RunConfig& cfg);

struct EvalOutputs {
  EvalReport report;
  std::vector<RecordingPrediction> predictions;
  std::filesystem::path json, text;
};

/// Evaluates a checkpoint on one split; writes eval_<split>.json / .txt.
/// `expected_arch` rejects checkpoints of another architecture.
EvalOutputs run_evaluation(const std::filesystem::path& checkpoint, const std::filesystem::path& features,
                           Split split, const std::filesystem::path& out_dir,
                           std::optional<Architecture> expected_arch = std::nullopt);

struct ExplainOutputs {
  Matrix mean_gate;  // averaged GA over every segment of the split
  ImportanceMap combined;
  std::vector<ImportanceMap> per_head;
  std::vector<RankedBin> ranking;
  std::vector<HeadSummary> heads;
  int n_segments = 0;
  std::vector<std::filesystem::path> files;
};

/// Averaged attention heatmaps, bin ranking and per-head parameter summary.
ExplainOutputs run_explain(const std::filesystem::path& checkpoint, const std::filesystem::path& features, Split split,
                           const std::filesystem::path& out_dir, int top_k = 10,
                           std::optional<Architecture> expected_arch = std::nullopt);

/// Every GA matrix the checkpoint produces on the split's segments.
std::vector<Matrix> attention_gates(const ModelParams& params, const FeatureCache& cache, Split split);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace daam
