#pragma once

#include "daam/common.hpp"
#include "daam/dataset.hpp"
#include "daam/evaluation.hpp"
#include "daam/models.hpp"
#include "daam/params.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace daam {

/// Unit at which ND is subsampled to the D count each epoch.
enum class BalanceLevel { segment, recording };

struct TrainConfig {
  double lr0 = 0.001;
  double decay = 0.9;
  int lambda_epoch = 2;
  int batch_size = 32;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Stop after this many epochs without a dev improvement; 0 disables.
  int patience = 0;
  BalanceLevel balance_level = BalanceLevel::segment;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
  /// Where to write a JSON dump when a non-finite loss aborts training.
  std::filesystem::path diagnostic_dump;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double dev_macro_f1 = 0;
  double lr = 0;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
};

/// CSV with header epoch,loss,dev_macro_f1,lr,seconds.
std::string history_csv(const TrainHistory& h, bool include_timing = true);

inline constexpr double kProbClamp = 1e-7;

/// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int y);
/// d bce_loss / dp; zero where the clamp is active.
double bce_grad(double p, int y);
double bce_loss(std::span<const double> p, std::span<const int> y);

double lr_at_epoch(int epoch, const TrainConfig& cfg);

struct AdamState {
  ModelParams m, v;
  long step = 0;

  static AdamState for_params(const ModelParams& p);
};

/// One bias-corrected Adam update in place.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const TrainConfig& cfg);

/// Mean of segment probabilities; label 1 iff mean > 0.5.
std::pair<double, int> aggregate_recording(std::span<const double> segment_probs);

/// One preprocessed recording: z-normalized, split-cropped log-mel features.
struct FeatureRecording {
  int participant_id = 0;
  Split split = Split::train;
  int label = 0;
  Matrix features;
};

struct FeatureCache {
  std::vector<FeatureRecording> recordings;
  nlohmann::json spectrogram;  // extraction settings echoed from the index

  std::vector<const FeatureRecording*> of_split(Split s) const;
};

struct RecordingPrediction {
  int participant_id = 0;
  int truth = 0;
  double prob = 0;
  int label = 0;
  int n_segments = 0;
};

/// Recording-level predictions (eval mode) for every recording in `recs`
/// that yields at least one segment.
std::vector<RecordingPrediction> predict_recordings(const Classifier& model, const ModelParams& p,
                                                    std::span<const FeatureRecording* const> recs);
EvalReport evaluate_predictions(const std::vector<RecordingPrediction>& preds);

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Seeded Adam training on the train split with per-epoch balanced
/// re-subsampling of ND segments; returns the parameters of the epoch with
/// the best dev macro F1 (earliest on ties).
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const FeatureCache& cache);

}  // namespace daam
