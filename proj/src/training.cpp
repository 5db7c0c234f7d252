#include "daam/training.hpp"

#include "daam/audio_frontend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace daam {

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw ValidationError("train: lr0 must be positive");
  if (!(decay > 0 && decay <= 1)) throw ValidationError("train: decay must be in (0, 1]");
  if (lambda_epoch < 1) throw ValidationError("train: lambda_epoch must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (max_epochs < 1) throw ValidationError("train: max_epochs must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0)) {
    throw ValidationError("train: invalid Adam hyperparameters");
  }
  if (patience < 0 || max_grad_norm < 0) throw ValidationError("train: patience and max_grad_norm must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr0", c.lr0},
       {"decay", c.decay},
       {"lambda_epoch", c.lambda_epoch},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"seed", c.seed},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"patience", c.patience},
       {"max_grad_norm", c.max_grad_norm},
       {"balance_level", c.balance_level == BalanceLevel::segment ? "segment" : "recording"}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr0 = j.value("lr0", c.lr0);
  c.decay = j.value("decay", c.decay);
  c.lambda_epoch = j.value("lambda_epoch", c.lambda_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.patience = j.value("patience", c.patience);
  if (j.contains("balance_level")) {
    const auto level = j["balance_level"].get<std::string>();
    if (level == "segment") c.balance_level = BalanceLevel::segment;
    else if (level == "recording") c.balance_level = BalanceLevel::recording;
    else throw ValidationError("train: balance_level must be one of segment, recording (got '" + level + "')");
  }
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
}

std::string history_csv(const TrainHistory& h, bool include_timing) {
  std::ostringstream out;
  out << "epoch,loss,dev_macro_f1,lr,seconds\n";
  char buf[160];
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.loss, e.dev_macro_f1, e.lr,
                  include_timing ? e.seconds : 0.0);
    out << buf;
  }
  return out.str();
}

double bce_loss(double p, int y) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return y == 1 ? -std::log(q) : -std::log1p(-q);
}

double bce_grad(double p, int y) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return y == 1 ? -1.0 / p : 1.0 / (1.0 - p);
}

double bce_loss(std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size() || p.empty()) throw ValidationError("bce_loss: need equal, non-empty batches");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += bce_loss(p[i], y[i]);
  return s / static_cast<double>(p.size());
}

double lr_at_epoch(int epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay, epoch / cfg.lambda_epoch);
}

AdamState AdamState::for_params(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr, const TrainConfig& cfg) {
  if (grads.tensors.size() != params.tensors.size() || state.m.tensors.size() != params.tensors.size()) {
    throw ValidationError("adam_step: tensor count mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& w = params.tensors[t].data;
    const auto& g = grads.tensors[t].data;
    auto& m = state.m.tensors[t].data;
    auto& v = state.v.tensors[t].data;
    if (g.size() != w.size() || m.size() != w.size()) {
      throw ValidationError("adam_step: shape mismatch for " + params.tensors[t].name);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
}

std::pair<double, int> aggregate_recording(std::span<const double> segment_probs) {
  if (segment_probs.empty()) throw ValidationError("aggregate_recording: no segments");
  double s = 0.0;
  for (double p : segment_probs) s += p;
  const double mean = s / static_cast<double>(segment_probs.size());
  return {mean, mean > 0.5 ? 1 : 0};
}

std::vector<const FeatureRecording*> FeatureCache::of_split(Split s) const {
  std::vector<const FeatureRecording*> out;
  for (const auto& r : recordings)
    if (r.split == s) out.push_back(&r);
  return out;
}

namespace {

MelSpectrogram as_spec(const FeatureRecording& r) {
  MelSpectrogram s;
  s.values = r.features;
  s.recording_id = std::to_string(r.participant_id);
  return s;
}

}  // namespace

std::vector<RecordingPrediction> predict_recordings(const Classifier& model, const ModelParams& p,
                                                    std::span<const FeatureRecording* const> recs) {
  std::vector<RecordingPrediction> out;
  for (const FeatureRecording* r : recs) {
    const auto segs = segment(as_spec(*r), r->label, model.config().seg_len);
    if (segs.empty()) continue;
    std::vector<double> probs;
    probs.reserve(segs.size());
    for (const auto& s : segs) probs.push_back(model.forward(s.values, p));
    const auto [prob, label] = aggregate_recording(probs);
    out.push_back({r->participant_id, r->label, prob, label, static_cast<int>(segs.size())});
  }
  return out;
}

EvalReport evaluate_predictions(const std::vector<RecordingPrediction>& preds) {
  std::vector<int> truth, pred;
  for (const auto& p : preds) {
    truth.push_back(p.truth);
    pred.push_back(p.label);
  }
  return evaluate(truth, pred);
}

namespace {

void clip_gradients(ModelParams& g, double max_norm) {
  double sq = 0.0;
  for (const auto& t : g.tensors)
    for (double v : t.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto& t : g.tensors)
    for (double& v : t.data) v *= s;
}

[[noreturn]] void abort_non_finite(const TrainConfig& cfg, int epoch, long step, const std::vector<double>& probs,
                                   const std::vector<int>& labels, const ModelParams& params) {
  std::ostringstream msg;
  msg << "non-finite loss at epoch " << epoch << ", step " << step;
  if (!cfg.diagnostic_dump.empty()) {
    nlohmann::json dump = {{"epoch", epoch}, {"step", step}, {"labels", labels}, {"params_finite", params.all_finite()}};
    auto& ps = dump["probabilities"] = nlohmann::json::array();
    for (double p : probs) ps.push_back(std::isfinite(p) ? nlohmann::json(p) : nlohmann::json(std::to_string(p)));
    auto& bad = dump["non_finite_tensors"] = nlohmann::json::array();
    for (const auto& t : params.tensors)
      if (std::any_of(t.data.begin(), t.data.end(), [](double v) { return !std::isfinite(v); })) bad.push_back(t.name);
    std::ofstream(cfg.diagnostic_dump) << dump.dump(2) << '\n';
    msg << " (diagnostics written to " << cfg.diagnostic_dump.string() << ")";
  }
  throw NumericalError(msg.str());
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const FeatureCache& cache) {
  cfg.validate();
  const Classifier model(model_cfg);

  std::vector<Segment> segments;
  std::vector<std::size_t> owner;  // recording index of each segment
  std::vector<int> rec_labels;
  for (const FeatureRecording* r : cache.of_split(Split::train)) {
    auto segs = segment(as_spec(*r), r->label, model_cfg.seg_len);
    if (segs.empty()) continue;
    owner.insert(owner.end(), segs.size(), rec_labels.size());
    rec_labels.push_back(r->label);
    segments.insert(segments.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
  }
  if (segments.empty()) throw ValidationError("train: the training split yields no segments");
  std::vector<int> labels;
  for (const auto& s : segments) labels.push_back(s.label);
  const auto dev = cache.of_split(Split::dev);

  TrainResult result{init_parameters(model_cfg, cfg.seed), {}};
  ModelParams params = result.params;
  AdamState adam = AdamState::for_params(params);
  double best_f1 = -1.0;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(epoch, cfg);
    const std::uint64_t balance_stream = stream_key({5, static_cast<std::uint64_t>(epoch)});
    std::vector<std::size_t> order;
    if (cfg.balance_level == BalanceLevel::segment) {
      order = balanced_indices(labels, cfg.seed, balance_stream);
    } else {
      std::vector<char> keep(rec_labels.size(), 0);
      for (auto r : balanced_indices(rec_labels, cfg.seed, balance_stream)) keep[r] = 1;
      for (std::size_t i = 0; i < segments.size(); ++i)
        if (keep[owner[i]]) order.push_back(i);
    }
    Rng shuffler(cfg.seed, stream_key({6, static_cast<std::uint64_t>(epoch)}));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    long step = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const double n = static_cast<double>(end - begin);
      ModelParams grads = params.zeros_like();
      std::vector<double> probs;
      std::vector<int> ys;
      double batch_loss = 0.0;
      ForwardTape tape;
      for (std::size_t k = begin; k < end; ++k) {
        const Segment& s = segments[order[k]];
        Rng dropout(cfg.seed, stream_key({7, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(k)}));
        const double p = model.forward(s.values, params, &dropout, tape);
        probs.push_back(p);
        ys.push_back(s.label);
        const double l = bce_loss(p, s.label);
        if (!std::isfinite(p) || !std::isfinite(l)) abort_non_finite(cfg, epoch, step, probs, ys, params);
        batch_loss += l;
        model.backward(tape, params, bce_grad(p, s.label) / n, grads);
      }
      if (cfg.max_grad_norm > 0) clip_gradients(grads, cfg.max_grad_norm);
      adam_step(params, grads, adam, lr, cfg);
      // Weights are kept at f32 precision, the precision checkpoints store.
      round_to_f32(params);
      if (!params.all_finite()) abort_non_finite(cfg, epoch, step, probs, ys, params);
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(order.size());
    if (!dev.empty()) {
      log::ScopedWarningSink quiet([](const std::string&) {});
      const auto preds = predict_recordings(model, params, dev);
      rec.dev_macro_f1 = preds.empty() ? 0.0 : evaluate_predictions(preds).macro_f1_mean;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);
    log::info("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.loss) + " dev_macro_f1 " +
              std::to_string(rec.dev_macro_f1) + " lr " + std::to_string(lr));

    // Without a dev split the last epoch wins.
    if (dev.empty() || rec.dev_macro_f1 > best_f1) {
      best_f1 = rec.dev_macro_f1;
      result.history.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace daam
