#include "daam/pipeline.hpp"

#include "daam/params.hpp"
#include "daam/wav.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace daam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json spectrogram_json(const SpectrogramConfig& c) {
  return {{"n_mels", c.n_mels},   {"window_len", c.window_len}, {"hop_len", c.hop_len}, {"sample_rate", c.sample_rate},
          {"fmin", c.fmin},       {"fmax", c.fmax},             {"log_floor", c.log_floor}};
}

SpectrogramConfig spectrogram_from_json(const json& j, SpectrogramConfig c) {
  c.n_mels = j.value("n_mels", c.n_mels);
  c.window_len = j.value("window_len", c.window_len);
  c.hop_len = j.value("hop_len", c.hop_len);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.fmin = j.value("fmin", c.fmin);
  c.fmax = j.value("fmax", c.fmax);
  c.log_floor = j.value("log_floor", c.log_floor);
  return c;
}

json synth_json(const SynthConfig& c) {
  return {{"n_per_class", c.n_per_class},
          {"duration_s", c.duration_s},
          {"sample_rate", c.sample_rate},
          {"seed", c.seed},
          {"class0_band", {c.class0_band.first, c.class0_band.second}},
          {"class1_band", {c.class1_band.first, c.class1_band.second}},
          {"noise_level", c.noise_level},
          {"tones_per_recording", c.tones_per_recording}};
}

SynthConfig synth_from_json(const json& j, SynthConfig c) {
  c.n_per_class = j.value("n_per_class", c.n_per_class);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.seed = j.value("seed", c.seed);
  if (j.contains("class0_band")) c.class0_band = {j["class0_band"].at(0), j["class0_band"].at(1)};
  if (j.contains("class1_band")) c.class1_band = {j["class1_band"].at(0), j["class1_band"].at(1)};
  c.noise_level = j.value("noise_level", c.noise_level);
  c.tones_per_recording = j.value("tones_per_recording", c.tones_per_recording);
  return c;
}

std::string feature_file_name(int participant_id) { return std::to_string(participant_id) + ".daamfeat"; }

ModelParams load_checked(const fs::path& checkpoint, std::optional<Architecture> expected) {
  ModelParams p = load_checkpoint(checkpoint);
  const ModelConfig cfg = config_of(p);
  if (expected && *expected != cfg.arch) {
    throw ValidationError("checkpoint " + checkpoint.string() + " holds a " + std::string(to_string(cfg.arch)) +
                          " model, not " + std::string(to_string(*expected)));
  }
  return p;
}

void check_compatible(const ModelConfig& cfg, const FeatureCache& cache) {
  for (const auto& r : cache.recordings) {
    if (r.features.rows() != cfg.n_features) {
      throw ValidationError("feature rows (" + std::to_string(r.features.rows()) + ") do not match the model's " +
                            std::to_string(cfg.n_features) + " input features");
    }
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  return {{"spectrogram", spectrogram_json(c.spectrogram)},
          {"model", json(c.model)},
          {"train", json(c.train)},
          {"synth", synth_json(c.synth)},
          {"paths",
           {{"manifest", c.manifest.generic_string()},
            {"features", c.features.generic_string()},
            {"out", c.out.generic_string()},
            {"checkpoint", c.checkpoint.generic_string()}}},
          {"split", c.split},
          {"top_k", c.top_k}};
}

RunConfig run_config_from_json(const json& j, RunConfig base) {
  try {
    if (j.contains("spectrogram")) base.spectrogram = spectrogram_from_json(j["spectrogram"], base.spectrogram);
    if (j.contains("model")) {
      // Partial model sections are merged over the current model config.
      json merged = base.model;
      merged.merge_patch(j["model"]);
      if (j["model"].contains("arch") && !j["model"].contains("cnnlstm") && !j["model"].contains("transformer")) {
        const ModelConfig defaults = ModelConfig::reduced(parse_architecture(j["model"]["arch"].get<std::string>()));
        json d = defaults;
        for (const char* k : {"cnnlstm", "transformer"})
          if (d.contains(k)) merged[k] = d[k];
      }
      base.model = merged.get<ModelConfig>();
    }
    if (j.contains("train")) base.train = j["train"].get<TrainConfig>();
    if (j.contains("synth")) base.synth = synth_from_json(j["synth"], base.synth);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      base.manifest = p.value("manifest", base.manifest.string());
      base.features = p.value("features", base.features.string());
      base.out = p.value("out", base.out.string());
      base.checkpoint = p.value("checkpoint", base.checkpoint.string());
    }
    base.split = j.value("split", base.split);
    base.top_k = j.value("top_k", base.top_k);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  return base;
}

void write_run_config(const fs::path& dir, const RunConfig& c) {
  write_text_file(dir / "run_config.json", to_json(c).dump(2) + "\n");
}

std::string read_text_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("cannot open " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

PreprocessSummary preprocess(const fs::path& manifest_path, const fs::path& out_dir, const SpectrogramConfig& cfg) {
  cfg.validate();
  const Manifest raw = load_manifest(manifest_path);
  const Manifest m = apply_label_corrections(raw);
  PreprocessSummary summary;
  for (std::size_t i = 0; i < m.recordings.size(); ++i) {
    if (m.recordings[i].corrected_label != raw.recordings[i].corrected_label) {
      ++summary.labels_corrected;
      log::info("label correction: participant " + std::to_string(m.recordings[i].participant_id) + " -> D");
    }
  }
  fs::create_directories(out_dir);
  const fs::path base = manifest_path.parent_path();

  struct Item {
    const RecordingMeta* meta;
    MelSpectrogram spec;
  };
  std::map<Split, std::vector<Item>> by_split;
  json excluded = json::array();
  for (const auto& r : m.recordings) {
    if (r.excluded) {
      ++summary.excluded;
      log::info("skipping excluded participant " + std::to_string(r.participant_id) + ": " + r.exclusion_reason);
      excluded.push_back({{"participant_id", r.participant_id}, {"reason", r.exclusion_reason}});
      continue;
    }
    const fs::path audio = fs::path(r.audio_path).is_absolute() ? fs::path(r.audio_path) : base / r.audio_path;
    try {
      wav::Audio a = wav::read(audio);
      const auto skip = static_cast<std::size_t>(std::llround(r.trim_start_s * a.sample_rate));
      std::vector<double> samples(a.samples.begin() + static_cast<std::ptrdiff_t>(std::min(skip, a.samples.size())),
                                  a.samples.end());
      MelSpectrogram spec = compute_mel_spectrogram(samples, a.sample_rate, cfg, std::to_string(r.participant_id));
      by_split[r.split].push_back({&r, z_normalize(spec)});
    } catch (const std::exception& e) {
      summary.failures.push_back("participant " + std::to_string(r.participant_id) + " (" + audio.string() +
                                 "): " + e.what());
      log::warn(summary.failures.back());
    }
  }

  json recs = json::array();
  std::map<int, json> entries;
  for (auto& [split, items] : by_split) {
    std::vector<MelSpectrogram> specs;
    for (auto& it : items) specs.push_back(std::move(it.spec));
    specs = crop_to_min_frames(std::move(specs));
    for (std::size_t k = 0; k < items.size(); ++k) {
      const RecordingMeta& r = *items[k].meta;
      const std::string file = feature_file_name(r.participant_id);
      write_feature_file(out_dir / file, specs[k].values);
      ++summary.written;
      entries[r.participant_id] = {{"participant_id", r.participant_id},
                                   {"split", std::string(to_string(split))},
                                   {"label", r.corrected_label},
                                   {"file", file},
                                   {"n_frames", specs[k].n_frames()}};
    }
  }
  for (auto& [id, e] : entries) recs.push_back(std::move(e));

  const json index = {{"format", "DAAMFEAT"},
                      {"spectrogram", spectrogram_json(cfg)},
                      {"labels_corrected", summary.labels_corrected},
                      {"recordings", recs},
                      {"excluded", excluded}};
  write_text_file(out_dir / kIndexFile, index.dump(2) + "\n");
  return summary;
}

FeatureCache load_feature_cache(const fs::path& dir) {
  const fs::path index_path = dir / kIndexFile;
  if (!fs::exists(index_path)) throw MissingInputError("feature cache not found: " + index_path.string());
  FeatureCache cache;
  try {
    const json index = json::parse(read_text_file(index_path));
    cache.spectrogram = index.at("spectrogram");
    for (const auto& e : index.at("recordings")) {
      FeatureRecording r;
      r.participant_id = e.at("participant_id").get<int>();
      r.split = parse_split(e.at("split").get<std::string>());
      r.label = e.at("label").get<int>();
      const fs::path file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file)) throw MissingInputError("feature file missing: " + file.string());
      r.features = read_feature_file(file);
      cache.recordings.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError(index_path.string() + ": " + e.what());
  }
  return cache;
}

// ---------------------------------------------------------------------------

TrainOutputs run_training(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  const FeatureCache cache = load_feature_cache(cfg.features);
  check_compatible(cfg.model, cache);
  fs::create_directories(cfg.out);

  TrainOutputs out;
  out.result = train(cfg.model, cfg.train, cache);
  out.checkpoint = cfg.out / "model.ckpt";
  out.history = cfg.out / "history.csv";
  out.run_config = cfg.out / "run_config.json";
  save_checkpoint(out.checkpoint, out.result.params);
  write_text_file(out.history, history_csv(out.result.history));
  write_run_config(cfg.out, cfg);
  return out;
}

EvalOutputs run_evaluation(const fs::path& checkpoint, const fs::path& features, Split split, const fs::path& out_dir,
                           std::optional<Architecture> expected_arch) {
  const ModelParams params = load_checked(checkpoint, expected_arch);
  const ModelConfig cfg = config_of(params);
  const FeatureCache cache = load_feature_cache(features);
  check_compatible(cfg, cache);
  const Classifier model(cfg);

  EvalOutputs out;
  out.predictions = predict_recordings(model, params, cache.of_split(split));
  if (out.predictions.empty()) {
    throw ValidationError("split '" + std::string(to_string(split)) + "' has no recordings with a full segment");
  }
  out.report = evaluate_predictions(out.predictions);

  json preds = json::array();
  for (const auto& p : out.predictions) {
    preds.push_back({{"participant_id", p.participant_id},
                     {"truth", p.truth},
                     {"prob", p.prob},
                     {"label", p.label},
                     {"n_segments", p.n_segments}});
  }
  const std::string tag = std::string(to_string(split));
  const json j = {{"architecture", params.architecture},
                  {"split", tag},
                  {"n_recordings", out.predictions.size()},
                  {"metrics", to_json(out.report)},
                  {"predictions", preds},
                  {"note", averaging_discrepancy_note()}};
  fs::create_directories(out_dir);
  out.json = out_dir / ("eval_" + tag + ".json");
  out.text = out_dir / ("eval_" + tag + ".txt");
  write_text_file(out.json, j.dump(2) + "\n");
  write_text_file(out.text, format_report(out.report, params.architecture) + averaging_discrepancy_note() + "\n");
  return out;
}

std::vector<Matrix> attention_gates(const ModelParams& params, const FeatureCache& cache, Split split) {
  const ModelConfig cfg = config_of(params);
  check_compatible(cfg, cache);
  const Classifier model(cfg);
  std::vector<Matrix> gates;
  for (const FeatureRecording* r : cache.of_split(split)) {
    MelSpectrogram spec;
    spec.values = r->features;
    spec.recording_id = std::to_string(r->participant_id);
    for (const auto& s : segment(spec, r->label, cfg.seg_len)) gates.push_back(model.attention_gate(s.values, params));
  }
  return gates;
}

ExplainOutputs run_explain(const fs::path& checkpoint, const fs::path& features, Split split, const fs::path& out_dir,
                           int top_k, std::optional<Architecture> expected_arch) {
  const ModelParams params = load_checked(checkpoint, expected_arch);
  const ModelConfig cfg = config_of(params);
  const FeatureCache cache = load_feature_cache(features);
  const auto gates = attention_gates(params, cache, split);
  if (gates.empty()) throw ValidationError("split '" + std::string(to_string(split)) + "' yields no segments to explain");

  ExplainOutputs out;
  out.n_segments = static_cast<int>(gates.size());
  out.mean_gate = average_heatmap(gates);
  out.combined = importance_factor(out.mean_gate);
  out.combined.source = ImportanceMap::Source::averaged;
  out.combined.n_samples_averaged = out.n_segments;

  fs::create_directories(out_dir);
  auto files = export_heatmap(out.combined, out_dir / "heatmap_combined");
  out.files.insert(out.files.end(), files.begin(), files.end());
  const auto slices = head_partition(out.mean_gate, cfg.daam.n_heads);
  for (std::size_t h = 0; h < slices.size(); ++h) {
    ImportanceMap m = importance_factor(slices[h]);
    m.source = ImportanceMap::Source::averaged;
    m.n_samples_averaged = out.n_segments;
    files = export_heatmap(m, out_dir / ("heatmap_head" + std::to_string(h)));
    out.files.insert(out.files.end(), files.begin(), files.end());
    out.per_head.push_back(std::move(m));
  }

  SpectrogramConfig spec_cfg = spectrogram_from_json(cache.spectrogram, SpectrogramConfig{});
  const BinTable bins = mel_bin_table(spec_cfg);
  write_bin_table(out_dir / "bins.csv", bins);
  out.files.push_back(out_dir / "bins.csv");

  out.ranking = rank_bins(out.combined, bins, top_k);
  std::string ranking = "rank,bin,lower_hz,upper_hz,mean_importance\n";
  char buf[160];
  for (std::size_t i = 0; i < out.ranking.size(); ++i) {
    const auto& r = out.ranking[i];
    std::snprintf(buf, sizeof buf, "%zu,%d,%.2f,%.2f,%.6f\n", i + 1, r.index, r.lower_hz, r.upper_hz, r.mean_importance);
    ranking += buf;
  }
  write_text_file(out_dir / "ranking.csv", ranking);
  out.files.push_back(out_dir / "ranking.csv");

  out.heads = summarize_params(daam_params_of(params), cfg.daam.variance_floor);
  write_text_file(out_dir / "heads.txt", format_head_summary(out.heads));
  out.files.push_back(out_dir / "heads.txt");
  return out;
}

}  // namespace daam
