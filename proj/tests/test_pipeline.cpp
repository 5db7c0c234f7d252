#include "daam/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace daam;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("daam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Six 8 s synthetic recordings (four train, two dev); the last train
// recording is marked excluded and one dev recording points at missing audio
// when `break_one` is set.
fs::path small_corpus(const std::string& name, bool break_one) {
  const fs::path dir = temp_dir(name);
  SynthConfig s;
  s.n_per_class = 3;
  Manifest m = generate_synthetic_dataset(s, dir / "audio");
  m.recordings[0].excluded = true;
  m.recordings[0].exclusion_reason = "test exclusion";
  if (break_one) m.recordings[1].audio_path = "missing.wav";
  write_manifest(dir / "audio" / "manifest.csv", m);
  return dir;
}

}  // namespace

TEST_CASE("preprocess writes one feature file per usable recording") {
  const fs::path dir = small_corpus("pre", true);
  const auto summary = preprocess(dir / "audio" / "manifest.csv", dir / "features", SpectrogramConfig{});
  CHECK(summary.excluded == 1);
  CHECK(summary.written == 4);
  REQUIRE(summary.failures.size() == 1);
  CHECK(summary.failures[0].find("missing.wav") != std::string::npos);

  const auto index = nlohmann::json::parse(read_text_file(dir / "features" / kIndexFile));
  CHECK(index["recordings"].size() == 4);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "features")) files += e.path().extension() == ".daamfeat";
  CHECK(files == 4);

  const auto cache = load_feature_cache(dir / "features");
  REQUIRE(cache.recordings.size() == 4);
  for (Split s : {Split::train, Split::dev}) {
    const auto recs = cache.of_split(s);
    REQUIRE(!recs.empty());
    for (const auto* r : recs) {
      CHECK(r->features.rows() == 40);
      CHECK(r->features.cols() == recs.front()->features.cols());
    }
  }

  const fs::path again = dir / "features2";
  preprocess(dir / "audio" / "manifest.csv", again, SpectrogramConfig{});
  for (const auto& e : fs::directory_iterator(dir / "features"))
    CHECK(file_bytes(e.path()) == file_bytes(again / e.path().filename()));

  CHECK_THROWS_AS(load_feature_cache(dir / "nowhere"), MissingInputError);
  CHECK_THROWS_AS(preprocess(dir / "nope.csv", dir / "x", SpectrogramConfig{}), MissingInputError);
}

TEST_CASE("run config JSON round trip") {
  RunConfig c;
  c.model = ModelConfig::reduced(Architecture::transformer);
  c.model.daam.n_heads = 2;
  c.train.max_epochs = 7;
  c.train.seed = 99;
  c.synth.n_per_class = 12;
  c.features = "feat";
  c.split = "test";
  c.top_k = 5;
  const auto j = to_json(c);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.model.arch == Architecture::transformer);
  CHECK(back.model.daam.n_heads == 2);

  const RunConfig arch_only = run_config_from_json(nlohmann::json::parse(R"({"model": {"arch": "transformer"}})"));
  CHECK(arch_only.model.transformer.d_feedforward == ModelConfig::reduced(Architecture::transformer).transformer.d_feedforward);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"model": {"arch": "rnn"}})")), ValidationError);
}

TEST_CASE("train, evaluate and explain on a small corpus") {
  const fs::path dir = small_corpus("run", false);
  preprocess(dir / "audio" / "manifest.csv", dir / "features", SpectrogramConfig{});

  RunConfig cfg;
  cfg.features = dir / "features";
  cfg.out = dir / "model";
  cfg.train.max_epochs = 2;
  cfg.train.seed = 5;
  const auto trained = run_training(cfg);
  CHECK(fs::exists(trained.checkpoint));
  CHECK(fs::exists(trained.history));
  CHECK(fs::exists(trained.run_config));

  const auto eval = run_evaluation(trained.checkpoint, cfg.features, Split::dev, dir / "eval");
  CHECK(eval.predictions.size() == 2);
  const auto j = nlohmann::json::parse(read_text_file(eval.json));
  CHECK(j["architecture"] == "cnnlstm");
  CHECK(j["split"] == "dev");
  CHECK(j["n_recordings"] == 2);
  CHECK(fs::exists(eval.text));
  CHECK_THROWS_AS(run_evaluation(trained.checkpoint, cfg.features, Split::dev, dir / "eval", Architecture::transformer),
                  ValidationError);

  const auto ex = run_explain(trained.checkpoint, cfg.features, Split::dev, dir / "explain", 5);
  for (const char* f : {"heatmap_combined.csv", "heatmap_combined.pgm", "heatmap_head0.csv", "heatmap_head3.pgm",
                        "bins.csv", "ranking.csv", "heads.txt"})
    CHECK(fs::exists(dir / "explain" / f));
  CHECK(ex.ranking.size() == 5);
  CHECK(ex.per_head.size() == 4);
  CHECK(ex.heads.size() == 4);

  // Offline recomputation of the combined map from the checkpoint.
  const ModelParams p = load_checkpoint(trained.checkpoint);
  const Classifier model(config_of(p));
  const auto cache = load_feature_cache(cfg.features);
  Matrix sum = Matrix::Zero(40, 120);
  int n = 0;
  for (const auto* r : cache.of_split(Split::dev)) {
    for (const auto& s : segment(MelSpectrogram{r->features, "x"}, r->label)) {
      sum += model.attention_gate(s.values, p);
      ++n;
    }
  }
  CHECK(n == ex.n_segments);
  const Matrix mean = sum / n;
  const Matrix expected = (mean.array() - mean.minCoeff()) / (mean.maxCoeff() - mean.minCoeff());
  CHECK((ex.combined.values - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((load_heatmap_csv(dir / "explain" / "heatmap_combined.csv") - expected).cwiseAbs().maxCoeff() <= 5e-7);
  CHECK(ex.combined.n_samples_averaged == n);

  // Reruns with the same seed reproduce every artifact.
  RunConfig again = cfg;
  again.out = dir / "model2";
  const auto second = run_training(again);
  CHECK(file_bytes(trained.checkpoint) == file_bytes(second.checkpoint));
  CHECK(history_csv(trained.result.history, false) == history_csv(second.result.history, false));
  run_explain(second.checkpoint, cfg.features, Split::dev, dir / "explain2", 5);
  for (const char* f : {"heatmap_combined.csv", "ranking.csv", "heads.txt"})
    CHECK(file_bytes(dir / "explain" / f) == file_bytes(dir / "explain2" / f));
}
