#include "daam/gradcheck.hpp"
#include "daam/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace daam;
namespace fs = std::filesystem;

namespace {

// Two classes separated by a shift in the upper half of the bins.
FeatureCache tiny_cache(const ModelConfig& cfg) {
  FeatureCache cache;
  Rng rng(17, 0);
  int id = 1;
  auto add = [&](Split split, int label, int frames) {
    FeatureRecording r;
    r.participant_id = id++;
    r.split = split;
    r.label = label;
    r.features.resize(cfg.n_features, frames);
    for (Eigen::Index i = 0; i < r.features.size(); ++i) r.features.data()[i] = rng.normal();
    if (label) r.features.bottomRows(cfg.n_features / 2).array() += 1.5;
    cache.recordings.push_back(std::move(r));
  };
  for (int i = 0; i < 8; ++i) add(Split::train, 0, 3 * cfg.seg_len);
  for (int i = 0; i < 3; ++i) add(Split::train, 1, 2 * cfg.seg_len);
  for (int i = 0; i < 3; ++i) add(Split::dev, i % 2, 2 * cfg.seg_len);
  return cache;
}

TrainConfig quick(int epochs) {
  TrainConfig t;
  t.max_epochs = epochs;
  t.batch_size = 4;
  t.lr0 = 0.01;
  t.seed = 3;
  return t;
}

}  // namespace

TEST_CASE("binary cross-entropy") {
  CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(bce_loss(0.9, 1) == doctest::Approx(-std::log(0.9)));
  CHECK(bce_loss(0.9, 0) == doctest::Approx(-std::log(0.1)));
  CHECK(bce_loss(0.0, 1) == doctest::Approx(-std::log(1e-7)));
  CHECK(std::isfinite(bce_loss(1.0, 0)));
  for (double p : {0.05, 0.3, 0.5, 0.81}) {
    for (int y : {0, 1}) {
      const double h = 1e-6;
      const double fd = (bce_loss(p + h, y) - bce_loss(p - h, y)) / (2 * h);
      CHECK(bce_grad(p, y) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  const std::vector<double> one{0.3}, four{0.3, 0.3, 0.3, 0.3};
  const std::vector<int> y1{1}, y4{1, 1, 1, 1};
  CHECK(bce_loss(four, y4) == doctest::Approx(bce_loss(one, y1)).epsilon(1e-15));
  CHECK_THROWS_AS(bce_loss(std::vector<double>{}, std::vector<int>{}), ValidationError);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at_epoch(0, cfg) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at_epoch(1, cfg) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at_epoch(2, cfg) == doctest::Approx(0.0009).epsilon(1e-12));
  CHECK(lr_at_epoch(3, cfg) == doctest::Approx(0.0009).epsilon(1e-12));
  CHECK(lr_at_epoch(4, cfg) == doctest::Approx(0.00081).epsilon(1e-12));
  cfg.decay = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.lambda_epoch = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("Adam") {
  ModelParams p;
  p.add("theta", {3}).data = {1.0, -2.0, 0.5};
  TrainConfig cfg;
  AdamState s = AdamState::for_params(p);
  const auto before = p.tensors[0].data;
  adam_step(p, p.zeros_like(), s, 0.1, cfg);
  CHECK(p.tensors[0].data == before);

  s = AdamState::for_params(p);
  ModelParams g = p.zeros_like();
  g.tensors[0].data = {0.7, -3.0, 1e-3};
  adam_step(p, g, s, 0.01, cfg);
  CHECK(p.tensors[0].data[0] - before[0] == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(p.tensors[0].data[1] - before[1] == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(p.tensors[0].data[2] - before[2] == doctest::Approx(-0.01).epsilon(1e-4));

  ModelParams q;
  q.add("theta", {1}).data = {0.0};
  AdamState qs = AdamState::for_params(q);
  int steps = 0;
  while (std::abs(q.tensors[0].data[0] - 3.0) >= 1e-3 && steps < 2000) {
    ModelParams qg = q.zeros_like();
    qg.tensors[0].data[0] = 2.0 * (q.tensors[0].data[0] - 3.0);
    adam_step(q, qg, qs, 0.05, cfg);
    ++steps;
  }
  CHECK(std::abs(q.tensors[0].data[0] - 3.0) < 1e-3);
  CHECK(steps < 2000);

  ModelParams wrong;
  wrong.add("theta", {2});
  CHECK_THROWS_AS(adam_step(p, wrong, s, 0.1, cfg), ValidationError);
}

TEST_CASE("recording aggregation") {
  CHECK(aggregate_recording(std::vector<double>{0.2, 0.4, 0.9}).first == doctest::Approx(0.5));
  CHECK(aggregate_recording(std::vector<double>{0.2, 0.4, 0.9}).second == 0);
  CHECK(aggregate_recording(std::vector<double>{0.6, 0.45}).second == 1);
  CHECK(aggregate_recording(std::vector<double>{0.51}).second == 1);
  CHECK_THROWS_AS(aggregate_recording(std::vector<double>{}), ValidationError);
}

TEST_CASE("training is deterministic and records the schedule") {
  const auto cfg = gradcheck_model_config(Architecture::cnnlstm);
  const auto cache = tiny_cache(cfg);
  const auto a = train(cfg, quick(4), cache);
  const auto b = train(cfg, quick(4), cache);
  CHECK(history_csv(a.history, false) == history_csv(b.history, false));
  CHECK(a.history.best_epoch == b.history.best_epoch);
  for (std::size_t t = 0; t < a.params.tensors.size(); ++t) CHECK(a.params.tensors[t].data == b.params.tensors[t].data);
  REQUIRE(a.history.epochs.size() == 4);
  for (const auto& e : a.history.epochs) {
    CHECK(e.lr == lr_at_epoch(e.epoch, quick(4)));
    CHECK(std::isfinite(e.loss));
    CHECK(e.dev_macro_f1 >= 0.0);
    CHECK(e.dev_macro_f1 <= 1.0);
  }
  CHECK(history_csv(a.history).rfind("epoch,loss,dev_macro_f1,lr,seconds\n", 0) == 0);

  TrainConfig other = quick(4);
  other.seed = 4;
  const auto c = train(cfg, other, cache);
  bool differs = false;
  for (std::size_t t = 0; t < a.params.tensors.size(); ++t) differs |= a.params.tensors[t].data != c.params.tensors[t].data;
  CHECK(differs);
}

TEST_CASE("transformer training runs with dropout and stays deterministic") {
  const auto cfg = gradcheck_model_config(Architecture::transformer);
  const auto cache = tiny_cache(cfg);
  const auto a = train(cfg, quick(2), cache);
  const auto b = train(cfg, quick(2), cache);
  CHECK(history_csv(a.history, false) == history_csv(b.history, false));
  CHECK(a.params.all_finite());
}

TEST_CASE("training errors") {
  const auto cfg = gradcheck_model_config(Architecture::cnnlstm);
  FeatureCache cache = tiny_cache(cfg);
  FeatureCache dev_only;
  for (const auto& r : cache.recordings)
    if (r.split == Split::dev) dev_only.recordings.push_back(r);
  CHECK_THROWS_WITH_AS(train(cfg, quick(1), dev_only), doctest::Contains("training split"), ValidationError);

  const fs::path dump = fs::temp_directory_path() / "daam_test_diagnostic.json";
  fs::remove(dump);
  TrainConfig blowup = quick(1);
  blowup.lr0 = 1e300;
  blowup.diagnostic_dump = dump;
  CHECK_THROWS_AS(train(cfg, blowup, cache), NumericalError);
  CHECK(fs::exists(dump));
  std::ifstream f(dump);
  const auto j = nlohmann::json::parse(f);
  CHECK(j["params_finite"] == false);
  CHECK(!j["non_finite_tensors"].empty());
}

TEST_CASE("recording predictions aggregate segments") {
  const auto cfg = gradcheck_model_config(Architecture::cnnlstm);
  const auto cache = tiny_cache(cfg);
  const auto p = init_parameters(cfg, 2);
  Classifier model(cfg);
  const auto train_recs = cache.of_split(Split::train);
  const auto preds = predict_recordings(model, p, train_recs);
  REQUIRE(preds.size() == train_recs.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto segs = segment(MelSpectrogram{train_recs[i]->features, "x"}, 0, cfg.seg_len);
    std::vector<double> probs;
    for (const auto& s : segs) probs.push_back(model.forward(s.values, p));
    const auto [prob, label] = aggregate_recording(probs);
    CHECK(preds[i].n_segments == static_cast<int>(segs.size()));
    CHECK(preds[i].prob == doctest::Approx(prob).epsilon(1e-15));
    CHECK(preds[i].label == label);
    CHECK(preds[i].truth == train_recs[i]->label);
  }
}

TEST_CASE("recording-level balancing") {
  const auto cfg = gradcheck_model_config(Architecture::cnnlstm);
  const auto cache = tiny_cache(cfg);
  TrainConfig t = quick(2);
  t.balance_level = BalanceLevel::recording;
  const auto a = train(cfg, t, cache), b = train(cfg, t, cache);
  CHECK(history_csv(a.history, false) == history_csv(b.history, false));
  const auto seg = train(cfg, quick(2), cache);
  CHECK(history_csv(a.history, false) != history_csv(seg.history, false));

  nlohmann::json j = t;
  CHECK(j["balance_level"] == "recording");
  CHECK(j.get<TrainConfig>().balance_level == BalanceLevel::recording);
  j["balance_level"] = "participant";
  CHECK_THROWS_AS(j.get<TrainConfig>(), ValidationError);
}
