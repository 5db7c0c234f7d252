#include "daam/audio_frontend.hpp"
#include "daam/numerics.hpp"
#include "daam/wav.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <numbers>
#include <set>

using namespace daam;
namespace fs = std::filesystem;

namespace {

MelSpectrogram random_spec(int rows, int cols, std::uint64_t seed, std::string id = "r") {
  Rng rng(seed, 0);
  MelSpectrogram s;
  s.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < s.values.size(); ++i) s.values.data()[i] = 3.0 * rng.normal() - 7.0;
  s.recording_id = std::move(id);
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("daam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("frame counts") {
  SpectrogramConfig cfg;
  CHECK(frame_count(16000, cfg) == 30);
  CHECK(frame_count(1024, cfg) == 1);
  CHECK(frame_count(1023, cfg) == 0);
  CHECK(frame_count(1024 + 511, cfg) == 1);
  CHECK(frame_count(1024 + 512, cfg) == 2);
  for (std::size_t n : {1024UL, 5000UL, 16000UL, 128000UL, 99999UL}) {
    const std::vector<double> x(n, 0.0);
    CHECK(compute_mel_spectrogram(x, 16000, cfg).n_frames() == static_cast<int>((n - 1024) / 512 + 1));
  }
}

TEST_CASE("silence maps to the log floor everywhere") {
  SpectrogramConfig cfg;
  const std::vector<double> x(16000, 0.0);
  const auto spec = compute_mel_spectrogram(x, 16000, cfg);
  CHECK(spec.n_mels() == 40);
  CHECK(spec.n_frames() == 30);
  CHECK(spec.values.minCoeff() == std::log(1e-10));
  CHECK(spec.values.maxCoeff() == std::log(1e-10));
}

TEST_CASE("1 kHz sine peaks in the filter centred nearest 1 kHz") {
  SpectrogramConfig cfg;
  std::vector<double> x(16000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * std::numbers::pi * 1000.0 * i / 16000.0);

  // Filter centres straight from the mel formula.
  const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  int expected = -1;
  double best = 1e300;
  for (int m = 0; m < 40; ++m) {
    const double mel = top * (m + 1) / 41.0;
    const double hz = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    if (std::abs(hz - 1000.0) < best) {
      best = std::abs(hz - 1000.0);
      expected = m;
    }
  }
  const auto spec = compute_mel_spectrogram(x, 16000, cfg);
  for (int f = 0; f < spec.n_frames(); ++f) {
    Eigen::Index arg = 0;
    spec.values.col(f).maxCoeff(&arg);
    CHECK(arg == expected);
  }
}

TEST_CASE("mel formulas and filterbank shape") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  for (double hz : {10.0, 440.0, 1000.0, 7999.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz).epsilon(1e-12));

  SpectrogramConfig cfg;
  const auto edges = mel_band_edges(cfg);
  REQUIRE(edges.size() == 42);
  CHECK(edges.front() == 0.0);
  CHECK(edges.back() == 8000.0);
  const Matrix fb = mel_filterbank(cfg);
  CHECK(fb.rows() == 40);
  CHECK(fb.cols() == 513);
  for (int m = 0; m < 40; ++m) {
    CHECK(fb.row(m).sum() > 0.0);
    CHECK(fb.row(m).minCoeff() >= 0.0);
    CHECK(fb.row(m).maxCoeff() <= 1.0);
  }
  for (int m = 0; m + 1 < 40; ++m) CHECK(fb.row(m).cwiseMin(fb.row(m + 1)).sum() > 0.0);
}

TEST_CASE("periodic Hann window") {
  const auto w = hann_window(8);
  CHECK(w[0] == 0.0);
  CHECK(w[4] == doctest::Approx(1.0));
  CHECK(w[2] == doctest::Approx(0.5));
  CHECK(w[1] == doctest::Approx(w[7]));
}

TEST_CASE("input errors") {
  SpectrogramConfig cfg;
  const std::vector<double> short_x(1000, 0.0), ok(2000, 0.0);
  try {
    compute_mel_spectrogram(short_x, 16000, cfg);
    FAIL("expected error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("1024") != std::string::npos);
  }
  CHECK_THROWS_AS(compute_mel_spectrogram(ok, 8000, cfg), ValidationError);
  SpectrogramConfig bad;
  bad.fmax = 9000;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = {};
  bad.hop_len = 2048;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("z-normalization statistics and idempotence") {
  const auto s = random_spec(40, 300, 1);
  const auto z = z_normalize(s);
  const double n = static_cast<double>(z.values.size());
  const double mean = z.values.sum() / n;
  const double sd = std::sqrt((z.values.array() - mean).square().sum() / n);
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(sd - 1.0) < 1e-6);
  CHECK((z_normalize(z).values - z.values).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("constant recordings normalize to zeros with a warning") {
  MelSpectrogram s;
  s.values = Matrix::Constant(40, 10, -3.0);
  log::WarningCapture warnings;
  const auto z = z_normalize(s);
  CHECK(z.values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(warnings.messages().size() == 1);
}

TEST_CASE("crop to the shortest recording") {
  std::vector<MelSpectrogram> specs{random_spec(40, 500, 1), random_spec(40, 300, 2), random_spec(40, 420, 3)};
  const auto cropped = crop_to_min_frames(specs);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(cropped[i].n_frames() == 300);
    CHECK(cropped[i].values == specs[i].values.leftCols(300));
  }
  const auto single = crop_to_min_frames({specs[0]});
  CHECK(single[0].values == specs[0].values);
  std::vector<MelSpectrogram> permuted{specs[2], specs[0], specs[1]};
  for (const auto& s : crop_to_min_frames(permuted)) CHECK(s.n_frames() == 300);
  CHECK_THROWS_AS(crop_to_min_frames({}), ValidationError);
}

TEST_CASE("segmentation") {
  CHECK(segment(random_spec(40, 500, 1), 0).size() == 4);
  CHECK(segment(random_spec(40, 240, 1), 1).size() == 2);
  {
    log::WarningCapture warnings;
    CHECK(segment(random_spec(40, 119, 1), 1).empty());
    CHECK(warnings.messages().size() == 1);
  }
  const auto spec = random_spec(40, 500, 4, "abc");
  const auto segs = segment(spec, 1);
  Matrix joined(40, 480);
  for (std::size_t k = 0; k < segs.size(); ++k) {
    CHECK(segs[k].values.cols() == kSegmentFrames);
    CHECK(segs[k].segment_index == static_cast<int>(k));
    CHECK(segs[k].recording_id == "abc");
    CHECK(segs[k].label == 1);
    joined.middleCols(120 * k, 120) = segs[k].values;
  }
  CHECK(joined == spec.values.leftCols(480));
}

TEST_CASE("balanced subsampling") {
  std::vector<Segment> segs;
  for (int i = 0; i < 140; ++i) {
    Segment s;
    s.values = Matrix::Constant(1, 1, i);
    s.label = i < 100 ? 0 : 1;
    s.segment_index = i;
    segs.push_back(s);
  }
  const auto a = subsample_balance(segs, 9), b = subsample_balance(segs, 9), c = subsample_balance(segs, 10);
  int d = 0, nd = 0;
  std::set<int> seen;
  for (const auto& s : a) {
    (s.label ? d : nd)++;
    seen.insert(s.segment_index);
    CHECK(s.values(0, 0) == s.segment_index);
  }
  CHECK(d == 40);
  CHECK(nd == 40);
  CHECK(seen.size() == 80);
  std::vector<int> ia, ib, ic;
  for (const auto& s : a) ia.push_back(s.segment_index);
  for (const auto& s : b) ib.push_back(s.segment_index);
  for (const auto& s : c) ic.push_back(s.segment_index);
  CHECK(ia == ib);
  CHECK(ia != ic);

  std::vector<Segment> few(segs.begin() + 90, segs.end());  // 10 ND + 40 D
  CHECK(subsample_balance(few, 1).size() == 50);
}

TEST_CASE("feature file byte layout") {
  const auto dir = temp_dir("feat");
  Matrix m(2, 3);
  m << 1.0, -2.5, 0.125, 3.0, 1e-3, -7.0;
  write_feature_file(dir / "x.daamfeat", m);
  std::ifstream f(dir / "x.daamfeat", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 8 + 12 + 6 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "DAAMFEAT");
  auto u32 = [&](int at) { return bytes[at] | bytes[at + 1] << 8 | bytes[at + 2] << 16 | bytes[at + 3] << 24; };
  CHECK(u32(8) == 1);
  CHECK(u32(12) == 2);
  CHECK(u32(16) == 3);
  float second;
  std::memcpy(&second, bytes.data() + 24, 4);
  CHECK(second == -2.5f);
  const Matrix back = read_feature_file(dir / "x.daamfeat");
  CHECK(back.rows() == 2);
  CHECK((back - m).cwiseAbs().maxCoeff() < 1e-7);
  CHECK_THROWS_AS(read_feature_file(dir / "missing.daamfeat"), MissingInputError);
}

TEST_CASE("wav round trip") {
  const auto dir = temp_dir("wav");
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * std::sin(0.01 * i);
  wav::write(dir / "a.wav", x, 16000);
  const auto a = wav::read(dir / "a.wav");
  CHECK(a.sample_rate == 16000);
  REQUIRE(a.samples.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(a.samples[i] - x[i]) < 1.0 / 32767);
}
