#include "daam/audio_frontend.hpp"
#include "daam/dataset.hpp"
#include "daam/wav.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace daam;
namespace fs = std::filesystem;

namespace {

const std::string kHeader = "participant_id,split,phq8_score,raw_label,gender,audio_path,excluded,exclusion_reason\n";

fs::path template_path() { return fs::path(DAAM_SOURCE_DIR) / "data" / "daic_woz_template.csv"; }

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

double spectral_centroid(const std::vector<double>& x) {
  SpectrogramConfig cfg;
  const Matrix power = power_stft(x, cfg);  // frames x bins
  double num = 0, den = 0;
  for (Eigen::Index f = 0; f < power.rows(); ++f) {
    for (Eigen::Index k = 0; k < power.cols(); ++k) {
      const double hz = k * 16000.0 / cfg.window_len;
      num += hz * power(f, k);
      den += power(f, k);
    }
  }
  return num / den;
}

}  // namespace

TEST_CASE("parse a well-formed manifest") {
  const std::string text = kHeader +
                           "1,train,3,0,female,a.wav,false,\n"
                           "2,dev,15,1,male,b.wav,false,\n"
                           "3,test,,0,unknown,\"dir,x/c.wav\",true,\"noisy, long\"\n";
  const Manifest m = parse_manifest(text);
  REQUIRE(m.recordings.size() == 3);
  CHECK(m.recordings[0].phq8_score == 3);
  CHECK(m.recordings[1].split == Split::dev);
  CHECK(m.recordings[1].gender == Gender::male);
  CHECK(!m.recordings[2].phq8_score.has_value());
  CHECK(m.recordings[2].audio_path == "dir,x/c.wav");
  CHECK(m.recordings[2].excluded);
  CHECK(m.recordings[2].exclusion_reason == "noisy, long");
  CHECK(m.recordings[1].corrected_label == 1);
}

TEST_CASE("manifest errors name the line and the allowed values") {
  try {
    parse_manifest(kHeader + "1,train,3,0,female,a.wav,false,\n2,validation,3,0,female,b.wav,false,\n");
    FAIL("expected error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("train") != std::string::npos);
    CHECK(msg.find("dev") != std::string::npos);
    CHECK(msg.find("test") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(parse_manifest(kHeader + "1,train,3,0,female,a.wav,false,\n1,dev,3,0,female,b.wav,false,\n"),
                       doctest::Contains("duplicate participant_id"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(kHeader + "1,train,3,0,female,a.wav\n"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(kHeader + "1,train,30,0,female,a.wav,false,\n"), ValidationError);
  CHECK_THROWS_AS(parse_manifest(kHeader + "x,train,3,0,female,a.wav,false,\n"), ValidationError);
  CHECK_THROWS_AS(parse_manifest("id,split\n"), ValidationError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.csv"), MissingInputError);
}

TEST_CASE("optional trim column") {
  const std::string text =
      "participant_id,split,phq8_score,raw_label,gender,audio_path,excluded,exclusion_reason,trim_start_s\n"
      "1,train,3,0,female,a.wav,false,,12.5\n"
      "2,train,3,0,female,b.wav,false,,\n";
  const Manifest m = parse_manifest(text);
  CHECK(m.recordings[0].trim_start_s == 12.5);
  CHECK(m.recordings[1].trim_start_s == 0.0);
}

TEST_CASE("template manifest: size, corrections, split counts") {
  const Manifest raw = load_manifest(template_path());
  CHECK(raw.recordings.size() == 189);

  const Manifest fixed = apply_label_corrections(raw);
  int changed = 0;
  for (std::size_t i = 0; i < raw.recordings.size(); ++i) {
    if (raw.recordings[i].corrected_label != fixed.recordings[i].corrected_label) {
      ++changed;
      CHECK(raw.recordings[i].corrected_label == 0);
      CHECK(fixed.recordings[i].corrected_label == 1);
    }
  }
  CHECK(changed == 14);
  for (const auto& [id, score] : kLabelCorrections) {
    const auto* r = fixed.find(id);
    REQUIRE(r != nullptr);
    CHECK(r->corrected_label == 1);
    CHECK(r->phq8_score == score);
  }
  CHECK(fixed.find(320)->phq8_score == 11);

  CHECK(split_counts(fixed, "dev") == std::pair{12, 23});
  CHECK(split_counts(fixed, "test") == std::pair{12, 35});
  const auto [dt, ndt] = split_counts(fixed, Split::train);
  int usable = 0;
  for (const auto& r : fixed.recordings) usable += !r.excluded;
  CHECK(dt + ndt + 12 + 23 + 12 + 35 == usable);
  CHECK_THROWS_AS(split_counts(fixed, "validation"), ValidationError);

  int excluded = 0;
  for (const auto& r : fixed.recordings) excluded += r.excluded;
  CHECK(excluded == 9);
  for (int id : {373, 444, 451, 458, 480, 318, 321, 341, 362}) {
    REQUIRE(fixed.find(id));
    CHECK(fixed.find(id)->excluded);
    CHECK(!fixed.find(id)->exclusion_reason.empty());
  }
}

TEST_CASE("corrections are idempotent and leave others alone") {
  const Manifest once = apply_label_corrections(load_manifest(template_path()));
  const Manifest twice = apply_label_corrections(once);
  for (std::size_t i = 0; i < once.recordings.size(); ++i) {
    CHECK(once.recordings[i].corrected_label == twice.recordings[i].corrected_label);
  }
  const Manifest small = parse_manifest(kHeader + "500,train,5,0,female,a.wav,false,\n");
  log::WarningCapture warnings;
  const Manifest fixed = apply_label_corrections(small);
  CHECK(fixed.recordings[0].corrected_label == 0);
  CHECK(warnings.messages().size() == 1);
  CHECK(split_counts(Manifest{}, Split::dev) == std::pair{0, 0});
}

TEST_CASE("validate reports inconsistencies") {
  const Manifest raw = load_manifest(template_path());
  bool saw_uncorrected = false;
  for (const auto& line : validate_manifest(raw)) saw_uncorrected |= line.find("label-correction table") != std::string::npos;
  CHECK(saw_uncorrected);

  const auto lines = validate_manifest(apply_label_corrections(raw));
  bool note = false, mismatch = false;
  for (const auto& l : lines) {
    note |= l.find("76 ND / 31 D") != std::string::npos;
    mismatch |= l.find("implies label") != std::string::npos;
  }
  CHECK(note);
  CHECK(!mismatch);
}

TEST_CASE("manifest write/read round trip") {
  const Manifest m = load_manifest(template_path());
  const fs::path out = fs::temp_directory_path() / "daam_test_manifest.csv";
  write_manifest(out, m);
  CHECK(file_bytes(out) == file_bytes(template_path()));
}

TEST_CASE("synthetic corpus") {
  SynthConfig cfg;
  cfg.n_per_class = 10;
  cfg.duration_s = 2.0;
  const fs::path a = fs::temp_directory_path() / "daam_test_synth_a";
  const fs::path b = fs::temp_directory_path() / "daam_test_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const Manifest ma = generate_synthetic_dataset(cfg, a);
  generate_synthetic_dataset(cfg, b);

  REQUIRE(ma.recordings.size() == 20);
  int train = 0, dev = 0;
  for (const auto& r : ma.recordings) (r.split == Split::train ? train : dev)++;
  CHECK(train == 14);
  CHECK(dev == 6);
  for (const auto& r : ma.recordings) CHECK(file_bytes(a / r.audio_path) == file_bytes(b / r.audio_path));
  CHECK(file_bytes(a / "manifest.csv") == file_bytes(b / "manifest.csv"));
  CHECK(load_manifest(a / "manifest.csv").recordings.size() == 20);

  const auto audio = wav::read(a / ma.recordings[0].audio_path);
  CHECK(audio.sample_rate == 16000);
  CHECK(audio.samples.size() == 32000);

  double c0 = 0, c1 = 0;
  for (const auto& r : ma.recordings) {
    const double c = spectral_centroid(wav::read(a / r.audio_path).samples);
    (r.raw_label ? c1 : c0) += c / 10.0;
  }
  CHECK(c1 > c0);

  SynthConfig other = cfg;
  other.seed = 8;
  CHECK(synthesize_recording(other, 1000, 0) != synthesize_recording(cfg, 1000, 0));
  CHECK(synthesize_recording(cfg, 1000, 0) == synthesize_recording(cfg, 1000, 0));
}

TEST_CASE("synthetic config validation") {
  SynthConfig c;
  c.class1_band = {300.0, 600.0};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.duration_s = 0.01;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.class1_band = {1500.0, 9000.0};
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
