#include "daam/dataset.hpp"

#include "daam/numerics.hpp"
#include "daam/wav.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace daam {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::string_view to_string(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    case Gender::unknown: return "unknown";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "' (allowed: train, dev, test)");
}

Gender parse_gender(std::string_view s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  if (s == "unknown" || s.empty()) return Gender::unknown;
  throw ValidationError("unknown gender '" + std::string(s) + "' (allowed: female, male, unknown)");
}

const RecordingMeta* Manifest::find(int participant_id) const {
  for (const auto& r : recordings)
    if (r.participant_id == participant_id) return &r;
  return nullptr;
}

std::vector<RecordingMeta> Manifest::usable(Split split) const {
  std::vector<RecordingMeta> out;
  for (const auto& r : recordings)
    if (r.split == split && !r.excluded) out.push_back(r);
  return out;
}

namespace {

constexpr std::string_view kHeader = "participant_id,split,phq8_score,raw_label,gender,audio_path,excluded,exclusion_reason";

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  return fields;
}

int parse_int(const std::string& s, const char* what) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError(std::string("invalid ") + what + " '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0" || s.empty()) return false;
  throw ValidationError("invalid boolean '" + s + "' (allowed: true, false)");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Manifest parse_manifest(std::string_view text, std::filesystem::path source) {
  Manifest m;
  m.source = std::move(source);
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool has_trim = false;
  if (line == std::string(kHeader) + ",trim_start_s") {
    has_trim = true;
  } else if (line != kHeader) {
    throw ValidationError("manifest header mismatch: expected '" + std::string(kHeader) + "[,trim_start_s]'");
  }
  const std::size_t n_fields = has_trim ? 9 : 8;

  std::set<int> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      auto f = split_csv_line(line);
      if (f.size() != n_fields) {
        throw ValidationError("expected " + std::to_string(n_fields) + " fields, got " + std::to_string(f.size()));
      }
      RecordingMeta r;
      r.participant_id = parse_int(f[0], "participant_id");
      r.split = parse_split(f[1]);
      if (!f[2].empty()) {
        int score = parse_int(f[2], "phq8_score");
        if (score < 0 || score > 24) throw ValidationError("phq8_score out of range 0-24: " + f[2]);
        r.phq8_score = score;
      }
      r.raw_label = parse_int(f[3], "raw_label");
      if (r.raw_label != 0 && r.raw_label != 1) throw ValidationError("raw_label must be 0 or 1");
      r.corrected_label = r.raw_label;
      r.gender = parse_gender(f[4]);
      r.audio_path = f[5];
      r.excluded = parse_bool(f[6]);
      r.exclusion_reason = f[7];
      if (has_trim && !f[8].empty()) {
        std::size_t used = 0;
        r.trim_start_s = std::stod(f[8], &used);
        if (used != f[8].size() || r.trim_start_s < 0) throw ValidationError("invalid trim_start_s '" + f[8] + "'");
      }
      if (!seen.insert(r.participant_id).second) {
        throw ValidationError("duplicate participant_id " + std::to_string(r.participant_id));
      }
      m.recordings.push_back(std::move(r));
    } catch (const std::invalid_argument&) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": invalid number");
    } catch (const ValidationError& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingInputError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str(), path);
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  const bool any_trim = std::any_of(m.recordings.begin(), m.recordings.end(),
                                    [](const RecordingMeta& r) { return r.trim_start_s != 0.0; });
  std::ostringstream out;
  out << kHeader << (any_trim ? ",trim_start_s" : "") << '\n';
  for (const auto& r : m.recordings) {
    out << r.participant_id << ',' << to_string(r.split) << ',';
    if (r.phq8_score) out << *r.phq8_score;
    out << ',' << r.raw_label << ',' << to_string(r.gender) << ',' << csv_field(r.audio_path) << ','
        << (r.excluded ? "true" : "false") << ',' << csv_field(r.exclusion_reason);
    if (any_trim) out << ',' << r.trim_start_s;
    out << '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << out.str();
}

Manifest apply_label_corrections(Manifest m) {
  std::string missing;
  int n_missing = 0;
  for (const auto& [id, score] : kLabelCorrections) {
    auto it = std::find_if(m.recordings.begin(), m.recordings.end(),
                           [id](const RecordingMeta& r) { return r.participant_id == id; });
    if (it == m.recordings.end()) {
      missing += (n_missing++ ? ", " : "") + std::to_string(id);
      continue;
    }
    it->corrected_label = 1;
  }
  if (n_missing > 0) {
    log::warn("label correction: " + std::to_string(n_missing) + " listed participant(s) not in manifest: " + missing);
  }
  return m;
}

std::pair<int, int> split_counts(const Manifest& m, Split split) {
  int d = 0, nd = 0;
  for (const auto& r : m.recordings) {
    if (r.split != split || r.excluded) continue;
    (r.corrected_label == 1 ? d : nd) += 1;
  }
  return {d, nd};
}

std::pair<int, int> split_counts(const Manifest& m, std::string_view split) { return split_counts(m, parse_split(split)); }

std::vector<std::string> validate_manifest(const Manifest& m) {
  std::vector<std::string> out;
  for (const auto& r : m.recordings) {
    if (!r.phq8_score) continue;
    const int expected = *r.phq8_score >= kDepressionThreshold ? 1 : 0;
    if (r.corrected_label != expected) {
      std::ostringstream s;
      s << "participant " << r.participant_id << ": phq8_score " << *r.phq8_score << " implies label " << expected
        << " but label is " << r.corrected_label;
      bool in_table = std::any_of(kLabelCorrections.begin(), kLabelCorrections.end(),
                                  [&](const auto& c) { return c.first == r.participant_id; });
      if (in_table) s << " (listed in the label-correction table; apply corrections)";
      out.push_back(s.str());
    }
  }
  for (const auto& [id, score] : kLabelCorrections) {
    const RecordingMeta* r = m.find(id);
    if (!r) {
      out.push_back("correction participant " + std::to_string(id) + " missing from manifest");
    } else if (r->phq8_score && *r->phq8_score != score) {
      out.push_back("correction participant " + std::to_string(id) + ": phq8_score " + std::to_string(*r->phq8_score) +
                    " differs from the correction table value " + std::to_string(score));
    }
  }

  // Published participant counts per split, (D, ND), all sessions.
  struct Published {
    Split split;
    int d, nd;
  };
  constexpr Published published[] = {{Split::train, 30, 77}, {Split::dev, 12, 23}, {Split::test, 12, 35}};
  for (const auto& p : published) {
    int d = 0, nd = 0, excluded = 0;
    for (const auto& r : m.recordings) {
      if (r.split != p.split) continue;
      (r.corrected_label == 1 ? d : nd) += 1;
      excluded += r.excluded;
    }
    if (d != p.d || nd != p.nd) {
      std::ostringstream s;
      s << "split " << to_string(p.split) << ": " << d << " D / " << nd << " ND (all sessions) differs from published "
        << p.d << " D / " << p.nd << " ND";
      out.push_back(s.str());
    }
    if (excluded > 0) {
      out.push_back("split " + std::string(to_string(p.split)) + ": " + std::to_string(excluded) +
                    " excluded session(s) not counted by split_counts");
    }
  }
  out.push_back(
      "note: the published train split is 77 ND / 30 D in the participant table but 76 ND / 31 D in the dataset "
      "description; counts here follow the table");
  return out;
}

void SynthConfig::validate(int window_len) const {
  if (n_per_class < 1) throw ValidationError("synth: n_per_class must be >= 1");
  if (sample_rate <= 0) throw ValidationError("synth: sample_rate must be positive");
  if (duration_s * sample_rate < window_len) throw ValidationError("synth: recording shorter than one STFT window");
  auto [a0, b0] = class0_band;
  auto [a1, b1] = class1_band;
  if (!(a0 > 0 && a0 < b0 && a1 > 0 && a1 < b1)) throw ValidationError("synth: bands must be positive, increasing ranges");
  if (!(b0 < a1 || b1 < a0)) throw ValidationError("synth: class bands overlap");
  if (std::max(b0, b1) >= sample_rate / 2.0) throw ValidationError("synth: band above Nyquist");
  if (tones_per_recording < 1) throw ValidationError("synth: tones_per_recording must be >= 1");
  if (noise_level < 0) throw ValidationError("synth: noise_level must be >= 0");
}

std::vector<double> synthesize_recording(const SynthConfig& cfg, int participant_id, int label) {
  Rng rng(cfg.seed, stream_key({1, static_cast<std::uint64_t>(participant_id)}));
  const auto [lo, hi] = label == 1 ? cfg.class1_band : cfg.class0_band;
  const std::size_t n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate));
  std::vector<double> x(n, 0.0);
  const double amp = 0.6 / cfg.tones_per_recording;
  for (int k = 0; k < cfg.tones_per_recording; ++k) {
    const double f = rng.uniform(lo, hi);
    const double a = amp * rng.uniform(0.5, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double w = 2.0 * std::numbers::pi * f / cfg.sample_rate;
    for (std::size_t i = 0; i < n; ++i) x[i] += a * std::sin(w * static_cast<double>(i) + phase);
  }
  for (auto& v : x) v += cfg.noise_level * rng.normal();
  return x;
}

Manifest generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest m;
  m.source = out_dir / "manifest.csv";
  const int n_train = static_cast<int>(std::lround(0.7 * cfg.n_per_class));
  for (int label = 0; label < 2; ++label) {
    std::vector<int> order(cfg.n_per_class);
    for (int i = 0; i < cfg.n_per_class; ++i) order[i] = i;
    Rng rng(cfg.seed, stream_key({2, static_cast<std::uint64_t>(label)}));
    rng.shuffle(order);
    std::vector<Split> split_of(cfg.n_per_class);
    for (int k = 0; k < cfg.n_per_class; ++k) split_of[order[k]] = k < n_train ? Split::train : Split::dev;

    for (int i = 0; i < cfg.n_per_class; ++i) {
      RecordingMeta r;
      r.participant_id = 1000 + label * cfg.n_per_class + i;
      r.split = split_of[i];
      r.raw_label = r.corrected_label = label;
      r.audio_path = "synth_" + std::to_string(r.participant_id) + ".wav";
      const auto samples = synthesize_recording(cfg, r.participant_id, label);
      wav::write(out_dir / r.audio_path, samples, static_cast<std::uint32_t>(cfg.sample_rate));
      m.recordings.push_back(std::move(r));
    }
  }
  write_manifest(m.source, m);
  return m;
}

}  // namespace daam
