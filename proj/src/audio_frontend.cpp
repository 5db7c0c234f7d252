#include "daam/audio_frontend.hpp"

#include "daam/numerics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>

namespace daam {

void SpectrogramConfig::validate() const {
  if (!(hop_len > 0 && window_len >= hop_len)) throw ValidationError("spectrogram: need window_len >= hop_len > 0");
  if (n_mels < 1) throw ValidationError("spectrogram: n_mels must be >= 1");
  if (sample_rate <= 0) throw ValidationError("spectrogram: sample_rate must be positive");
  if (!(fmin >= 0 && fmax > fmin && fmax <= sample_rate / 2.0)) {
    throw ValidationError("spectrogram: need 0 <= fmin < fmax <= sample_rate / 2");
  }
  if (!(log_floor > 0)) throw ValidationError("spectrogram: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_edges(const SpectrogramConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  // Pin the endpoints so the table reports fmin/fmax exactly.
  edges.front() = cfg.fmin;
  edges.back() = cfg.fmax;
  return edges;
}

Matrix mel_filterbank(const SpectrogramConfig& cfg) {
  const int n_bins = cfg.window_len / 2 + 1;
  const auto edges = mel_band_edges(cfg);
  Matrix fb = Matrix::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lower = edges[m], center = edges[m + 1], upper = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.window_len;
      double w = 0.0;
      if (f > lower && f <= center) {
        w = (f - lower) / (center - lower);
      } else if (f > center && f < upper) {
        w = (upper - f) / (upper - center);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

namespace {

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

Matrix power_stft(std::span<const double> samples, const SpectrogramConfig& cfg) {
  const int n = cfg.window_len;
  const int n_bins = n / 2 + 1;
  const int frames = frame_count(samples.size(), cfg);
  Matrix power(n_bins, frames);
  if (frames == 0) return power;

  std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
  std::unique_ptr<fftw_complex, FftwFree> out(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_bins)));
  std::unique_ptr<fftw_plan_s, FftwPlanDeleter> plan(fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE));
  const auto window = hann_window(n);

  for (int t = 0; t < frames; ++t) {
    const double* frame = samples.data() + static_cast<std::size_t>(t) * cfg.hop_len;
    for (int i = 0; i < n; ++i) in.get()[i] = frame[i] * window[i];
    fftw_execute(plan.get());
    for (int k = 0; k < n_bins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      power(k, t) = re * re + im * im;
    }
  }
  return power;
}

MelSpectrogram compute_mel_spectrogram(std::span<const double> samples, int sample_rate, const SpectrogramConfig& cfg,
                                       std::string recording_id) {
  cfg.validate();
  if (sample_rate != cfg.sample_rate) {
    throw ValidationError("audio sample rate " + std::to_string(sample_rate) + " Hz does not match configured " +
                          std::to_string(cfg.sample_rate) + " Hz (no resampling is performed)");
  }
  if (samples.size() < static_cast<std::size_t>(cfg.window_len)) {
    throw ValidationError("audio too short: " + std::to_string(samples.size()) + " samples, need at least " +
                          std::to_string(cfg.window_len));
  }
  const Matrix power = power_stft(samples, cfg);
  const Matrix mel = mel_filterbank(cfg) * power;
  MelSpectrogram spec;
  spec.values = mel.unaryExpr([&](double v) { return std::log(std::max(v, cfg.log_floor)); });
  spec.recording_id = std::move(recording_id);
  spec.config = cfg;
  return spec;
}

MelSpectrogram z_normalize(const MelSpectrogram& spec) {
  if (spec.values.size() == 0) throw ValidationError("z_normalize: empty spectrogram");
  const double n = static_cast<double>(spec.values.size());
  const double mean = spec.values.sum() / n;
  const double var = (spec.values.array() - mean).square().sum() / n;
  const double sd = std::sqrt(var);
  MelSpectrogram out = spec;
  if (sd < 1e-12) {
    log::warn("z_normalize: constant spectrogram '" + spec.recording_id + "', output set to zeros");
    out.values.setZero();
    return out;
  }
  out.values = (spec.values.array() - mean) / sd;
  return out;
}

std::vector<MelSpectrogram> crop_to_min_frames(std::vector<MelSpectrogram> specs) {
  if (specs.empty()) throw ValidationError("crop_to_min_frames: empty list");
  int t_min = specs.front().n_frames();
  for (const auto& s : specs) t_min = std::min(t_min, s.n_frames());
  for (auto& s : specs) {
    if (s.n_frames() != t_min) s.values = Matrix(s.values.leftCols(t_min));
  }
  return specs;
}

std::vector<Segment> segment(const MelSpectrogram& spec, int label, int seg_len) {
  if (seg_len <= 0) throw ValidationError("segment: length must be positive");
  const int n = spec.n_frames() / seg_len;
  if (n == 0) {
    log::warn("segment: recording '" + spec.recording_id + "' has " + std::to_string(spec.n_frames()) +
              " frames, fewer than one segment of " + std::to_string(seg_len));
  }
  std::vector<Segment> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    out.push_back(Segment{Matrix(spec.values.middleCols(i * seg_len, seg_len)), spec.recording_id, label, i});
  }
  return out;
}

std::vector<std::size_t> balanced_indices(std::span<const int> labels, std::uint64_t seed, std::uint64_t stream) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  std::vector<char> keep(labels.size(), 0);
  for (auto i : pos) keep[i] = 1;
  if (neg.size() <= pos.size()) {
    for (auto i : neg) keep[i] = 1;
  } else {
    Rng rng(seed, stream);
    // Partial Fisher-Yates: the first pos.size() entries are a uniform sample.
    for (std::size_t i = 0; i < pos.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(neg.size() - i));
      std::swap(neg[i], neg[j]);
      keep[neg[i]] = 1;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (keep[i]) out.push_back(i);
  return out;
}

std::vector<Segment> subsample_balance(const std::vector<Segment>& segments, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(segments.size());
  for (const auto& s : segments) labels.push_back(s.label);
  std::vector<Segment> out;
  for (auto i : balanced_indices(labels, seed)) out.push_back(segments[i]);
  return out;
}

namespace {

constexpr char kFeatMagic[8] = {'D', 'A', 'A', 'M', 'F', 'E', 'A', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const Matrix& values) {
  std::string out(kFeatMagic, 8);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(values.rows()));
  put_u32(out, static_cast<std::uint32_t>(values.cols()));
  out.reserve(out.size() + 4 * values.size());
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(values(r, c))));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write feature file " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Matrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("cannot open feature file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kFeatMagic, 8) != 0) {
    throw ValidationError(path.string() + ": not a DAAMFEAT file");
  }
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != 1) throw ValidationError(path.string() + ": unsupported feature version " + std::to_string(version));
  const std::uint32_t rows = get_u32(bytes.data() + 12);
  const std::uint32_t cols = get_u32(bytes.data() + 16);
  if (bytes.size() != 20 + 4ull * rows * cols) throw ValidationError(path.string() + ": size does not match header");
  Matrix m(rows, cols);
  const unsigned char* p = bytes.data() + 20;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c, p += 4) m(r, c) = std::bit_cast<float>(get_u32(p));
  return m;
}

}  // namespace daam
