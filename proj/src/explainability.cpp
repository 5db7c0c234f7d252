#include "daam/explainability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace daam {

ImportanceMap importance_factor(const Matrix& gate) {
  if (gate.size() == 0) throw ValidationError("importance_factor: empty map");
  if (!gate.allFinite()) throw ValidationError("importance_factor: non-finite values");
  const double lo = gate.minCoeff(), hi = gate.maxCoeff();
  if (!(hi > lo)) throw ValidationError("constant attention map");
  ImportanceMap out;
  out.values = (gate.array() - lo) / (hi - lo);
  // Pin the endpoints against rounding in the division.
  for (Eigen::Index i = 0; i < gate.size(); ++i) {
    if (gate.data()[i] == lo) out.values.data()[i] = 0.0;
    if (gate.data()[i] == hi) out.values.data()[i] = 1.0;
  }
  return out;
}

Matrix average_heatmap(const std::vector<Matrix>& maps) {
  if (maps.empty()) throw ValidationError("average_heatmap: no maps");
  Matrix sum = Matrix::Zero(maps.front().rows(), maps.front().cols());
  for (const auto& m : maps) {
    if (m.rows() != sum.rows() || m.cols() != sum.cols()) throw ValidationError("average_heatmap: shape mismatch");
    sum += m;
  }
  return sum / static_cast<double>(maps.size());
}

BinTable mel_bin_table(const SpectrogramConfig& cfg) {
  cfg.validate();
  const auto edges = mel_band_edges(cfg);
  BinTable bins;
  for (int m = 0; m < cfg.n_mels; ++m) bins.push_back({m, edges[m], edges[m + 1], edges[m + 2]});
  return bins;
}

void write_bin_table(const std::filesystem::path& path, const BinTable& bins) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "index,lower_hz,center_hz,upper_hz\n";
  char buf[128];
  for (const auto& b : bins) {
    std::snprintf(buf, sizeof buf, "%d,%.2f,%.2f,%.2f\n", b.index, b.lower_hz, b.center_hz, b.upper_hz);
    f << buf;
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<std::filesystem::path> export_heatmap(const ImportanceMap& map, const std::filesystem::path& stem) {
  const auto& v = map.values;
  std::filesystem::path csv = stem, pgm = stem;
  csv += ".csv";
  pgm += ".pgm";

  std::string text;
  char buf[32];
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      std::snprintf(buf, sizeof buf, c ? ",%.6f" : "%.6f", v(r, c));
      text += buf;
    }
    text += '\n';
  }
  std::ofstream fc(csv, std::ios::binary);
  if (!fc) throw IoError("cannot write " + csv.string());
  fc << text;
  if (!fc) throw IoError("write failed for " + csv.string());

  std::ostringstream img;
  img << "P2\n" << v.cols() << ' ' << v.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      const long px = std::clamp(std::lround(255.0 * v(r, c)), 0L, 255L);
      img << (c ? " " : "") << px;
    }
    img << '\n';
  }
  std::ofstream fp(pgm, std::ios::binary);
  if (!fp) throw IoError("cannot write " + pgm.string());
  fp << img.str();
  if (!fp) throw IoError("write failed for " + pgm.string());
  return {csv, pgm};
}

Matrix load_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingInputError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) throw ValidationError(path.string() + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(path.string() + ": empty heatmap");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

Matrix load_pgm(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingInputError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P2" || w <= 0 || h <= 0 || maxval <= 0) throw ValidationError(path.string() + ": not an ASCII PGM");
  Matrix m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int v;
      if (!(f >> v)) throw ValidationError(path.string() + ": truncated pixel data");
      m(r, c) = v;
    }
  return m;
}

std::vector<RankedBin> rank_bins(const ImportanceMap& map, const BinTable& bins, int k) {
  const int n = static_cast<int>(map.values.rows());
  if (static_cast<int>(bins.size()) != n) throw ValidationError("rank_bins: bin table does not match map rows");
  if (k > n) {
    log::warn("rank_bins: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " bins, clamping");
    k = n;
  }
  k = std::max(k, 0);
  std::vector<double> means(n);
  for (int r = 0; r < n; ++r) means[r] = map.values.row(r).mean();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return means[a] > means[b]; });
  std::vector<RankedBin> out;
  for (int i = 0; i < k; ++i) {
    const int b = order[i];
    out.push_back({b, bins[b].lower_hz, bins[b].upper_hz, means[b]});
  }
  return out;
}

}  // namespace daam
