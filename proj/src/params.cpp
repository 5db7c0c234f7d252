#include "daam/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

namespace daam {

Eigen::Map<Matrix> Tensor::mat() {
  const Eigen::Index rows = shape.size() >= 2 ? shape[0] : 1;
  return {data.data(), rows, static_cast<Eigen::Index>(data.size()) / rows};
}

Eigen::Map<const Matrix> Tensor::mat() const {
  const Eigen::Index rows = shape.size() >= 2 ? shape[0] : 1;
  return {data.data(), rows, static_cast<Eigen::Index>(data.size()) / rows};
}

Tensor& ModelParams::add(std::string name, std::vector<int> shape) {
  for (const auto& t : tensors)
    if (t.name == name) throw ValidationError("duplicate tensor name " + name);
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  tensors.push_back(Tensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  return tensors.back();
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return i;
  throw ValidationError("no tensor named " + std::string(name));
}

Tensor& ModelParams::at(std::string_view name) { return tensors[index_of(name)]; }
const Tensor& ModelParams::at(std::string_view name) const { return tensors[index_of(name)]; }

bool ModelParams::all_finite() const {
  for (const auto& t : tensors)
    for (double v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  z.architecture = architecture;
  z.config = config;
  z.seed = seed;
  z.tensors.reserve(tensors.size());
  for (const auto& t : tensors) z.tensors.push_back(Tensor{t.name, t.shape, std::vector<double>(t.size(), 0.0)});
  return z;
}

std::size_t count_parameters(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& t : p.tensors) n += t.size();
  return n;
}

void round_to_f32(ModelParams& p) {
  for (auto& t : p.tensors)
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

namespace {

constexpr char kMagic[8] = {'D', 'A', 'A', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
  nlohmann::json header;
  header["architecture"] = p.architecture;
  header["config"] = p.config;
  header["seed"] = p.seed;
  auto& table = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : p.tensors) {
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.size()}});
    offset += 4 * t.size();
  }
  const std::string text = header.dump();

  std::string out(kMagic, 8);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : p.tensors)
    for (double v : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingInputError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw ValidationError(where + ": not a checkpoint");
  if (get_le<std::uint32_t>(bytes.data() + 8) != 1) throw ValidationError(where + ": unsupported checkpoint version");
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 12);
  if (20 + header_len > bytes.size()) throw ValidationError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + ": bad header JSON: " + e.what());
  }
  const unsigned char* payload = bytes.data() + 20 + header_len;
  const std::size_t payload_len = bytes.size() - 20 - header_len;

  ModelParams p;
  try {
    p.architecture = header.at("architecture").get<std::string>();
    p.config = header.at("config");
    p.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& entry : header.at("tensors")) {
      Tensor& t = p.add(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
      const auto off = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (count != t.size() || off + 4 * count > payload_len) throw ValidationError(where + ": bad tensor table entry " + t.name);
      for (std::size_t i = 0; i < count; ++i) {
        t.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload + off + 4 * i));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + ": malformed header: " + e.what());
  }
  return p;
}

}  // namespace daam
