#include "daam/models.hpp"

#include <cmath>
#include <sstream>

namespace daam {

std::string_view to_string(Architecture a) { return a == Architecture::cnnlstm ? "cnnlstm" : "transformer"; }

Architecture parse_architecture(std::string_view s) {
  if (s == "cnnlstm") return Architecture::cnnlstm;
  if (s == "transformer") return Architecture::transformer;
  throw ValidationError("unknown architecture '" + std::string(s) + "' (allowed: cnnlstm, transformer)");
}

void ModelConfig::validate() const {
  if (n_features < 1 || seg_len < 1) throw ValidationError("model: input dimensions must be positive");
  if (daam.n_features != n_features) throw ValidationError("model: DAAM feature count differs from input rows");
  daam.validate();
  if (arch == Architecture::cnnlstm) {
    const auto& c = cnnlstm;
    if (c.conv_channels < 1 || c.lstm_layers < 1 || c.lstm_hidden < 1) throw ValidationError("cnnlstm: sizes must be >= 1");
    if (c.conv_kernel_time < 1 || c.conv_kernel_time % 2 == 0) throw ValidationError("cnnlstm: time kernel must be odd");
    if (c.pool < 1 || c.pool > seg_len) throw ValidationError("cnnlstm: pool size out of range");
  } else {
    const auto& t = transformer;
    if (t.n_heads < 1 || seg_len % t.n_heads != 0) {
      throw ValidationError("transformer: d_model " + std::to_string(seg_len) + " not divisible by " +
                            std::to_string(t.n_heads) + " heads");
    }
    if (t.d_feedforward < 1 || t.n_layers < 1) throw ValidationError("transformer: sizes must be >= 1");
    if (!(t.dropout >= 0 && t.dropout < 1)) throw ValidationError("transformer: dropout must be in [0, 1)");
  }
}

ModelConfig ModelConfig::full(Architecture arch) {
  ModelConfig c;
  c.arch = arch;
  return c;
}

ModelConfig ModelConfig::reduced(Architecture arch) {
  ModelConfig c = full(arch);
  c.cnnlstm.conv_channels = 32;
  c.cnnlstm.lstm_layers = 2;
  c.cnnlstm.lstm_hidden = 32;
  c.transformer.n_layers = 1;
  c.transformer.d_feedforward = 256;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"arch", to_string(c.arch)},
       {"n_features", c.n_features},
       {"seg_len", c.seg_len},
       {"daam",
        {{"n_heads", c.daam.n_heads}, {"n_gaussians", c.daam.n_gaussians}, {"variance_floor", c.daam.variance_floor}}}};
  if (c.arch == Architecture::cnnlstm) {
    j["cnnlstm"] = {{"conv_channels", c.cnnlstm.conv_channels},
                    {"conv_kernel_time", c.cnnlstm.conv_kernel_time},
                    {"pool", c.cnnlstm.pool},
                    {"lstm_layers", c.cnnlstm.lstm_layers},
                    {"lstm_hidden", c.cnnlstm.lstm_hidden}};
  } else {
    j["transformer"] = {{"n_heads", c.transformer.n_heads},
                        {"d_feedforward", c.transformer.d_feedforward},
                        {"n_layers", c.transformer.n_layers},
                        {"dropout", c.transformer.dropout},
                        {"positional_encoding", c.transformer.positional_encoding}};
  }
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    c.arch = parse_architecture(j.at("arch").get<std::string>());
    c.n_features = j.at("n_features").get<int>();
    c.seg_len = j.at("seg_len").get<int>();
    const auto& d = j.at("daam");
    c.daam.n_features = c.n_features;
    c.daam.n_heads = d.at("n_heads").get<int>();
    c.daam.n_gaussians = d.at("n_gaussians").get<int>();
    c.daam.variance_floor = d.value("variance_floor", 1e-8);
    if (c.arch == Architecture::cnnlstm) {
      const auto& k = j.at("cnnlstm");
      c.cnnlstm.conv_channels = k.at("conv_channels").get<int>();
      c.cnnlstm.conv_kernel_time = k.at("conv_kernel_time").get<int>();
      c.cnnlstm.pool = k.at("pool").get<int>();
      c.cnnlstm.lstm_layers = k.at("lstm_layers").get<int>();
      c.cnnlstm.lstm_hidden = k.at("lstm_hidden").get<int>();
    } else {
      const auto& k = j.at("transformer");
      c.transformer.n_heads = k.at("n_heads").get<int>();
      c.transformer.d_feedforward = k.at("d_feedforward").get<int>();
      c.transformer.n_layers = k.at("n_layers").get<int>();
      c.transformer.dropout = k.at("dropout").get<double>();
      c.transformer.positional_encoding = k.value("positional_encoding", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

namespace {

std::string layer_prefix(int l) { return "encoder.layers." + std::to_string(l) + "."; }

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

ModelParams init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.architecture = std::string(to_string(cfg.arch));
  p.config = cfg;
  p.seed = seed;

  const DaamParams d = DaamParams::identity(cfg.daam);
  p.add("daam.delta", {cfg.daam.n_heads, cfg.daam.n_gaussians}).mat() = d.delta;
  p.add("daam.rho", {cfg.daam.n_heads, cfg.daam.n_gaussians}).mat() = d.rho;

  // (tensor name, fan_in) for every uniformly initialized tensor, in order.
  std::vector<std::pair<std::string, int>> uniform;
  if (cfg.arch == Architecture::cnnlstm) {
    const auto& c = cfg.cnnlstm;
    const int fan_conv = cfg.n_features * c.conv_kernel_time;
    p.add("conv.weight", {c.conv_channels, 1, cfg.n_features, c.conv_kernel_time});
    p.add("conv.bias", {c.conv_channels});
    uniform.push_back({"conv.weight", fan_conv});
    uniform.push_back({"conv.bias", fan_conv});
    for (int l = 0; l < c.lstm_layers; ++l) {
      const int in = l == 0 ? c.conv_channels : c.lstm_hidden;
      const std::string s = std::to_string(l);
      p.add("lstm.weight_ih_l" + s, {4 * c.lstm_hidden, in});
      p.add("lstm.weight_hh_l" + s, {4 * c.lstm_hidden, c.lstm_hidden});
      p.add("lstm.bias_l" + s, {4 * c.lstm_hidden});
      for (const char* n : {"lstm.weight_ih_l", "lstm.weight_hh_l", "lstm.bias_l"}) uniform.push_back({n + s, c.lstm_hidden});
    }
    p.add("fc.weight", {1, c.lstm_hidden});
    p.add("fc.bias", {1});
    uniform.push_back({"fc.weight", c.lstm_hidden});
    uniform.push_back({"fc.bias", c.lstm_hidden});
  } else {
    const auto& t = cfg.transformer;
    const int d = cfg.d_model();
    for (int l = 0; l < t.n_layers; ++l) {
      const std::string pre = layer_prefix(l);
      p.add(pre + "self_attn.in_proj_weight", {3 * d, d});
      p.add(pre + "self_attn.in_proj_bias", {3 * d});
      p.add(pre + "self_attn.out_proj.weight", {d, d});
      p.add(pre + "self_attn.out_proj.bias", {d});
      p.add(pre + "linear1.weight", {t.d_feedforward, d});
      p.add(pre + "linear1.bias", {t.d_feedforward});
      p.add(pre + "linear2.weight", {d, t.d_feedforward});
      p.add(pre + "linear2.bias", {d});
      p.add(pre + "norm1.weight", {d}).data.assign(d, 1.0);
      p.add(pre + "norm1.bias", {d});
      p.add(pre + "norm2.weight", {d}).data.assign(d, 1.0);
      p.add(pre + "norm2.bias", {d});
      for (const char* n : {"self_attn.in_proj_weight", "self_attn.in_proj_bias", "self_attn.out_proj.weight",
                            "self_attn.out_proj.bias", "linear1.weight", "linear1.bias"}) {
        uniform.push_back({pre + n, d});
      }
      uniform.push_back({pre + "linear2.weight", t.d_feedforward});
      uniform.push_back({pre + "linear2.bias", t.d_feedforward});
    }
    p.add("fc.weight", {1, d});
    p.add("fc.bias", {1});
    uniform.push_back({"fc.weight", d});
    uniform.push_back({"fc.bias", d});
  }
  for (const auto& [name, fan_in] : uniform) {
    Rng rng(seed, stream_key({3, p.index_of(name)}));
    fill_uniform(p.at(name), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  }
  round_to_f32(p);
  return p;
}

ModelConfig config_of(const ModelParams& p) {
  ModelConfig c = p.config.get<ModelConfig>();
  if (std::string(to_string(c.arch)) != p.architecture) {
    throw ValidationError("checkpoint architecture tag '" + p.architecture + "' disagrees with its config");
  }
  return c;
}

DaamParams daam_params_of(const ModelParams& p) {
  return DaamParams{Matrix(p.at("daam.delta").mat()), Matrix(p.at("daam.rho").mat())};
}

// ---------------------------------------------------------------------------

Classifier::Classifier(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Classifier::check_input(const Matrix& x) const {
  if (x.rows() != cfg_.n_features || x.cols() != cfg_.seg_len) {
    throw ValidationError("model input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", expected " +
                          std::to_string(cfg_.n_features) + "x" + std::to_string(cfg_.seg_len));
  }
}

double Classifier::forward(const Matrix& x, const ModelParams& p, Rng* dropout) const {
  ForwardTape tape;
  return forward(x, p, dropout, tape);
}

double Classifier::forward(const Matrix& x, const ModelParams& p, Rng* dropout, ForwardTape& tape) const {
  check_input(x);
  tape.arch = cfg_.arch;
  if (cfg_.arch == Architecture::cnnlstm) return forward_cnnlstm(x, p, tape.cnnlstm);
  return forward_transformer(x, p, dropout, tape.transformer);
}

void Classifier::backward(const ForwardTape& tape, const ModelParams& p, double dloss_dprob, ModelParams& grads) const {
  const double prob = tape.prob();
  const double dlogit = dloss_dprob * prob * (1.0 - prob);
  if (cfg_.arch == Architecture::cnnlstm) {
    backward_cnnlstm(tape.cnnlstm, p, dlogit, grads);
  } else {
    backward_transformer(tape.transformer, p, dlogit, grads);
  }
}

Matrix Classifier::attention_gate(const Matrix& x, const ModelParams& p) const {
  check_input(x);
  return daam_forward(x, daam_params_of(p), cfg_.daam).gate;
}

namespace {

void add_daam_grads(const Matrix& x, const ModelParams& p, const DaamConfig& cfg, const Matrix& upstream, ModelParams& g) {
  const DaamGradients dg = daam_gradients(x, daam_params_of(p), cfg, upstream);
  g.at("daam.delta").mat() += dg.delta;
  g.at("daam.rho").mat() += dg.rho;
}

}  // namespace

// CNN-LSTM ------------------------------------------------------------------

double Classifier::forward_cnnlstm(const Matrix& x, const ModelParams& p, CnnLstmTape& t) const {
  const auto& c = cfg_.cnnlstm;
  const int F = cfg_.n_features, T = cfg_.seg_len, kt = c.conv_kernel_time, half = kt / 2;
  t.x = x;
  t.gated = daam_forward(x, daam_params_of(p), cfg_.daam).gated;

  // im2col, row index f * kt + j matching conv.weight [C, 1, F, kt].
  t.patches = Matrix::Zero(F * kt, T);
  for (int f = 0; f < F; ++f)
    for (int j = 0; j < kt; ++j)
      for (int tt = 0; tt < T; ++tt) {
        const int src = tt + j - half;
        if (src >= 0 && src < T) t.patches(f * kt + j, tt) = t.gated(f, src);
      }
  const auto& W = p.at("conv.weight");
  const Eigen::Map<const Matrix> Wm(W.data.data(), c.conv_channels, F * kt);
  t.conv = Wm * t.patches;
  t.conv.colwise() += p.at("conv.bias").mat().transpose().col(0);

  const int S = (T - c.pool) / c.pool + 1;
  t.pooled.resize(c.conv_channels, S);
  t.pool_arg.assign(static_cast<std::size_t>(c.conv_channels) * S, 0);
  for (int ch = 0; ch < c.conv_channels; ++ch)
    for (int s = 0; s < S; ++s) {
      int best = s * c.pool;
      double bv = std::max(t.conv(ch, best), 0.0);
      for (int j = 1; j < c.pool; ++j) {
        const double v = std::max(t.conv(ch, s * c.pool + j), 0.0);
        if (v > bv) {
          bv = v;
          best = s * c.pool + j;
        }
      }
      t.pooled(ch, s) = bv;
      t.pool_arg[static_cast<std::size_t>(ch) * S + s] = best;
    }

  const int H = c.lstm_hidden;
  t.lstm.assign(c.lstm_layers, {});
  Matrix input = t.pooled;
  for (int l = 0; l < c.lstm_layers; ++l) {
    const std::string s = std::to_string(l);
    const auto Wih = p.at("lstm.weight_ih_l" + s).mat();
    const auto Whh = p.at("lstm.weight_hh_l" + s).mat();
    const Vector b = p.at("lstm.bias_l" + s).mat().transpose();
    auto& L = t.lstm[l];
    L.input = input;
    for (Matrix* m : {&L.i, &L.f, &L.g, &L.o, &L.c, &L.h}) m->resize(H, S);
    const Matrix pre_in = Wih * input;  // 4H x S
    Vector h = Vector::Zero(H), cell = Vector::Zero(H);
    for (int step = 0; step < S; ++step) {
      const Vector z = pre_in.col(step) + Whh * h + b;
      for (int k = 0; k < H; ++k) {
        const double ig = sigmoid(z(k)), fg = sigmoid(z(H + k)), gg = std::tanh(z(2 * H + k)), og = sigmoid(z(3 * H + k));
        cell(k) = fg * cell(k) + ig * gg;
        h(k) = og * std::tanh(cell(k));
        L.i(k, step) = ig;
        L.f(k, step) = fg;
        L.g(k, step) = gg;
        L.o(k, step) = og;
      }
      L.c.col(step) = cell;
      L.h.col(step) = h;
    }
    input = L.h;
  }

  const auto fw = p.at("fc.weight").mat();
  t.logit = fw.row(0).dot(t.lstm.back().h.col(S - 1)) + p.at("fc.bias").data[0];
  t.prob = sigmoid(t.logit);
  return t.prob;
}

void Classifier::backward_cnnlstm(const CnnLstmTape& t, const ModelParams& p, double dlogit, ModelParams& g) const {
  const auto& c = cfg_.cnnlstm;
  const int F = cfg_.n_features, T = cfg_.seg_len, kt = c.conv_kernel_time, half = kt / 2;
  const int H = c.lstm_hidden;
  const int S = static_cast<int>(t.pooled.cols());

  const auto fw = p.at("fc.weight").mat();
  g.at("fc.weight").mat() += dlogit * t.lstm.back().h.col(S - 1).transpose();
  g.at("fc.bias").data[0] += dlogit;

  Matrix d_out = Matrix::Zero(H, S);
  d_out.col(S - 1) = dlogit * fw.row(0).transpose();

  for (int l = c.lstm_layers - 1; l >= 0; --l) {
    const std::string s = std::to_string(l);
    const auto Wih = p.at("lstm.weight_ih_l" + s).mat();
    const auto Whh = p.at("lstm.weight_hh_l" + s).mat();
    auto gWih = g.at("lstm.weight_ih_l" + s).mat();
    auto gWhh = g.at("lstm.weight_hh_l" + s).mat();
    auto gb = g.at("lstm.bias_l" + s).mat();
    const auto& L = t.lstm[l];

    Matrix dz(4 * H, S);
    Vector dh_next = Vector::Zero(H), dc_next = Vector::Zero(H);
    for (int step = S - 1; step >= 0; --step) {
      const Vector dh = d_out.col(step) + dh_next;
      for (int k = 0; k < H; ++k) {
        const double cell = L.c(k, step);
        const double c_prev = step > 0 ? L.c(k, step - 1) : 0.0;
        const double tc = std::tanh(cell);
        const double ig = L.i(k, step), fg = L.f(k, step), gg = L.g(k, step), og = L.o(k, step);
        const double dc = dc_next(k) + dh(k) * og * (1.0 - tc * tc);
        dz(k, step) = dc * gg * ig * (1.0 - ig);
        dz(H + k, step) = dc * c_prev * fg * (1.0 - fg);
        dz(2 * H + k, step) = dc * ig * (1.0 - gg * gg);
        dz(3 * H + k, step) = dh(k) * tc * og * (1.0 - og);
        dc_next(k) = dc * fg;
      }
      dh_next = Whh.transpose() * dz.col(step);
    }
    gWih += dz * L.input.transpose();
    if (S > 1) gWhh += dz.rightCols(S - 1) * L.h.leftCols(S - 1).transpose();
    gb += dz.rowwise().sum().transpose();
    d_out = Wih.transpose() * dz;
  }

  // d_out now holds d loss / d pooled.
  Matrix d_conv = Matrix::Zero(c.conv_channels, T);
  for (int ch = 0; ch < c.conv_channels; ++ch)
    for (int s = 0; s < S; ++s) {
      const int at = t.pool_arg[static_cast<std::size_t>(ch) * S + s];
      if (t.conv(ch, at) > 0.0) d_conv(ch, at) += d_out(ch, s);
    }

  auto& gW = g.at("conv.weight");
  Eigen::Map<Matrix> gWm(gW.data.data(), c.conv_channels, F * kt);
  gWm += d_conv * t.patches.transpose();
  g.at("conv.bias").mat() += d_conv.rowwise().sum().transpose();

  const auto& W = p.at("conv.weight");
  const Eigen::Map<const Matrix> Wm(W.data.data(), c.conv_channels, F * kt);
  const Matrix d_patches = Wm.transpose() * d_conv;
  Matrix d_gated = Matrix::Zero(F, T);
  for (int f = 0; f < F; ++f)
    for (int j = 0; j < kt; ++j)
      for (int tt = 0; tt < T; ++tt) {
        const int src = tt + j - half;
        if (src >= 0 && src < T) d_gated(f, src) += d_patches(f * kt + j, tt);
      }
  add_daam_grads(t.x, p, cfg_.daam, d_gated, g);
}

// Transformer ---------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  if (!rng || rate <= 0.0) return {};
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < rate ? 0.0 : keep;
  return m;
}

void apply_mask(Matrix& x, const Matrix& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

Matrix layer_norm(const Matrix& r, const Tensor& gamma, const Tensor& beta, Matrix& hat, Vector& inv_std) {
  const Eigen::Index n = r.rows(), d = r.cols();
  hat.resize(n, d);
  inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = r.row(i).mean();
    const double var = (r.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    hat.row(i) = (r.row(i).array() - mean) * inv_std(i);
  }
  Matrix y = hat;
  y.array().rowwise() *= gamma.mat().row(0).array();
  y.rowwise() += beta.mat().row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& hat, const Vector& inv_std, const Tensor& gamma,
                           Tensor& g_gamma, Tensor& g_beta) {
  g_gamma.mat().row(0) += (dy.array() * hat.array()).colwise().sum().matrix();
  g_beta.mat().row(0) += dy.colwise().sum();
  Matrix dhat = dy;
  dhat.array().rowwise() *= gamma.mat().row(0).array();
  Matrix dr(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dhat.row(i).mean();
    const double m2 = (dhat.row(i).array() * hat.row(i).array()).mean();
    dr.row(i) = inv_std(i) * (dhat.row(i).array() - m1 - hat.row(i).array() * m2);
  }
  return dr;
}

void add_positional_encoding(Matrix& x) {
  const Eigen::Index d = x.cols();
  for (Eigen::Index pos = 0; pos < x.rows(); ++pos)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / d);
      x(pos, i) += (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
}

}  // namespace

double Classifier::forward_transformer(const Matrix& x, const ModelParams& p, Rng* dropout, TransformerTape& t) const {
  const auto& tc = cfg_.transformer;
  const int d = cfg_.d_model(), nh = tc.n_heads, dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double rate = tc.dropout;

  t.x = x;
  t.gated = daam_forward(x, daam_params_of(p), cfg_.daam).gated;
  Matrix h = t.gated;
  if (tc.positional_encoding) add_positional_encoding(h);

  t.layers.assign(tc.n_layers, {});
  for (int l = 0; l < tc.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    auto& L = t.layers[l];
    L.input = h;
    L.qkv = h * p.at(pre + "self_attn.in_proj_weight").mat().transpose();
    L.qkv.rowwise() += p.at(pre + "self_attn.in_proj_bias").mat().row(0);
    const Eigen::Index N = h.rows();
    L.context.resize(N, d);
    L.attn.resize(nh);
    L.attn_mask.resize(nh);
    for (int hd = 0; hd < nh; ++hd) {
      const auto Q = L.qkv.middleCols(hd * dh, dh);
      const auto K = L.qkv.middleCols(d + hd * dh, dh);
      const auto V = L.qkv.middleCols(2 * d + hd * dh, dh);
      Matrix s = (Q * K.transpose()) * scale;
      for (Eigen::Index i = 0; i < N; ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp().matrix();
        s.row(i) /= s.row(i).sum();
      }
      L.attn[hd] = s;
      L.attn_mask[hd] = dropout_mask(N, N, rate, dropout);
      Matrix pd = s;
      apply_mask(pd, L.attn_mask[hd]);
      L.context.middleCols(hd * dh, dh) = pd * V;
    }
    Matrix a = L.context * p.at(pre + "self_attn.out_proj.weight").mat().transpose();
    a.rowwise() += p.at(pre + "self_attn.out_proj.bias").mat().row(0);
    L.attn_out_mask = dropout_mask(N, d, rate, dropout);
    apply_mask(a, L.attn_out_mask);
    L.x1 = layer_norm(h + a, p.at(pre + "norm1.weight"), p.at(pre + "norm1.bias"), L.norm1_hat, L.norm1_inv_std);

    L.ff_pre = L.x1 * p.at(pre + "linear1.weight").mat().transpose();
    L.ff_pre.rowwise() += p.at(pre + "linear1.bias").mat().row(0);
    L.ff_hidden = L.ff_pre.cwiseMax(0.0);
    L.ff_mask = dropout_mask(N, L.ff_pre.cols(), rate, dropout);
    apply_mask(L.ff_hidden, L.ff_mask);
    Matrix f = L.ff_hidden * p.at(pre + "linear2.weight").mat().transpose();
    f.rowwise() += p.at(pre + "linear2.bias").mat().row(0);
    L.ff_out_mask = dropout_mask(N, d, rate, dropout);
    apply_mask(f, L.ff_out_mask);
    L.x2 = layer_norm(L.x1 + f, p.at(pre + "norm2.weight"), p.at(pre + "norm2.bias"), L.norm2_hat, L.norm2_inv_std);
    h = L.x2;
  }

  t.pooled = h.colwise().mean().transpose();
  t.logit = p.at("fc.weight").mat().row(0).dot(t.pooled) + p.at("fc.bias").data[0];
  t.prob = sigmoid(t.logit);
  return t.prob;
}

void Classifier::backward_transformer(const TransformerTape& t, const ModelParams& p, double dlogit, ModelParams& g) const {
  const auto& tc = cfg_.transformer;
  const int d = cfg_.d_model(), nh = tc.n_heads, dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index N = t.gated.rows();

  g.at("fc.weight").mat().row(0) += dlogit * t.pooled.transpose();
  g.at("fc.bias").data[0] += dlogit;
  Matrix dh_out = Matrix::Zero(N, d);
  dh_out.rowwise() += (dlogit / static_cast<double>(N)) * p.at("fc.weight").mat().row(0);

  for (int l = tc.n_layers - 1; l >= 0; --l) {
    const std::string pre = layer_prefix(l);
    const auto& L = t.layers[l];

    // x2 = LN2(x1 + drop(linear2(drop(relu(linear1(x1))))))
    Matrix dr2 = layer_norm_backward(dh_out, L.norm2_hat, L.norm2_inv_std, p.at(pre + "norm2.weight"),
                                     g.at(pre + "norm2.weight"), g.at(pre + "norm2.bias"));
    Matrix df = dr2;
    apply_mask(df, L.ff_out_mask);
    g.at(pre + "linear2.weight").mat() += df.transpose() * L.ff_hidden;
    g.at(pre + "linear2.bias").mat().row(0) += df.colwise().sum();
    Matrix dhidden = df * p.at(pre + "linear2.weight").mat();
    apply_mask(dhidden, L.ff_mask);
    dhidden.array() *= (L.ff_pre.array() > 0.0).cast<double>();
    g.at(pre + "linear1.weight").mat() += dhidden.transpose() * L.x1;
    g.at(pre + "linear1.bias").mat().row(0) += dhidden.colwise().sum();
    Matrix dx1 = dr2 + dhidden * p.at(pre + "linear1.weight").mat();

    // x1 = LN1(input + drop(out_proj(attention(input))))
    Matrix dr1 = layer_norm_backward(dx1, L.norm1_hat, L.norm1_inv_std, p.at(pre + "norm1.weight"),
                                     g.at(pre + "norm1.weight"), g.at(pre + "norm1.bias"));
    Matrix da = dr1;
    apply_mask(da, L.attn_out_mask);
    g.at(pre + "self_attn.out_proj.weight").mat() += da.transpose() * L.context;
    g.at(pre + "self_attn.out_proj.bias").mat().row(0) += da.colwise().sum();
    const Matrix dcontext = da * p.at(pre + "self_attn.out_proj.weight").mat();

    Matrix dqkv = Matrix::Zero(N, 3 * d);
    for (int hd = 0; hd < nh; ++hd) {
      const auto Q = L.qkv.middleCols(hd * dh, dh);
      const auto K = L.qkv.middleCols(d + hd * dh, dh);
      const auto V = L.qkv.middleCols(2 * d + hd * dh, dh);
      const Matrix& P = L.attn[hd];
      Matrix pd = P;
      apply_mask(pd, L.attn_mask[hd]);
      const auto dC = dcontext.middleCols(hd * dh, dh);
      dqkv.middleCols(2 * d + hd * dh, dh) += pd.transpose() * dC;
      Matrix dP = dC * V.transpose();
      apply_mask(dP, L.attn_mask[hd]);
      Matrix ds(N, N);
      for (Eigen::Index i = 0; i < N; ++i) {
        const double dot = P.row(i).dot(dP.row(i));
        ds.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
      }
      ds *= scale;
      dqkv.middleCols(hd * dh, dh) += ds * K;
      dqkv.middleCols(d + hd * dh, dh) += ds.transpose() * Q;
    }
    g.at(pre + "self_attn.in_proj_weight").mat() += dqkv.transpose() * L.input;
    g.at(pre + "self_attn.in_proj_bias").mat().row(0) += dqkv.colwise().sum();
    dh_out = dr1 + dqkv * p.at(pre + "self_attn.in_proj_weight").mat();
  }
  // Positional encoding is additive and parameter-free, so dh_out is also
  // d loss / d gated.
  add_daam_grads(t.x, p, cfg_.daam, dh_out, g);
}

// ---------------------------------------------------------------------------

double cnn_lstm_forward(const Segment& seg, const ModelParams& p, bool /*train_mode: no dropout in this model*/) {
  const Classifier model(config_of(p));
  if (model.config().arch != Architecture::cnnlstm) throw ValidationError("parameters are not a cnnlstm model");
  return model.forward(seg.values, p);
}

double transformer_forward(const Segment& seg, const ModelParams& p, Rng& dropout) {
  const Classifier model(config_of(p));
  if (model.config().arch != Architecture::transformer) throw ValidationError("parameters are not a transformer model");
  return model.forward(seg.values, p, &dropout);
}

double transformer_forward(const Segment& seg, const ModelParams& p, bool train_mode) {
  const Classifier model(config_of(p));
  if (model.config().arch != Architecture::transformer) throw ValidationError("parameters are not a transformer model");
  if (!train_mode) return model.forward(seg.values, p);
  Rng rng(p.seed, stream_key({4, static_cast<std::uint64_t>(seg.segment_index)}));
  return model.forward(seg.values, p, &rng);
}

std::optional<std::string> parameter_count_note(const ModelConfig& cfg, std::size_t count) {
  if (cfg.arch != Architecture::cnnlstm) return std::nullopt;
  const CnnLstmConfig ref;
  const auto& c = cfg.cnnlstm;
  if (cfg.n_features != 40 || c.conv_channels != ref.conv_channels || c.lstm_layers != ref.lstm_layers ||
      c.lstm_hidden != ref.lstm_hidden) {
    return std::nullopt;
  }
  std::ostringstream s;
  s << "note: cnnlstm parameter count " << count
    << " differs from the reference figure of 280K; the stated layer sizes (40x3 conv to 128 channels, "
       "3-layer LSTM with 128 hidden units) require about 4.1e5 parameters";
  return s.str();
}

}  // namespace daam
