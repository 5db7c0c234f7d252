#pragma once

#include "daam/audio_frontend.hpp"
#include "daam/common.hpp"
#include "daam/density_attention.hpp"
#include "daam/numerics.hpp"
#include "daam/params.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace daam {

enum class Architecture { cnnlstm, transformer };

std::string_view to_string(Architecture a);
/// Accepts "cnnlstm" or "transformer"; throws ValidationError otherwise.
Architecture parse_architecture(std::string_view s);

struct CnnLstmConfig {
  int conv_channels = 128;
  int conv_kernel_time = 3;  // frequency extent of the kernel is the full input height
  int pool = 3;              // kernel == stride
  int lstm_layers = 3;
  int lstm_hidden = 128;
};

struct TransformerConfig {
  int n_heads = 4;
  int d_feedforward = 2048;
  int n_layers = 2;
  double dropout = 0.1;
  bool positional_encoding = false;
};

/// Input geometry, DAAM gate and one architecture's layer sizes. For the
/// transformer, mel bins are tokens and the segment length is d_model.
struct ModelConfig {
  Architecture arch = Architecture::cnnlstm;
  int n_features = 40;
  int seg_len = 120;
  DaamConfig daam;
  CnnLstmConfig cnnlstm;
  TransformerConfig transformer;

  void validate() const;
  int d_model() const { return seg_len; }

  static ModelConfig full(Architecture arch);
  /// Smaller layers for desk-scale training runs; input geometry unchanged.
  static ModelConfig reduced(Architecture arch);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// DAAM delta = 0, variance = 1; weights and biases drawn from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) and rounded to f32; layer norms start
/// at gain 1, bias 0. Deterministic per seed.
ModelParams init_parameters(const ModelConfig& cfg, std::uint64_t seed);

ModelConfig config_of(const ModelParams& p);
DaamParams daam_params_of(const ModelParams& p);

struct LstmLayerTape {
  Matrix input;                  // in x S
  Matrix i, f, g, o, c, h;       // H x S
};

struct CnnLstmTape {
  Matrix x;
  Matrix gated;
  Matrix patches;                // (kt * F) x T
  Matrix conv;                   // C x T, before ReLU
  Matrix pooled;                 // C x S
  std::vector<int> pool_arg;     // C * S, absolute time index of each max
  std::vector<LstmLayerTape> lstm;
  double logit = 0.0;
  double prob = 0.0;
};

struct EncoderLayerTape {
  Matrix input;                  // N x d
  Matrix qkv;                    // N x 3d
  std::vector<Matrix> attn;      // per head, N x N softmax
  std::vector<Matrix> attn_mask; // per head dropout mask (empty in eval)
  Matrix context;                // N x d
  Matrix attn_out_mask;
  Matrix norm1_hat;
  Vector norm1_inv_std;
  Matrix x1;
  Matrix ff_pre;                 // N x dff, before ReLU
  Matrix ff_mask;
  Matrix ff_hidden;              // after ReLU and dropout
  Matrix ff_out_mask;
  Matrix norm2_hat;
  Vector norm2_inv_std;
  Matrix x2;
};

struct TransformerTape {
  Matrix x;
  Matrix gated;
  std::vector<EncoderLayerTape> layers;
  Vector pooled;
  double logit = 0.0;
  double prob = 0.0;
};

struct ForwardTape {
  Architecture arch = Architecture::cnnlstm;
  CnnLstmTape cnnlstm;
  TransformerTape transformer;
  double prob() const { return arch == Architecture::cnnlstm ? cnnlstm.prob : transformer.prob; }
};

/// Binary classifier over one n_features x seg_len segment. Dropout is active
/// only when a generator is supplied.
class Classifier {
 public:
  explicit Classifier(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  double forward(const Matrix& x, const ModelParams& p, Rng* dropout = nullptr) const;
  double forward(const Matrix& x, const ModelParams& p, Rng* dropout, ForwardTape& tape) const;

  /// Accumulates d loss / d params into grads, given d loss / d probability.
  void backward(const ForwardTape& tape, const ModelParams& p, double dloss_dprob, ModelParams& grads) const;

  /// DAAM gate for x under p (the map the explainability tools consume).
  Matrix attention_gate(const Matrix& x, const ModelParams& p) const;

 private:
  void check_input(const Matrix& x) const;
  double forward_cnnlstm(const Matrix& x, const ModelParams& p, CnnLstmTape& t) const;
  double forward_transformer(const Matrix& x, const ModelParams& p, Rng* dropout, TransformerTape& t) const;
  void backward_cnnlstm(const CnnLstmTape& t, const ModelParams& p, double dlogit, ModelParams& g) const;
  void backward_transformer(const TransformerTape& t, const ModelParams& p, double dlogit, ModelParams& g) const;

  ModelConfig cfg_;
};

double cnn_lstm_forward(const Segment& seg, const ModelParams& p, bool train_mode);
/// train_mode draws dropout masks from a stream keyed by the parameter seed.
double transformer_forward(const Segment& seg, const ModelParams& p, bool train_mode);
double transformer_forward(const Segment& seg, const ModelParams& p, Rng& dropout);

/// Note emitted alongside a parameter count that departs from the reference
/// model size (CNN-LSTM reference: 280K; the layer sizes give ~410K).
std::optional<std::string> parameter_count_note(const ModelConfig& cfg, std::size_t count);

}  // namespace daam
