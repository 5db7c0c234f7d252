#include "daam/gradcheck.hpp"

#include "daam/training.hpp"

#include <algorithm>
#include <cstdio>

namespace daam {

DaamCheckCase random_daam_case(std::uint64_t seed, std::uint64_t index, bool at_floor) {
  Rng rng(seed, stream_key({20, index}));
  DaamCheckCase c;
  c.cfg.n_heads = 1 + static_cast<int>(rng.below(3));
  c.cfg.n_gaussians = 1 + static_cast<int>(rng.below(4));
  c.cfg.n_features = c.cfg.n_heads * (1 + static_cast<int>(rng.below(3)));
  const int cols = 2 + static_cast<int>(rng.below(5));

  c.params.delta.resize(c.cfg.n_heads, c.cfg.n_gaussians);
  c.params.rho.resize(c.cfg.n_heads, c.cfg.n_gaussians);
  for (Eigen::Index i = 0; i < c.params.delta.size(); ++i) {
    c.params.delta.data()[i] = rng.uniform(-1.0, 1.0);
    c.params.rho.data()[i] = softplus_inverse(rng.uniform(0.3, 3.0));
  }
  if (at_floor) {
    // softplus(-40) is ~4e-18, so the variance equals the 1e-8 floor.
    const auto k = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(c.params.rho.size())));
    c.params.rho.data()[k] = -40.0;
    c.has_floor = true;
  }
  c.x.resize(c.cfg.n_features, cols);
  c.upstream.resize(c.cfg.n_features, cols);
  for (Eigen::Index i = 0; i < c.x.size(); ++i) {
    c.x.data()[i] = rng.normal();
    c.upstream.data()[i] = rng.uniform(-1.0, 1.0);
  }
  return c;
}

namespace {

TensorCheck compare(std::string name, const std::vector<double>& analytic, const std::vector<double>& numeric,
                    const FiniteDiffConfig& fd) {
  TensorCheck t;
  t.name = std::move(name);
  t.coordinates_checked = static_cast<int>(analytic.size());
  t.max_rel_error = relative_error(analytic, numeric, fd.abs_tol);
  t.passed = t.max_rel_error <= fd.rel_tol;
  return t;
}

std::vector<double> flat(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

std::vector<TensorCheck> check_daam_gradients(const DaamCheckCase& c, const FiniteDiffConfig& fd) {
  const DaamGradients g = daam_gradients(c.x, c.params, c.cfg, c.upstream);
  auto loss = [&](const Matrix& x, const DaamParams& p) {
    return (c.upstream.array() * daam_forward(x, p, c.cfg).gated.array()).sum();
  };

  std::vector<TensorCheck> out;
  {
    auto f = [&](std::span<const double> th) {
      DaamParams p = c.params;
      std::copy(th.begin(), th.end(), p.delta.data());
      return loss(c.x, p);
    };
    out.push_back(compare("daam.delta", flat(g.delta), finite_diff_grad(f, flat(c.params.delta), fd), fd));
  }
  {
    auto f = [&](std::span<const double> th) {
      DaamParams p = c.params;
      std::copy(th.begin(), th.end(), p.rho.data());
      return loss(c.x, p);
    };
    out.push_back(compare("daam.rho", flat(g.rho), finite_diff_grad(f, flat(c.params.rho), fd), fd));
  }
  if (!c.has_floor) {
    auto f = [&](std::span<const double> th) {
      Matrix x = c.x;
      std::copy(th.begin(), th.end(), x.data());
      return loss(x, c.params);
    };
    out.push_back(compare("input", flat(g.input), finite_diff_grad(f, flat(c.x), fd), fd));
  }
  return out;
}

ModelConfig gradcheck_model_config(Architecture arch) {
  ModelConfig c;
  c.arch = arch;
  c.n_features = 10;
  c.seg_len = 24;
  c.daam.n_features = 10;
  c.daam.n_heads = 2;
  c.daam.n_gaussians = 3;
  c.cnnlstm = {4, 3, 3, 2, 3};
  c.transformer.n_heads = 2;
  c.transformer.d_feedforward = 16;
  c.transformer.n_layers = 2;
  return c;
}

std::vector<TensorCheck> check_model_gradients(const ModelConfig& cfg, std::uint64_t seed, bool train_mode,
                                               int max_coords, const FiniteDiffConfig& fd) {
  const Classifier model(cfg);
  ModelParams params = init_parameters(cfg, seed);
  Rng rng(seed, stream_key({21}));
  // Move DAAM away from its symmetric identity start so every Gaussian
  // receives a distinct gradient.
  for (double& v : params.at("daam.delta").data) v = rng.uniform(-0.5, 0.5);
  for (double& v : params.at("daam.rho").data) v = softplus_inverse(rng.uniform(2.0, 6.0));

  Matrix x(cfg.n_features, cfg.seg_len);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const int y = static_cast<int>(rng.below(2));
  const std::uint64_t dropout_stream = stream_key({22});

  auto loss_of = [&](const ModelParams& p) {
    Rng drop(seed, dropout_stream);
    return bce_loss(model.forward(x, p, train_mode ? &drop : nullptr), y);
  };

  ModelParams grads = params.zeros_like();
  {
    Rng drop(seed, dropout_stream);
    ForwardTape tape;
    const double prob = model.forward(x, params, train_mode ? &drop : nullptr, tape);
    model.backward(tape, params, bce_grad(prob, y), grads);
  }

  std::vector<TensorCheck> out;
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    const Tensor& tensor = params.tensors[t];
    std::vector<std::size_t> coords(tensor.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    Rng pick(seed, stream_key({23, t}));
    pick.shuffle(coords);
    coords.resize(std::min<std::size_t>(coords.size(), static_cast<std::size_t>(max_coords)));
    std::sort(coords.begin(), coords.end());

    std::vector<double> theta, analytic;
    for (std::size_t i : coords) {
      theta.push_back(tensor.data[i]);
      analytic.push_back(grads.tensors[t].data[i]);
    }
    auto f = [&](std::span<const double> th) {
      ModelParams p = params;
      for (std::size_t k = 0; k < coords.size(); ++k) p.tensors[t].data[coords[k]] = th[k];
      return loss_of(p);
    };
    out.push_back(compare(tensor.name, analytic, finite_diff_grad(f, theta, fd), fd));
  }
  return out;
}

std::string format_checks(const std::vector<TensorCheck>& checks) {
  std::string s;
  char buf[256];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%-44s coords=%-4d max_rel_err=%.3e %s\n", c.name.c_str(), c.coordinates_checked,
                  c.max_rel_error, c.passed ? "PASS" : "FAIL");
    s += buf;
  }
  return s;
}

}  // namespace daam
