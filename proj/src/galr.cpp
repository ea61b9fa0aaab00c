#include "tunein/galr.hpp"

#include <cmath>
#include <stdexcept>

namespace tunein {

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "rnn") return LayerKind::rnn;
  if (s == "self_attn") return LayerKind::self_attn;
  throw std::invalid_argument("unknown layer kind '" + s + "' (expected rnn or self_attn)");
}

std::string to_string(LayerKind k) { return k == LayerKind::rnn ? "rnn" : "self_attn"; }

void GalrConfig::validate() const {
  if (D == 0 || K == 0 || Q == 0 || H == 0 || heads == 0) throw std::invalid_argument("GALR sizes must be positive");
  if (D % heads != 0) throw std::invalid_argument("D must be divisible by the head count");
  if (Q > K) throw std::invalid_argument("Q must not exceed K");
  if (K % 2 != 0) throw std::invalid_argument("segment length K must be even");
}

namespace {

template <typename T>
LstmDirection<T> make_direction(ParameterSet<T>& params, const std::string& prefix, std::size_t din,
                                std::size_t hidden, Rng& rng) {
  LstmDirection<T> d{params.create(prefix + ".w_ih", {4 * hidden, din}),
                     params.create(prefix + ".w_hh", {4 * hidden, hidden}), params.create(prefix + ".bias", {4 * hidden})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  init_uniform(d.w_ih, bound, rng);
  init_uniform(d.w_hh, bound, rng);
  init_uniform(d.bias, bound, rng);
  return d;
}

template <typename T>
LstmDirection<T> find_direction(ParameterSet<T>& params, const std::string& prefix) {
  return {params.get(prefix + ".w_ih"), params.get(prefix + ".w_hh"), params.get(prefix + ".bias")};
}

template <typename T>
void make_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Tensor<T>& gain, Tensor<T>& bias) {
  gain = params.create(prefix + ".gain", {d});
  bias = params.create(prefix + ".bias", {d});
  init_constant(gain, 1.0);
}

// BiLSTM over axis 1 of [B, T, D], projected back to D, normalized.
template <typename T>
Tensor<T> recurrent_path(const Tensor<T>& x, const LstmDirection<T>& fwd, const LstmDirection<T>& bwd,
                         const Projection<T>& proj, const Tensor<T>& gain, const Tensor<T>& bias) {
  return layer_norm(proj(bilstm(x, fwd, bwd)), 2, gain, bias);
}

}  // namespace

template <typename T>
BlockParams<T> make_block(ParameterSet<T>& params, const std::string& prefix, const GalrConfig& cfg, Rng& rng) {
  cfg.validate();
  BlockParams<T> b;
  const std::string lp = prefix + ".local";
  if (cfg.local_kind == LayerKind::rnn) {
    b.local.fwd = make_direction(params, lp + ".lstm.fwd", cfg.D, cfg.H, rng);
    b.local.bwd = make_direction(params, lp + ".lstm.bwd", cfg.D, cfg.H, rng);
    b.local.proj = make_projection(params, lp + ".proj", cfg.D, 2 * cfg.H, rng);
  } else {
    b.local.attn = make_mha(params, lp + ".attn", cfg.D, rng);
  }
  make_norm(params, lp + ".norm", cfg.D, b.local.norm_gain, b.local.norm_bias);

  const std::string gp = prefix + ".global";
  if (cfg.global_kind == LayerKind::self_attn) {
    b.global.pool = make_projection(params, gp + ".pool", cfg.Q, cfg.K, rng);
    b.global.attn = make_mha(params, gp + ".attn", cfg.D, rng);
    b.global.unpool = make_projection(params, gp + ".unpool", cfg.K, cfg.Q, rng);
  } else {
    b.global.fwd = make_direction(params, gp + ".lstm.fwd", cfg.D, cfg.H, rng);
    b.global.bwd = make_direction(params, gp + ".lstm.bwd", cfg.D, cfg.H, rng);
    b.global.proj = make_projection(params, gp + ".proj", cfg.D, 2 * cfg.H, rng);
  }
  make_norm(params, gp + ".norm", cfg.D, b.global.norm_gain, b.global.norm_bias);
  return b;
}

template <typename T>
BlockParams<T> find_block(ParameterSet<T>& params, const std::string& prefix, const GalrConfig& cfg) {
  BlockParams<T> b;
  const std::string lp = prefix + ".local";
  if (cfg.local_kind == LayerKind::rnn) {
    b.local.fwd = find_direction(params, lp + ".lstm.fwd");
    b.local.bwd = find_direction(params, lp + ".lstm.bwd");
    b.local.proj = find_projection(params, lp + ".proj");
  } else {
    b.local.attn = find_mha(params, lp + ".attn");
  }
  b.local.norm_gain = params.get(lp + ".norm.gain");
  b.local.norm_bias = params.get(lp + ".norm.bias");
  const std::string gp = prefix + ".global";
  if (cfg.global_kind == LayerKind::self_attn) {
    b.global.pool = find_projection(params, gp + ".pool");
    b.global.attn = find_mha(params, gp + ".attn");
    b.global.unpool = find_projection(params, gp + ".unpool");
  } else {
    b.global.fwd = find_direction(params, gp + ".lstm.fwd");
    b.global.bwd = find_direction(params, gp + ".lstm.bwd");
    b.global.proj = find_projection(params, gp + ".proj");
  }
  b.global.norm_gain = params.get(gp + ".norm.gain");
  b.global.norm_bias = params.get(gp + ".norm.bias");
  return b;
}

template <typename T>
Tensor<T> locally_recurrent(const Tensor<T>& x, const LocalParams<T>& p, const GalrConfig& cfg) {
  if (x.rank() != 3 || x.dim(1) != cfg.K || x.dim(2) != cfg.D) {
    throw ShapeError("locally recurrent layer expects [S, " + std::to_string(cfg.K) + ", " + std::to_string(cfg.D) +
                     "], got " + shape_str(x.shape()));
  }
  if (cfg.local_kind == LayerKind::rnn) {
    return add(recurrent_path(x, p.fwd, p.bwd, p.proj, p.norm_gain, p.norm_bias), x);
  }
  const auto xp = cfg.positional ? add(x, positional_embedding<T>(cfg.K, cfg.D)) : x;
  return add(layer_norm(multihead_attention(xp, xp, p.attn, cfg.heads), 2, p.norm_gain, p.norm_bias), x);
}

template <typename T>
Tensor<T> globally_attentive(const Tensor<T>& l, const GlobalParams<T>& p, const GalrConfig& cfg,
                             const Steering<T>* steering, Tensor<T>* weights) {
  if (l.rank() != 3 || l.dim(1) != cfg.K || l.dim(2) != cfg.D) {
    throw ShapeError("globally attentive layer expects [S, " + std::to_string(cfg.K) + ", " +
                     std::to_string(cfg.D) + "], got " + shape_str(l.shape()));
  }
  if (steering && steering->z && steering->z->numel() != cfg.D) {
    throw ShapeError("steering vector " + shape_str(steering->z->shape()) + " does not match D=" +
                     std::to_string(cfg.D));
  }
  const std::size_t segments = l.dim(0);
  if (cfg.global_kind == LayerKind::rnn) {
    if (steering && steering->kind != SteeringKind::film_between) {
      throw std::invalid_argument("attention steering requires a self-attentive global layer");
    }
    const auto xt = permute(l, {1, 0, 2});  // [K, S, D]
    const auto y = recurrent_path(xt, p.fwd, p.bwd, p.proj, p.norm_gain, p.norm_bias);
    return add(permute(y, {1, 0, 2}), l);
  }
  // [S, K, D] -> [S, D, K] -> pool -> [S, D, Q] -> [Q, S, D]
  auto g = permute(p.pool(permute(l, {0, 2, 1})), {2, 0, 1});
  g = layer_norm(g, 2, p.norm_gain, p.norm_bias);
  if (cfg.positional) g = add(g, positional_embedding<T>(segments, cfg.D));

  Tensor<T> att;
  if (steering == nullptr || steering->kind == SteeringKind::film_between) {
    att = multihead_attention(g, g, p.attn, cfg.heads, weights);
  } else if (steering->kind == SteeringKind::dual_attn) {
    att = dual_attention(g, *steering->z, *steering->site, p.attn, cfg.heads, steering->dual_norm, weights);
  } else {
    att = film_inside_ga(g, *steering->z, *steering->site, p.attn, cfg.heads, weights);
  }
  // [Q, S, D] -> [S, D, Q] -> unpool -> [S, D, K] -> [S, K, D]
  auto out = permute(p.unpool(permute(att, {1, 2, 0})), {0, 2, 1});
  return cfg.ga_residual ? add(out, l) : out;
}

template <typename T>
Tensor<T> galr_block(const Tensor<T>& x, const BlockParams<T>& p, const GalrConfig& cfg, const Steering<T>* steering) {
  auto y = globally_attentive(locally_recurrent(x, p.local, cfg), p.global, cfg, steering);
  if (steering && steering->kind == SteeringKind::film_between) {
    y = film_between_cells(y, *steering->z, *steering->site);
  }
  return y;
}

#define TUNEIN_INSTANTIATE_GALR(T)                                                                               \
  template BlockParams<T> make_block(ParameterSet<T>&, const std::string&, const GalrConfig&, Rng&);            \
  template BlockParams<T> find_block(ParameterSet<T>&, const std::string&, const GalrConfig&);                  \
  template Tensor<T> locally_recurrent(const Tensor<T>&, const LocalParams<T>&, const GalrConfig&);             \
  template Tensor<T> globally_attentive(const Tensor<T>&, const GlobalParams<T>&, const GalrConfig&,            \
                                        const Steering<T>*, Tensor<T>*);                                        \
  template Tensor<T> galr_block(const Tensor<T>&, const BlockParams<T>&, const GalrConfig&, const Steering<T>*);

TUNEIN_INSTANTIATE_GALR(float)
TUNEIN_INSTANTIATE_GALR(double)

}  // namespace tunein
