#pragma once

// GALR blocks: a locally recurrent layer over the K positions of each
// segment followed by a globally attentive layer over segments.
// Segment tensors are channel-last, [S, K, D].

#include <string>

#include "tunein/attention.hpp"
#include "tunein/lstm.hpp"

namespace tunein {

enum class LayerKind { rnn, self_attn };
LayerKind parse_layer_kind(const std::string& s);
std::string to_string(LayerKind k);

struct GalrConfig {
  std::size_t D = 32;
  std::size_t K = 32;
  std::size_t Q = 8;
  std::size_t H = 32;
  std::size_t heads = 4;
  LayerKind local_kind = LayerKind::rnn;
  LayerKind global_kind = LayerKind::self_attn;
  bool ga_residual = true;
  bool positional = true;

  // Throws std::invalid_argument on violated invariants.
  void validate() const;
};

template <typename T>
struct LocalParams {
  LstmDirection<T> fwd;
  LstmDirection<T> bwd;
  Projection<T> proj;  // 2H -> D (rnn kind)
  MhaParams<T> attn;   // self_attn kind
  Tensor<T> norm_gain;
  Tensor<T> norm_bias;
};

template <typename T>
struct GlobalParams {
  Projection<T> pool;    // K -> Q
  Projection<T> unpool;  // Q -> K
  MhaParams<T> attn;
  LstmDirection<T> fwd;  // rnn kind
  LstmDirection<T> bwd;
  Projection<T> proj;
  Tensor<T> norm_gain;
  Tensor<T> norm_bias;
};

template <typename T>
struct BlockParams {
  LocalParams<T> local;
  GlobalParams<T> global;
};

// Creates parameters under prefix ("generic.0" etc.) in a fixed order.
template <typename T>
BlockParams<T> make_block(ParameterSet<T>& params, const std::string& prefix, const GalrConfig& cfg, Rng& rng);
template <typename T>
BlockParams<T> find_block(ParameterSet<T>& params, const std::string& prefix, const GalrConfig& cfg);

// Top-down steering of one globally attentive layer.
template <typename T>
struct Steering {
  const Tensor<T>* z = nullptr;
  const SteeringSite<T>* site = nullptr;
  SteeringKind kind = SteeringKind::dual_attn;
  bool dual_norm = true;
};

template <typename T>
Tensor<T> locally_recurrent(const Tensor<T>& x, const LocalParams<T>& p, const GalrConfig& cfg);

// weights, if given, receives the attention map [Q, heads, S, S].
template <typename T>
Tensor<T> globally_attentive(const Tensor<T>& l, const GlobalParams<T>& p, const GalrConfig& cfg,
                             const Steering<T>* steering = nullptr, Tensor<T>* weights = nullptr);

template <typename T>
Tensor<T> galr_block(const Tensor<T>& x, const BlockParams<T>& p, const GalrConfig& cfg,
                     const Steering<T>* steering = nullptr);

// Attention invocations per globally attentive layer: Q pooled slots versus
// K for an un-pooled layer.
inline double attention_reduction(std::size_t K, std::size_t Q) {
  return static_cast<double>(K - Q) / static_cast<double>(K);
}

}  // namespace tunein
