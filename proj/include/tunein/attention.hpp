#pragma once

// Multi-head attention, cross attention for steering vectors, top-down
// steering of the globally attentive layer (dual attention and the FiLM
// variants), and steering-vector regularizers.

#include <optional>
#include <string>
#include <vector>

#include "tunein/ops.hpp"
#include "tunein/params.hpp"

namespace tunein {

template <typename T>
struct Projection {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
Projection<T> make_projection(ParameterSet<T>& params, const std::string& name, std::size_t out, std::size_t in,
                              Rng& rng);
template <typename T>
Projection<T> find_projection(ParameterSet<T>& params, const std::string& name);

template <typename T>
struct MhaParams {
  Projection<T> query;
  Projection<T> key;
  Projection<T> value;
  Projection<T> out;
};

template <typename T>
MhaParams<T> make_mha(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Rng& rng);
template <typename T>
MhaParams<T> find_mha(ParameterSet<T>& params, const std::string& prefix);

// query[B, Lq, D] attends over memory[B, Lk, D] with softmax over Lk and
// 1/sqrt(D/heads) scaling. When weights is given it receives the attention
// distribution [B, heads, Lq, Lk].
template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& query, const Tensor<T>& memory, const MhaParams<T>& p,
                              std::size_t heads, Tensor<T>* weights = nullptr);

// Sinusoidal table [length, d] with entries in [-1, 1].
template <typename T>
Tensor<T> positional_embedding(std::size_t length, std::size_t d);

template <typename T>
struct CrossAttnParams {
  Projection<T> query;
  Projection<T> key;
  Projection<T> value;
};

template <typename T>
CrossAttnParams<T> make_cross(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Rng& rng);
template <typename T>
CrossAttnParams<T> find_cross(ParameterSet<T>& params, const std::string& prefix);

template <typename T>
struct CrossAttention {
  std::vector<Tensor<T>> z;        // per source, [D]
  std::vector<Tensor<T>> weights;  // per source, [S, S_j]
};

// generic[S, K, D] output of the shared stack; speaker_feats[j] is [S_j, D].
// Scores are unscaled inner products, normalized over S_j; Z_j is the mean
// over S of the attended values.
template <typename T>
CrossAttention<T> cross_attention(const Tensor<T>& generic, const std::vector<Tensor<T>>& speaker_feats,
                                  const CrossAttnParams<T>& p);

enum class SteeringReg { none, noise, dropout };
SteeringReg parse_steering_reg(const std::string& s);
std::string to_string(SteeringReg r);

// Gaussian noise with variance 0.1, or dropout with p = 0.1 and 1/(1-p)
// rescaling; identity unless training.
template <typename T>
Tensor<T> regularize_steering(const Tensor<T>& z, SteeringReg mode, bool training, Rng& rng);

enum class SteeringKind { dual_attn, film_between, film_inside };
SteeringKind parse_steering_kind(const std::string& s);
std::string to_string(SteeringKind k);

template <typename T>
struct SteeringSite {
  Projection<T> r;
  Projection<T> h;
  Tensor<T> norm_gain;
  Tensor<T> norm_bias;
  Tensor<T> slope;  // PReLU, single element
};

// r starts near the all-ones map (zero-mean small weights, bias 1) and h near
// zero so a fresh site is close to neutral modulation.
template <typename T>
SteeringSite<T> make_site(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Rng& rng);
template <typename T>
SteeringSite<T> find_site(ParameterSet<T>& params, const std::string& prefix);

// A = LN(r(z) * g + h(z)) over D (LN skipped when use_norm is false), then
// attention with queries from g and keys/values from A. g is [Q, S, D].
template <typename T>
Tensor<T> dual_attention(const Tensor<T>& g, const Tensor<T>& z, const SteeringSite<T>& site, const MhaParams<T>& mha,
                         std::size_t heads, bool use_norm = true, Tensor<T>* weights = nullptr);

// F = PReLU(r(z) * g + h(z)); queries from g, keys/values from F.
template <typename T>
Tensor<T> film_inside_ga(const Tensor<T>& g, const Tensor<T>& z, const SteeringSite<T>& site,
                         const MhaParams<T>& mha, std::size_t heads, Tensor<T>* weights = nullptr);

// PReLU(r(z) * x + h(z)) on any [..., D] tensor.
template <typename T>
Tensor<T> film_between_cells(const Tensor<T>& x, const Tensor<T>& z, const SteeringSite<T>& site);

// Neutral modulation: r == 1, h == 0, PReLU slope 1.
template <typename T>
void set_neutral(SteeringSite<T>& site);

// Rows are segments; columns are the per-source attention averaged over the
// query axis, preceded by the segment index (or time if seconds_per_row > 0).
template <typename T>
std::string cross_attention_csv(const std::vector<Tensor<T>>& weights, double seconds_per_row = 0.0);

// Dense matrix dump of one [rows, cols] attention map.
template <typename T>
std::string attention_matrix_csv(const Tensor<T>& weights);

}  // namespace tunein
