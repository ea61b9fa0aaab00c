#include "tunein/attention.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace tunein {

template <typename T>
Tensor<T> Projection<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight, bias);
}

template <typename T>
Projection<T> make_projection(ParameterSet<T>& params, const std::string& name, std::size_t out, std::size_t in,
                              Rng& rng) {
  Projection<T> p{params.create(name + ".weight", {out, in}), params.create(name + ".bias", {out})};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  init_uniform(p.weight, bound, rng);
  init_uniform(p.bias, bound, rng);
  return p;
}

template <typename T>
Projection<T> find_projection(ParameterSet<T>& params, const std::string& name) {
  return {params.get(name + ".weight"), params.get(name + ".bias")};
}

template <typename T>
MhaParams<T> make_mha(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Rng& rng) {
  return {make_projection(params, prefix + ".query", d, d, rng), make_projection(params, prefix + ".key", d, d, rng),
          make_projection(params, prefix + ".value", d, d, rng), make_projection(params, prefix + ".out", d, d, rng)};
}

template <typename T>
MhaParams<T> find_mha(ParameterSet<T>& params, const std::string& prefix) {
  return {find_projection(params, prefix + ".query"), find_projection(params, prefix + ".key"),
          find_projection(params, prefix + ".value"), find_projection(params, prefix + ".out")};
}

namespace {

// [B, L, D] -> [B * heads, L, D / heads]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  auto y = permute(reshape(x, {b, l, heads, d / heads}), {0, 2, 1, 3});
  return reshape(y, {b * heads, l, d / heads});
}

template <typename T>
Tensor<T> join_heads(const Tensor<T>& x, std::size_t batch, std::size_t heads) {
  const std::size_t l = x.dim(1), dh = x.dim(2);
  auto y = permute(reshape(x, {batch, heads, l, dh}), {0, 2, 1, 3});
  return reshape(y, {batch, l, heads * dh});
}

}  // namespace

template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& query, const Tensor<T>& memory, const MhaParams<T>& p,
                              std::size_t heads, Tensor<T>* weights) {
  if (query.rank() != 3 || memory.rank() != 3 || query.dim(0) != memory.dim(0) || query.dim(2) != memory.dim(2)) {
    throw ShapeError("attention: query " + shape_str(query.shape()) + " incompatible with memory " +
                     shape_str(memory.shape()));
  }
  const std::size_t batch = query.dim(0);
  const std::size_t d = query.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
  const auto q = split_heads(p.query(query), heads);
  const auto k = split_heads(p.key(memory), heads);
  const auto v = split_heads(p.value(memory), heads);
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(d / heads));
  const auto scores = scale(matmul(q, permute(k, {0, 2, 1})), scale_factor);
  const auto a = softmax(scores, 2);
  if (weights) *weights = reshape(a, {batch, heads, query.dim(1), memory.dim(1)});
  return p.out(join_heads(matmul(a, v), batch, heads));
}

template <typename T>
Tensor<T> positional_embedding(std::size_t length, std::size_t d) {
  std::vector<T> v(length * d);
  for (std::size_t s = 0; s < length; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(s) * rate;
      v[s * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>::from_vector({length, d}, std::move(v));
}

template <typename T>
CrossAttnParams<T> make_cross(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Rng& rng) {
  return {make_projection(params, prefix + ".query", d, d, rng), make_projection(params, prefix + ".key", d, d, rng),
          make_projection(params, prefix + ".value", d, d, rng)};
}

template <typename T>
CrossAttnParams<T> find_cross(ParameterSet<T>& params, const std::string& prefix) {
  return {find_projection(params, prefix + ".query"), find_projection(params, prefix + ".key"),
          find_projection(params, prefix + ".value")};
}

template <typename T>
CrossAttention<T> cross_attention(const Tensor<T>& generic, const std::vector<Tensor<T>>& speaker_feats,
                                  const CrossAttnParams<T>& p) {
  if (generic.rank() != 3) throw ShapeError("cross attention: generic features must be [S, K, D]");
  const std::size_t d = generic.dim(2);
  const auto xbar = mean(generic, 1);
  const auto q = p.query(xbar);
  CrossAttention<T> out;
  for (const auto& y : speaker_feats) {
    if (y.rank() != 2 || y.dim(1) != d) {
      throw ShapeError("cross attention: speaker features " + shape_str(y.shape()) + " must be [S_j, " +
                       std::to_string(d) + "]");
    }
    const auto k = p.key(y);
    const auto v = p.value(y);
    const auto a = softmax(matmul(q, permute(k, {1, 0})), 1);
    out.z.push_back(mean(matmul(a, v), 0));
    out.weights.push_back(a);
  }
  return out;
}

SteeringReg parse_steering_reg(const std::string& s) {
  if (s == "none") return SteeringReg::none;
  if (s == "noise") return SteeringReg::noise;
  if (s == "dropout") return SteeringReg::dropout;
  throw std::invalid_argument("unknown steering regularizer '" + s + "' (expected none, noise or dropout)");
}

std::string to_string(SteeringReg r) {
  switch (r) {
    case SteeringReg::none: return "none";
    case SteeringReg::noise: return "noise";
    case SteeringReg::dropout: return "dropout";
  }
  return "none";
}

template <typename T>
Tensor<T> regularize_steering(const Tensor<T>& z, SteeringReg mode, bool training, Rng& rng) {
  if (!training || mode == SteeringReg::none) return z;
  std::vector<T> v(z.numel());
  if (mode == SteeringReg::noise) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.1));
    for (auto& x : v) x = static_cast<T>(n(rng));
    return add(z, Tensor<T>::from_vector(z.shape(), std::move(v)));
  }
  constexpr double p = 0.1;
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& x : v) x = keep(rng) ? static_cast<T>(1.0 / (1.0 - p)) : T(0);
  return mul(z, Tensor<T>::from_vector(z.shape(), std::move(v)));
}

SteeringKind parse_steering_kind(const std::string& s) {
  if (s == "dual_attn") return SteeringKind::dual_attn;
  if (s == "film_between") return SteeringKind::film_between;
  if (s == "film_inside") return SteeringKind::film_inside;
  throw std::invalid_argument("unknown steering kind '" + s + "' (expected dual_attn, film_between or film_inside)");
}

std::string to_string(SteeringKind k) {
  switch (k) {
    case SteeringKind::dual_attn: return "dual_attn";
    case SteeringKind::film_between: return "film_between";
    case SteeringKind::film_inside: return "film_inside";
  }
  return "dual_attn";
}

template <typename T>
SteeringSite<T> make_site(ParameterSet<T>& params, const std::string& prefix, std::size_t d, Rng& rng) {
  SteeringSite<T> s;
  s.r = make_projection(params, prefix + ".r", d, d, rng);
  s.h = make_projection(params, prefix + ".h", d, d, rng);
  const double small = 0.1 / std::sqrt(static_cast<double>(d));
  init_uniform(s.r.weight, small, rng);
  init_constant(s.r.bias, 1.0);
  init_uniform(s.h.weight, small, rng);
  init_constant(s.h.bias, 0.0);
  s.norm_gain = params.create(prefix + ".norm.gain", {d});
  s.norm_bias = params.create(prefix + ".norm.bias", {d});
  init_constant(s.norm_gain, 1.0);
  s.slope = params.create(prefix + ".prelu", {1});
  init_constant(s.slope, 0.25);
  return s;
}

template <typename T>
SteeringSite<T> find_site(ParameterSet<T>& params, const std::string& prefix) {
  SteeringSite<T> s;
  s.r = find_projection(params, prefix + ".r");
  s.h = find_projection(params, prefix + ".h");
  s.norm_gain = params.get(prefix + ".norm.gain");
  s.norm_bias = params.get(prefix + ".norm.bias");
  s.slope = params.get(prefix + ".prelu");
  return s;
}

namespace {

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& z, const SteeringSite<T>& site) {
  const std::size_t d = x.shape().back();
  if (z.rank() != 1 || z.numel() != d) {
    throw ShapeError("steering vector " + shape_str(z.shape()) + " does not match feature width " +
                     std::to_string(d));
  }
  return add(mul(x, site.r(z)), site.h(z));
}

}  // namespace

template <typename T>
Tensor<T> dual_attention(const Tensor<T>& g, const Tensor<T>& z, const SteeringSite<T>& site, const MhaParams<T>& mha,
                         std::size_t heads, bool use_norm, Tensor<T>* weights) {
  auto a = modulate(g, z, site);
  if (use_norm) a = layer_norm(a, a.rank() - 1, site.norm_gain, site.norm_bias);
  return multihead_attention(g, a, mha, heads, weights);
}

template <typename T>
Tensor<T> film_inside_ga(const Tensor<T>& g, const Tensor<T>& z, const SteeringSite<T>& site,
                         const MhaParams<T>& mha, std::size_t heads, Tensor<T>* weights) {
  return multihead_attention(g, prelu(modulate(g, z, site), site.slope), mha, heads, weights);
}

template <typename T>
Tensor<T> film_between_cells(const Tensor<T>& x, const Tensor<T>& z, const SteeringSite<T>& site) {
  return prelu(modulate(x, z, site), site.slope);
}

template <typename T>
void set_neutral(SteeringSite<T>& site) {
  init_constant(site.r.weight, 0.0);
  init_constant(site.r.bias, 1.0);
  init_constant(site.h.weight, 0.0);
  init_constant(site.h.bias, 0.0);
  init_constant(site.slope, 1.0);
}

template <typename T>
std::string cross_attention_csv(const std::vector<Tensor<T>>& weights, double seconds_per_row) {
  std::ostringstream os;
  os << (seconds_per_row > 0 ? "time_s" : "segment");
  for (std::size_t j = 0; j < weights.size(); ++j) os << ",source" << j;
  os << "\n";
  std::size_t rows = 0;
  std::vector<Tensor<T>> avg;
  for (const auto& w : weights) {
    avg.push_back(mean(w, 0));
    rows = std::max(rows, w.dim(1));
  }
  os << std::setprecision(9);
  for (std::size_t r = 0; r < rows; ++r) {
    if (seconds_per_row > 0) {
      os << r * seconds_per_row;
    } else {
      os << r;
    }
    for (const auto& a : avg) {
      os << ",";
      if (r < a.numel()) os << a.values()[r];
    }
    os << "\n";
  }
  return os.str();
}

template <typename T>
std::string attention_matrix_csv(const Tensor<T>& weights) {
  if (weights.rank() != 2) throw ShapeError("attention map must be 2-D, got " + shape_str(weights.shape()));
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t i = 0; i < weights.dim(0); ++i) {
    for (std::size_t j = 0; j < weights.dim(1); ++j) {
      if (j) os << ",";
      os << weights.values()[i * weights.dim(1) + j];
    }
    os << "\n";
  }
  return os.str();
}

#define TUNEIN_INSTANTIATE_ATTN(T)                                                                                 \
  template struct Projection<T>;                                                                                   \
  template Projection<T> make_projection(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, Rng&);   \
  template Projection<T> find_projection(ParameterSet<T>&, const std::string&);                                   \
  template MhaParams<T> make_mha(ParameterSet<T>&, const std::string&, std::size_t, Rng&);                         \
  template MhaParams<T> find_mha(ParameterSet<T>&, const std::string&);                                            \
  template Tensor<T> multihead_attention(const Tensor<T>&, const Tensor<T>&, const MhaParams<T>&, std::size_t,     \
                                         Tensor<T>*);                                                              \
  template Tensor<T> positional_embedding<T>(std::size_t, std::size_t);                                            \
  template CrossAttnParams<T> make_cross(ParameterSet<T>&, const std::string&, std::size_t, Rng&);                 \
  template CrossAttnParams<T> find_cross(ParameterSet<T>&, const std::string&);                                    \
  template CrossAttention<T> cross_attention(const Tensor<T>&, const std::vector<Tensor<T>>&,                      \
                                             const CrossAttnParams<T>&);                                           \
  template Tensor<T> regularize_steering(const Tensor<T>&, SteeringReg, bool, Rng&);                               \
  template SteeringSite<T> make_site(ParameterSet<T>&, const std::string&, std::size_t, Rng&);                     \
  template SteeringSite<T> find_site(ParameterSet<T>&, const std::string&);                                        \
  template Tensor<T> dual_attention(const Tensor<T>&, const Tensor<T>&, const SteeringSite<T>&,                    \
                                    const MhaParams<T>&, std::size_t, bool, Tensor<T>*);                           \
  template Tensor<T> film_inside_ga(const Tensor<T>&, const Tensor<T>&, const SteeringSite<T>&,                    \
                                    const MhaParams<T>&, std::size_t, Tensor<T>*);                                 \
  template Tensor<T> film_between_cells(const Tensor<T>&, const Tensor<T>&, const SteeringSite<T>&);               \
  template void set_neutral(SteeringSite<T>&);                                                                     \
  template std::string cross_attention_csv(const std::vector<Tensor<T>>&, double);                                 \
  template std::string attention_matrix_csv(const Tensor<T>&);

TUNEIN_INSTANTIATE_ATTN(float)
TUNEIN_INSTANTIATE_ATTN(double)

}  // namespace tunein
