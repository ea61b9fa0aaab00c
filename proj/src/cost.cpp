#include "tunein/cost.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace tunein {

namespace {

std::size_t proj(std::size_t out, std::size_t in) { return out * in + out; }
std::size_t lstm_dir(std::size_t din, std::size_t h) { return 4 * h * din + 4 * h * h + 4 * h; }
std::size_t mha(std::size_t d) { return 4 * proj(d, d); }

std::size_t block_params(const GalrConfig& g) {
  std::size_t n = 0;
  if (g.local_kind == LayerKind::rnn) {
    n += 2 * lstm_dir(g.D, g.H) + proj(g.D, 2 * g.H);
  } else {
    n += mha(g.D);
  }
  n += 2 * g.D;
  if (g.global_kind == LayerKind::self_attn) {
    n += proj(g.Q, g.K) + mha(g.D) + proj(g.K, g.Q);
  } else {
    n += 2 * lstm_dir(g.D, g.H) + proj(g.D, 2 * g.H);
  }
  return n + 2 * g.D;
}

struct Geometry {
  std::size_t L, Lp, I, S;
};

Geometry geometry(const ModelConfig& c, std::size_t samples) {
  Geometry q{};
  q.L = samples;
  q.Lp = padded_length(samples, c.W);
  q.I = (q.Lp - c.W) / (c.W / 2) + 1;
  const std::size_t k = c.galr.K, hop = k / 2;
  const std::size_t padded = q.I > k ? k + ((q.I - k + hop - 1) / hop) * hop : k;
  q.S = (padded - k) / hop + 1;
  return q;
}

// Multi-head attention with query and memory of the same length.
double mha_macs(std::size_t batch, std::size_t len, std::size_t d) {
  const double b = static_cast<double>(batch), n = static_cast<double>(len), w = static_cast<double>(d);
  return 4 * b * n * w * w + 2 * b * n * n * w;
}

std::size_t mha_elements(std::size_t batch, std::size_t len, std::size_t d, std::size_t heads) {
  const std::size_t x = batch * len * d;
  const std::size_t scores = batch * heads * len * len;
  // q/k/v projections, head splits, key transpose, scaled scores, softmax,
  // weighted sum, head join, output projection.
  return 3 * x + 9 * x + x + 3 * scores + x + 3 * x + x;
}

double bilstm_macs(std::size_t positions, std::size_t din, std::size_t h) {
  return 2.0 * static_cast<double>(positions) * static_cast<double>(4 * h * (din + h));
}

std::size_t bilstm_elements(std::size_t positions, std::size_t din, std::size_t h) {
  return positions * 2 * h + positions * din + 12 * positions * h;
}

double block_macs(const GalrConfig& g, std::size_t S) {
  const std::size_t pos = S * g.K;
  double m = 0;
  if (g.local_kind == LayerKind::rnn) {
    m += bilstm_macs(pos, g.D, g.H) + static_cast<double>(pos) * 2 * g.H * g.D;
  } else {
    m += mha_macs(S, g.K, g.D);
  }
  if (g.global_kind == LayerKind::self_attn) {
    m += 2.0 * S * g.D * g.K * g.Q + ga_attention_flops(g, S, true) / 2;
  } else {
    m += bilstm_macs(pos, g.D, g.H) + static_cast<double>(pos) * 2 * g.H * g.D;
  }
  return m;
}

std::size_t block_elements(const GalrConfig& g, std::size_t S) {
  const std::size_t n = S * g.K * g.D;
  const std::size_t rows = S * g.K;
  std::size_t e = 0;
  if (g.local_kind == LayerKind::rnn) {
    e += bilstm_elements(rows, g.D, g.H) + n + (2 * n + rows) + n;
  } else {
    e += (g.positional ? n : 0) + mha_elements(S, g.K, g.D, g.heads) + (2 * n + rows) + n;
  }
  if (g.global_kind == LayerKind::self_attn) {
    const std::size_t q = S * g.Q * g.D;
    e += n + q + q + (2 * q + S * g.Q) + (g.positional ? q : 0) + mha_elements(g.Q, S, g.D, g.heads) + q + n + n;
    if (g.ga_residual) e += n;
  } else {
    e += n + bilstm_elements(rows, g.D, g.H) + n + (2 * n + rows) + n + n;
  }
  return e;
}

}  // namespace

std::size_t count_params(const ModelConfig& c) {
  c.validate();
  const auto& g = c.galr;
  const std::size_t d = g.D;
  std::size_t n = 2 * d * c.W;  // encoder, decoder
  n += (c.B + c.B2) * block_params(g);
  n += proj(c.C * d, d);  // output
  if (c.speaker_space) {
    n += c.B1 * block_params(g);
    n += proj(c.C * d, d) + 3 * proj(d, d);  // embedder, cross attention
    n += c.B2 * (2 * proj(d, d) + 2 * d + 1);  // steering sites
    n += c.N * d + 1;                         // table, alpha
  }
  return n;
}

std::size_t input_samples(double seconds, int sample_rate) {
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

double ga_attention_flops(const GalrConfig& g, std::size_t segments, bool pooled) {
  return 2 * mha_macs(pooled ? g.Q : g.K, segments, g.D);
}

double estimate_flops(const ModelConfig& c, double seconds, int sample_rate) {
  c.validate();
  const auto q = geometry(c, input_samples(seconds, sample_rate));
  const auto& g = c.galr;
  const double d = static_cast<double>(g.D);
  double m = static_cast<double>(q.I) * c.W * d;  // encoder
  m += static_cast<double>(c.B + c.B2) * block_macs(g, q.S);
  m += static_cast<double>(c.C) * (static_cast<double>(q.S) * g.K * d * d + static_cast<double>(q.I) * d * c.W);
  return 2 * m;
}

std::size_t estimate_memory(const ModelConfig& c, double seconds, int sample_rate) {
  c.validate();
  const auto q = geometry(c, input_samples(seconds, sample_rate));
  const auto& g = c.galr;
  const std::size_t d = g.D;
  const std::size_t n = q.S * g.K * d;
  std::size_t e = q.Lp > q.L ? q.Lp : 0;
  e += q.I * c.W + 2 * q.I * d + n;  // unfold, conv, ReLU, segments
  e += (c.B + c.B2) * block_elements(g, q.S);
  // Per source: weight slices, projection, overlap-add, mask, product,
  // basis, fold and crop.
  e += c.C * (d * d + d + n + q.I * d + 2 * q.I * d + q.I * c.W + q.Lp + q.L);
  return e * sizeof(float);
}

CostReport cost_report(const ModelConfig& c, double seconds, int sample_rate) {
  return {count_params(c), estimate_memory(c, seconds, sample_rate), estimate_flops(c, seconds, sample_rate)};
}

ModelConfig reference_galr(std::size_t window) {
  ModelConfig c;
  c.W = window;
  c.galr.D = 128;
  c.galr.K = 256;
  c.galr.Q = 8;
  c.galr.H = 128;
  c.galr.heads = 8;
  c.B = 4;
  c.B2 = 2;
  c.speaker_space = false;
  return c;
}

ModelConfig reference_dprnn(std::size_t window) {
  auto c = reference_galr(window);
  c.galr.D = 64;
  c.galr.global_kind = LayerKind::rnn;
  return c;
}

std::vector<SweepRow> window_sweep(const std::vector<std::size_t>& windows, double seconds, int sample_rate) {
  std::vector<SweepRow> rows;
  for (const std::string arch : {"galr", "dprnn"}) {
    for (const auto w : windows) {
      const auto c = arch == "galr" ? reference_galr(w) : reference_dprnn(w);
      const auto r = cost_report(c, seconds, sample_rate);
      rows.push_back({arch, w, r.params, r.activation_memory_bytes, r.flops / 1e9});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "arch,window,params,memory_bytes,gflops\n";
  for (const auto& r : rows) {
    os << r.arch << ',' << r.window << ',' << r.params << ',' << r.memory_bytes << ',' << std::setprecision(9)
       << r.gflops << '\n';
  }
  return os.str();
}

}  // namespace tunein
