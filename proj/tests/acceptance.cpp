// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance fast            criteria 1-7 and 10-12
//   acceptance desk [--minutes M] [--work DIR]
//                              criteria 8 and 9 (trains three models)
//   acceptance 3 5 11          selected criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "cli.hpp"
#include "gradcheck.hpp"
#include "tunein/cost.hpp"
#include "tunein/trainer.hpp"

using namespace tunein;
using tunein::testing::gradcheck;
using tunein::testing::probe_loss;
using tunein::testing::random_tensor;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  double minutes = 30;
  fs::path work;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int call_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "tunein");
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
  return code;
}

// --- 1: gradients ---

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  auto r = [&](Shape s, double lo = -1, double hi = 1) { return random_tensor(std::move(s), rng, lo, hi); };
  // Magnitudes in [0.2, 1] with random sign, away from kinks.
  auto off_kink = [&](Shape s) {
    auto t = r(std::move(s), 0.2, 1.0);
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) d[i] *= (rng() & 1) ? 1.0 : -1.0;
    return t;
  };

  struct Case {
    std::string name;
    std::function<TD()> fn;
    std::vector<TD> inputs;
  };
  std::vector<Case> cases;
  auto a = r({3, 4}), b = r({3, 4}), bc = r({4}), pos = r({3, 4}, 0.5, 2.0), k = off_kink({3, 4});
  auto slope = TD::from_vector({1}, {0.3}, true);
  cases.push_back({"add", [=] { return probe_loss(add(a, bc)); }, {a, bc}});
  cases.push_back({"sub", [=] { return probe_loss(sub(a, b)); }, {a, b}});
  cases.push_back({"mul", [=] { return probe_loss(mul(a, bc)); }, {a, bc}});
  cases.push_back({"div", [=] { return probe_loss(div(a, pos)); }, {a, pos}});
  cases.push_back({"scale", [=] { return probe_loss(scale(a, 2.5)); }, {a}});
  cases.push_back({"add_scalar", [=] { return probe_loss(add_scalar(a, 0.7)); }, {a}});
  cases.push_back({"neg", [=] { return probe_loss(neg(a)); }, {a}});
  cases.push_back({"relu", [=] { return probe_loss(relu(k)); }, {k}});
  cases.push_back({"prelu", [=] { return probe_loss(prelu(k, slope)); }, {k, slope}});
  cases.push_back({"sigmoid", [=] { return probe_loss(sigmoid(a)); }, {a}});
  cases.push_back({"tanh", [=] { return probe_loss(tanh(a)); }, {a}});
  cases.push_back({"exp", [=] { return probe_loss(exp(a)); }, {a}});
  cases.push_back({"log", [=] { return probe_loss(log(pos)); }, {pos}});
  cases.push_back({"abs", [=] { return probe_loss(abs(k)); }, {k}});
  cases.push_back({"square", [=] { return probe_loss(square(a)); }, {a}});
  cases.push_back({"clamp_min", [=] { return probe_loss(clamp_min(k, 0.0)); }, {k}});
  cases.push_back({"sum", [=] { return sum(mul(a, a)); }, {a}});
  cases.push_back({"mean", [=] { return mean(mul(a, a)); }, {a}});
  cases.push_back({"sum_axis", [=] { return probe_loss(sum(a, 0)); }, {a}});
  cases.push_back({"mean_axis", [=] { return probe_loss(mean(a, 1, true)); }, {a}});
  cases.push_back({"reshape", [=] { return probe_loss(reshape(a, {2, 6})); }, {a}});
  auto t3 = r({2, 3, 4});
  cases.push_back({"permute", [=] { return probe_loss(permute(t3, {2, 0, 1})); }, {t3}});
  cases.push_back({"slice", [=] { return probe_loss(slice(t3, 2, 1, 3)); }, {t3}});
  cases.push_back({"concat", [=] { return probe_loss(concat<double>({a, b}, 1)); }, {a, b}});
  cases.push_back({"index_select", [=] { return probe_loss(index_select(a, {2, 0, 2})); }, {a}});
  auto m1 = r({2, 3, 4}), m2 = r({4, 5});
  cases.push_back({"matmul", [=] { return probe_loss(matmul(m1, m2)); }, {m1, m2}});
  auto lw = r({5, 4}), lb = r({5});
  cases.push_back({"linear", [=] { return probe_loss(linear(t3, lw, lb)); }, {t3, lw, lb}});
  cases.push_back({"softmax", [=] { return probe_loss(softmax(t3, 1)); }, {t3}});
  cases.push_back({"log_softmax", [=] { return probe_loss(log_softmax(t3, 2)); }, {t3}});
  auto g4 = r({4}, 0.5, 1.5), b4 = r({4});
  cases.push_back({"layer_norm", [=] { return probe_loss(layer_norm(t3, 2, g4, b4)); }, {t3, g4, b4}});
  auto sig = r({22});
  cases.push_back({"unfold1d", [=] { return probe_loss(unfold1d(sig, 4, 2)); }, {sig}});
  auto frames = r({6, 4});
  cases.push_back({"fold1d", [=] { return probe_loss(fold1d(frames, 2)); }, {frames}});
  auto feats = r({9, 3});
  cases.push_back({"frame_segments", [=] { return probe_loss(frame_segments(feats, 4)); }, {feats}});
  auto segs = r({4, 4, 3});
  cases.push_back({"overlap_add_segments", [=] { return probe_loss(overlap_add_segments(segs, 10)); }, {segs}});

  Rng prng(2);
  ParameterSet<double> ps;
  LstmDirection<double> fwd{r({12, 3}, -0.5, 0.5), r({12, 3}, -0.5, 0.5), r({12}, -0.5, 0.5)};
  LstmDirection<double> bwd{r({12, 3}, -0.5, 0.5), r({12, 3}, -0.5, 0.5), r({12}, -0.5, 0.5)};
  auto seq = r({2, 5, 3});
  cases.push_back({"bilstm", [=] { return probe_loss(bilstm(seq, fwd, bwd)); },
                   {seq, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.bias}});
  const auto mha = make_mha(ps, "attn", 4, prng);
  auto q = r({2, 3, 4}), mem = r({2, 5, 4});
  cases.push_back({"multihead_attention", [=] { return probe_loss(multihead_attention(q, mem, mha, 2)); },
                   {q, mem, mha.query.weight, mha.key.bias, mha.value.weight, mha.out.weight}});
  const auto cross = make_cross(ps, "cross", 4, prng);
  auto gen = r({3, 2, 4}), sf0 = r({4, 4}), sf1 = r({2, 4});
  cases.push_back({"cross_attention",
                   [=] {
                     const auto c = cross_attention(gen, {sf0, sf1}, cross);
                     return add(probe_loss(c.z[0], 3), probe_loss(c.z[1], 4));
                   },
                   {gen, sf0, sf1, cross.query.weight, cross.key.weight, cross.value.bias}});
  const auto site = make_site(ps, "steer", 4, prng);
  auto gq = r({2, 3, 4}), z = r({4});
  for (const bool norm : {true, false}) {
    cases.push_back({norm ? "dual_attention" : "dual_attention_no_norm",
                     [=] { return probe_loss(dual_attention(gq, z, site, mha, 2, norm)); },
                     {gq, z, site.r.weight, site.r.bias, site.h.weight, site.norm_gain, site.norm_bias,
                      mha.key.weight}});
  }
  cases.push_back({"film_inside_ga", [=] { return probe_loss(film_inside_ga(gq, z, site, mha, 2)); },
                   {gq, z, site.r.weight, site.h.bias, site.slope}});
  cases.push_back({"film_between_cells", [=] { return probe_loss(film_between_cells(gq, z, site)); },
                   {gq, z, site.r.weight, site.h.weight, site.slope}});
  cases.push_back({"regularize_steering",
                   [=] {
                     Rng fixed(5);
                     return probe_loss(regularize_steering(z, SteeringReg::noise, true, fixed));
                   },
                   {z}});
  cases.push_back({"regularize_steering_dropout",
                   [=] {
                     Rng fixed(6);
                     return probe_loss(regularize_steering(z, SteeringReg::dropout, true, fixed));
                   },
                   {z}});

  auto enc = r({3, 4}), dec = r({3, 4}), wave = r({26});
  cases.push_back({"encode", [=] { return probe_loss(encode(wave, enc)); }, {wave, enc}});
  auto pre = r({12, 3});
  const auto mixf = relu(r({12, 3}, 0.1, 1.0));
  cases.push_back({"decode", [=] { return probe_loss(decode(pre, mixf, dec)); }, {pre, dec}});
  auto xs = r({11, 3});
  cases.push_back({"split_merge",
                   [=] {
                     const auto s = split(xs, 4);
                     return probe_loss(merge_like(tanh(s.data), s));
                   },
                   {xs}});

  for (const auto local : {LayerKind::rnn, LayerKind::self_attn}) {
    for (const auto global : {LayerKind::rnn, LayerKind::self_attn}) {
      GalrConfig gc;
      gc.D = 4;
      gc.K = 4;
      gc.Q = 2;
      gc.H = 3;
      gc.heads = 2;
      gc.local_kind = local;
      gc.global_kind = global;
      ParameterSet<double> bp;
      const auto blk = make_block(bp, "b", gc, prng);
      auto x = r({3, 4, 4});
      std::vector<TD> inputs{x};
      for (const auto& [n, t] : bp.map()) inputs.push_back(t);
      cases.push_back({"galr_block(" + to_string(local) + "," + to_string(global) + ")",
                       [=] { return probe_loss(galr_block(x, blk, gc)); }, inputs});
      if (global == LayerKind::self_attn) {
        const Steering<double> st{&z, &site, SteeringKind::dual_attn, true};
        cases.push_back({"galr_block_steered(" + to_string(local) + ")",
                         [=] { return probe_loss(galr_block(x, blk, gc, &st)); }, {x, z, blk.global.pool.weight}});
      }
    }
  }
  const auto embedder = make_projection(ps, "embedder", 8, 4, prng);
  auto sx = r({3, 4, 4});
  cases.push_back({"embed_speakers",
                   [=] {
                     const auto e = embed_speakers(sx, embedder, 2);
                     return add(probe_loss(e[0], 1), probe_loss(e[1], 2));
                   },
                   {sx, embedder.weight, embedder.bias}});

  auto tgt0 = r({30}), tgt1 = r({30}), est0 = r({30}), est1 = r({30});
  const auto tg0 = tgt0.detach(), tg1 = tgt1.detach();
  cases.push_back({"si_snr", [=] { return si_snr_tensor(tg0, est0); }, {est0}});
  cases.push_back({"pit_loss", [=] { return pit_loss<double>({tg0, tg1}, {est0, est1}); }, {est0, est1}});
  auto E = r({4, 3}), z0 = r({3}), z1 = r({3});
  auto alpha = TD::from_vector({1}, {0.8}, true);
  cases.push_back({"tune_ince", [=] { return tune_ince_loss<double>({z0, z1}, {2, 0}, E, alpha); }, {z0, z1, alpha}});
  cases.push_back({"token_id", [=] { return token_id_loss<double>({z0, z1}, {2, 0}, E, alpha); }, {E, z0, z1, alpha}});
  cases.push_back({"reg_loss", [=] { return reg_loss(E, {0, 2}, 3.0); }, {E}});
  cases.push_back({"joint_loss",
                   [=] {
                     return joint_loss(pit_loss<double>({tg0, tg1}, {est0, est1}),
                                       tune_ince_loss<double>({z0, z1}, {2, 0}, E, alpha), 10.0);
                   },
                   {est0, est1, z0, z1, alpha}});

  // Full graph: encode -> two generic GALR blocks -> speaker branch and
  // dual-attention stimuli block -> decode -> joint loss.
  ModelConfig mc;
  mc.W = 4;
  mc.galr.D = 4;
  mc.galr.K = 4;
  mc.galr.Q = 2;
  mc.galr.H = 3;
  mc.galr.heads = 2;
  mc.B = 2;
  mc.B1 = 1;
  mc.B2 = 1;
  mc.N = 4;
  auto model = std::make_shared<Model<double>>(mc, 9);
  const auto s0 = r({24}).detach(), s1 = r({24}).detach();
  const auto mix = add(s0, s1);
  auto& P = model->params();
  std::vector<TD> full_inputs;
  for (const auto& [n, t] : P.map()) {
    if (n != "speaker_table.E") full_inputs.push_back(t);
  }
  cases.push_back({"end_to_end",
                   [=] {
                     ForwardOptions<double> o;
                     o.mode = Mode::online;
                     const auto res = model->forward(mix, o);
                     const auto sep = pit_loss<double>({s0, s1}, res.estimates);
                     const auto& t = model->table();
                     const std::vector<int> ids{0, 2};
                     const auto spk =
                         add(tune_ince_loss(res.steering, ids, t.E, t.alpha_tensor()), reg_loss(t.E, ids, 3.0));
                     return joint_loss(sep, spk, 10.0);
                   },
                   full_inputs});

  double worst = 0;
  std::string worst_name;
  for (auto& c : cases) {
    const double err = gradcheck(c.fn, c.inputs, c.name == "end_to_end" ? 1e-6 : 1e-5);
    if (!(err <= worst)) {
      worst = err;
      worst_name = c.name;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 120,
          std::to_string(cases.size()) + " graphs, worst relative error " + fmt("%.2e", worst) + " (" + worst_name +
              "), " + fmt("%.1f", secs) + " s"};
}

// --- 2: identities ---

Outcome identity_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> ua(0.05, 2.0);
  double e2 = 0, e3 = 0, e4 = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng() % 9, d = 1 + rng() % 8, c = 1 + rng() % 3;
    std::vector<std::vector<double>> E(n, std::vector<double>(d)), z(c, std::vector<double>(d));
    for (auto& row : E) for (auto& v : row) v = u(rng);
    for (auto& row : z) for (auto& v : row) v = u(rng);
    std::vector<int> ids;
    for (std::size_t j = 0; j < c; ++j) ids.push_back(static_cast<int>(rng() % n));
    const auto rep = ince_identity_checks(E, z, ids, ua(rng));
    e2 = std::max(e2, rep.claim2_max_error);
    e3 = std::max(e3, rep.claim3_max_error);
    e4 = std::max(e4, rep.claim4_max_error);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = e2 < 1e-9 && e3 < 1e-9 && e4 < 1e-9 && secs < 10;
  return {pass, "1000 instances; decomposition " + fmt("%.1e", e3) + ", rescaled kernel " + fmt("%.1e", e4) +
                    ", Gaussian ratio " + fmt("%.1e", e2) + ", " + fmt("%.2f", secs) + " s"};
}

// --- 3: loss limits ---

Outcome loss_limits() {
  std::mt19937_64 rng(3);
  auto one = [](double a) { return TD::from_vector({1}, {a}); };
  double n1 = 0, logn = 0, closed = 0;
  for (int t = 0; t < 50; ++t) {
    const auto E = random_tensor({1, 5}, rng, -3, 3, false);
    const auto z = random_tensor({5}, rng, -3, 3, false);
    n1 = std::max(n1, std::abs(tune_ince_loss<double>({z}, {0}, E, one(2.5)).item()));
  }
  for (const std::size_t n : {2u, 5u, 20u, 100u}) {
    const auto E = random_tensor({n, 4}, rng, -1, 1, false);
    const auto z = random_tensor({4}, rng, -1, 1, false);
    const double v = tune_ince_loss<double>({z}, {1}, E, one(1e-12)).item();
    logn = std::max(logn, std::abs(v - std::log(static_cast<double>(n))));
  }
  for (const double d : {0.05, 0.3, 0.7, 1.0, 1.5, 2.5, 4.0}) {
    const auto E = TD::from_vector({2, 3}, {0.1, -0.2, 0.3, 0.1 + d * 0.48, -0.2 + d * 0.6, 0.3 + d * 0.64});
    const auto z = TD::from_vector({3}, {0.1, -0.2, 0.3});
    const double v = tune_ince_loss<double>({z}, {0}, E, one(1.0)).item();
    closed = std::max(closed, std::abs(v - std::log1p(std::exp(-d * d))));
  }
  return {n1 == 0.0 && logn <= 1e-6 && closed <= 1e-9,
          "N=1 max |L| " + fmt("%.1e", n1) + "; |L - log N| at alpha=1e-12 " + fmt("%.1e", logn) +
              "; N=2 closed form " + fmt("%.1e", closed)};
}

// --- 4: permutation and scale invariance ---

Outcome invariances() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  auto noise = [&](std::size_t n) {
    Signal s(n);
    for (auto& v : s) v = g(rng);
    return s;
  };
  bool exact = true;
  int perms = 0;
  for (int rep = 0; rep < 5; ++rep) {
    for (const std::size_t c : {2u, 3u}) {
      std::vector<TD> tg, es;
      for (std::size_t j = 0; j < c; ++j) {
        tg.push_back(TD::from_vector({200}, noise(200)));
        es.push_back(TD::from_vector({200}, noise(200), true));
      }
      const double ref = pit_loss(tg, es).item();
      std::vector<std::size_t> p(c);
      std::iota(p.begin(), p.end(), 0);
      do {
        std::vector<TD> perm;
        for (const auto k : p) perm.push_back(tg[k]);
        exact = exact && pit_loss(perm, es).item() == ref;
        ++perms;
      } while (std::next_permutation(p.begin(), p.end()));
    }
  }
  std::uniform_real_distribution<double> sc(0.01, 100.0), w(0.1, 3.0);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto s = noise(256);
    auto e = noise(256);
    const double k = w(rng);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = s[i] + k * e[i];
    auto e2 = e;
    const double a = sc(rng);
    for (auto& v : e2) v *= a;
    worst = std::max(worst, std::abs(si_snr(s, e) - si_snr(s, e2)));
  }
  return {exact && worst <= 1e-6, std::to_string(perms) + " reference permutations " +
                                      (exact ? "bit-identical" : "DIFFER") + "; SI-SNR scale drift " +
                                      fmt("%.1e", worst) + " dB over 100 triples"};
}

// --- 5: autopilot reduction ---

Outcome autopilot_reduction() {
  std::mt19937_64 cfg_rng(99);
  int identical = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t heads = 1u << (cfg_rng() % 3);
    const std::size_t d = heads * (1 + cfg_rng() % 4);
    const std::size_t q = 1 + cfg_rng() % 4;
    const std::size_t s = 1 + cfg_rng() % 7;
    Rng rng(100 + trial);
    ParameterSet<float> ps;
    const auto mha = make_mha(ps, "attn", d, rng);
    auto site = make_site(ps, "steer", d, rng);
    set_neutral(site);
    std::normal_distribution<float> n(0.f, 1.f);
    std::vector<float> gv(q * s * d), zv(d);
    for (auto& v : gv) v = n(rng);
    for (auto& v : zv) v = n(rng);
    const auto g = Tensor<float>::from_vector({q, s, d}, gv);
    const auto z = Tensor<float>::from_vector({d}, zv);
    identical += dual_attention(g, z, site, mha, heads, false).values() == multihead_attention(g, g, mha, heads).values();
  }
  return {identical == 10, std::to_string(identical) + "/10 random configs bit-identical"};
}

// --- 6: split/merge ---

Outcome split_merge_roundtrip() {
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0.f, 1.f);
  double worst = 0;
  int padded = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t D = 1 + rng() % 16, K = 2 * (1 + rng() % 16), I = 1 + rng() % 200;
    std::vector<float> v(I * D);
    for (auto& x : v) x = n(rng);
    const auto x = Tensor<float>::from_vector({I, D}, v);
    const auto seg = split(x, K);
    padded += seg.pad_back > 0;
    const auto back = merge(seg);
    if (back.shape() != x.shape()) return {false, "shape changed for D=" + std::to_string(D)};
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(back.values()[i] - v[i])));
  }
  return {worst <= 1e-6 && padded > 0,
          "50 random (D, I, K), " + std::to_string(padded) + " with padding, max error " + fmt("%.1e", worst)};
}

// --- 7: cost model ---

Outcome cost_model() {
  std::vector<ModelConfig> grid;
  for (int i = 0; i < 12; ++i) {
    ModelConfig c;
    c.W = (i % 3 == 0) ? 4 : (i % 3 == 1 ? 8 : 16);
    c.galr.D = 8 * (1 + i % 3);
    c.galr.K = 8 + 8 * (i % 2);
    c.galr.Q = 2 + i % 3;
    c.galr.H = 4 + 4 * (i % 4);
    c.galr.heads = (i % 2) ? 4 : 2;
    c.galr.local_kind = (i % 4 == 3) ? LayerKind::self_attn : LayerKind::rnn;
    c.galr.global_kind = (i % 5 == 4) ? LayerKind::rnn : LayerKind::self_attn;
    c.B = 1 + i % 3;
    c.B1 = 1 + (i / 3) % 2;
    c.B2 = 1 + (i / 2) % 2;
    c.N = 3 + i;
    c.speaker_space = c.galr.global_kind == LayerKind::self_attn && i % 6 != 5;
    if (!c.speaker_space) c.B2 = 1 + i % 2;
    grid.push_back(c);
  }
  int match = 0;
  for (const auto& c : grid) match += count_params(c) == Model<float>(c, 1).params().count();
  const auto reference = count_params(reference_galr(4));
  const bool reference_ok = std::abs(static_cast<double>(reference) - 2.3e6) <= 0.1 * 2.3e6;
  GalrConfig g;
  g.D = 128;
  g.K = 256;
  g.Q = 8;
  g.heads = 8;
  const double ratio = ga_attention_flops(g, 63, true) / ga_attention_flops(g, 63, false);
  const auto galr = cost_report(reference_galr(4), 1.0);
  const auto dprnn = cost_report(reference_dprnn(2), 1.0);
  const double fr = galr.flops / dprnn.flops;
  const double mr = static_cast<double>(galr.activation_memory_bytes) / static_cast<double>(dprnn.activation_memory_bytes);
  const bool pass = match == 12 && reference_ok && ratio == 8.0 / 256.0 && fr < 0.4 && mr < 0.6;
  return {pass, std::to_string(match) + "/12 counts exact; reference model " + std::to_string(reference) +
                    " params; GA attention ratio " + fmt("%.6f", ratio) + "; FLOPs ratio " + fmt("%.3f", fr) +
                    ", memory ratio " + fmt("%.3f", mr)};
}

// --- 10, 12: CLI-driven micro runs ---

const char* kMicro = R"({
  "corpus": {"speakers": 4, "utterances": 3, "held_out_speakers": 2, "held_out_utterances": 3,
             "utterance_seconds": 0.5, "enrollment_seconds": 0.5, "test_mixtures": 4},
  "model": {"W": 4, "galr": {"D": 8, "K": 16, "Q": 4, "H": 8, "heads": 2}, "B": 1, "N": 4},
  "train": {"max_epochs": 2, "batch_size": 2, "steps_per_epoch": 3, "crop_seconds": 0.25,
            "val_mixtures": 2, "val_seconds": 0.25, "steering_reg": "noise", "speaker_aug_epochs": 1,
            "aug_utterances": 1},
  "eval": {"ablation_mixtures": 3, "ablation_seconds": 0.5}
})";

Outcome ablation_harness(const Options& opt) {
  const auto dir = opt.work / "ablation";
  fs::create_directories(dir);
  std::ofstream(dir / "micro.json") << kMicro;
  if (call_cli({"ablate", "--config", (dir / "micro.json").string(), "--grid", "all", "--out", (dir / "run").string()}) !=
      0) {
    return {false, "ablate command failed"};
  }
  std::istringstream csv(slurp(dir / "run" / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  const std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  int summarizer = 0, table = 0;
  bool complete = true, galr_trained = false;
  std::string galr_row;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != columns) {
      complete = false;
      continue;
    }
    for (std::size_t i = 3; i < f.size(); ++i) complete = complete && std::isfinite(std::stod(f[i]));
    if (f[0] == "summarizer") ++summarizer;
    if (f[0] == "steering") ++table;
    if (f[1] == "rnn+self_attn") {
      galr_trained = std::isfinite(std::stod(f.back()));
      galr_row = "rnn+self_attn SI-SNRi " + f[4] + " dB";
    }
  }
  return {complete && summarizer == 4 && table == 5 && galr_trained,
          std::to_string(summarizer) + " summarizer + " + std::to_string(table) + " steering rows, " +
              std::to_string(columns) + " columns, all finite; " + galr_row + " (reported)"};
}

Outcome ema_convergence() {
  Rng rng(11);
  ParameterSet<double> ps;
  const std::size_t n = 6, d = 8;
  const double eps = 0.05, sigma = 0.2;
  auto table = make_speaker_table(ps, n, d, rng, eps);
  const auto before = table.E.to_vector();
  const std::vector<int> fed{1, 4};
  std::vector<std::vector<double>> centre(n, std::vector<double>(d));
  std::uniform_real_distribution<double> u(-2, 2);
  for (auto& c : centre) for (auto& v : c) v = u(rng);
  std::normal_distribution<double> g(0.0, sigma);
  const int samples = 2000;
  for (int s = 0; s < samples; ++s) {
    for (const int row : fed) {
      std::vector<double> v(d);
      for (std::size_t c = 0; c < d; ++c) v[c] = centre[row][c] + g(rng);
      ema_update(table, TD::from_vector({d}, v), row);
    }
  }
  // Stationary spread of an EMA over i.i.d. samples plus the decayed start.
  const double spread = sigma * std::sqrt(eps / (2 - eps));
  double worst_ratio = 0;
  bool untouched = true;
  const auto now = table.E.to_vector();
  for (std::size_t r = 0; r < n; ++r) {
    const bool is_fed = std::find(fed.begin(), fed.end(), static_cast<int>(r)) != fed.end();
    for (std::size_t c = 0; c < d; ++c) {
      const double v = now[r * d + c];
      if (is_fed) {
        const double start = std::abs(before[r * d + c] - centre[r][c]) * std::pow(1 - eps, samples);
        const double tol = 4 * spread + start;
        worst_ratio = std::max(worst_ratio, std::abs(v - centre[r][c]) / tol);
      } else {
        untouched = untouched && v == before[r * d + c];
      }
    }
  }
  return {worst_ratio <= 1 && untouched,
          "2000 samples per fed row; worst deviation " + fmt("%.2f", worst_ratio) + " of the 4-sigma EMA tolerance (" +
              fmt("%.3f", 4 * spread) + "); other rows " + (untouched ? "bit-unchanged" : "CHANGED")};
}

Outcome reproducibility(const Options& opt) {
  const auto dir = opt.work / "repro";
  fs::create_directories(dir);
  std::ofstream(dir / "micro.json") << kMicro;
  for (const char* run : {"a", "b"}) {
    if (call_cli({"train", "--config", (dir / "micro.json").string(), "--seed", "5", "--out", (dir / run).string()}) != 0) {
      return {false, "train command failed"};
    }
  }
  const auto a = slurp(dir / "a" / "metrics.csv"), b = slurp(dir / "b" / "metrics.csv");
  const bool weights = slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin");
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  return {!a.empty() && a == b, std::to_string(rows) + " epoch rows, metrics.csv " + (a == b ? "byte-identical" : "DIFFER") +
                                    ", checkpoint.bin " + (weights ? "byte-identical" : "differs")};
}

// --- 8, 9: desk-scale training ---

struct DeskRun {
  std::unique_ptr<Model<float>> model;
  TrainResult result;
};

struct Desk {
  Corpus corpus;
  std::map<std::string, DeskRun> runs;
};

TrainConfig desk_recipe(const Options& opt, Mode mode, SpeakerLoss loss) {
  TrainConfig tc;
  tc.mode = mode;
  tc.speaker_loss = loss;
  tc.lambda = 1.0;
  tc.max_epochs = 1000;
  tc.time_budget_seconds = opt.minutes * 60;
  return tc;
}

Desk& desk() {
  static std::unique_ptr<Desk> d;
  if (!d) {
    d = std::make_unique<Desk>();
    d->corpus = build_corpus(CorpusConfig{});
  }
  return *d;
}

DeskRun& desk_run(const Options& opt, const std::string& name, Mode mode, SpeakerLoss loss, int epochs = 0) {
  auto& d = desk();
  auto it = d.runs.find(name);
  if (it != d.runs.end()) return it->second;
  DeskRun run;
  run.model = std::make_unique<Model<float>>(ModelConfig{}, 1);
  auto tc = desk_recipe(opt, mode, loss);
  if (epochs > 0) tc.max_epochs = epochs;
  Trainer trainer(*run.model, d.corpus, tc);
  TrainIO io;
  io.out_dir = (opt.work / ("desk_" + name)).string();
  run.result = trainer.run(io);
  std::fprintf(stderr, "  %s: %d epochs, %.0f CPU s\n", name.c_str(), run.result.epochs_run, run.result.cpu_seconds);
  return d.runs.emplace(name, std::move(run)).first->second;
}

Outcome desk_separation(const Options& opt) {
  const auto& online = desk_run(opt, "online", Mode::online, SpeakerLoss::ince);
  // Same samples seen as the online run, under the same CPU cap.
  const auto& autopilot = desk_run(opt, "autopilot", Mode::autopilot, SpeakerLoss::ince, online.result.epochs_run);
  const auto& test = desk().corpus.test_mixtures;
  const auto on = evaluate_separation(*online.model, test, Mode::online);
  const auto ap = evaluate_separation(*autopilot.model, test, Mode::autopilot);
  const double budget = opt.minutes * 60;
  const bool in_budget = online.result.cpu_seconds <= budget && autopilot.result.cpu_seconds <= budget;
  const bool pass = in_budget && on.si_snri >= 5.0 && ap.si_snri >= 5.0 && on.si_snri >= ap.si_snri - 0.5;
  return {pass, std::to_string(test.size()) + " test mixtures; SI-SNRi online " + fmt("%.2f", on.si_snri) +
                    " dB (" + std::to_string(online.result.epochs_run) + " epochs, " + fmt("%.0f", online.result.cpu_seconds) + " CPU s), autopilot " + fmt("%.2f", ap.si_snri) +
                    " dB (" + std::to_string(autopilot.result.epochs_run) + " epochs, " + fmt("%.0f", autopilot.result.cpu_seconds) + " CPU s), margin " +
                    fmt("%+.2f", on.si_snri - ap.si_snri) + " dB"};
}

Outcome desk_verification(const Options& opt) {
  const auto& ince = desk_run(opt, "online", Mode::online, SpeakerLoss::ince);
  const auto& token = desk_run(opt, "token_id", Mode::online, SpeakerLoss::token_id);
  const auto& held = desk().corpus.held_out;
  const auto trials = build_sv_trials(held, 100, 7);
  const auto a = evaluate_sv(*ince.model, held, trials, true, 7);
  const auto b = evaluate_sv(*token.model, held, trials, true, 7);
  const bool pass = a.trials == 200 && a.roc.auc >= 0.9 && a.roc.auc > b.roc.auc;
  // Not gated: 1 s excerpts, where full utterances saturate.
  const auto a1 = evaluate_sv(*ince.model, held, trials, true, 7, 0, 5, 1.0);
  const auto b1 = evaluate_sv(*token.model, held, trials, true, 7, 0, 5, 1.0);
  return {pass, std::to_string(a.trials) + " masked trials; AUC contrastive " + fmt("%.4f", a.roc.auc) + " (EER " +
                    fmt("%.3f", a.roc.eer) + "), token-id " + fmt("%.4f", b.roc.auc) + " (EER " + fmt("%.3f", b.roc.eer) +
                    "); 1 s excerpts: " + fmt("%.4f", a1.roc.auc) + " vs " + fmt("%.4f", b1.roc.auc) + " (reported)"};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "fast") {
      for (const int c : {1, 2, 3, 4, 5, 6, 7, 10, 11, 12}) wanted.push_back(c);
    } else if (a == "desk") {
      wanted.push_back(8);
      wanted.push_back(9);
    } else if (a == "--minutes" && i + 1 < argc) {
      opt.minutes = std::stod(argv[++i]);
    } else if (a == "--work" && i + 1 < argc) {
      opt.work = argv[++i];
    } else {
      wanted.push_back(std::stoi(a));
    }
  }
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  const bool temp_work = opt.work.empty();
  if (temp_work) opt.work = fs::temp_directory_path() / ("tunein_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(opt.work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"gradient suite", gradient_suite},
      {"identity suite", identity_suite},
      {"loss limits", loss_limits},
      {"u-PIT and scale invariance", invariances},
      {"autopilot reduction", autopilot_reduction},
      {"split/merge round trip", split_merge_roundtrip},
      {"cost model", cost_model},
      {"desk-scale separation", [&] { return desk_separation(opt); }},
      {"desk-scale verification", [&] { return desk_verification(opt); }},
      {"ablation harness", [&] { return ablation_harness(opt); }},
      {"EMA convergence", ema_convergence},
      {"reproducibility", [&] { return reproducibility(opt); }},
  };
  int failed = 0;
  for (const int c : wanted) {
    if (c < 1 || c > static_cast<int>(all.size())) {
      std::fprintf(stderr, "unknown criterion %d\n", c);
      return 2;
    }
    Outcome o;
    try {
      o = all[c - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c, all[c - 1].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  if (temp_work) fs::remove_all(opt.work);
  return failed == 0 ? 0 : 1;
}
