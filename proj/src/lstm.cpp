#include "tunein/lstm.hpp"

#include <cmath>
#include <memory>

#include "op_util.hpp"

namespace tunein {

using detail::CMapR;
using detail::grad_target;
using detail::make_result;
using detail::MapR;
using detail::MatR;
using detail::Node;

namespace {

template <typename T>
T sigm(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Time-major activations of one direction, kept for the backward sweep.
template <typename T>
struct DirState {
  MatR<T> gates;  // [T*B, 4H] post-activation i, f, g, o
  MatR<T> c;      // [T*B, H]
  MatR<T> h;      // [T*B, H]
};

template <typename T>
void run_direction(const MatR<T>& xt, const LstmDirection<T>& p, std::size_t steps, std::size_t batch,
                   std::size_t hidden, bool reverse, DirState<T>& st) {
  const std::size_t g4 = 4 * hidden;
  CMapR<T> w_ih(p.w_ih.values().data(), g4, xt.cols());
  CMapR<T> w_hh(p.w_hh.values().data(), g4, hidden);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(p.bias.values().data(), g4);
  st.gates.noalias() = xt * w_ih.transpose();
  st.gates.rowwise() += b;
  st.c.resize(steps * batch, hidden);
  st.h.resize(steps * batch, hidden);
  MatR<T> rec(batch, g4);
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t t = reverse ? steps - 1 - n : n;
    auto gt = st.gates.middleRows(t * batch, batch);
    if (n > 0) {
      const std::size_t tp = reverse ? t + 1 : t - 1;
      rec.noalias() = st.h.middleRows(tp * batch, batch) * w_hh.transpose();
      gt += rec;
    }
    for (std::size_t r = 0; r < batch; ++r) {
      T* g = gt.row(r).data();
      T* c = st.c.row(t * batch + r).data();
      T* h = st.h.row(t * batch + r).data();
      const T* cp = n > 0 ? st.c.row((reverse ? t + 1 : t - 1) * batch + r).data() : nullptr;
      for (std::size_t k = 0; k < hidden; ++k) {
        const T i = sigm(g[k]);
        const T f = sigm(g[hidden + k]);
        const T gg = std::tanh(g[2 * hidden + k]);
        const T o = sigm(g[3 * hidden + k]);
        g[k] = i;
        g[hidden + k] = f;
        g[2 * hidden + k] = gg;
        g[3 * hidden + k] = o;
        c[k] = i * gg + (cp ? f * cp[k] : T(0));
        h[k] = o * std::tanh(c[k]);
      }
    }
  }
}

// dh_out: [T*B, H] upstream gradient for this direction's output, time-major.
template <typename T>
void backprop_direction(const MatR<T>& xt, const MatR<T>& dh_out, const DirState<T>& st, Node<T>& self,
                        std::size_t base, std::size_t steps, std::size_t batch, std::size_t hidden, bool reverse,
                        MatR<T>* dxt) {
  const std::size_t g4 = 4 * hidden;
  const std::size_t din = xt.cols();
  CMapR<T> w_ih(self.inputs[base]->value.data(), g4, din);
  CMapR<T> w_hh(self.inputs[base + 1]->value.data(), g4, hidden);
  MatR<T> dpre(steps * batch, g4);
  MatR<T> dh_next = MatR<T>::Zero(batch, hidden);
  MatR<T> dc_next = MatR<T>::Zero(batch, hidden);
  for (std::size_t n = steps; n-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - n : n;
    const bool has_prev = n > 0;
    const std::size_t tp = reverse ? t + 1 : t - 1;
    for (std::size_t r = 0; r < batch; ++r) {
      const std::size_t row = t * batch + r;
      const T* g = st.gates.row(row).data();
      const T* c = st.c.row(row).data();
      const T* cp = has_prev ? st.c.row(tp * batch + r).data() : nullptr;
      T* dg = dpre.row(row).data();
      for (std::size_t k = 0; k < hidden; ++k) {
        const T i = g[k], f = g[hidden + k], gg = g[2 * hidden + k], o = g[3 * hidden + k];
        const T tc = std::tanh(c[k]);
        const T dh = dh_out(row, k) + dh_next(r, k);
        const T dc = dc_next(r, k) + dh * o * (T(1) - tc * tc);
        dg[k] = dc * gg * i * (T(1) - i);
        dg[hidden + k] = has_prev ? dc * cp[k] * f * (T(1) - f) : T(0);
        dg[2 * hidden + k] = dc * i * (T(1) - gg * gg);
        dg[3 * hidden + k] = dh * tc * o * (T(1) - o);
        dc_next(r, k) = dc * f;
      }
    }
    if (has_prev) {
      dh_next.noalias() = dpre.middleRows(t * batch, batch) * w_hh;
      if (auto* gw = grad_target(self, base + 1)) {
        MapR<T> GW(gw->data(), g4, hidden);
        GW.noalias() += dpre.middleRows(t * batch, batch).transpose() * st.h.middleRows(tp * batch, batch);
      }
    }
  }
  if (auto* gw = grad_target(self, base)) {
    MapR<T> GW(gw->data(), g4, din);
    GW.noalias() += dpre.transpose() * xt;
  }
  if (auto* gb = grad_target(self, base + 2)) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> GB(gb->data(), g4);
    GB += dpre.colwise().sum();
  }
  if (dxt) dxt->noalias() += dpre * w_ih;
}

template <typename T>
void check_direction(const LstmDirection<T>& p, std::size_t din, std::size_t hidden, const char* which) {
  const auto bad = [&](const Tensor<T>& t, const Shape& want) { return !t.defined() || t.shape() != want; };
  if (bad(p.w_ih, {4 * hidden, din}) || bad(p.w_hh, {4 * hidden, hidden}) || bad(p.bias, {4 * hidden})) {
    throw ShapeError(std::string("bilstm: ") + which + " parameters do not match input width " + std::to_string(din) +
                     " and hidden size " + std::to_string(hidden));
  }
}

}  // namespace

template <typename T>
Tensor<T> bilstm(const Tensor<T>& x, const LstmDirection<T>& fwd, const LstmDirection<T>& bwd) {
  if (x.rank() != 3) throw ShapeError("bilstm: expected [B, T, Din], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t din = x.dim(2);
  if (steps == 0) throw ShapeError("bilstm: empty sequence");
  if (!fwd.w_hh.defined() || fwd.w_hh.rank() != 2) throw ShapeError("bilstm: missing recurrent weights");
  const std::size_t hidden = fwd.w_hh.dim(1);
  check_direction(fwd, din, hidden, "forward");
  check_direction(bwd, din, hidden, "backward");

  // Time-major copy of the input: row t*B + b.
  auto xt = std::make_shared<MatR<T>>(steps * batch, din);
  const auto& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy_n(xv.data() + (b * steps + t) * din, din, xt->row(t * batch + b).data());
    }
  }
  auto sf = std::make_shared<DirState<T>>();
  auto sb = std::make_shared<DirState<T>>();
  run_direction(*xt, fwd, steps, batch, hidden, false, *sf);
  run_direction(*xt, bwd, steps, batch, hidden, true, *sb);

  Buffer<T> out(batch * steps * 2 * hidden);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      T* dst = out.data() + (b * steps + t) * 2 * hidden;
      std::copy_n(sf->h.row(t * batch + b).data(), hidden, dst);
      std::copy_n(sb->h.row(t * batch + b).data(), hidden, dst + hidden);
    }
  }
  const std::size_t saved = xt->size() + 2 * steps * batch * 6 * hidden;
  return make_result<T>(
      "bilstm", {batch, steps, 2 * hidden}, std::move(out),
      {x, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias},
      [=](Node<T>& self) {
        MatR<T> dhf(steps * batch, hidden);
        MatR<T> dhb(steps * batch, hidden);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t t = 0; t < steps; ++t) {
            const T* g = self.grad.data() + (b * steps + t) * 2 * hidden;
            std::copy_n(g, hidden, dhf.row(t * batch + b).data());
            std::copy_n(g + hidden, hidden, dhb.row(t * batch + b).data());
          }
        }
        auto* gx = grad_target(self, 0);
        MatR<T> dxt;
        if (gx) dxt = MatR<T>::Zero(steps * batch, din);
        backprop_direction(*xt, dhf, *sf, self, 1, steps, batch, hidden, false, gx ? &dxt : nullptr);
        backprop_direction(*xt, dhb, *sb, self, 4, steps, batch, hidden, true, gx ? &dxt : nullptr);
        if (gx) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < steps; ++t) {
              const T* src = dxt.row(t * batch + b).data();
              T* dst = gx->data() + (b * steps + t) * din;
              for (std::size_t k = 0; k < din; ++k) dst[k] += src[k];
            }
          }
        }
      },
      saved);
}

template Tensor<float> bilstm(const Tensor<float>&, const LstmDirection<float>&, const LstmDirection<float>&);
template Tensor<double> bilstm(const Tensor<double>&, const LstmDirection<double>&, const LstmDirection<double>&);

}  // namespace tunein
