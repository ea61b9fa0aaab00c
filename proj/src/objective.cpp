#include "tunein/objective.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tunein/ops.hpp"

namespace tunein {

namespace {

double dot(const Signal& a, const Signal& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Signal centred(const Signal& x) {
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  Signal y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - m;
  return y;
}

void check_pair(const Signal& target, const Signal& estimate) {
  if (target.empty() || target.size() != estimate.size()) {
    throw std::invalid_argument("metric needs equal non-empty lengths, got " + std::to_string(target.size()) + " and " +
                                std::to_string(estimate.size()));
  }
}

double projection_snr(const Signal& s, const Signal& e) {
  const double ss = dot(s, s);
  if (ss <= 0) throw std::invalid_argument("target has zero power");
  const double a = dot(e, s) / ss;
  double num = 0;
  double den = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double st = a * s[i];
    num += st * st;
    den += (e[i] - st) * (e[i] - st);
  }
  return 10 * std::log10((num + kSnrDelta) / (den + kSnrDelta));
}

}  // namespace

double si_snr(const Signal& target, const Signal& estimate) {
  check_pair(target, estimate);
  return projection_snr(centred(target), centred(estimate));
}

double sdr(const Signal& target, const Signal& estimate) {
  check_pair(target, estimate);
  return projection_snr(target, estimate);
}

Improvement improvements(const Signal& mixture, const std::vector<Signal>& targets,
                         const std::vector<Signal>& estimates) {
  if (targets.empty() || targets.size() != estimates.size()) {
    throw std::invalid_argument("improvements need one estimate per target");
  }
  Improvement r;
  const double c = static_cast<double>(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const double est = si_snr(targets[j], estimates[j]);
    r.si_snr += est / c;
    r.si_snri += (est - si_snr(targets[j], mixture)) / c;
    r.sdri += (sdr(targets[j], estimates[j]) - sdr(targets[j], mixture)) / c;
  }
  return r;
}

std::string to_string(AssignMethod m) { return m == AssignMethod::upit_sisnr ? "upit_sisnr" : "upit_speaker"; }

PermutationAssignment best_permutation(const std::vector<std::vector<double>>& cost, AssignMethod method) {
  const std::size_t c = cost.size();
  if (c == 0 || c > 4) throw std::invalid_argument("permutation search supports 1 to 4 sources, got " + std::to_string(c));
  for (const auto& row : cost) {
    if (row.size() != c) throw std::invalid_argument("permutation cost matrix must be square");
  }
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationAssignment best;
  best.method = method;
  best.cost = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (std::size_t j = 0; j < c; ++j) total += cost[j][perm[j]];
    if (total < best.cost || best.mapping.empty()) {
      best.cost = total;
      best.mapping = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

PermutationAssignment upit_assign(const std::vector<Signal>& targets, const std::vector<Signal>& estimates) {
  if (targets.size() != estimates.size()) {
    throw std::invalid_argument("u-PIT needs as many estimates as targets (" + std::to_string(estimates.size()) +
                                " vs " + std::to_string(targets.size()) + ")");
  }
  const std::size_t c = targets.size();
  std::vector<std::vector<double>> cost(c, std::vector<double>(c));
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t r = 0; r < c; ++r) cost[j][r] = -si_snr(targets[r], estimates[j]);
  }
  auto a = best_permutation(cost, AssignMethod::upit_sisnr);
  a.cost /= static_cast<double>(c);
  return a;
}

PermutationAssignment speaker_assign(const std::vector<Signal>& z, const std::vector<int>& ids,
                                     const std::vector<Signal>& table, double alpha) {
  if (z.size() != ids.size()) throw std::invalid_argument("speaker assignment needs one id per steering vector");
  const std::size_t c = z.size();
  std::vector<std::vector<double>> cost(c, std::vector<double>(c));
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t r = 0; r < c; ++r) {
      const auto id = static_cast<std::size_t>(ids[r]);
      if (ids[r] < 0 || id >= table.size()) throw std::out_of_range("speaker id outside table");
      if (table[id].size() != z[j].size()) throw std::invalid_argument("steering width does not match table");
      double d = 0;
      for (std::size_t k = 0; k < z[j].size(); ++k) d += (table[id][k] - z[j][k]) * (table[id][k] - z[j][k]);
      cost[j][r] = alpha * d;
    }
  }
  return best_permutation(cost, AssignMethod::upit_speaker);
}

template <typename T>
Tensor<T> si_snr_tensor(const Tensor<T>& target, const Tensor<T>& estimate) {
  if (target.shape() != estimate.shape() || target.rank() != 1) {
    throw ShapeError("SI-SNR needs matching 1-D signals, got " + shape_str(target.shape()) + " and " +
                     shape_str(estimate.shape()));
  }
  const auto s = target.detach();
  const auto sc = add_scalar(s, -mean(s).item());
  T ss = 0;
  for (const T v : sc.values()) ss += v * v;
  if (ss <= 0) throw std::invalid_argument("target has zero power");
  const auto e = sub(estimate, mean(estimate));
  const auto a = scale(sum(mul(e, sc)), T(1) / ss);
  const auto st = mul(sc, a);
  const auto noise = sub(e, st);
  const auto ratio = div(add_scalar(sum(square(st)), T(kSnrDelta)), add_scalar(sum(square(noise)), T(kSnrDelta)));
  return scale(log(ratio), T(10) / static_cast<T>(std::log(10.0)));
}

template <typename T>
Tensor<T> pit_loss(const std::vector<Tensor<T>>& targets, const std::vector<Tensor<T>>& estimates,
                   PermutationAssignment* chosen, const std::vector<std::size_t>* fixed) {
  const std::size_t c = estimates.size();
  if (c == 0 || targets.size() != c) throw std::invalid_argument("PIT loss needs one estimate per target");
  std::vector<std::vector<Tensor<T>>> terms(c);
  std::vector<std::vector<double>> cost(c, std::vector<double>(c));
  PermutationAssignment a;
  if (fixed) {
    if (fixed->size() != c) throw std::invalid_argument("fixed pairing has the wrong size");
    a.mapping = *fixed;
    a.method = AssignMethod::upit_speaker;
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t r = 0; r < c; ++r) {
        terms[j].push_back(si_snr_tensor(targets[r], estimates[j]));
        cost[j][r] = -static_cast<double>(terms[j][r].item());
      }
    }
    a = best_permutation(cost, AssignMethod::upit_sisnr);
  }
  Tensor<T> total;
  for (std::size_t j = 0; j < c; ++j) {
    const auto t = fixed ? si_snr_tensor(targets[a.mapping[j]], estimates[j]) : terms[j][a.mapping[j]];
    total = total.defined() ? add(total, t) : t;
  }
  const auto loss = scale(total, T(-1) / static_cast<T>(c));
  a.cost = static_cast<double>(loss.item());
  if (chosen) *chosen = a;
  return loss;
}

template <typename T>
Tensor<T> joint_loss(const Tensor<T>& sep, const Tensor<T>& speaker, double lambda) {
  if (!speaker.defined() || lambda == 0) {
    if (!sep.defined()) throw std::invalid_argument("joint loss has no terms");
    return sep;
  }
  const auto weighted = scale(speaker, static_cast<T>(lambda));
  return sep.defined() ? add(sep, weighted) : weighted;
}

std::string metrics_csv(const std::vector<MixtureMetrics>& rows) {
  std::ostringstream os;
  os << "id,si_snr,si_snri,sdri,permutation,method\n" << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.id << "," << r.si_snr << "," << r.si_snri << "," << r.sdri << ",";
    for (std::size_t j = 0; j < r.mapping.size(); ++j) os << (j ? "-" : "") << r.mapping[j];
    os << "," << to_string(r.method) << "\n";
  }
  return os.str();
}

#define TUNEIN_INSTANTIATE_OBJECTIVE(T)                                                                       \
  template Tensor<T> si_snr_tensor(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> pit_loss(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&,                   \
                              PermutationAssignment*, const std::vector<std::size_t>*);                       \
  template Tensor<T> joint_loss(const Tensor<T>&, const Tensor<T>&, double);

TUNEIN_INSTANTIATE_OBJECTIVE(float)
TUNEIN_INSTANTIATE_OBJECTIVE(double)

}  // namespace tunein
