#include "tunein/speaker.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace tunein {

template <typename T>
std::vector<Tensor<T>> embed_speakers(const Tensor<T>& x, const Projection<T>& embedder, std::size_t sources) {
  if (x.rank() != 3) throw ShapeError("embedder expects [S_j, K, D], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(2);
  if (embedder.weight.dim(0) != sources * d || embedder.weight.dim(1) != d) {
    throw ShapeError("embedder weight " + shape_str(embedder.weight.shape()) + " does not map " + std::to_string(d) +
                     " to " + std::to_string(sources) + " x " + std::to_string(d));
  }
  const auto pooled = mean(embedder(x), 1);  // [S_j, C*D]
  std::vector<Tensor<T>> out;
  for (std::size_t j = 0; j < sources; ++j) out.push_back(slice(pooled, 1, j * d, (j + 1) * d));
  return out;
}

template <typename T>
T SpeakerTable<T>::alpha() const {
  return std::exp(alpha_raw.values()[0]);
}

template <typename T>
SpeakerTable<T> make_speaker_table(ParameterSet<T>& params, std::size_t n, std::size_t d, Rng& rng, double epsilon) {
  SpeakerTable<T> t;
  t.E = params.create("speaker_table.E", {n, d});
  t.alpha_raw = params.create("speaker_table.alpha_raw", {1});
  init_normal(t.E, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  t.epsilon = epsilon;
  return t;
}

template <typename T>
SpeakerTable<T> find_speaker_table(ParameterSet<T>& params, double epsilon) {
  SpeakerTable<T> t;
  t.E = params.get("speaker_table.E");
  t.alpha_raw = params.get("speaker_table.alpha_raw");
  t.epsilon = epsilon;
  return t;
}

namespace {

void check_ids(const std::vector<int>& ids, std::size_t n, std::size_t count) {
  if (n < 1) throw std::invalid_argument("speaker table is empty");
  if (ids.size() != count) throw std::invalid_argument("speaker id count does not match steering vectors");
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= n) {
      throw std::out_of_range("speaker id " + std::to_string(id) + " outside table of " + std::to_string(n));
    }
  }
}

// log-softmax over rows of -alpha ||z - E_i||^2, shape [N].
template <typename T>
Tensor<T> kernel_log_probs(const Tensor<T>& z, const Tensor<T>& E, const Tensor<T>& alpha) {
  if (z.rank() != 1 || z.numel() != E.dim(1)) {
    throw ShapeError("steering vector " + shape_str(z.shape()) + " does not match table " + shape_str(E.shape()));
  }
  const auto dist = sum(square(sub(E, z)), 1);
  return log_softmax(neg(mul(dist, reshape(alpha, {}))), 0);
}

template <typename T>
Tensor<T> contrastive(const std::vector<Tensor<T>>& z, const std::vector<int>& ids, const Tensor<T>& E,
                      const Tensor<T>& alpha) {
  check_ids(ids, E.dim(0), z.size());
  if (z.empty()) throw std::invalid_argument("no steering vectors");
  Tensor<T> total;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const auto lp = index_select(kernel_log_probs(z[j], E, alpha), {static_cast<std::size_t>(ids[j])});
    total = total.defined() ? add(total, lp) : lp;
  }
  return reshape(scale(total, T(-1) / static_cast<T>(z.size())), {});
}

}  // namespace

template <typename T>
Tensor<T> tune_ince_loss(const std::vector<Tensor<T>>& z, const std::vector<int>& ids, const Tensor<T>& E,
                         const Tensor<T>& alpha, bool detach_table) {
  return contrastive(z, ids, detach_table ? E.detach() : E, alpha);
}

template <typename T>
Tensor<T> token_id_loss(const std::vector<Tensor<T>>& z, const std::vector<int>& ids, const Tensor<T>& E,
                        const Tensor<T>& alpha) {
  return contrastive(z, ids, E, alpha);
}

template <typename T>
std::size_t nearest_other_row(const Tensor<T>& E, std::size_t i) {
  const std::size_t n = E.dim(0);
  const std::size_t d = E.dim(1);
  if (n < 2) throw std::invalid_argument("nearest other row needs at least two rows");
  const auto& v = E.values();
  std::size_t best = i == 0 ? 1 : 0;
  T best_d = std::numeric_limits<T>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    if (k == i) continue;
    T dist = 0;
    for (std::size_t c = 0; c < d; ++c) dist += std::abs(v[i * d + c] - v[k * d + c]);
    if (dist < best_d) {
      best_d = dist;
      best = k;
    }
  }
  return best;
}

template <typename T>
Tensor<T> reg_loss(const Tensor<T>& E, const std::vector<int>& ids, double gamma) {
  if (E.dim(0) < 2) throw std::invalid_argument("regularization loss needs at least two speakers");
  if (gamma <= 0) throw std::invalid_argument("gamma must be positive");
  check_ids(ids, E.dim(0), ids.size());
  std::vector<std::size_t> own;
  std::vector<std::size_t> other;
  for (const int id : ids) {
    own.push_back(static_cast<std::size_t>(id));
    other.push_back(nearest_other_row(E, static_cast<std::size_t>(id)));
  }
  const auto l1 = sum(abs(sub(index_select(E, own), index_select(E, other))), 1);
  const auto logs = log(clamp_min(l1, T(1e-8)));
  return scale(sum(logs), T(-1) / static_cast<T>(gamma * static_cast<double>(ids.size())));
}

template <typename T>
void ema_update(SpeakerTable<T>& table, const Tensor<T>& z, int speaker_id) {
  const std::size_t n = table.size();
  const std::size_t d = table.dim();
  if (speaker_id < 0 || static_cast<std::size_t>(speaker_id) >= n) {
    throw std::out_of_range("EMA update for speaker " + std::to_string(speaker_id) + " outside table of " +
                            std::to_string(n));
  }
  if (z.numel() != d) throw ShapeError("EMA update vector " + shape_str(z.shape()) + " does not match table width");
  auto e = table.E.mutable_data();
  const auto& zv = z.values();
  const T eps = static_cast<T>(table.epsilon);
  T* row = e.data() + static_cast<std::size_t>(speaker_id) * d;
  for (std::size_t c = 0; c < d; ++c) row[c] += eps * (zv[c] - row[c]);
}

template <typename T>
std::size_t nearest_row(const Tensor<T>& E, const Tensor<T>& z) {
  const std::size_t n = E.dim(0);
  const std::size_t d = E.dim(1);
  const auto& v = E.values();
  const auto& zv = z.values();
  std::size_t best = 0;
  T best_d = std::numeric_limits<T>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    T dist = 0;
    for (std::size_t c = 0; c < d; ++c) dist += (v[k * d + c] - zv[c]) * (v[k * d + c] - zv[c]);
    if (dist < best_d) {
      best_d = dist;
      best = k;
    }
  }
  return best;
}

double sv_score(const std::vector<double>& za, const std::vector<double>& zb, double alpha) {
  if (za.size() != zb.size()) throw std::invalid_argument("verification vectors differ in length");
  double d = 0;
  for (std::size_t i = 0; i < za.size(); ++i) d += (za[i] - zb[i]) * (za[i] - zb[i]);
  return std::exp(-alpha * d);
}

RocReport roc_metrics(const std::vector<std::pair<double, bool>>& scores) {
  std::size_t pos = 0;
  for (const auto& s : scores) pos += s.second ? 1 : 0;
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("ROC needs at least one positive and one negative pair");
  auto sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  RocReport r;
  r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == t) {
      (sorted[i].second ? tp : fp) += 1;
      ++i;
    }
    r.points.push_back({t, static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  for (std::size_t k = 1; k < r.points.size(); ++k) {
    const auto& a = r.points[k - 1];
    const auto& b = r.points[k];
    r.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2;
  }
  // FPR - FNR rises from -1 to +1 along the sweep.
  for (std::size_t k = 1; k < r.points.size(); ++k) {
    const double d0 = r.points[k - 1].fpr - (1 - r.points[k - 1].tpr);
    const double d1 = r.points[k].fpr - (1 - r.points[k].tpr);
    if (d1 >= 0) {
      const double w = d0 == d1 ? 0.0 : d0 / (d0 - d1);
      r.eer = r.points[k - 1].fpr + w * (r.points[k].fpr - r.points[k - 1].fpr);
      break;
    }
  }
  return r;
}

std::string roc_csv(const RocReport& r) {
  std::ostringstream os;
  os << "threshold,fpr,tpr\n" << std::setprecision(12);
  for (const auto& p : r.points) {
    if (std::isinf(p.threshold)) {
      os << "inf";
    } else {
      os << p.threshold;
    }
    os << "," << p.fpr << "," << p.tpr << "\n";
  }
  return os.str();
}

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

double sqnorm(const std::vector<double>& a) {
  double s = 0;
  for (const double v : a) s += v * v;
  return s;
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double gaussian_density(const std::vector<double>& x, const std::vector<double>& mu, double var) {
  const double d = static_cast<double>(x.size());
  return std::pow(2 * std::numbers::pi * var, -d / 2) * std::exp(-sqdist(x, mu) / (2 * var));
}

}  // namespace

IdentityReport ince_identity_checks(const std::vector<std::vector<double>>& E, const std::vector<std::vector<double>>& z,
                                    const std::vector<int>& ids, double alpha) {
  if (E.empty() || z.empty()) throw std::invalid_argument("identity checks need a table and steering vectors");
  const std::size_t n = E.size();
  const std::size_t d = E[0].size();
  IdentityReport rep;
  rep.instances = 1;

  std::vector<double> flat;
  for (const auto& row : E) flat.insert(flat.end(), row.begin(), row.end());
  const auto Et = Tensor<double>::from_vector({n, d}, flat);
  std::vector<Tensor<double>> zt;
  for (const auto& v : z) zt.push_back(Tensor<double>::from_vector({d}, v));
  const double lhs = tune_ince_loss(zt, ids, Et, Tensor<double>::from_vector({1}, {alpha})).item();
  double attract = 0;
  double repel = 0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    attract += alpha * sqdist(z[j], E[static_cast<std::size_t>(ids[j])]);
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(-alpha * sqdist(z[j], E[i]));
    repel += std::log(acc);
  }
  const double m = static_cast<double>(z.size());
  rep.claim3_max_error = rel_err(lhs, attract / m + repel / m);

  const double var = 1.0 / (2 * alpha);
  const std::vector<double> origin(d, 0.0);
  for (const auto& zj : z) {
    for (const auto& ei : E) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += zj[c] * ei[c];
      const double f = std::exp(-alpha * sqdist(zj, ei));
      const double infonce = std::pow(std::exp(dot), 2 * alpha) / std::exp(alpha * sqnorm(zj) + alpha * sqnorm(ei));
      rep.claim4_max_error = std::max(rep.claim4_max_error, rel_err(f, infonce));
      const double lhs2 = std::exp(-alpha * sqdist(zj, ei) + alpha * sqnorm(zj));
      const double ratio = gaussian_density(zj, ei, var) / gaussian_density(zj, origin, var);
      rep.claim2_max_error = std::max(rep.claim2_max_error, rel_err(lhs2, ratio));
    }
  }
  return rep;
}

std::string embeddings_csv(const std::vector<std::pair<int, std::vector<double>>>& rows) {
  auto sorted = rows;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::ostringstream os;
  const std::size_t d = sorted.empty() ? 0 : sorted[0].second.size();
  os << "label";
  for (std::size_t c = 0; c < d; ++c) os << ",d" << c;
  os << "\n" << std::setprecision(17);
  for (const auto& [label, v] : sorted) {
    os << label;
    for (const double x : v) os << "," << x;
    os << "\n";
  }
  return os.str();
}

std::vector<std::pair<int, std::vector<double>>> parse_embeddings_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  std::vector<std::pair<int, std::vector<double>>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    std::pair<int, std::vector<double>> row{std::stoi(cell), {}};
    while (std::getline(ls, cell, ',')) row.second.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

#define TUNEIN_INSTANTIATE_SPEAKER(T)                                                                            \
  template std::vector<Tensor<T>> embed_speakers(const Tensor<T>&, const Projection<T>&, std::size_t);           \
  template struct SpeakerTable<T>;                                                                               \
  template SpeakerTable<T> make_speaker_table(ParameterSet<T>&, std::size_t, std::size_t, Rng&, double);         \
  template SpeakerTable<T> find_speaker_table(ParameterSet<T>&, double);                                         \
  template Tensor<T> tune_ince_loss(const std::vector<Tensor<T>>&, const std::vector<int>&, const Tensor<T>&,    \
                                    const Tensor<T>&, bool);                                                     \
  template Tensor<T> token_id_loss(const std::vector<Tensor<T>>&, const std::vector<int>&, const Tensor<T>&,     \
                                   const Tensor<T>&);                                                            \
  template Tensor<T> reg_loss(const Tensor<T>&, const std::vector<int>&, double);                                \
  template std::size_t nearest_other_row(const Tensor<T>&, std::size_t);                                         \
  template void ema_update(SpeakerTable<T>&, const Tensor<T>&, int);                                             \
  template std::size_t nearest_row(const Tensor<T>&, const Tensor<T>&);

TUNEIN_INSTANTIATE_SPEAKER(float)
TUNEIN_INSTANTIATE_SPEAKER(double)

}  // namespace tunein
