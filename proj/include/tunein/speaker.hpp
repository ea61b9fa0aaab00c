#pragma once

// Speaker knowledge: embedder head, EMA speaker table, contrastive
// (Tune-InCE) and anti-collapse losses, verification scoring and ROC metrics.

#include <string>
#include <utility>
#include <vector>

#include "tunein/attention.hpp"

namespace tunein {

// x[S_j, K, D] -> C features [S_j, D]: linear D -> C*D, mean over K, split.
template <typename T>
std::vector<Tensor<T>> embed_speakers(const Tensor<T>& x, const Projection<T>& embedder, std::size_t sources);

template <typename T>
struct SpeakerTable {
  Tensor<T> E;          // [N, D]
  Tensor<T> alpha_raw;  // [1]; alpha = exp(alpha_raw)
  double epsilon = 0.05;

  std::size_t size() const { return E.dim(0); }
  std::size_t dim() const { return E.dim(1); }
  T alpha() const;
  Tensor<T> alpha_tensor() const { return exp(alpha_raw); }
};

// Rows ~ N(0, 1/D), alpha_raw = 0.
template <typename T>
SpeakerTable<T> make_speaker_table(ParameterSet<T>& params, std::size_t n, std::size_t d, Rng& rng,
                                   double epsilon = 0.05);
template <typename T>
SpeakerTable<T> find_speaker_table(ParameterSet<T>& params, double epsilon = 0.05);

// -(1/C) sum_j log softmax_i(-alpha ||Z_j - E_i||^2)[i_j], log-sum-exp
// stabilized. With detach_table the table receives no gradient (EMA-tracked
// centroids); otherwise rows learn by gradient (token-id baseline).
template <typename T>
Tensor<T> tune_ince_loss(const std::vector<Tensor<T>>& z, const std::vector<int>& ids, const Tensor<T>& E,
                         const Tensor<T>& alpha, bool detach_table = true);

// Cross-entropy over logits -alpha ||Z_j - E_i||^2 with gradient-learned rows.
template <typename T>
Tensor<T> token_id_loss(const std::vector<Tensor<T>>& z, const std::vector<int>& ids, const Tensor<T>& E,
                        const Tensor<T>& alpha);

// -(1/(gamma C)) sum_j log max(||E_{i_j} - E_{i*}||_1, 1e-8), i* the
// L1-nearest other row.
template <typename T>
Tensor<T> reg_loss(const Tensor<T>& E, const std::vector<int>& ids, double gamma = 3.0);

// Index of the L1-nearest row to row i, excluding i itself.
template <typename T>
std::size_t nearest_other_row(const Tensor<T>& E, std::size_t i);

// E_i <- E_i + eps (z - E_i) on the matched row only.
template <typename T>
void ema_update(SpeakerTable<T>& table, const Tensor<T>& z, int speaker_id);

// Row nearest to z under alpha-scaled squared L2.
template <typename T>
std::size_t nearest_row(const Tensor<T>& E, const Tensor<T>& z);

double sv_score(const std::vector<double>& za, const std::vector<double>& zb, double alpha);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocReport {
  double auc = 0;
  double eer = 0;
  std::vector<RocPoint> points;  // thresholds descending, from (0,0) to (1,1)
};

// Threshold sweep over unique scores; pairs are (score, same speaker).
RocReport roc_metrics(const std::vector<std::pair<double, bool>>& scores);
std::string roc_csv(const RocReport& r);

struct IdentityReport {
  double claim3_max_error = 0;  // decomposition of the contrastive loss
  double claim4_max_error = 0;  // rescaled InfoNCE kernel
  double claim2_max_error = 0;  // Gaussian likelihood ratio
  std::size_t instances = 0;
  std::string claim1 = "theorem, untested";
};

// Evaluates the three algebraic identities on one instance (f64).
IdentityReport ince_identity_checks(const std::vector<std::vector<double>>& E, const std::vector<std::vector<double>>& z,
                                    const std::vector<int>& ids, double alpha);

// Rows "label,v0,...,v{D-1}", ordered by label.
std::string embeddings_csv(const std::vector<std::pair<int, std::vector<double>>>& rows);
std::vector<std::pair<int, std::vector<double>>> parse_embeddings_csv(const std::string& text);

}  // namespace tunein
