#pragma once

// Separation metrics, permutation search and loss assembly.

#include <string>
#include <vector>

#include "tunein/tensor.hpp"

namespace tunein {

using Signal = std::vector<double>;

inline constexpr double kSnrDelta = 1e-8;

// Zero-mean SI-SNR in dB. Throws on length mismatch or a silent target.
double si_snr(const Signal& target, const Signal& estimate);
// Projection SNR without mean removal (single-tap distortion model).
double sdr(const Signal& target, const Signal& estimate);

struct Improvement {
  double si_snr = 0;   // mean over sources of the estimate metric
  double si_snri = 0;
  double sdri = 0;
};

// estimates[j] is paired with targets[j].
Improvement improvements(const Signal& mixture, const std::vector<Signal>& targets,
                         const std::vector<Signal>& estimates);

enum class AssignMethod { upit_sisnr, upit_speaker };
std::string to_string(AssignMethod m);

struct PermutationAssignment {
  std::vector<std::size_t> mapping;  // estimate j <-> reference mapping[j]
  double cost = 0;                   // lower is better
  AssignMethod method = AssignMethod::upit_sisnr;
};

// Exhaustive search over C! pairings scored by a C x C cost matrix
// cost[j][r] (estimate j against reference r); lexicographic tie-break.
PermutationAssignment best_permutation(const std::vector<std::vector<double>>& cost, AssignMethod method);

// Maximizes mean SI-SNR; cost is the negated mean.
PermutationAssignment upit_assign(const std::vector<Signal>& targets, const std::vector<Signal>& estimates);

// Minimizes sum_j alpha ||E_{ids[mapping[j]]} - Z_j||^2.
PermutationAssignment speaker_assign(const std::vector<Signal>& z, const std::vector<int>& ids,
                                     const std::vector<Signal>& table, double alpha);

// Differentiable SI-SNR of a single estimate [L] against a constant target [L].
template <typename T>
Tensor<T> si_snr_tensor(const Tensor<T>& target, const Tensor<T>& estimate);

// -mean SI-SNR under the best pairing (or a fixed one when given). Terms are
// summed in estimate order so the value does not depend on reference order.
template <typename T>
Tensor<T> pit_loss(const std::vector<Tensor<T>>& targets, const std::vector<Tensor<T>>& estimates,
                   PermutationAssignment* chosen = nullptr, const std::vector<std::size_t>* fixed = nullptr);

// sep + lambda * speaker; either term may be undefined (absent).
template <typename T>
Tensor<T> joint_loss(const Tensor<T>& sep, const Tensor<T>& speaker, double lambda);

struct MixtureMetrics {
  std::string id;
  double si_snr = 0;
  double si_snri = 0;
  double sdri = 0;
  std::vector<std::size_t> mapping;
  AssignMethod method = AssignMethod::upit_sisnr;
};

std::string metrics_csv(const std::vector<MixtureMetrics>& rows);

}  // namespace tunein
