#pragma once

// Closed-form parameter, activation-memory and FLOP accounting for the
// separation model, plus the window-length sweep against a dual-path RNN.

#include <cstdint>
#include <string>
#include <vector>

#include "tunein/model.hpp"

namespace tunein {

struct CostReport {
  std::size_t params = 0;
  std::size_t activation_memory_bytes = 0;  // f32, every forward activation retained
  double flops = 0;                         // 2 x multiply-accumulates, forward
};

// Exact count of every tensor the model constructor creates.
std::size_t count_params(const ModelConfig& config);

// Memory and FLOPs follow the separation path in autopilot mode (generic and
// stimuli stacks, C decoded sources).
std::size_t input_samples(double seconds, int sample_rate);
double estimate_flops(const ModelConfig& config, double seconds, int sample_rate = 8000);
std::size_t estimate_memory(const ModelConfig& config, double seconds, int sample_rate = 8000);
CostReport cost_report(const ModelConfig& config, double seconds, int sample_rate = 8000);

// FLOPs of one GA-layer attention (projections, scores, weighted sum) over
// S segments, with the K -> Q pooling or on all K positions.
double ga_attention_flops(const GalrConfig& g, std::size_t segments, bool pooled);

// D=128, K=256, Q=8, H=128, six blocks, no speaker space.
ModelConfig reference_galr(std::size_t window);
// Same skeleton with a recurrent inter-chunk layer; D=64, H=128.
ModelConfig reference_dprnn(std::size_t window);

struct SweepRow {
  std::string arch;
  std::size_t window = 0;
  std::size_t params = 0;
  std::size_t memory_bytes = 0;
  double gflops = 0;
};

std::vector<SweepRow> window_sweep(const std::vector<std::size_t>& windows = {2, 4, 8, 16}, double seconds = 1.0,
                                   int sample_rate = 8000);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace tunein
