#pragma once

// The three-space separation model: shared encoder and generic GALR stack,
// speaker-knowledge branch ending in the embedder and cross attention, and
// the steered speech-stimuli branch feeding a masking decoder.

#include <cstdint>
#include <string>
#include <vector>

#include "tunein/audio.hpp"
#include "tunein/galr.hpp"
#include "tunein/speaker.hpp"

namespace tunein {

enum class Mode { autopilot, online, offline };
Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct ModelConfig {
  std::size_t W = 8;
  GalrConfig galr;
  std::size_t B = 2;
  std::size_t B1 = 1;
  std::size_t B2 = 1;
  std::size_t C = 2;
  std::size_t N = 20;
  SteeringKind steering_kind = SteeringKind::dual_attn;
  bool dual_norm = true;
  // Without it only the autopilot path (no speaker branch, no steering
  // sites, no table) is built.
  bool speaker_space = true;

  void validate() const;
};

template <typename T>
struct ForwardOptions {
  Mode mode = Mode::online;
  // Offline mode: one precomputed steering vector per output slot.
  const std::vector<Tensor<T>>* steering = nullptr;
  SteeringReg reg = SteeringReg::none;
  bool training = false;
  Rng* rng = nullptr;
};

template <typename T>
struct ForwardResult {
  std::vector<Tensor<T>> estimates;      // C waveforms, input length
  std::vector<Tensor<T>> steering;       // Z_j before regularization
  std::vector<Tensor<T>> cross_weights;  // [S, S_j] per source
  Tensor<T> generic;                     // [S, K, D]
};

template <typename T>
struct Spaces {
  Tensor<T> generic;                     // [S, K, D]
  std::vector<Tensor<T>> stimuli;        // C x [S, K, D]
  std::vector<Tensor<T>> speaker_feats;  // C x [S_j, D]
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  // Binds to an existing set (for example one restored from a checkpoint).
  Model(const ModelConfig& config, ParameterSet<T> params);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  SpeakerTable<T>& table() { return table_; }
  const SpeakerTable<T>& table() const { return table_; }

  ForwardResult<T> forward(const Tensor<T>& mixture, const ForwardOptions<T>& opt) const;

  // Speaker path only: steering vectors of one (enrollment) mixture, queried
  // by its own generic features. Also returns the attention maps if asked.
  std::vector<Tensor<T>> steering_vectors(const Tensor<T>& mixture,
                                          std::vector<Tensor<T>>* weights = nullptr) const;

  // Offline mode takes speaker features from enrollment (S_j != S).
  Spaces<T> run_spaces(const Tensor<T>& mixture, Mode mode, const Tensor<T>* enrollment = nullptr) const;

  // Parameter-name prefixes of the generic, speaker and stimuli spaces.
  std::vector<std::string> generic_prefixes() const;
  std::vector<std::string> speaker_prefixes() const;
  std::vector<std::string> stimuli_prefixes() const;

  // Per-layer shapes and parameter counts.
  std::string summary() const;

 private:
  struct Front {
    Tensor<T> features;  // [I, D]
    SegmentTensor<T> seg;
    std::size_t length = 0;
  };

  void bind();
  Front front(const Tensor<T>& mixture) const;
  Tensor<T> generic_stack(const Tensor<T>& x) const;
  std::vector<Tensor<T>> speaker_branch(const Tensor<T>& generic) const;
  Tensor<T> stimuli_stack(const Tensor<T>& generic, const Tensor<T>* z) const;
  Tensor<T> output_chunk(const Tensor<T>& stimuli, std::size_t j) const;
  Tensor<T> decode_source(const Tensor<T>& chunk, const Front& f) const;

  ModelConfig config_;
  ParameterSet<T> params_;
  Tensor<T> encoder_;
  Tensor<T> decoder_;
  Projection<T> output_;
  Projection<T> embedder_;
  CrossAttnParams<T> cross_;
  std::vector<BlockParams<T>> generic_;
  std::vector<BlockParams<T>> speaker_;
  std::vector<BlockParams<T>> stimuli_;
  std::vector<SteeringSite<T>> sites_;
  SpeakerTable<T> table_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace tunein
