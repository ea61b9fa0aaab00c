#pragma once

// Waveforms, the synthetic speaker corpus, SIR mixing, and the learned
// encoder/decoder plus segmentation transforms.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tunein/ops.hpp"

namespace tunein {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 8000;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

class AudioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PCM 16-bit mono little-endian. Samples are clipped to [-1, 1] on write.
void write_wav(const std::string& path, const Waveform& wave);
Waveform read_wav(const std::string& path);

struct SpeakerProfile {
  int speaker_id = 0;
  int voice = 0;  // index on the pitch ladder
  double fundamental_hz = 0;
  std::array<double, 3> formant_centers{};
  std::array<double, 3> formant_widths{};
  double vibrato_rate = 0;
  double vibrato_depth = 0;
  std::uint64_t seed = 0;
};

// Voice v sits at 80 + 6.5 v + 3.5 u Hz with u in [0, 1), so distinct
// voices are at least 3 Hz apart.
SpeakerProfile make_profile(int speaker_id, int voice, std::uint64_t corpus_seed);

// Harmonic source with syllabic envelopes, shaped by three formant bands and
// peak-normalized to 0.9.
Waveform synth_utterance(const SpeakerProfile& profile, double duration_s, std::uint64_t seed,
                         int sample_rate = 8000);

struct MixtureSample {
  Waveform mixture;
  std::vector<Waveform> sources;       // scaled references, sum == mixture
  std::vector<int> speaker_ids;
  std::vector<double> scale_factors;   // c_i applied to the raw inputs
  double sir_db = 0;
};

// Interferer is cropped or zero-padded to the target length and scaled to the
// requested SIR. A common gain below 1 is applied only if the summed peak
// would exceed 1.
MixtureSample mix(const Waveform& target, const Waveform& interferer, double sir_db, int target_id = 0,
                  int interferer_id = 1);

double signal_power(const std::vector<float>& x);

// Mono waveform as a 1-D tensor and back.
template <typename T>
Tensor<T> to_tensor(const Waveform& wave);
template <typename T>
Waveform to_waveform(const Tensor<T>& x, int sample_rate);

// x[L] -> ReLU(conv1d(x, weight[D, W], stride W/2)) as [I, D] with
// I = floor((L - W) / (W/2)) + 1.
template <typename T>
Tensor<T> encode(const Tensor<T>& x, const Tensor<T>& weight);

// Waveform for one source from pre-mask features[I, D]: ReLU mask, product
// with the mixture features, transposed convolution with weight[D, W].
template <typename T>
Tensor<T> decode(const Tensor<T>& features, const Tensor<T>& mixture_features, const Tensor<T>& weight);

// Smallest L' >= L with L' >= W and (L' - W) divisible by W/2.
std::size_t padded_length(std::size_t length, std::size_t window);

template <typename T>
struct SegmentTensor {
  Tensor<T> data;  // [S, K, D], channel-last
  std::size_t segment = 0;
  std::size_t hop = 0;
  std::size_t pad_front = 0;
  std::size_t pad_back = 0;
  std::size_t original_length = 0;

  std::size_t count() const { return data.dim(0); }
};

template <typename T>
SegmentTensor<T> split(const Tensor<T>& x, std::size_t segment);
template <typename T>
Tensor<T> merge(const SegmentTensor<T>& seg);
// Same as merge, for a tensor with the layout of seg.data.
template <typename T>
Tensor<T> merge_like(const Tensor<T>& data, const SegmentTensor<T>& layout);

}  // namespace tunein
