#include "tunein/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "tunein/params.hpp"

namespace tunein {

namespace {

void put_u16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint16_t get_u16(const std::string& b, std::size_t at) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + at, 2);
  return v;
}

std::uint32_t get_u32(const std::string& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

Rng seeded(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

}  // namespace

void write_wav(const std::string& path, const Waveform& wave) {
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  std::string out = "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (const float s : wave.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    out.append(reinterpret_cast<const char*>(&q), 2);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw AudioError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw AudioError("cannot open " + path);
  std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw AudioError("not a RIFF/WAVE file: " + path);
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t len = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw AudioError("truncated chunk '" + id + "' in " + path);
    if (id == "fmt ") {
      if (len < 16) throw AudioError("short fmt chunk in " + path);
      const auto format = get_u16(b, body);
      const auto channels = get_u16(b, body + 2);
      const auto bits = get_u16(b, body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw AudioError("only 16-bit PCM mono is supported: " + path);
      }
      w.sample_rate = static_cast<int>(get_u32(b, body + 4));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw AudioError("data chunk before fmt in " + path);
      const std::size_t n = len / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t q;
        std::memcpy(&q, b.data() + body + 2 * i, 2);
        w.samples[i] = static_cast<float>(q) / 32767.0f;
      }
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw AudioError("no data chunk in " + path);
}

SpeakerProfile make_profile(int speaker_id, int voice, std::uint64_t corpus_seed) {
  SpeakerProfile p;
  p.speaker_id = speaker_id;
  p.voice = voice;
  p.seed = corpus_seed * 1000003ULL + static_cast<std::uint64_t>(voice) * 7919ULL + 17ULL;
  Rng rng = seeded(p.seed, 0x5eedULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.fundamental_hz = 80.0 + 6.5 * voice + 3.5 * u(rng);
  p.formant_centers = {300 + 500 * u(rng), 900 + 1300 * u(rng), 2300 + 1000 * u(rng)};
  p.formant_widths = {80 + 80 * u(rng), 120 + 120 * u(rng), 150 + 150 * u(rng)};
  p.vibrato_rate = 4.0 + 3.0 * u(rng);
  p.vibrato_depth = 0.005 + 0.005 * u(rng);
  return p;
}

Waveform synth_utterance(const SpeakerProfile& profile, double duration_s, std::uint64_t seed, int sample_rate) {
  if (duration_s < 0.5) throw std::invalid_argument("utterance duration must be at least 0.5 s");
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  Rng rng = seeded(profile.seed, seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const double fs = sample_rate;

  // Syllable envelope and per-syllable formant shift.
  std::vector<double> env(n, 0.0);
  std::vector<double> shift(n, 1.0);
  std::size_t t = static_cast<std::size_t>((0.02 + 0.06 * u(rng)) * fs);
  while (t < n) {
    const auto len = static_cast<std::size_t>((0.12 + 0.18 * u(rng)) * fs);
    const double amp = 0.6 + 0.4 * u(rng);
    const double fshift = 0.92 + 0.16 * u(rng);
    for (std::size_t i = 0; i < len && t + i < n; ++i) {
      const double s = std::sin(std::numbers::pi * (i + 0.5) / len);
      env[t + i] = amp * s * s;
      shift[t + i] = fshift;
    }
    t += len + static_cast<std::size_t>((0.03 + 0.09 * u(rng)) * fs);
  }

  const double glide_period = 1.5 + 1.5 * u(rng);
  const double glide_phase = two_pi * u(rng);
  const double vib_phase = two_pi * u(rng);
  const double f_nyq = 0.45 * fs;
  const int max_h = std::max(1, static_cast<int>(f_nyq / (profile.fundamental_hz * 0.95)));
  std::vector<double> phase(max_h);
  for (auto& ph : phase) ph = two_pi * u(rng);

  // Harmonic amplitudes follow the formant bands and are refreshed every
  // amp_block samples.
  constexpr std::size_t amp_block = 32;
  std::vector<double> amp(max_h, 0.0);
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double time = i / fs;
    const double f0 = profile.fundamental_hz *
                      (1.0 + 0.03 * std::sin(two_pi * time / glide_period + glide_phase) +
                       profile.vibrato_depth * std::sin(two_pi * profile.vibrato_rate * time + vib_phase));
    if (i % amp_block == 0) {
      amp[0] = 1.0;
      for (int h = 2; h <= max_h; ++h) {
        const double f = h * f0;
        double g = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double d = (f - profile.formant_centers[k] * shift[i]) / profile.formant_widths[k];
          g += std::exp(-0.5 * d * d);
        }
        amp[h - 1] = 0.6 * std::min(g, 1.0) / std::sqrt(static_cast<double>(h));
      }
    }
    double acc = 0.0;
    for (int h = 1; h <= max_h; ++h) {
      const double f = h * f0;
      auto& ph = phase[h - 1];
      ph += two_pi * f / fs;
      if (ph > two_pi) ph -= two_pi;
      if (f < f_nyq) acc += amp[h - 1] * std::sin(ph);
    }
    y[i] = env[i] * acc;
  }

  double peak = 0.0;
  for (const double v : y) peak = std::max(peak, std::abs(v));
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  const double g = peak > 0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(std::clamp(y[i] * g, -0.9, 0.9));
  return w;
}

double signal_power(const std::vector<float>& x) {
  if (x.empty()) return 0.0;
  double p = 0.0;
  for (const float v : x) p += static_cast<double>(v) * v;
  return p / static_cast<double>(x.size());
}

MixtureSample mix(const Waveform& target, const Waveform& interferer, double sir_db, int target_id,
                  int interferer_id) {
  if (target.samples.empty()) throw AudioError("mix: empty target");
  if (target.sample_rate != interferer.sample_rate) throw AudioError("mix: sample rates differ");
  const std::size_t n = target.samples.size();
  std::vector<float> other(n, 0.0f);
  std::copy_n(interferer.samples.begin(), std::min(n, interferer.samples.size()), other.begin());
  const double pt = signal_power(target.samples);
  const double pi = signal_power(other);
  if (pi <= 0.0) throw AudioError("mix: interferer has zero power");
  if (pt <= 0.0) throw AudioError("mix: target has zero power");
  double ci = std::sqrt(pt / (pi * std::pow(10.0, sir_db / 10.0)));
  double ct = 1.0;
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, std::abs(ct * target.samples[i] + ci * other[i]));
  if (peak > 1.0) {
    ct /= peak;
    ci /= peak;
  }
  MixtureSample m;
  m.sir_db = sir_db;
  m.speaker_ids = {target_id, interferer_id};
  m.scale_factors = {ct, ci};
  Waveform s0{std::vector<float>(n), target.sample_rate};
  Waveform s1{std::vector<float>(n), target.sample_rate};
  m.mixture = Waveform{std::vector<float>(n), target.sample_rate};
  for (std::size_t i = 0; i < n; ++i) {
    s0.samples[i] = static_cast<float>(ct * target.samples[i]);
    s1.samples[i] = static_cast<float>(ci * other[i]);
    m.mixture.samples[i] = s0.samples[i] + s1.samples[i];
  }
  m.sources = {std::move(s0), std::move(s1)};
  return m;
}

template <typename T>
Tensor<T> to_tensor(const Waveform& wave) {
  return Tensor<T>::from_vector({wave.samples.size()}, std::vector<T>(wave.samples.begin(), wave.samples.end()));
}

template <typename T>
Waveform to_waveform(const Tensor<T>& x, int sample_rate) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(x.values().begin(), x.values().end());
  return w;
}

template <typename T>
Tensor<T> encode(const Tensor<T>& x, const Tensor<T>& weight) {
  if (weight.rank() != 2) throw ShapeError("encode: weight must be [D, W], got " + shape_str(weight.shape()));
  const std::size_t window = weight.dim(1);
  if (window < 2 || window % 2 != 0) throw ShapeError("encode: window must be even, got " + std::to_string(window));
  if (x.rank() != 1 || x.numel() < window) {
    throw ShapeError("encode: mixture of shape " + shape_str(x.shape()) + " is shorter than window " +
                     std::to_string(window));
  }
  return relu(linear(unfold1d(x, window, window / 2), weight, Tensor<T>()));
}

template <typename T>
Tensor<T> decode(const Tensor<T>& features, const Tensor<T>& mixture_features, const Tensor<T>& weight) {
  if (features.shape() != mixture_features.shape()) {
    throw ShapeError("decode: mask " + shape_str(features.shape()) + " does not match mixture features " +
                     shape_str(mixture_features.shape()));
  }
  if (weight.rank() != 2 || features.rank() != 2 || weight.dim(0) != features.dim(1)) {
    throw ShapeError("decode: weight " + shape_str(weight.shape()) + " incompatible with features " +
                     shape_str(features.shape()));
  }
  const auto masked = mul(relu(features), mixture_features);
  return fold1d(matmul(masked, weight), weight.dim(1) / 2);
}

std::size_t padded_length(std::size_t length, std::size_t window) {
  const std::size_t stride = window / 2;
  if (length <= window) return window;
  return window + ((length - window + stride - 1) / stride) * stride;
}

template <typename T>
SegmentTensor<T> split(const Tensor<T>& x, std::size_t segment) {
  if (x.rank() != 2) throw ShapeError("split: expected [I, D], got " + shape_str(x.shape()));
  SegmentTensor<T> s;
  s.data = frame_segments(x, segment);
  s.segment = segment;
  s.hop = segment / 2;
  s.original_length = x.dim(0);
  s.pad_back = (s.count() - 1) * s.hop + segment - s.original_length;
  return s;
}

template <typename T>
Tensor<T> merge_like(const Tensor<T>& data, const SegmentTensor<T>& layout) {
  if (data.rank() != 3 || data.dim(1) != layout.segment || layout.hop * 2 != layout.segment ||
      (data.dim(0) - 1) * layout.hop + layout.segment != layout.original_length + layout.pad_front + layout.pad_back) {
    throw ShapeError("merge: segment metadata inconsistent with data " + shape_str(data.shape()));
  }
  return overlap_add_segments(data, layout.original_length);
}

template <typename T>
Tensor<T> merge(const SegmentTensor<T>& seg) {
  return merge_like(seg.data, seg);
}

#define TUNEIN_INSTANTIATE_AUDIO(T)                                                   \
  template Tensor<T> to_tensor<T>(const Waveform&);                                   \
  template Waveform to_waveform(const Tensor<T>&, int);                               \
  template Tensor<T> encode(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> decode(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template struct SegmentTensor<T>;                                                   \
  template SegmentTensor<T> split(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> merge(const SegmentTensor<T>&);                                  \
  template Tensor<T> merge_like(const Tensor<T>&, const SegmentTensor<T>&);

TUNEIN_INSTANTIATE_AUDIO(float)
TUNEIN_INSTANTIATE_AUDIO(double)

}  // namespace tunein
