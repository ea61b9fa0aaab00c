#include "tunein/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tunein {

Mode parse_mode(const std::string& s) {
  if (s == "autopilot") return Mode::autopilot;
  if (s == "online") return Mode::online;
  if (s == "offline") return Mode::offline;
  throw std::invalid_argument("unknown mode '" + s + "' (expected autopilot, online or offline)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::autopilot: return "autopilot";
    case Mode::online: return "online";
    case Mode::offline: return "offline";
  }
  return "autopilot";
}

void ModelConfig::validate() const {
  galr.validate();
  if (W < 2 || W % 2 != 0) throw std::invalid_argument("window W must be even and at least 2");
  if (C < 1 || C > 4) throw std::invalid_argument("source count C must be in [1, 4]");
  if (B < 1 || B2 < 1) throw std::invalid_argument("B and B2 must be at least 1");
  if (speaker_space && B1 < 1) throw std::invalid_argument("B1 must be at least 1");
  if (speaker_space && N < 1) throw std::invalid_argument("speaker table needs N >= 1");
}

namespace {

std::string block_name(const std::string& space, std::size_t b) { return space + "." + std::to_string(b); }

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.galr.D;
  auto& enc = params_.create("encoder.weight", {d, config_.W});
  init_uniform(enc, 1.0 / std::sqrt(static_cast<double>(config_.W)), rng);
  for (std::size_t b = 0; b < config_.B; ++b) make_block(params_, block_name("generic", b), config_.galr, rng);
  if (config_.speaker_space) {
    for (std::size_t b = 0; b < config_.B1; ++b) make_block(params_, block_name("speaker", b), config_.galr, rng);
    make_projection(params_, "embedder", config_.C * d, d, rng);
    make_cross(params_, "cross", d, rng);
  }
  for (std::size_t b = 0; b < config_.B2; ++b) {
    make_block(params_, block_name("stimuli", b), config_.galr, rng);
    if (config_.speaker_space) make_site(params_, block_name("stimuli", b) + ".steer", d, rng);
  }
  make_projection(params_, "output", config_.C * d, d, rng);
  auto& dec = params_.create("decoder.weight", {d, config_.W});
  init_uniform(dec, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  if (config_.speaker_space) make_speaker_table(params_, config_.N, d, rng);
  bind();
}

template <typename T>
Model<T>::Model(const ModelConfig& config, ParameterSet<T> params) : config_(config), params_(std::move(params)) {
  config_.validate();
  bind();
}

template <typename T>
void Model<T>::bind() {
  encoder_ = params_.get("encoder.weight");
  decoder_ = params_.get("decoder.weight");
  output_ = find_projection(params_, "output");
  generic_.clear();
  speaker_.clear();
  stimuli_.clear();
  sites_.clear();
  for (std::size_t b = 0; b < config_.B; ++b) generic_.push_back(find_block(params_, block_name("generic", b), config_.galr));
  for (std::size_t b = 0; b < config_.B2; ++b) stimuli_.push_back(find_block(params_, block_name("stimuli", b), config_.galr));
  if (config_.speaker_space) {
    for (std::size_t b = 0; b < config_.B1; ++b) speaker_.push_back(find_block(params_, block_name("speaker", b), config_.galr));
    for (std::size_t b = 0; b < config_.B2; ++b) sites_.push_back(find_site(params_, block_name("stimuli", b) + ".steer"));
    embedder_ = find_projection(params_, "embedder");
    cross_ = find_cross(params_, "cross");
    table_ = find_speaker_table(params_);
    if (table_.dim() != config_.galr.D) throw ShapeError("speaker table width does not match D");
    config_.N = table_.size();
  }
}

template <typename T>
typename Model<T>::Front Model<T>::front(const Tensor<T>& mixture) const {
  if (mixture.rank() != 1 || mixture.numel() == 0) {
    throw ShapeError("mixture must be a non-empty 1-D signal, got " + shape_str(mixture.shape()));
  }
  Front f;
  f.length = mixture.numel();
  const std::size_t padded = padded_length(f.length, config_.W);
  const auto x = padded == f.length ? mixture : concat<T>({mixture, Tensor<T>::zeros({padded - f.length})}, 0);
  f.features = encode(x, encoder_);
  f.seg = split(f.features, config_.galr.K);
  return f;
}

template <typename T>
Tensor<T> Model<T>::generic_stack(const Tensor<T>& x) const {
  auto h = x;
  for (const auto& b : generic_) h = galr_block(h, b, config_.galr);
  return h;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::speaker_branch(const Tensor<T>& generic) const {
  auto s = generic;
  for (const auto& b : speaker_) s = galr_block(s, b, config_.galr);
  return embed_speakers(s, embedder_, config_.C);
}

template <typename T>
Tensor<T> Model<T>::stimuli_stack(const Tensor<T>& generic, const Tensor<T>* z) const {
  auto u = generic;
  for (std::size_t b = 0; b < stimuli_.size(); ++b) {
    if (z) {
      const Steering<T> st{z, &sites_[b], config_.steering_kind, config_.dual_norm};
      u = galr_block(u, stimuli_[b], config_.galr, &st);
    } else {
      u = galr_block(u, stimuli_[b], config_.galr);
    }
  }
  return u;
}

template <typename T>
Tensor<T> Model<T>::output_chunk(const Tensor<T>& stimuli, std::size_t j) const {
  const std::size_t d = config_.galr.D;
  return linear(stimuli, slice(output_.weight, 0, j * d, (j + 1) * d), slice(output_.bias, 0, j * d, (j + 1) * d));
}

template <typename T>
Tensor<T> Model<T>::decode_source(const Tensor<T>& chunk, const Front& f) const {
  const auto wave = decode(merge_like(chunk, f.seg), f.features, decoder_);
  return slice(wave, 0, 0, f.length);
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& mixture, const ForwardOptions<T>& opt) const {
  const auto f = front(mixture);
  ForwardResult<T> r;
  r.generic = generic_stack(f.seg.data);
  if (opt.mode == Mode::autopilot) {
    const auto u = stimuli_stack(r.generic, nullptr);
    for (std::size_t j = 0; j < config_.C; ++j) r.estimates.push_back(decode_source(output_chunk(u, j), f));
    return r;
  }
  if (!config_.speaker_space) throw std::invalid_argument(to_string(opt.mode) + " mode needs the speaker space");
  if (opt.mode == Mode::online) {
    const auto ca = cross_attention(r.generic, speaker_branch(r.generic), cross_);
    r.steering = ca.z;
    r.cross_weights = ca.weights;
  } else {
    if (opt.steering == nullptr) throw std::invalid_argument("offline mode needs enrollment steering vectors");
    r.steering = *opt.steering;
  }
  if (r.steering.size() != config_.C) {
    throw std::invalid_argument("expected " + std::to_string(config_.C) + " steering vectors, got " +
                                std::to_string(r.steering.size()));
  }
  if (opt.training && opt.reg != SteeringReg::none && opt.rng == nullptr) {
    throw std::invalid_argument("steering regularization needs a random generator");
  }
  for (std::size_t j = 0; j < config_.C; ++j) {
    Rng dummy(0);
    const auto z = regularize_steering(r.steering[j], opt.reg, opt.training, opt.rng ? *opt.rng : dummy);
    r.estimates.push_back(decode_source(output_chunk(stimuli_stack(r.generic, &z), j), f));
  }
  return r;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::steering_vectors(const Tensor<T>& mixture, std::vector<Tensor<T>>* weights) const {
  if (!config_.speaker_space) throw std::invalid_argument("model has no speaker space");
  const auto g = generic_stack(front(mixture).seg.data);
  auto ca = cross_attention(g, speaker_branch(g), cross_);
  if (weights) *weights = ca.weights;
  return ca.z;
}

template <typename T>
Spaces<T> Model<T>::run_spaces(const Tensor<T>& mixture, Mode mode, const Tensor<T>* enrollment) const {
  const auto f = front(mixture);
  Spaces<T> s;
  s.generic = generic_stack(f.seg.data);
  if (mode == Mode::autopilot) {
    s.stimuli.assign(config_.C, stimuli_stack(s.generic, nullptr));
    return s;
  }
  if (!config_.speaker_space) throw std::invalid_argument(to_string(mode) + " mode needs the speaker space");
  std::vector<Tensor<T>> z;
  if (mode == Mode::online) {
    s.speaker_feats = speaker_branch(s.generic);
    z = cross_attention(s.generic, s.speaker_feats, cross_).z;
  } else {
    if (enrollment == nullptr) throw std::invalid_argument("offline mode needs an enrollment");
    const auto eg = generic_stack(front(*enrollment).seg.data);
    s.speaker_feats = speaker_branch(eg);
    z = cross_attention(eg, s.speaker_feats, cross_).z;
  }
  for (const auto& zj : z) s.stimuli.push_back(stimuli_stack(s.generic, &zj));
  return s;
}

template <typename T>
std::vector<std::string> Model<T>::generic_prefixes() const {
  return {"encoder.", "generic."};
}

template <typename T>
std::vector<std::string> Model<T>::speaker_prefixes() const {
  return {"speaker.", "embedder.", "cross.", "speaker_table."};
}

template <typename T>
std::vector<std::string> Model<T>::stimuli_prefixes() const {
  return {"stimuli.", "output.", "decoder."};
}

template <typename T>
std::string Model<T>::summary() const {
  std::ostringstream os;
  const auto& g = config_.galr;
  os << "encoder   [L] -> [I, " << g.D << "]  W=" << config_.W << "\n";
  os << "segments  [I, " << g.D << "] -> [S, " << g.K << ", " << g.D << "]\n";
  os << "generic   " << config_.B << " x GALR (" << to_string(g.local_kind) << "/" << to_string(g.global_kind)
     << ", Q=" << g.Q << ", H=" << g.H << ", heads=" << g.heads << ")\n";
  if (config_.speaker_space) {
    os << "speaker   " << config_.B1 << " x GALR, embedder " << g.D << " -> " << config_.C * g.D
       << ", cross attention, table [" << config_.N << ", " << g.D << "]\n";
  }
  os << "stimuli   " << config_.B2 << " x GALR, steering " << to_string(config_.steering_kind) << "\n";
  os << "decoder   " << config_.C << " x [I, " << g.D << "] -> [L]\n";
  std::size_t total = 0;
  for (const auto& [name, t] : params_.map()) {
    os << "  " << name << " " << shape_str(t.shape()) << " " << t.numel() << "\n";
    total += t.numel();
  }
  os << "parameters " << total << "\n";
  return os.str();
}

template class Model<float>;
template class Model<double>;

}  // namespace tunein
