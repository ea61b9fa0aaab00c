#include "tunein/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "tunein/params.hpp"

namespace tunein {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kValidationStream = 1'000'000;
constexpr std::uint64_t kHeldOutStream = 2'000'000;
constexpr std::uint64_t kEnrollStream = 3'000'000;
constexpr std::uint64_t kAugmentStream = 4'000'000;

std::uint64_t utt_seed(std::uint64_t stream, int index) { return stream + static_cast<std::uint64_t>(index); }

double draw_sir(const CorpusConfig& c, Rng& rng) {
  std::uniform_real_distribution<double> u(c.sir_min_db, c.sir_max_db);
  return u(rng);
}

json corpus_config_json(const CorpusConfig& c) {
  return {{"seed", c.seed},
          {"sample_rate", c.sample_rate},
          {"speakers", c.speakers},
          {"utterances", c.utterances},
          {"validation_utterances", c.validation_utterances},
          {"held_out_speakers", c.held_out_speakers},
          {"held_out_utterances", c.held_out_utterances},
          {"utterance_seconds", c.utterance_seconds},
          {"enrollment_seconds", c.enrollment_seconds},
          {"test_mixtures", c.test_mixtures},
          {"sir_min_db", c.sir_min_db},
          {"sir_max_db", c.sir_max_db}};
}

CorpusConfig corpus_config_from_json(const json& j) {
  CorpusConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.sample_rate = j.at("sample_rate").get<int>();
  c.speakers = j.at("speakers").get<int>();
  c.utterances = j.at("utterances").get<int>();
  c.validation_utterances = j.at("validation_utterances").get<int>();
  c.held_out_speakers = j.at("held_out_speakers").get<int>();
  c.held_out_utterances = j.at("held_out_utterances").get<int>();
  c.utterance_seconds = j.at("utterance_seconds").get<double>();
  c.enrollment_seconds = j.at("enrollment_seconds").get<double>();
  c.test_mixtures = j.at("test_mixtures").get<int>();
  c.sir_min_db = j.at("sir_min_db").get<double>();
  c.sir_max_db = j.at("sir_max_db").get<double>();
  return c;
}

// Fixed mixtures where each utterance in turn is the target against a
// random utterance of a different speaker from the same pool.
std::vector<MixtureSample> pooled_mixtures(const std::vector<Utterance>& pool, const CorpusConfig& c, Rng& rng,
                                           std::size_t count) {
  std::vector<MixtureSample> out;
  if (pool.size() < 2) return out;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& target = pool[k % pool.size()];
    std::size_t j = pick(rng);
    while (pool[j].speaker_id == target.speaker_id) j = pick(rng);
    out.push_back(mix(target.wave, pool[j].wave, draw_sir(c, rng), target.speaker_id, pool[j].speaker_id));
  }
  return out;
}

json mixture_json(const MixtureSample& m, const std::string& mix_path, const std::vector<std::string>& src_paths) {
  return {{"mixture_path", mix_path},
          {"source_paths", src_paths},
          {"sir_db", m.sir_db},
          {"speaker_ids", m.speaker_ids},
          {"scale_factors", m.scale_factors}};
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw AudioError("cannot open manifest " + path);
  return json::parse(f);
}

MixtureSample mixture_from_json(const json& j, const fs::path& root) {
  MixtureSample m;
  m.mixture = read_wav((root / j.at("mixture_path").get<std::string>()).string());
  for (const auto& p : j.at("source_paths")) m.sources.push_back(read_wav((root / p.get<std::string>()).string()));
  m.speaker_ids = j.at("speaker_ids").get<std::vector<int>>();
  m.sir_db = j.at("sir_db").get<double>();
  if (j.contains("scale_factors")) m.scale_factors = j.at("scale_factors").get<std::vector<double>>();
  return m;
}

}  // namespace

std::vector<int> held_out_voices(int total_voices, int held_out) {
  std::vector<int> v;
  for (int k = 0; k < held_out; ++k) v.push_back(static_cast<int>((k + 0.5) * total_voices / held_out));
  return v;
}

std::vector<int> Corpus::held_out_ids() const {
  std::vector<int> ids;
  for (int k = 0; k < config.held_out_speakers; ++k) ids.push_back(config.speakers + k);
  return ids;
}

const MixtureSample& Corpus::enrollment_for(int speaker_id) const {
  for (const auto& e : enrollments) {
    if (e.speaker_ids.at(0) == speaker_id) return e;
  }
  throw std::out_of_range("no enrollment for speaker " + std::to_string(speaker_id));
}

Corpus build_corpus(const CorpusConfig& c) {
  if (c.speakers < 2) throw std::invalid_argument("corpus needs at least two training speakers");
  if (c.utterances < 1 || c.held_out_speakers < 0 || c.held_out_utterances < 0) {
    throw std::invalid_argument("corpus utterance counts must be positive");
  }
  Corpus corpus;
  corpus.config = c;
  const int total = c.speakers + c.held_out_speakers;
  const auto ho = held_out_voices(total, c.held_out_speakers);
  int next_train = 0;
  int next_held = c.speakers;
  corpus.profiles.resize(total);
  for (int v = 0; v < total; ++v) {
    const bool held = std::find(ho.begin(), ho.end(), v) != ho.end();
    const int id = held ? next_held++ : next_train++;
    corpus.profiles[id] = make_profile(id, v, c.seed);
  }
  for (int s = 0; s < c.speakers; ++s) {
    const auto& p = corpus.profiles[s];
    for (int u = 0; u < c.utterances; ++u) {
      corpus.train.push_back({s, u, synth_utterance(p, c.utterance_seconds, utt_seed(0, u), c.sample_rate), ""});
    }
    for (int u = 0; u < c.validation_utterances; ++u) {
      corpus.validation.push_back(
          {s, u, synth_utterance(p, c.utterance_seconds, utt_seed(kValidationStream, u), c.sample_rate), ""});
    }
  }
  for (int s = c.speakers; s < total; ++s) {
    const auto& p = corpus.profiles[s];
    for (int u = 0; u < c.held_out_utterances; ++u) {
      corpus.held_out.push_back(
          {s, u, synth_utterance(p, c.utterance_seconds, utt_seed(kHeldOutStream, u), c.sample_rate), ""});
    }
  }

  Rng rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  corpus.validation_mixtures = pooled_mixtures(corpus.validation, c, rng, corpus.validation.size());
  {
    std::vector<Utterance> shuffled = corpus.held_out;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    corpus.test_mixtures = pooled_mixtures(shuffled, c, rng, static_cast<std::size_t>(std::max(0, c.test_mixtures)));
  }
  if (c.held_out_speakers >= 2) {
    for (int s = c.speakers; s < total; ++s) {
      const int other = c.speakers + (s - c.speakers + 1) % c.held_out_speakers;
      const auto target = synth_utterance(corpus.profiles[s], c.enrollment_seconds, kEnrollStream, c.sample_rate);
      const auto interf =
          synth_utterance(corpus.profiles[other], c.enrollment_seconds, kEnrollStream + 1, c.sample_rate);
      corpus.enrollments.push_back(mix(target, interf, draw_sir(c, rng), s, other));
    }
  }
  return corpus;
}

std::vector<Utterance> augmentation_utterances(const Corpus& corpus, int per_speaker) {
  std::vector<Utterance> out;
  const auto& c = corpus.config;
  for (int s = 0; s < c.speakers; ++s) {
    for (int u = 0; u < per_speaker; ++u) {
      out.push_back({s, u,
                     synth_utterance(corpus.profiles[s], c.utterance_seconds, utt_seed(kAugmentStream, u), c.sample_rate),
                     ""});
    }
  }
  return out;
}

void save_corpus(Corpus& corpus, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root / "wav");
  json utts = json::array();
  const auto save_utts = [&](std::vector<Utterance>& list, const std::string& split) {
    for (auto& u : list) {
      u.path = "wav/" + split + "_s" + std::to_string(u.speaker_id) + "_u" + std::to_string(u.index) + ".wav";
      write_wav((root / u.path).string(), u.wave);
      utts.push_back({{"speaker_id", u.speaker_id},
                      {"utterance_path", u.path},
                      {"duration", u.wave.seconds()},
                      {"split", split},
                      {"index", u.index}});
    }
  };
  save_utts(corpus.train, "train");
  save_utts(corpus.validation, "validation");
  save_utts(corpus.held_out, "heldout");
  json profiles = json::array();
  for (const auto& p : corpus.profiles) {
    profiles.push_back({{"speaker_id", p.speaker_id}, {"voice", p.voice}, {"fundamental_hz", p.fundamental_hz}});
  }
  json corpus_doc{{"config", corpus_config_json(corpus.config)}, {"speakers", profiles}, {"utterances", utts}};

  json mixtures = json::object();
  const auto save_mixes = [&](const std::vector<MixtureSample>& list, const std::string& set) {
    json arr = json::array();
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string stem = "wav/" + set + "_" + std::to_string(i);
      std::vector<std::string> srcs;
      write_wav((root / (stem + "_mix.wav")).string(), list[i].mixture);
      for (std::size_t k = 0; k < list[i].sources.size(); ++k) {
        srcs.push_back(stem + "_src" + std::to_string(k) + ".wav");
        write_wav((root / srcs.back()).string(), list[i].sources[k]);
      }
      arr.push_back(mixture_json(list[i], stem + "_mix.wav", srcs));
    }
    mixtures[set] = arr;
  };
  save_mixes(corpus.validation_mixtures, "validation");
  save_mixes(corpus.test_mixtures, "test");
  save_mixes(corpus.enrollments, "enrollment");

  std::ofstream((root / "corpus.json").string()) << corpus_doc.dump(2) << "\n";
  std::ofstream((root / "mixtures.json").string()) << mixtures.dump(2) << "\n";
}

std::vector<MixtureSample> load_mixture_manifest(const std::string& path, const std::string& set) {
  const json doc = read_json(path);
  const fs::path root = fs::path(path).parent_path();
  std::vector<MixtureSample> out;
  const json& arr = doc.is_array() ? doc : doc.at(set);
  for (const auto& j : arr) out.push_back(mixture_from_json(j, root));
  return out;
}

Corpus load_corpus(const std::string& dir) {
  const fs::path root(dir);
  const json doc = read_json((root / "corpus.json").string());
  Corpus corpus;
  corpus.config = corpus_config_from_json(doc.at("config"));
  const int total = corpus.config.speakers + corpus.config.held_out_speakers;
  corpus.profiles.resize(total);
  for (const auto& s : doc.at("speakers")) {
    const int id = s.at("speaker_id").get<int>();
    if (id < 0 || id >= total) throw AudioError("speaker id out of range in corpus manifest");
    corpus.profiles[id] = make_profile(id, s.at("voice").get<int>(), corpus.config.seed);
  }
  for (const auto& u : doc.at("utterances")) {
    Utterance utt{u.at("speaker_id").get<int>(), u.at("index").get<int>(), {}, u.at("utterance_path").get<std::string>()};
    utt.wave = read_wav((root / utt.path).string());
    const auto split = u.at("split").get<std::string>();
    if (split == "train") {
      corpus.train.push_back(std::move(utt));
    } else if (split == "validation") {
      corpus.validation.push_back(std::move(utt));
    } else {
      corpus.held_out.push_back(std::move(utt));
    }
  }
  const std::string mpath = (root / "mixtures.json").string();
  corpus.validation_mixtures = load_mixture_manifest(mpath, "validation");
  corpus.test_mixtures = load_mixture_manifest(mpath, "test");
  corpus.enrollments = load_mixture_manifest(mpath, "enrollment");
  return corpus;
}

}  // namespace tunein
