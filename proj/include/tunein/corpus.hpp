#pragma once

// Deterministic synthetic corpus: training speakers, held-out speakers on an
// interleaved pitch ladder, fixed validation/test mixtures and enrollments.

#include <cstdint>
#include <string>
#include <vector>

#include "tunein/audio.hpp"

namespace tunein {

struct CorpusConfig {
  std::uint64_t seed = 2024;
  int sample_rate = 8000;
  int speakers = 20;
  int utterances = 5;
  int validation_utterances = 1;
  int held_out_speakers = 5;
  int held_out_utterances = 8;
  double utterance_seconds = 4.0;
  double enrollment_seconds = 16.0;
  int test_mixtures = 50;
  double sir_min_db = 0.0;
  double sir_max_db = 5.0;
};

struct Utterance {
  int speaker_id = 0;
  int index = 0;
  Waveform wave;
  std::string path;  // relative to the corpus directory once saved
};

struct Corpus {
  CorpusConfig config;
  // Ids [0, speakers) are training speakers; the held-out ones follow.
  std::vector<SpeakerProfile> profiles;
  std::vector<Utterance> train;
  std::vector<Utterance> validation;
  std::vector<Utterance> held_out;
  std::vector<MixtureSample> validation_mixtures;
  std::vector<MixtureSample> test_mixtures;  // unseen speaker pairs
  // One long mixture per held-out speaker, target in slot 0.
  std::vector<MixtureSample> enrollments;

  std::vector<int> held_out_ids() const;
  const MixtureSample& enrollment_for(int speaker_id) const;
};

// Interleaves held-out voices across the pitch ladder.
std::vector<int> held_out_voices(int total_voices, int held_out);

Corpus build_corpus(const CorpusConfig& config);

// Extra utterances of the training speakers on a seed stream disjoint from
// every split, used by the speaker-only augmentation phase.
std::vector<Utterance> augmentation_utterances(const Corpus& corpus, int per_speaker);

// Writes WAVs plus corpus.json (utterances) and mixtures.json (validation,
// test and enrollment mixtures) under dir.
void save_corpus(Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

std::vector<MixtureSample> load_mixture_manifest(const std::string& path, const std::string& set = "test");

}  // namespace tunein
