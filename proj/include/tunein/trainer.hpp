#pragma once

// Training loop (phases, AdamW, clipping, EMA table, early stopping,
// checkpoints) and the separation / verification / ablation protocols.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tunein/corpus.hpp"
#include "tunein/model.hpp"
#include "tunein/objective.hpp"

namespace tunein {

enum class SpeakerLoss { ince, token_id };
SpeakerLoss parse_speaker_loss(const std::string& s);
std::string to_string(SpeakerLoss s);

struct TrainConfig {
  Mode mode = Mode::online;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double clip_l2 = 5.0;
  int max_epochs = 20;  // joint phase
  int patience = 10;
  int batch_size = 4;
  int steps_per_epoch = 25;
  double crop_seconds = 1.0;  // training excerpt; 0 uses whole utterances
  double sir_min_db = 0.0;
  double sir_max_db = 5.0;
  double lambda = 10.0;
  double gamma = 3.0;
  double epsilon = 0.05;
  int pit_switch_epoch = 30;
  std::uint64_t seed = 1;
  SteeringReg steering_reg = SteeringReg::none;
  SpeakerLoss speaker_loss = SpeakerLoss::ince;
  bool reg_loss = true;
  int warmup_epochs = 0;       // autopilot epochs before the joint phase
  int speaker_aug_epochs = 0;  // speaker-loss-only phase on extra utterances
  int aug_utterances = 2;
  int finetune_epochs = 0;     // stimuli-only phase after augmentation
  int val_mixtures = 8;
  double val_seconds = 2.0;
  double time_budget_seconds = 0;  // CPU seconds; 0 disables

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  std::string phase;
  double train_loss = 0;
  double sep_loss = 0;
  double speaker_loss = 0;
  double grad_norm = 0;  // mean pre-clip global norm
  double max_clipped_norm = 0;
  double val_loss = 0;
  double val_si_snri = 0;
  double assign_agreement = 0;  // speaker vs SI-SNR pairing, online only
  bool improved = false;
};

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

struct AdamState {
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
  std::uint64_t t = 0;
};

// One AdamW update of every parameter that received a gradient in the last
// backward pass; returns the pre-clip global L2 norm.
double clip_and_step(ParameterSet<float>& params, AdamState& state, const TrainConfig& cfg,
                     const std::vector<std::string>& trainable_prefixes, double* post_clip_norm = nullptr);

struct TrainIO {
  std::string out_dir;  // empty: nothing written
  bool resume = false;
  // Stop (with a checkpoint) after this many epochs of this invocation; 0 runs to the end.
  int stop_after_epochs = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  int epochs_run = 0;
  bool early_stopped = false;
  bool budget_exhausted = false;
  double best_val_loss = 0;
  double cpu_seconds = 0;
};

class Trainer {
 public:
  Trainer(Model<float>& model, const Corpus& corpus, TrainConfig config);

  TrainResult run(const TrainIO& io = {});

  const TrainConfig& config() const { return cfg_; }
  const AdamState& adam() const { return adam_; }

 private:
  struct Phase {
    std::string name;  // warmup, joint, speaker_aug, finetune
    int epochs = 0;
  };
  struct StepStats {
    double loss = 0;
    double sep = 0;
    double speaker = 0;
    int agreements = 0;
    int assignments = 0;
  };

  std::vector<Phase> schedule() const;
  StepStats train_sample(const std::string& phase, int epoch, int step, int item);
  std::vector<std::string> trainable(const std::string& phase) const;
  MixtureSample draw(const std::vector<Utterance>& pool, double seconds, Rng& rng) const;
  void validate_epoch(EpochMetrics& row, Mode mode);
  void snapshot_best();
  void restore_best();
  void save(const std::string& dir) const;
  void load(const std::string& dir);

  Model<float>& model_;
  const Corpus& corpus_;
  TrainConfig cfg_;
  AdamState adam_;
  Rng data_rng_;
  Rng noise_rng_;
  std::vector<Utterance> aug_pool_;
  std::vector<MixtureSample> val_set_;
  std::vector<EpochMetrics> metrics_;
  std::map<std::string, std::vector<float>> best_;
  double best_val_ = 1e300;
  int bad_epochs_ = 0;
  int next_epoch_ = 0;
  bool early_stopped_ = false;
  // Detached steering vectors of the last sample, for the table update.
  std::vector<std::pair<Tensor<float>, int>> pending_;
};

struct SeparationReport {
  Mode mode = Mode::online;
  double si_snr = 0;
  double si_snri = 0;
  double sdri = 0;
  std::vector<MixtureMetrics> rows;
  std::map<int, int> enrollment_cache_hits;  // offline: per speaker
  std::map<int, int> enrollment_uses;
};

// Offline mode draws enrollments from the corpus (one steering vector per
// speaker, computed once and cached).
SeparationReport evaluate_separation(const Model<float>& model, const std::vector<MixtureSample>& mixtures, Mode mode,
                                     const Corpus* corpus = nullptr, std::vector<std::vector<Waveform>>* estimates = nullptr);

// Target steering vector of one enrollment: the online slot whose estimate
// pairs with source 0 under u-PIT.
Tensor<float> enrollment_steering(const Model<float>& model, const MixtureSample& enrollment);

struct SvTrial {
  std::size_t a = 0;  // indices into the held-out utterance list
  std::size_t b = 0;
  bool same = false;
};

// Same-speaker pairs sampled without replacement from all such pairs, plus
// an equal number of random different-speaker pairs.
std::vector<SvTrial> build_sv_trials(const std::vector<Utterance>& utterances, std::size_t per_class,
                                     std::uint64_t seed);

struct SvReport {
  RocReport roc;
  std::size_t trials = 0;
  std::vector<std::pair<int, std::vector<double>>> embeddings;
};

// masked: each utterance is mixed at a seeded SIR in [sir_min, sir_max] with
// an utterance of another speaker from the same list; otherwise clean.
SvReport evaluate_sv(const Model<float>& model, const std::vector<Utterance>& utterances,
                     const std::vector<SvTrial>& trials, bool masked, std::uint64_t seed, double sir_min_db = 0,
                     double sir_max_db = 5, double seconds = 0);

struct AblationRow {
  std::string grid;
  std::string name;
  std::string config_hash;
  std::size_t params = 0;
  double si_snri = 0;
  double sdri = 0;
  double final_train_loss = 0;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);

// FNV-1a over a canonical text form of the model and training configs.
std::string config_hash(const ModelConfig& m, const TrainConfig& t);

struct AblationSpec {
  ModelConfig model;
  TrainConfig train;
  std::size_t eval_mixtures = 10;
  double eval_seconds = 2.0;
  bool summarizer = true;  // (local, global) kind grid, autopilot
  bool table = true;       // five-row steering ablation, online
};

std::vector<AblationRow> ablate(const AblationSpec& spec, const Corpus& corpus);

// Crop of the first `seconds` of every signal in a mixture (0 keeps all).
MixtureSample crop_mixture(const MixtureSample& m, double seconds);

}  // namespace tunein
