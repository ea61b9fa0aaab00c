#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "tunein/trainer.hpp"

using namespace tunein;
namespace fs = std::filesystem;

namespace {

const Corpus& micro_corpus() {
  static const Corpus c = [] {
    CorpusConfig cc;
    cc.speakers = 4;
    cc.utterances = 2;
    cc.held_out_speakers = 2;
    cc.held_out_utterances = 3;
    cc.utterance_seconds = 0.5;
    cc.enrollment_seconds = 0.5;
    cc.test_mixtures = 3;
    return build_corpus(cc);
  }();
  return c;
}

ModelConfig micro_model() {
  ModelConfig c;
  c.W = 4;
  c.galr.D = 8;
  c.galr.K = 16;
  c.galr.Q = 4;
  c.galr.H = 8;
  c.galr.heads = 2;
  c.B = 1;
  c.B1 = 1;
  c.B2 = 1;
  c.N = 4;
  return c;
}

TrainConfig micro_train() {
  TrainConfig t;
  t.max_epochs = 2;
  t.batch_size = 2;
  t.steps_per_epoch = 2;
  t.crop_seconds = 0.25;
  t.val_mixtures = 2;
  t.val_seconds = 0.25;
  t.steering_reg = SteeringReg::noise;
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tunein_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(TrainConfig, ValidationAndParsing) {
  auto t = micro_train();
  EXPECT_NO_THROW(t.validate());
  t.clip_l2 = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = micro_train();
  t.epsilon = 1.5;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  EXPECT_EQ(parse_speaker_loss("token_id"), SpeakerLoss::token_id);
  EXPECT_THROW(parse_speaker_loss("ce"), std::invalid_argument);
}

TEST(ClipAndStep, BoundsNormAndSkipsUntouched) {
  ParameterSet<float> p;
  auto& a = p.create("stimuli.a", {4});
  auto& b = p.create("stimuli.b", {3});
  auto& c = p.create("speaker.c", {2});
  for (std::size_t i = 0; i < 4; ++i) a.mutable_grad()[i] = 50.f;
  c.mutable_grad()[0] = 1.f;
  const auto b_before = b.values();
  const auto c_before = c.values();
  AdamState st;
  TrainConfig cfg;
  double post = 0;
  const double pre = clip_and_step(p, st, cfg, {"stimuli."}, &post);
  EXPECT_NEAR(pre, 100.0, 1e-9);
  EXPECT_NEAR(post, 5.0, 1e-12);
  EXPECT_EQ(b.values(), b_before);
  EXPECT_EQ(c.values(), c_before);
  EXPECT_EQ(st.t, 1u);
  EXPECT_EQ(st.m.count("stimuli.b"), 0u);
  // First Adam step moves each coordinate by about lr against the gradient.
  for (const float v : a.values()) EXPECT_NEAR(v, -1e-3, 1e-6);
  a.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(clip_and_step(p, st, cfg, {"stimuli."}), NumericalError);
}

TEST(Trainer, SameSeedGivesIdenticalMetrics) {
  std::string csv[2];
  for (int r = 0; r < 2; ++r) {
    Model<float> m(micro_model(), 3);
    Trainer t(m, micro_corpus(), micro_train());
    csv[r] = metrics_csv(t.run().metrics);
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_NE(csv[0].find("0,joint,"), std::string::npos);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto full_dir = scratch("full");
  const auto part_dir = scratch("part");
  auto cfg = micro_train();
  cfg.max_epochs = 3;
  {
    Model<float> m(micro_model(), 5);
    Trainer t(m, micro_corpus(), cfg);
    t.run({full_dir.string(), false, 0});
  }
  {
    Model<float> m(micro_model(), 5);
    Trainer t(m, micro_corpus(), cfg);
    const auto r = t.run({part_dir.string(), false, 1});
    EXPECT_EQ(r.epochs_run, 1);
  }
  {
    Model<float> m(micro_model(), 99);  // weights come from the checkpoint
    Trainer t(m, micro_corpus(), cfg);
    const auto r = t.run({part_dir.string(), true, 0});
    EXPECT_EQ(r.epochs_run, 2);
  }
  EXPECT_EQ(slurp(full_dir / "metrics.csv"), slurp(part_dir / "metrics.csv"));
  EXPECT_EQ(slurp(full_dir / "checkpoint.bin"), slurp(part_dir / "checkpoint.bin"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST(Trainer, CorruptCheckpointIsReported) {
  const auto dir = scratch("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "checkpoint.json") << "{ not json";
  Model<float> m(micro_model(), 1);
  Trainer t(m, micro_corpus(), micro_train());
  EXPECT_THROW(t.run({dir.string(), true, 0}), CheckpointError);
  fs::remove_all(dir);
}

TEST(Trainer, AutopilotLeavesSpeakerSpaceUntouched) {
  Model<float> m(micro_model(), 7);
  std::map<std::string, std::vector<float>> before;
  for (const auto& [n, t] : m.params().map()) before[n] = t.to_vector();
  auto cfg = micro_train();
  cfg.mode = Mode::autopilot;
  cfg.weight_decay = 0.1;
  Trainer t(m, micro_corpus(), cfg);
  t.run();
  bool generic_moved = false;
  for (const auto& [n, v] : m.params().map()) {
    const bool spk = n.rfind("speaker", 0) == 0 || n.rfind("embedder", 0) == 0 || n.rfind("cross", 0) == 0 ||
                     n.find(".steer.") != std::string::npos;
    if (spk) {
      EXPECT_EQ(v.to_vector(), before[n]) << n;
    }
    if (n == "encoder.weight") generic_moved = v.to_vector() != before[n];
  }
  EXPECT_TRUE(generic_moved);
}

TEST(Trainer, FinetuneTouchesOnlyStimuliSpace) {
  Model<float> m(micro_model(), 8);
  auto cfg = micro_train();
  cfg.max_epochs = 0;
  cfg.speaker_aug_epochs = 0;
  cfg.finetune_epochs = 1;
  std::map<std::string, std::vector<float>> before;
  for (const auto& [n, t] : m.params().map()) before[n] = t.to_vector();
  Trainer t(m, micro_corpus(), cfg);
  const auto r = t.run();
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].phase, "finetune");
  for (const auto& [n, v] : m.params().map()) {
    if (n.rfind("stimuli.", 0) != 0 && n.rfind("output.", 0) != 0 && n.rfind("decoder.", 0) != 0) {
      EXPECT_EQ(v.to_vector(), before[n]) << n;
    }
  }
}

TEST(Trainer, EarlyStoppingOnFlatValidation) {
  Model<float> m(micro_model(), 9);
  auto cfg = micro_train();
  cfg.max_epochs = 8;
  cfg.patience = 2;
  cfg.lr = 1e-30;
  cfg.weight_decay = 0;
  Trainer t(m, micro_corpus(), cfg);
  const auto r = t.run();
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.epochs_run, 3);
}

TEST(Trainer, PhasesRunInOrder) {
  Model<float> m(micro_model(), 10);
  auto cfg = micro_train();
  cfg.max_epochs = 1;
  cfg.warmup_epochs = 1;
  cfg.speaker_aug_epochs = 1;
  cfg.aug_utterances = 1;
  cfg.finetune_epochs = 1;
  Trainer t(m, micro_corpus(), cfg);
  const auto r = t.run();
  ASSERT_EQ(r.metrics.size(), 4u);
  EXPECT_EQ(r.metrics[0].phase, "warmup");
  EXPECT_EQ(r.metrics[1].phase, "joint");
  EXPECT_EQ(r.metrics[2].phase, "speaker_aug");
  EXPECT_EQ(r.metrics[3].phase, "finetune");
  EXPECT_EQ(r.metrics[2].sep_loss, 0.0);
  EXPECT_EQ(r.metrics[3].speaker_loss, 0.0);
}

TEST(Trainer, TrainingLossDecreases) {
  Model<float> m(micro_model(), 11);
  auto cfg = micro_train();
  cfg.mode = Mode::autopilot;
  cfg.max_epochs = 12;
  cfg.patience = 100;
  cfg.steps_per_epoch = 4;
  cfg.lr = 3e-3;
  Trainer t(m, micro_corpus(), cfg);
  const auto r = t.run();
  double first = 0, last = 0;
  for (int i = 0; i < 3; ++i) first += r.metrics[i].train_loss;
  for (int i = 9; i < 12; ++i) last += r.metrics[i].train_loss;
  EXPECT_LT(last, first);
  for (const auto& row : r.metrics) EXPECT_LE(row.max_clipped_norm, cfg.clip_l2 + 1e-9);
}

TEST(Trainer, SpeakerAugmentationLeavesStimuliSpaceUntouched) {
  Model<float> m(micro_model(), 16);
  auto cfg = micro_train();
  cfg.max_epochs = 0;
  cfg.speaker_aug_epochs = 1;
  cfg.aug_utterances = 1;
  std::map<std::string, std::vector<float>> before;
  for (const auto& [n, t] : m.params().map()) before[n] = t.to_vector();
  Trainer t(m, micro_corpus(), cfg);
  const auto r = t.run();
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].phase, "speaker_aug");
  bool speaker_moved = false;
  for (const auto& [n, v] : m.params().map()) {
    if (n.rfind("stimuli.", 0) == 0 || n.rfind("output.", 0) == 0 || n.rfind("decoder.", 0) == 0) {
      EXPECT_EQ(v.to_vector(), before[n]) << n;
    }
    if (n.rfind("cross.", 0) == 0 && v.to_vector() != before[n]) speaker_moved = true;
  }
  EXPECT_TRUE(speaker_moved);
}

TEST(Trainer, TwoSpeakerMicroCorpusLossDropsThirtyPercent) {
  CorpusConfig cc;
  cc.speakers = 2;
  cc.utterances = 5;
  cc.held_out_speakers = 0;
  cc.utterance_seconds = 0.5;
  const auto corpus = build_corpus(cc);
  auto mc = micro_model();
  mc.N = 2;
  Model<float> m(mc, 17);
  auto cfg = micro_train();
  cfg.max_epochs = 20;
  cfg.patience = 100;
  Trainer t(m, corpus, cfg);
  const auto r = t.run();
  ASSERT_EQ(r.metrics.size(), 20u);
  const double first = r.metrics.front().train_loss;
  const double last = r.metrics.back().train_loss;
  EXPECT_LE(last, first - 0.3 * std::abs(first)) << metrics_csv(r.metrics);
}

TEST(Trainer, OfflineAndTokenIdTrainingRun) {
  for (const auto kind : {0, 1}) {
    Model<float> m(micro_model(), 12);
    auto cfg = micro_train();
    cfg.max_epochs = 1;
    if (kind == 0) cfg.mode = Mode::offline;
    else cfg.speaker_loss = SpeakerLoss::token_id;
    Trainer t(m, micro_corpus(), cfg);
    const auto r = t.run();
    ASSERT_EQ(r.metrics.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.metrics[0].train_loss));
  }
}

TEST(Trainer, NonFiniteWeightsRaiseNumericalError) {
  Model<float> m(micro_model(), 13);
  m.params().get("decoder.weight").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer t(m, micro_corpus(), micro_train());
  try {
    t.run();
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Evaluate, SeparationModesAndEnrollmentCache) {
  Model<float> m(micro_model(), 14);
  const auto& c = micro_corpus();
  std::vector<MixtureSample> mixes{c.test_mixtures[0], c.test_mixtures[1], c.test_mixtures[0]};
  std::vector<std::vector<Waveform>> est;
  const auto on = evaluate_separation(m, mixes, Mode::online, nullptr, &est);
  ASSERT_EQ(on.rows.size(), 3u);
  ASSERT_EQ(est.size(), 3u);
  EXPECT_EQ(est[0][1].size(), mixes[0].mixture.size());
  EXPECT_EQ(on.rows[0].si_snri, on.rows[2].si_snri);
  const auto off = evaluate_separation(m, mixes, Mode::offline, &c);
  int uses = 0, hits = 0;
  for (const auto& [id, n] : off.enrollment_uses) uses += n;
  for (const auto& [id, n] : off.enrollment_cache_hits) hits += n;
  EXPECT_EQ(uses, 6);
  EXPECT_EQ(hits, 6 - static_cast<int>(off.enrollment_uses.size()));
  EXPECT_THROW(evaluate_separation(m, mixes, Mode::offline), std::invalid_argument);
}

TEST(Evaluate, VerificationTrialsAndRoc) {
  const auto& c = micro_corpus();
  const auto trials = build_sv_trials(c.held_out, 4, 1);
  std::size_t same = 0;
  for (const auto& t : trials) {
    same += t.same;
    EXPECT_EQ(t.same, c.held_out[t.a].speaker_id == c.held_out[t.b].speaker_id);
    EXPECT_LT(t.a, t.b);
  }
  EXPECT_EQ(same, 4u);
  EXPECT_EQ(trials.size(), 8u);
  EXPECT_EQ(build_sv_trials(c.held_out, 4, 1).size(), trials.size());
  Model<float> m(micro_model(), 15);
  const auto rep = evaluate_sv(m, c.held_out, trials, true, 3);
  EXPECT_EQ(rep.trials, 8u);
  EXPECT_EQ(rep.embeddings.size(), c.held_out.size());
  EXPECT_GE(rep.roc.auc, 0.0);
  EXPECT_LE(rep.roc.auc, 1.0);
  const auto again = evaluate_sv(m, c.held_out, trials, true, 3);
  EXPECT_EQ(roc_csv(rep.roc), roc_csv(again.roc));
  const auto clean = evaluate_sv(m, c.held_out, trials, false, 3);
  EXPECT_EQ(clean.trials, 8u);
  std::vector<Utterance> one;
  for (const auto& u : c.held_out) {
    if (u.speaker_id == c.held_out[0].speaker_id) one.push_back(u);
  }
  const auto single = build_sv_trials(one, 4, 1);
  EXPECT_THROW(evaluate_sv(m, one, single, false, 3), std::invalid_argument);
}

TEST(Ablation, GridAndTableEmitCompleteCsv) {
  AblationSpec spec;
  spec.model = micro_model();
  spec.train = micro_train();
  spec.train.max_epochs = 1;
  spec.train.steps_per_epoch = 1;
  spec.train.batch_size = 1;
  spec.train.aug_utterances = 1;
  spec.eval_mixtures = 1;
  spec.eval_seconds = 0.25;
  const auto rows = ablate(spec, micro_corpus());
  ASSERT_EQ(rows.size(), 9u);
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "grid,name,config_hash,params,si_snri,sdri,final_train_loss");
  EXPECT_NE(rows[0].params, rows[3].params);
  EXPECT_NE(rows[1].params, rows[2].params);
  std::set<std::string> hashes;
  for (const auto& r : rows) {
    hashes.insert(r.config_hash);
    EXPECT_TRUE(std::isfinite(r.si_snri)) << r.name;
  }
  EXPECT_EQ(hashes.size(), rows.size());
}
