#include "tunein/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tunein {

using json = nlohmann::json;

SpeakerLoss parse_speaker_loss(const std::string& s) {
  if (s == "ince") return SpeakerLoss::ince;
  if (s == "token_id") return SpeakerLoss::token_id;
  throw std::invalid_argument("unknown speaker loss '" + s + "' (expected ince or token_id)");
}

std::string to_string(SpeakerLoss s) { return s == SpeakerLoss::ince ? "ince" : "token_id"; }

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
  if (weight_decay < 0) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(clip_l2 > 0)) throw std::invalid_argument("clip_l2 must be positive");
  if (max_epochs < 0 || warmup_epochs < 0 || speaker_aug_epochs < 0 || finetune_epochs < 0) {
    throw std::invalid_argument("epoch counts must be non-negative");
  }
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (batch_size < 1 || steps_per_epoch < 1) throw std::invalid_argument("batch_size and steps_per_epoch must be >= 1");
  if (crop_seconds < 0 || val_seconds < 0) throw std::invalid_argument("durations must be non-negative");
  if (sir_max_db < sir_min_db) throw std::invalid_argument("sir_max_db must be >= sir_min_db");
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be positive");
  if (!(epsilon > 0 && epsilon <= 1)) throw std::invalid_argument("epsilon must be in (0, 1]");
  if (aug_utterances < 1) throw std::invalid_argument("aug_utterances must be >= 1");
  if (val_mixtures < 1) throw std::invalid_argument("val_mixtures must be >= 1");
}

namespace {

Signal to_signal(const std::vector<float>& x) { return Signal(x.begin(), x.end()); }

template <typename T>
Signal to_signal(const Tensor<T>& t) {
  return Signal(t.values().begin(), t.values().end());
}

std::vector<Signal> table_rows(const SpeakerTable<float>& t) {
  std::vector<Signal> rows(t.size());
  const auto v = t.E.values();
  for (std::size_t i = 0; i < t.size(); ++i) rows[i].assign(v.begin() + i * t.dim(), v.begin() + (i + 1) * t.dim());
  return rows;
}

Waveform crop(const Waveform& w, std::size_t offset, std::size_t n) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(offset + n));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

bool starts_with_any(const std::string& s, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (s.rfind(p, 0) == 0) return true;
  }
  return false;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string rng_state(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

void set_rng_state(Rng& r, const std::string& s) {
  std::istringstream is(s);
  is >> r;
  if (!is) throw CheckpointError("corrupt generator state in checkpoint.json");
}

// Steering slot nearest to a table row.
std::size_t slot_for(const std::vector<Tensor<float>>& z, const SpeakerTable<float>& t, int id) {
  const auto rows = table_rows(t);
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t j = 0; j < z.size(); ++j) {
    double d = 0;
    for (std::size_t k = 0; k < t.dim(); ++k) {
      const double e = z[j].values()[k] - rows[static_cast<std::size_t>(id)][k];
      d += e * e;
    }
    if (d < best_d) best_d = d, best = j;
  }
  return best;
}

}  // namespace

MixtureSample crop_mixture(const MixtureSample& m, double seconds) {
  if (seconds <= 0) return m;
  const auto n = std::min(m.mixture.size(), static_cast<std::size_t>(seconds * m.mixture.sample_rate));
  MixtureSample out = m;
  out.mixture = crop(m.mixture, 0, n);
  for (auto& s : out.sources) s = crop(s, 0, n);
  return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream os;
  os << "epoch,phase,train_loss,sep_loss,speaker_loss,grad_norm,val_loss,val_si_snri,assign_agreement\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.phase << ',' << fmt(r.train_loss) << ',' << fmt(r.sep_loss) << ','
       << fmt(r.speaker_loss) << ',' << fmt(r.grad_norm) << ',' << fmt(r.val_loss) << ',' << fmt(r.val_si_snri)
       << ',' << fmt(r.assign_agreement) << '\n';
  }
  return os.str();
}

double clip_and_step(ParameterSet<float>& params, AdamState& state, const TrainConfig& cfg,
                     const std::vector<std::string>& trainable_prefixes, double* post_clip_norm) {
  std::vector<std::pair<std::string, Tensor<float>*>> live;
  double sq = 0;
  for (auto& [name, t] : params.map()) {
    if (!t.has_grad() || !starts_with_any(name, trainable_prefixes)) continue;
    live.emplace_back(name, &t);
    for (const float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const double k = norm > cfg.clip_l2 ? cfg.clip_l2 / norm : 1.0;
  if (post_clip_norm) *post_clip_norm = norm * k;
  if (live.empty()) return norm;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++state.t;
  const double c1 = 1 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1 - std::pow(b2, static_cast<double>(state.t));
  for (auto& [name, t] : live) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    const std::size_t n = t->numel();
    if (m.size() != n) m.assign(n, 0.f), v.assign(n, 0.f);
    const auto g = t->grad();
    auto p = t->mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i] * k;
      m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * gi * gi);
      const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      p[i] = static_cast<float>(p[i] - cfg.lr * step - cfg.lr * cfg.weight_decay * p[i]);
    }
  }
  return norm;
}

Trainer::Trainer(Model<float>& model, const Corpus& corpus, TrainConfig config)
    : model_(model), corpus_(corpus), cfg_(std::move(config)), data_rng_(cfg_.seed), noise_rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  if (corpus_.train.size() < 2) throw std::invalid_argument("training needs at least two utterances");
  if (cfg_.mode != Mode::autopilot) {
    if (!model_.config().speaker_space) throw std::invalid_argument(to_string(cfg_.mode) + " training needs the speaker space");
    if (model_.table().size() < static_cast<std::size_t>(corpus_.config.speakers)) {
      throw std::invalid_argument("speaker table has fewer rows than training speakers");
    }
  }
  if (model_.config().speaker_space) model_.table().epsilon = cfg_.epsilon;
  if (cfg_.speaker_aug_epochs > 0 && cfg_.mode != Mode::autopilot) aug_pool_ = augmentation_utterances(corpus_, cfg_.aug_utterances);
  const auto& vm = corpus_.validation_mixtures.empty() ? corpus_.test_mixtures : corpus_.validation_mixtures;
  for (std::size_t i = 0; i < vm.size() && i < static_cast<std::size_t>(cfg_.val_mixtures); ++i) {
    val_set_.push_back(crop_mixture(vm[i], cfg_.val_seconds));
  }
  if (val_set_.empty()) throw std::invalid_argument("corpus has no validation mixtures");
}

std::vector<Trainer::Phase> Trainer::schedule() const {
  std::vector<Phase> s;
  if (cfg_.warmup_epochs > 0 && cfg_.mode != Mode::autopilot) s.push_back({"warmup", cfg_.warmup_epochs});
  s.push_back({"joint", cfg_.max_epochs});
  if (cfg_.mode != Mode::autopilot) {
    if (cfg_.speaker_aug_epochs > 0) s.push_back({"speaker_aug", cfg_.speaker_aug_epochs});
    if (cfg_.finetune_epochs > 0) s.push_back({"finetune", cfg_.finetune_epochs});
  }
  return s;
}

std::vector<std::string> Trainer::trainable(const std::string& phase) const {
  auto g = model_.generic_prefixes();
  const auto sp = model_.speaker_prefixes();
  const auto st = model_.stimuli_prefixes();
  if (phase == "finetune") return st;
  if (phase == "speaker_aug") {
    g.insert(g.end(), sp.begin(), sp.end());
    return g;
  }
  g.insert(g.end(), st.begin(), st.end());
  if (phase == "joint" && cfg_.mode != Mode::autopilot) g.insert(g.end(), sp.begin(), sp.end());
  return g;
}

MixtureSample Trainer::draw(const std::vector<Utterance>& pool, double seconds, Rng& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::uniform_real_distribution<double> sir(cfg_.sir_min_db, cfg_.sir_max_db);
  for (int attempt = 0; attempt < 50; ++attempt) {
    const auto& a = pool[pick(rng)];
    const Utterance* b = &pool[pick(rng)];
    for (int k = 0; k < 100 && b->speaker_id == a.speaker_id; ++k) b = &pool[pick(rng)];
    if (b->speaker_id == a.speaker_id) throw std::invalid_argument("training pool needs two speakers");
    const std::size_t want = seconds > 0 ? static_cast<std::size_t>(seconds * a.wave.sample_rate) : a.wave.size();
    const std::size_t n = std::min({want, a.wave.size(), b->wave.size()});
    const auto start = [&](const Waveform& w) {
      return std::uniform_int_distribution<std::size_t>(0, w.size() - n)(rng);
    };
    const auto ta = crop(a.wave, start(a.wave), n);
    const auto tb = crop(b->wave, start(b->wave), n);
    const double s = sir(rng);
    // Excerpts that land in a pause carry no target to separate.
    if (signal_power(ta.samples) < 1e-4 || signal_power(tb.samples) < 1e-4) continue;
    return mix(ta, tb, s, a.speaker_id, b->speaker_id);
  }
  throw std::runtime_error("could not draw a non-silent training excerpt");
}

Trainer::StepStats Trainer::train_sample(const std::string& phase, int epoch, int step, int item) {
  const bool aug = phase == "speaker_aug";
  const auto m = draw(aug ? aug_pool_ : corpus_.train, cfg_.crop_seconds, data_rng_);
  const auto x = to_tensor<float>(m.mixture);
  std::vector<Tensor<float>> targets;
  std::vector<Signal> target_sig;
  for (const auto& s : m.sources) {
    targets.push_back(to_tensor<float>(s));
    target_sig.push_back(to_signal(s.samples));
  }
  const Mode mode = phase == "warmup" ? Mode::autopilot : cfg_.mode;
  const bool use_speaker = mode != Mode::autopilot && phase != "finetune";
  StepStats out;
  Tensor<float> sep, spk;
  std::vector<Tensor<float>> z;
  std::vector<int> ids;
  auto& table = model_.table();

  if (aug) {
    z = model_.steering_vectors(x);
    std::vector<Signal> zs;
    for (const auto& t : z) zs.push_back(to_signal(t));
    const auto a = speaker_assign(zs, m.speaker_ids, table_rows(table), table.alpha());
    for (const auto r : a.mapping) ids.push_back(m.speaker_ids[r]);
  } else {
    ForwardOptions<float> o;
    o.mode = mode;
    o.reg = cfg_.steering_reg;
    o.training = true;
    o.rng = &noise_rng_;
    std::vector<Tensor<float>> enrolled;
    if (mode == Mode::offline) {
      // Enrollment: another excerpt of each target speaker under a random interferer.
      for (std::size_t r = 0; r < m.speaker_ids.size(); ++r) {
        std::vector<Utterance> same, other;
        for (const auto& u : corpus_.train) (u.speaker_id == m.speaker_ids[r] ? same : other).push_back(u);
        std::uniform_int_distribution<std::size_t> ps(0, same.size() - 1), po(0, other.size() - 1);
        std::vector<Utterance> pair{same[ps(data_rng_)], other[po(data_rng_)]};
        const auto enr = draw(pair, cfg_.crop_seconds, data_rng_);
        const auto zs = model_.steering_vectors(to_tensor<float>(enr.mixture));
        const int id = enr.speaker_ids[0] == m.speaker_ids[r] ? enr.speaker_ids[0] : enr.speaker_ids[1];
        enrolled.push_back(zs[slot_for(zs, table, id)]);
      }
      o.steering = &enrolled;
    }
    const auto r = model_.forward(x, o);
    std::vector<Signal> est_sig;
    for (const auto& e : r.estimates) est_sig.push_back(to_signal(e));
    std::vector<std::size_t> mapping(m.sources.size());
    for (std::size_t j = 0; j < mapping.size(); ++j) mapping[j] = j;
    if (mode == Mode::online) {
      const auto pit = upit_assign(target_sig, est_sig);
      std::vector<Signal> zs;
      for (const auto& t : r.steering) zs.push_back(to_signal(t));
      const auto sa = speaker_assign(zs, m.speaker_ids, table_rows(table), table.alpha());
      mapping = epoch >= cfg_.pit_switch_epoch ? sa.mapping : pit.mapping;
      out.agreements = pit.mapping == sa.mapping ? 1 : 0;
      out.assignments = 1;
    } else if (mode == Mode::autopilot) {
      mapping = upit_assign(target_sig, est_sig).mapping;
    }
    sep = pit_loss<float>(targets, r.estimates, nullptr, &mapping);
    if (use_speaker) {
      z = r.steering;
      for (const auto j : mapping) ids.push_back(m.speaker_ids[j]);
    }
  }

  if (use_speaker) {
    if (cfg_.speaker_loss == SpeakerLoss::ince) {
      spk = tune_ince_loss(z, ids, table.E, table.alpha_tensor());
      if (cfg_.reg_loss && table.size() >= 2) spk = add(spk, reg_loss(table.E, ids, cfg_.gamma));
    } else {
      spk = token_id_loss(z, ids, table.E, table.alpha_tensor());
    }
  }
  const auto loss = joint_loss(sep, spk, aug ? 1.0 : cfg_.lambda);
  const double lv = loss.item();
  if (!std::isfinite(lv)) {
    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                         ", sample " + std::to_string(item));
  }
  scale(loss, 1.0f / static_cast<float>(cfg_.batch_size)).backward(false);
  out.loss = lv;
  out.sep = sep.defined() ? sep.item() : 0.0;
  out.speaker = spk.defined() ? spk.item() : 0.0;
  if (use_speaker && cfg_.speaker_loss == SpeakerLoss::ince) {
    pending_.clear();
    for (std::size_t j = 0; j < z.size(); ++j) pending_.emplace_back(z[j].detach(), ids[j]);
  } else {
    pending_.clear();
  }
  return out;
}

void Trainer::validate_epoch(EpochMetrics& row, Mode mode) {
  const auto rep = evaluate_separation(model_, val_set_, mode == Mode::offline ? Mode::online : mode);
  row.val_loss = -rep.si_snr;
  row.val_si_snri = rep.si_snri;
}

void Trainer::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto arrays = to_arrays(model_.params());
  for (const auto& [name, v] : adam_.m) arrays.push_back({"adam.m/" + name, {v.size()}, v});
  for (const auto& [name, v] : adam_.v) arrays.push_back({"adam.v/" + name, {v.size()}, v});
  for (const auto& [name, v] : best_) arrays.push_back({"best/" + name, {v.size()}, v});
  write_container((fs::path(dir) / "checkpoint.bin").string(), arrays);
  json rows = json::array();
  for (const auto& r : metrics_) {
    rows.push_back({{"epoch", r.epoch}, {"phase", r.phase}, {"train_loss", r.train_loss}, {"sep_loss", r.sep_loss},
                    {"speaker_loss", r.speaker_loss}, {"grad_norm", r.grad_norm},
                    {"max_clipped_norm", r.max_clipped_norm}, {"val_loss", r.val_loss},
                    {"val_si_snri", r.val_si_snri}, {"assign_agreement", r.assign_agreement},
                    {"improved", r.improved}});
  }
  const json state{{"next_epoch", next_epoch_},   {"adam_t", adam_.t},
                   {"data_rng", rng_state(data_rng_)}, {"noise_rng", rng_state(noise_rng_)},
                   {"best_val", best_val_},       {"bad_epochs", bad_epochs_},
                   {"early_stopped", early_stopped_}, {"metrics", rows}};
  write_file_atomic((fs::path(dir) / "checkpoint.json").string(), state.dump(2) + "\n");
  write_file_atomic((fs::path(dir) / "metrics.csv").string(), metrics_csv(metrics_));
}

void Trainer::load(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto jpath = fs::path(dir) / "checkpoint.json";
  std::ifstream f(jpath);
  if (!f) throw CheckpointError("cannot open " + jpath.string());
  json state;
  try {
    f >> state;
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint.json: " + std::string(e.what()));
  }
  const auto arrays = read_container((fs::path(dir) / "checkpoint.bin").string());
  assign_arrays(model_.params(), arrays);
  adam_ = {};
  best_.clear();
  for (const auto& a : arrays) {
    if (a.name.rfind("adam.m/", 0) == 0) adam_.m[a.name.substr(7)] = a.data;
    else if (a.name.rfind("adam.v/", 0) == 0) adam_.v[a.name.substr(7)] = a.data;
    else if (a.name.rfind("best/", 0) == 0) best_[a.name.substr(5)] = a.data;
  }
  try {
    next_epoch_ = state.at("next_epoch").get<int>();
    adam_.t = state.at("adam_t").get<std::uint64_t>();
    set_rng_state(data_rng_, state.at("data_rng").get<std::string>());
    set_rng_state(noise_rng_, state.at("noise_rng").get<std::string>());
    best_val_ = state.at("best_val").get<double>();
    bad_epochs_ = state.at("bad_epochs").get<int>();
    early_stopped_ = state.at("early_stopped").get<bool>();
    metrics_.clear();
    for (const auto& r : state.at("metrics")) {
      EpochMetrics m;
      m.epoch = r.at("epoch").get<int>();
      m.phase = r.at("phase").get<std::string>();
      m.train_loss = r.at("train_loss").get<double>();
      m.sep_loss = r.at("sep_loss").get<double>();
      m.speaker_loss = r.at("speaker_loss").get<double>();
      m.grad_norm = r.at("grad_norm").get<double>();
      m.max_clipped_norm = r.at("max_clipped_norm").get<double>();
      m.val_loss = r.at("val_loss").get<double>();
      m.val_si_snri = r.at("val_si_snri").get<double>();
      m.assign_agreement = r.at("assign_agreement").get<double>();
      m.improved = r.at("improved").get<bool>();
      metrics_.push_back(m);
    }
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint.json: " + std::string(e.what()));
  }
}

void Trainer::snapshot_best() {
  best_.clear();
  for (const auto& [name, t] : model_.params().map()) best_[name] = t.to_vector();
}

void Trainer::restore_best() {
  if (best_.empty()) return;
  for (auto& [name, t] : model_.params().map()) {
    const auto it = best_.find(name);
    if (it != best_.end()) std::copy(it->second.begin(), it->second.end(), t.mutable_data().begin());
  }
}

TrainResult Trainer::run(const TrainIO& io) {
  const double t0 = cpu_seconds();
  double epoch_start = t0, longest_epoch = 0;
  if (io.resume) {
    if (io.out_dir.empty()) throw std::invalid_argument("resume needs an output directory");
    load(io.out_dir);
  }
  const auto phases = schedule();
  TrainResult res;
  int begin = 0;
  int ran = 0;
  bool halt = false;
  for (const auto& ph : phases) {
    const int end = begin + ph.epochs;
    const bool selects = ph.name == "joint" || ph.name == "finetune";
    if (next_epoch_ < begin) next_epoch_ = begin;
    if (next_epoch_ == begin && !halt) {
      best_val_ = 1e300;
      bad_epochs_ = 0;
      best_.clear();
    }
    const auto prefixes = trainable(ph.name);
    const Mode mode = ph.name == "warmup" ? Mode::autopilot : cfg_.mode;
    while (!halt && next_epoch_ < end) {
      const int epoch = next_epoch_;
      const int local = epoch - begin;
      EpochMetrics row;
      row.epoch = epoch;
      row.phase = ph.name;
      int agree = 0, assigned = 0;
      const int n = cfg_.steps_per_epoch * cfg_.batch_size;
      for (int step = 0; step < cfg_.steps_per_epoch; ++step) {
        model_.params().release_grad();
        std::vector<std::pair<Tensor<float>, int>> ema;
        for (int b = 0; b < cfg_.batch_size; ++b) {
          const auto s = train_sample(ph.name, ph.name == "joint" ? local : 0, epoch * cfg_.steps_per_epoch + step, b);
          row.train_loss += s.loss / n;
          row.sep_loss += s.sep / n;
          row.speaker_loss += s.speaker / n;
          agree += s.agreements;
          assigned += s.assignments;
          ema.insert(ema.end(), pending_.begin(), pending_.end());
        }
        double clipped = 0;
        row.grad_norm += clip_and_step(model_.params(), adam_, cfg_, prefixes, &clipped) / cfg_.steps_per_epoch;
        row.max_clipped_norm = std::max(row.max_clipped_norm, clipped);
        for (const auto& [z, id] : ema) ema_update(model_.table(), z, id);
      }
      row.assign_agreement = assigned ? static_cast<double>(agree) / assigned : 0.0;
      validate_epoch(row, mode);
      if (row.val_loss < best_val_) {
        best_val_ = row.val_loss;
        bad_epochs_ = 0;
        row.improved = true;
        if (selects) snapshot_best();
      } else {
        ++bad_epochs_;
      }
      metrics_.push_back(row);
      ++next_epoch_;
      ++ran;
      const bool stop = selects && bad_epochs_ >= cfg_.patience;
      if (stop) {
        early_stopped_ = true;
        next_epoch_ = end;
      }
      // Stop before an epoch that would overrun the budget.
      const double now = cpu_seconds();
      longest_epoch = std::max(longest_epoch, now - epoch_start);
      epoch_start = now;
      if (cfg_.time_budget_seconds > 0 && now - t0 + longest_epoch > cfg_.time_budget_seconds) {
        res.budget_exhausted = true;
        halt = true;
      }
      if (io.stop_after_epochs > 0 && ran >= io.stop_after_epochs) halt = true;
      if (next_epoch_ >= end || halt) {
        // Phase (or run) boundary: keep its best weights.
        if (selects && (next_epoch_ >= end || res.budget_exhausted)) restore_best();
      }
      if (!io.out_dir.empty()) save(io.out_dir);
    }
    begin = end;
    if (halt) break;
  }
  res.metrics = metrics_;
  res.epochs_run = ran;
  res.early_stopped = early_stopped_;
  res.best_val_loss = best_val_;
  res.cpu_seconds = cpu_seconds() - t0;
  return res;
}

SeparationReport evaluate_separation(const Model<float>& model, const std::vector<MixtureSample>& mixtures, Mode mode,
                                     const Corpus* corpus, std::vector<std::vector<Waveform>>* estimates) {
  if (mode == Mode::offline && corpus == nullptr) throw std::invalid_argument("offline evaluation needs enrollments");
  NoGradGuard ng;
  SeparationReport rep;
  rep.mode = mode;
  std::map<int, Tensor<float>> cache;
  std::size_t idx = 0;
  for (const auto& m : mixtures) {
    ForwardOptions<float> o;
    o.mode = mode;
    std::vector<Tensor<float>> z;
    if (mode == Mode::offline) {
      for (const int id : m.speaker_ids) {
        ++rep.enrollment_uses[id];
        auto it = cache.find(id);
        if (it == cache.end()) {
          it = cache.emplace(id, enrollment_steering(model, corpus->enrollment_for(id))).first;
        } else {
          ++rep.enrollment_cache_hits[id];
        }
        z.push_back(it->second);
      }
      o.steering = &z;
    }
    const auto r = model.forward(to_tensor<float>(m.mixture), o);
    std::vector<Signal> tg, es;
    for (const auto& s : m.sources) tg.push_back(to_signal(s.samples));
    for (const auto& e : r.estimates) es.push_back(to_signal(e));
    const auto a = upit_assign(tg, es);
    std::vector<Signal> paired(tg.size());
    for (std::size_t j = 0; j < es.size(); ++j) paired[a.mapping[j]] = es[j];
    const auto imp = improvements(to_signal(m.mixture.samples), tg, paired);
    std::ostringstream id;
    id << "mix_" << std::setw(3) << std::setfill('0') << idx++;
    rep.rows.push_back({id.str(), imp.si_snr, imp.si_snri, imp.sdri, a.mapping, a.method});
    rep.si_snr += imp.si_snr / static_cast<double>(mixtures.size());
    rep.si_snri += imp.si_snri / static_cast<double>(mixtures.size());
    rep.sdri += imp.sdri / static_cast<double>(mixtures.size());
    if (estimates) {
      std::vector<Waveform> w;
      for (const auto& e : r.estimates) w.push_back(to_waveform(e, m.mixture.sample_rate));
      estimates->push_back(std::move(w));
    }
  }
  return rep;
}

Tensor<float> enrollment_steering(const Model<float>& model, const MixtureSample& enrollment) {
  NoGradGuard ng;
  ForwardOptions<float> o;
  o.mode = Mode::online;
  const auto r = model.forward(to_tensor<float>(enrollment.mixture), o);
  std::vector<Signal> tg, es;
  for (const auto& s : enrollment.sources) tg.push_back(to_signal(s.samples));
  for (const auto& e : r.estimates) es.push_back(to_signal(e));
  const auto a = upit_assign(tg, es);
  for (std::size_t j = 0; j < a.mapping.size(); ++j) {
    if (a.mapping[j] == 0) return r.steering[j];
  }
  return r.steering[0];
}

std::vector<SvTrial> build_sv_trials(const std::vector<Utterance>& utterances, std::size_t per_class,
                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SvTrial> same, diff;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    for (std::size_t j = i + 1; j < utterances.size(); ++j) {
      if (utterances[i].speaker_id == utterances[j].speaker_id) same.push_back({i, j, true});
    }
  }
  std::shuffle(same.begin(), same.end(), rng);
  if (same.size() > per_class) same.resize(per_class);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  if (utterances.size() >= 2) {
    std::uniform_int_distribution<std::size_t> pick(0, utterances.size() - 1);
    for (std::size_t tries = 0; diff.size() < per_class && tries < per_class * 1000; ++tries) {
      auto i = pick(rng), j = pick(rng);
      if (utterances[i].speaker_id == utterances[j].speaker_id) continue;
      if (i > j) std::swap(i, j);
      if (!seen.insert({i, j}).second) continue;
      diff.push_back({i, j, false});
    }
  }
  same.insert(same.end(), diff.begin(), diff.end());
  return same;
}

SvReport evaluate_sv(const Model<float>& model, const std::vector<Utterance>& utterances,
                     const std::vector<SvTrial>& trials, bool masked, std::uint64_t seed, double sir_min_db,
                     double sir_max_db, double seconds) {
  if (!model.config().speaker_space) throw std::invalid_argument("verification needs the speaker space");
  NoGradGuard ng;
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, utterances.size() - 1);
  std::uniform_real_distribution<double> sir(sir_min_db, sir_max_db);
  SvReport rep;
  std::vector<std::vector<double>> emb(utterances.size());
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    Waveform target = utterances[i].wave;
    if (seconds > 0) {
      target.samples.resize(std::min(target.size(), static_cast<std::size_t>(seconds * target.sample_rate)));
    }
    MixtureSample m;
    if (masked) {
      std::size_t k = pick(rng);
      for (int t = 0; t < 1000 && utterances[k].speaker_id == utterances[i].speaker_id; ++t) k = pick(rng);
      if (utterances[k].speaker_id == utterances[i].speaker_id) throw std::invalid_argument("masking needs two speakers");
      m = mix(target, utterances[k].wave, sir(rng), utterances[i].speaker_id, utterances[k].speaker_id);
    } else {
      m.mixture = target;
      m.sources = {target};
    }
    ForwardOptions<float> o;
    o.mode = Mode::online;
    const auto r = model.forward(to_tensor<float>(m.mixture), o);
    const Signal tg = to_signal(m.sources[0].samples);
    // Slot of the estimate that best matches the clean target.
    std::size_t slot = 0;
    double best = -1e300;
    for (std::size_t j = 0; j < r.estimates.size(); ++j) {
      const double v = si_snr(tg, to_signal(r.estimates[j]));
      if (v > best) best = v, slot = j;
    }
    if (masked) {
      std::vector<Signal> es;
      for (const auto& e : r.estimates) es.push_back(to_signal(e));
      const auto a = upit_assign({tg, to_signal(m.sources[1].samples)}, es);
      for (std::size_t j = 0; j < a.mapping.size(); ++j) {
        if (a.mapping[j] == 0) slot = j;
      }
    }
    emb[i] = to_signal(r.steering[slot]);
    rep.embeddings.emplace_back(utterances[i].speaker_id, emb[i]);
  }
  const double alpha = model.table().alpha();
  std::vector<std::pair<double, bool>> scores;
  for (const auto& t : trials) {
    if (t.a >= emb.size() || t.b >= emb.size()) throw std::out_of_range("trial index out of range");
    scores.emplace_back(sv_score(emb[t.a], emb[t.b], alpha), t.same);
  }
  rep.trials = scores.size();
  rep.roc = roc_metrics(scores);
  return rep;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "grid,name,config_hash,params,si_snri,sdri,final_train_loss\n";
  for (const auto& r : rows) {
    os << r.grid << ',' << r.name << ',' << r.config_hash << ',' << r.params << ',' << fmt(r.si_snri) << ','
       << fmt(r.sdri) << ',' << fmt(r.final_train_loss) << '\n';
  }
  return os.str();
}

std::string config_hash(const ModelConfig& m, const TrainConfig& t) {
  std::ostringstream os;
  const auto& g = m.galr;
  os << "W=" << m.W << ";D=" << g.D << ";K=" << g.K << ";Q=" << g.Q << ";H=" << g.H << ";heads=" << g.heads
     << ";local=" << to_string(g.local_kind) << ";global=" << to_string(g.global_kind) << ";B=" << m.B
     << ";B1=" << m.B1 << ";B2=" << m.B2 << ";C=" << m.C << ";N=" << m.N << ";steer=" << to_string(m.steering_kind)
     << ";norm=" << m.dual_norm << ";spk=" << m.speaker_space << ";mode=" << to_string(t.mode)
     << ";lr=" << fmt(t.lr) << ";wd=" << fmt(t.weight_decay) << ";clip=" << fmt(t.clip_l2)
     << ";epochs=" << t.max_epochs << ";patience=" << t.patience << ";batch=" << t.batch_size
     << ";steps=" << t.steps_per_epoch << ";crop=" << fmt(t.crop_seconds) << ";lambda=" << fmt(t.lambda)
     << ";gamma=" << fmt(t.gamma) << ";eps=" << fmt(t.epsilon) << ";switch=" << t.pit_switch_epoch
     << ";seed=" << t.seed << ";reg=" << to_string(t.steering_reg) << ";spkloss=" << to_string(t.speaker_loss)
     << ";regloss=" << t.reg_loss << ";warmup=" << t.warmup_epochs << ";aug=" << t.speaker_aug_epochs
     << ";augutt=" << t.aug_utterances << ";finetune=" << t.finetune_epochs;
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

namespace {

AblationRow run_cell(const std::string& grid, const std::string& name, const ModelConfig& mc, const TrainConfig& tc,
                     const AblationSpec& spec, const Corpus& corpus) {
  Model<float> model(mc, tc.seed);
  Trainer tr(model, corpus, tc);
  const auto res = tr.run();
  std::vector<MixtureSample> eval;
  for (std::size_t i = 0; i < corpus.test_mixtures.size() && i < spec.eval_mixtures; ++i) {
    eval.push_back(crop_mixture(corpus.test_mixtures[i], spec.eval_seconds));
  }
  const auto rep = evaluate_separation(model, eval, tc.mode == Mode::offline ? Mode::online : tc.mode);
  AblationRow row;
  row.grid = grid;
  row.name = name;
  row.config_hash = config_hash(mc, tc);
  row.params = model.params().count();
  row.si_snri = rep.si_snri;
  row.sdri = rep.sdri;
  row.final_train_loss = res.metrics.empty() ? 0.0 : res.metrics.back().train_loss;
  return row;
}

}  // namespace

std::vector<AblationRow> ablate(const AblationSpec& spec, const Corpus& corpus) {
  std::vector<AblationRow> rows;
  if (spec.summarizer) {
    for (const auto local : {LayerKind::rnn, LayerKind::self_attn}) {
      for (const auto global : {LayerKind::rnn, LayerKind::self_attn}) {
        auto mc = spec.model;
        mc.galr.local_kind = local;
        mc.galr.global_kind = global;
        mc.speaker_space = false;
        auto tc = spec.train;
        tc.mode = Mode::autopilot;
        tc.warmup_epochs = tc.speaker_aug_epochs = tc.finetune_epochs = 0;
        rows.push_back(run_cell("summarizer", to_string(local) + "+" + to_string(global), mc, tc, spec, corpus));
      }
    }
  }
  if (spec.table) {
    auto base = spec.train;
    base.mode = Mode::online;
    base.steering_reg = SteeringReg::noise;
    base.reg_loss = true;
    if (base.speaker_aug_epochs == 0) base.speaker_aug_epochs = 1;
    struct Variant {
      std::string name;
      TrainConfig cfg;
    };
    std::vector<Variant> vs;
    vs.push_back({"baseline", base});
    auto v = base;
    v.steering_reg = SteeringReg::dropout;
    vs.push_back({"dropout_steering", v});
    v = base;
    v.steering_reg = SteeringReg::none;
    vs.push_back({"no_steering_reg", v});
    v = base;
    v.max_epochs += v.speaker_aug_epochs;
    v.speaker_aug_epochs = 0;
    vs.push_back({"no_speaker_aug", v});
    v = base;
    v.reg_loss = false;
    vs.push_back({"no_reg_loss", v});
    auto mc = spec.model;
    mc.speaker_space = true;
    for (const auto& x : vs) rows.push_back(run_cell("steering", x.name, mc, x.cfg, spec, corpus));
  }
  return rows;
}

}  // namespace tunein
