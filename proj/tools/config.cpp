#include "config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace tunein::cli {

using json = nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string where = path_ + "." + key;
    const json& v = *it;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(where + " must be a non-negative integer");
      }
      out = static_cast<T>(v.get<std::uint64_t>());
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
      out = static_cast<T>(v.get<std::int64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    const bool present = j_.contains(key);
    get(key, s);
    if (!present) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read(Section& s, CorpusConfig& c) {
  s.get("seed", c.seed);
  s.get("sample_rate", c.sample_rate);
  s.get("speakers", c.speakers);
  s.get("utterances", c.utterances);
  s.get("validation_utterances", c.validation_utterances);
  s.get("held_out_speakers", c.held_out_speakers);
  s.get("held_out_utterances", c.held_out_utterances);
  s.get("utterance_seconds", c.utterance_seconds);
  s.get("enrollment_seconds", c.enrollment_seconds);
  s.get("test_mixtures", c.test_mixtures);
  s.get("sir_min_db", c.sir_min_db);
  s.get("sir_max_db", c.sir_max_db);
}

void read(Section& s, GalrConfig& g) {
  s.get("D", g.D);
  s.get("K", g.K);
  s.get("Q", g.Q);
  s.get("H", g.H);
  s.get("heads", g.heads);
  s.get_enum("local_kind", g.local_kind, parse_layer_kind);
  s.get_enum("global_kind", g.global_kind, parse_layer_kind);
  s.get("ga_residual", g.ga_residual);
  s.get("positional", g.positional);
}

void read(Section& s, ModelConfig& m) {
  s.get("W", m.W);
  if (const json* g = s.child("galr")) {
    Section gs(*g, "model.galr");
    read(gs, m.galr);
    gs.finish();
  }
  s.get("B", m.B);
  s.get("B1", m.B1);
  s.get("B2", m.B2);
  s.get("C", m.C);
  s.get("N", m.N);
  s.get_enum("steering_kind", m.steering_kind, parse_steering_kind);
  s.get("dual_norm", m.dual_norm);
  s.get("speaker_space", m.speaker_space);
}

void read(Section& s, TrainConfig& t) {
  s.get_enum("mode", t.mode, parse_mode);
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("clip_l2", t.clip_l2);
  s.get("max_epochs", t.max_epochs);
  s.get("patience", t.patience);
  s.get("batch_size", t.batch_size);
  s.get("steps_per_epoch", t.steps_per_epoch);
  s.get("crop_seconds", t.crop_seconds);
  s.get("sir_min_db", t.sir_min_db);
  s.get("sir_max_db", t.sir_max_db);
  s.get("lambda", t.lambda);
  s.get("gamma", t.gamma);
  s.get("epsilon", t.epsilon);
  s.get("pit_switch_epoch", t.pit_switch_epoch);
  s.get("seed", t.seed);
  s.get_enum("steering_reg", t.steering_reg, parse_steering_reg);
  s.get_enum("speaker_loss", t.speaker_loss, parse_speaker_loss);
  s.get("reg_loss", t.reg_loss);
  s.get("warmup_epochs", t.warmup_epochs);
  s.get("speaker_aug_epochs", t.speaker_aug_epochs);
  s.get("aug_utterances", t.aug_utterances);
  s.get("finetune_epochs", t.finetune_epochs);
  s.get("val_mixtures", t.val_mixtures);
  s.get("val_seconds", t.val_seconds);
  s.get("time_budget_seconds", t.time_budget_seconds);
}

void read(Section& s, EvalConfig& e) {
  s.get_enum("mode", e.mode, parse_mode);
  s.get("mixtures", e.mixtures);
  s.get("seconds", e.seconds);
  s.get("set", e.set);
  s.get("sv_pairs", e.sv_pairs);
  s.get("sv_masked", e.sv_masked);
  s.get("sv_seed", e.sv_seed);
  s.get("sv_seconds", e.sv_seconds);
  s.get("write_wavs", e.write_wavs);
  s.get("ablation_mixtures", e.ablation_mixtures);
  s.get("ablation_seconds", e.ablation_seconds);
}

void read(Section& s, CostConfig& c) {
  s.get("seconds", c.seconds);
  s.get("sample_rate", c.sample_rate);
  if (const json* w = s.child("windows")) {
    if (!w->is_array()) throw ConfigError("cost.windows must be an array");
    c.windows.clear();
    for (const auto& v : *w) {
      if (!v.is_number_unsigned()) throw ConfigError("cost.windows entries must be positive integers");
      c.windows.push_back(v.get<std::size_t>());
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (corpus.sample_rate <= 0) throw ConfigError("corpus.sample_rate must be positive");
  if (corpus.speakers < 2) throw ConfigError("corpus.speakers must be >= 2");
  if (corpus.utterances < 1 || corpus.validation_utterances < 0) throw ConfigError("corpus utterance counts invalid");
  if (corpus.held_out_speakers < 0 || corpus.held_out_utterances < 0 || corpus.test_mixtures < 0) {
    throw ConfigError("corpus held-out counts must be non-negative");
  }
  if (!(corpus.utterance_seconds > 0)) throw ConfigError("corpus.utterance_seconds must be positive");
  if (corpus.sir_max_db < corpus.sir_min_db) throw ConfigError("corpus.sir_max_db must be >= corpus.sir_min_db");
  if (model.speaker_space && static_cast<int>(model.N) != corpus.speakers) {
    throw ConfigError("model.N must equal corpus.speakers");
  }
  if (model.C != 2) throw ConfigError("model.C must be 2 (two-speaker mixtures)");
  if (eval.seconds < 0 || eval.sv_seconds < 0 || eval.ablation_seconds < 0) {
    throw ConfigError("eval durations must be non-negative");
  }
  if (eval.set != "test" && eval.set != "validation") throw ConfigError("eval.set must be test or validation");
  if (!(cost.seconds > 0) || cost.sample_rate <= 0) throw ConfigError("cost.seconds and cost.sample_rate must be positive");
  for (const auto w : cost.windows) {
    if (w < 2 || w % 2) throw ConfigError("cost.windows entries must be even and >= 2");
  }
}

json to_json(const RunConfig& c) {
  const auto& g = c.model.galr;
  json j;
  j["corpus"] = {{"seed", c.corpus.seed},
                 {"sample_rate", c.corpus.sample_rate},
                 {"speakers", c.corpus.speakers},
                 {"utterances", c.corpus.utterances},
                 {"validation_utterances", c.corpus.validation_utterances},
                 {"held_out_speakers", c.corpus.held_out_speakers},
                 {"held_out_utterances", c.corpus.held_out_utterances},
                 {"utterance_seconds", c.corpus.utterance_seconds},
                 {"enrollment_seconds", c.corpus.enrollment_seconds},
                 {"test_mixtures", c.corpus.test_mixtures},
                 {"sir_min_db", c.corpus.sir_min_db},
                 {"sir_max_db", c.corpus.sir_max_db}};
  j["model"] = {{"W", c.model.W},
                {"galr",
                 {{"D", g.D},
                  {"K", g.K},
                  {"Q", g.Q},
                  {"H", g.H},
                  {"heads", g.heads},
                  {"local_kind", to_string(g.local_kind)},
                  {"global_kind", to_string(g.global_kind)},
                  {"ga_residual", g.ga_residual},
                  {"positional", g.positional}}},
                {"B", c.model.B},
                {"B1", c.model.B1},
                {"B2", c.model.B2},
                {"C", c.model.C},
                {"N", c.model.N},
                {"steering_kind", to_string(c.model.steering_kind)},
                {"dual_norm", c.model.dual_norm},
                {"speaker_space", c.model.speaker_space}};
  const auto& t = c.train;
  j["train"] = {{"mode", to_string(t.mode)},
                {"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"clip_l2", t.clip_l2},
                {"max_epochs", t.max_epochs},
                {"patience", t.patience},
                {"batch_size", t.batch_size},
                {"steps_per_epoch", t.steps_per_epoch},
                {"crop_seconds", t.crop_seconds},
                {"sir_min_db", t.sir_min_db},
                {"sir_max_db", t.sir_max_db},
                {"lambda", t.lambda},
                {"gamma", t.gamma},
                {"epsilon", t.epsilon},
                {"pit_switch_epoch", t.pit_switch_epoch},
                {"seed", t.seed},
                {"steering_reg", to_string(t.steering_reg)},
                {"speaker_loss", to_string(t.speaker_loss)},
                {"reg_loss", t.reg_loss},
                {"warmup_epochs", t.warmup_epochs},
                {"speaker_aug_epochs", t.speaker_aug_epochs},
                {"aug_utterances", t.aug_utterances},
                {"finetune_epochs", t.finetune_epochs},
                {"val_mixtures", t.val_mixtures},
                {"val_seconds", t.val_seconds},
                {"time_budget_seconds", t.time_budget_seconds}};
  const auto& e = c.eval;
  j["eval"] = {{"mode", to_string(e.mode)},
               {"mixtures", e.mixtures},
               {"seconds", e.seconds},
               {"set", e.set},
               {"sv_pairs", e.sv_pairs},
               {"sv_masked", e.sv_masked},
               {"sv_seed", e.sv_seed},
               {"sv_seconds", e.sv_seconds},
               {"write_wavs", e.write_wavs},
               {"ablation_mixtures", e.ablation_mixtures},
               {"ablation_seconds", e.ablation_seconds}};
  j["cost"] = {{"seconds", c.cost.seconds}, {"sample_rate", c.cost.sample_rate}, {"windows", c.cost.windows}};
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  if (const json* s = root.child("corpus")) {
    Section sec(*s, "corpus");
    read(sec, c.corpus);
    sec.finish();
  }
  if (const json* s = root.child("model")) {
    Section sec(*s, "model");
    read(sec, c.model);
    sec.finish();
  }
  if (const json* s = root.child("train")) {
    Section sec(*s, "train");
    read(sec, c.train);
    sec.finish();
  }
  if (const json* s = root.child("eval")) {
    Section sec(*s, "eval");
    read(sec, c.eval);
    sec.finish();
  }
  if (const json* s = root.child("cost")) {
    Section sec(*s, "cost");
    read(sec, c.cost);
    sec.finish();
  }
  root.finish();
  c.validate();
  return c;
}

void apply_override(json& doc, const std::string& dotted, const std::string& value) {
  if (dotted.empty() || dotted.front() == '.' || dotted.back() == '.') throw ConfigError("bad override key '" + dotted + "'");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("bad override key '" + dotted + "'");
    if (!node->is_object()) throw ConfigError("override " + dotted + " walks into a non-object");
    if (dot == std::string::npos) {
      json v = json::parse(value, nullptr, false);
      (*node)[key] = v.is_discarded() ? json(value) : v;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    if (!std::filesystem::is_regular_file(path)) throw MissingFileError("config file not found: " + path);
    std::ifstream f(path);
    doc = json::parse(f, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  }
  for (const auto& [k, v] : overrides) apply_override(doc, k, v);
  return from_json(doc);
}

}  // namespace tunein::cli
