#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "config.hpp"
#include "tunein/audio.hpp"
#include "tunein/cost.hpp"
#include "tunein/params.hpp"

namespace tunein::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Overrides = std::vector<std::pair<std::string, std::string>>;

namespace {

struct Common {
  std::string config;
  std::string out;
  bool json_out = false;
  int workers = 1;
  std::int64_t seed = -1;
  Overrides overrides;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw MissingFileError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
  if (!fs::is_directory(path)) throw MissingFileError(what + " not found: " + path);
}

Overrides with_seed(const Common& c) {
  auto o = c.overrides;
  if (c.seed >= 0) o.emplace_back("train.seed", std::to_string(c.seed));
  return o;
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path.string(), text); }

void echo_config(const std::string& out, const RunConfig& cfg) {
  fs::create_directories(out);
  write_text(fs::path(out) / "config.json", to_json(cfg).dump(2) + "\n");
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void report(std::ostream& out, bool as_json, const json& summary) {
  if (as_json) {
    out << summary.dump(2) << "\n";
    return;
  }
  for (auto it = summary.begin(); it != summary.end(); ++it) {
    out << std::left << std::setw(22) << it.key() << ' ';
    if (it->is_number_float()) {
      out << fixed(it->get<double>(), 4);
    } else if (it->is_string()) {
      out << it->get<std::string>();
    } else {
      out << it->dump();
    }
    out << "\n";
  }
}

Corpus obtain_corpus(const RunConfig& cfg, const std::string& dir) {
  if (dir.empty()) return build_corpus(cfg.corpus);
  require_dir(dir, "corpus directory");
  require_file((fs::path(dir) / "corpus.json").string(), "corpus manifest");
  return load_corpus(dir);
}

void check_corpus_fits(const RunConfig& cfg, const Corpus& corpus) {
  if (cfg.model.speaker_space && static_cast<int>(cfg.model.N) != corpus.config.speakers) {
    throw ConfigError("model.N (" + std::to_string(cfg.model.N) + ") does not match the corpus speaker count (" +
                      std::to_string(corpus.config.speakers) + ")");
  }
}

struct Loaded {
  RunConfig cfg;
  std::unique_ptr<Model<float>> model;
};

// The checkpoint's echoed config rebuilds the model; eval keys may be
// overridden by --config (its eval section) and dotted flags.
Loaded load_checkpoint(const std::string& dir, const Common& c) {
  require_dir(dir, "checkpoint directory");
  const auto cpath = fs::path(dir) / "config.json";
  const auto bpath = fs::path(dir) / "checkpoint.bin";
  require_file(cpath.string(), "checkpoint config");
  require_file(bpath.string(), "checkpoint weights");
  std::ifstream f(cpath);
  json doc = json::parse(f, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("checkpoint config is not valid JSON: " + cpath.string());
  if (!c.config.empty()) {
    require_file(c.config, "config file");
    std::ifstream g(c.config);
    const json extra = json::parse(g, nullptr, false);
    if (extra.is_discarded()) throw ConfigError("config is not valid JSON: " + c.config);
    from_json(extra);  // full validation of the file on its own
    if (extra.contains("eval")) doc["eval"] = extra["eval"];
  }
  for (const auto& [k, v] : c.overrides) {
    if (k.rfind("eval.", 0) != 0) throw ConfigError("only eval.* keys can be overridden for a trained checkpoint: " + k);
    apply_override(doc, k, v);
  }
  Loaded l;
  l.cfg = from_json(doc);
  l.model = std::make_unique<Model<float>>(l.cfg.model, l.cfg.train.seed);
  assign_arrays(l.model->params(), read_container(bpath.string()));
  return l;
}

std::vector<MixtureSample> select(std::vector<MixtureSample> mixtures, const EvalConfig& e) {
  if (e.mixtures > 0 && mixtures.size() > e.mixtures) mixtures.resize(e.mixtures);
  if (e.seconds > 0) {
    for (auto& m : mixtures) m = crop_mixture(m, e.seconds);
  }
  return mixtures;
}

// --- commands ---

int cmd_synth(const Common& c, std::ostream& out) {
  const auto cfg = load_config(c.config, with_seed(c));
  auto corpus = build_corpus(cfg.corpus);
  fs::create_directories(c.out);
  save_corpus(corpus, c.out);
  echo_config(c.out, cfg);
  report(out, c.json_out,
         {{"out", c.out},
          {"train_utterances", corpus.train.size()},
          {"validation_utterances", corpus.validation.size()},
          {"held_out_utterances", corpus.held_out.size()},
          {"validation_mixtures", corpus.validation_mixtures.size()},
          {"test_mixtures", corpus.test_mixtures.size()},
          {"enrollments", corpus.enrollments.size()}});
  return ok;
}

int cmd_train(const Common& c, const std::string& corpus_dir, bool resume, int stop_after, std::ostream& out) {
  const auto echo = fs::path(c.out) / "config.json";
  RunConfig cfg;
  if (resume && c.config.empty() && c.overrides.empty() && c.seed < 0) {
    require_file(echo.string(), "config.json of the run to resume");
    cfg = load_config(echo.string(), {});
  } else {
    cfg = load_config(c.config, with_seed(c));
    if (resume) {
      require_file(echo.string(), "config.json of the run to resume");
      if (to_json(load_config(echo.string(), {})) != to_json(cfg)) {
        throw ConfigError("resolved config differs from the one of the run being resumed");
      }
    }
  }
  if (resume) {
    require_file((fs::path(c.out) / "checkpoint.json").string(), "checkpoint state");
    require_file((fs::path(c.out) / "checkpoint.bin").string(), "checkpoint weights");
  }
  const Corpus corpus = obtain_corpus(cfg, corpus_dir);
  check_corpus_fits(cfg, corpus);
  echo_config(c.out, cfg);
  Model<float> model(cfg.model, cfg.train.seed);
  Trainer trainer(model, corpus, cfg.train);
  TrainIO io;
  io.out_dir = c.out;
  io.resume = resume;
  io.stop_after_epochs = stop_after;
  const auto r = trainer.run(io);
  json s{{"out", c.out},
         {"params", model.params().count()},
         {"epochs", r.metrics.size()},
         {"epochs_this_run", r.epochs_run},
         {"early_stopped", r.early_stopped},
         {"budget_exhausted", r.budget_exhausted},
         {"best_val_loss", r.best_val_loss},
         {"cpu_seconds", r.cpu_seconds}};
  if (!r.metrics.empty()) {
    s["last_phase"] = r.metrics.back().phase;
    s["last_val_si_snri"] = r.metrics.back().val_si_snri;
  }
  report(out, c.json_out, s);
  return ok;
}

int cmd_separate(const Common& c, const std::string& ckpt, const std::string& in, const std::string& mode_name,
                 const std::vector<std::string>& enroll, std::ostream& out) {
  const Mode mode = [&] {
    try {
      return parse_mode(mode_name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }();
  require_file(in, "input mixture");
  for (const auto& e : enroll) require_file(e, "enrollment");
  const auto l = load_checkpoint(ckpt, c);
  const auto& mc = l.cfg.model;
  if (mode != Mode::autopilot && !mc.speaker_space) throw ConfigError("checkpoint has no speaker space; use autopilot");
  if (mode == Mode::offline && enroll.size() != mc.C) {
    throw ConfigError("offline mode needs exactly " + std::to_string(mc.C) + " --enroll files");
  }
  if (mode != Mode::offline && !enroll.empty()) throw ConfigError("--enroll is only used in offline mode");
  const Waveform mixture = read_wav(in);
  if (mixture.sample_rate != l.cfg.corpus.sample_rate) {
    throw ConfigError("input sample rate " + std::to_string(mixture.sample_rate) + " differs from the model's " +
                      std::to_string(l.cfg.corpus.sample_rate));
  }
  NoGradGuard guard;
  std::vector<Tensor<float>> steering;
  for (const auto& path : enroll) {
    const Waveform w = read_wav(path);
    ForwardOptions<float> o;
    o.mode = Mode::online;
    const auto fr = l.model->forward(to_tensor<float>(w), o);
    const Signal ref(w.samples.begin(), w.samples.end());
    std::size_t best = 0;
    double best_snr = -1e300;
    for (std::size_t j = 0; j < fr.estimates.size(); ++j) {
      const auto& v = fr.estimates[j].values();
      const double s = si_snr(ref, Signal(v.begin(), v.end()));
      if (s > best_snr) best_snr = s, best = j;
    }
    steering.push_back(fr.steering[best]);
  }
  ForwardOptions<float> o;
  o.mode = mode;
  if (mode == Mode::offline) o.steering = &steering;
  const auto fr = l.model->forward(to_tensor<float>(mixture), o);
  fs::create_directories(c.out);
  json files = json::array();
  for (std::size_t j = 0; j < fr.estimates.size(); ++j) {
    const auto p = fs::path(c.out) / ("source_" + std::to_string(j) + ".wav");
    write_wav(p.string(), to_waveform(fr.estimates[j], mixture.sample_rate));
    files.push_back(p.filename().string());
  }
  const double hop_s = static_cast<double>(mc.galr.K / 2) * static_cast<double>(mc.W / 2) / mixture.sample_rate;
  write_text(fs::path(c.out) / "attention.csv", cross_attention_csv(fr.cross_weights, hop_s));
  echo_config(c.out, l.cfg);
  report(out, c.json_out,
         {{"mode", to_string(mode)}, {"samples", mixture.size()}, {"sources", files}, {"attention", "attention.csv"}});
  return ok;
}

int cmd_eval_sep(const Common& c, const std::string& ckpt, const std::string& manifest, const std::string& corpus_dir,
                 const std::string& mode_name, std::ostream& out) {
  if (!manifest.empty()) require_file(manifest, "mixture manifest");
  const auto l = load_checkpoint(ckpt, c);
  RunConfig cfg = l.cfg;
  if (!mode_name.empty()) {
    try {
      cfg.eval.mode = parse_mode(mode_name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (cfg.eval.mode != Mode::autopilot && !cfg.model.speaker_space) {
    throw ConfigError("checkpoint has no speaker space; use autopilot");
  }
  std::string cdir = corpus_dir;
  if (cdir.empty() && !manifest.empty()) {
    const auto parent = fs::path(manifest).parent_path();
    if (fs::is_regular_file(parent / "corpus.json")) cdir = parent.string();
  }
  std::unique_ptr<Corpus> corpus;
  const bool need_corpus = manifest.empty() || cfg.eval.mode == Mode::offline;
  if (need_corpus) corpus = std::make_unique<Corpus>(obtain_corpus(cfg, cdir));
  std::vector<MixtureSample> mixtures;
  if (!manifest.empty()) {
    mixtures = load_mixture_manifest(manifest, cfg.eval.set);
  } else {
    mixtures = cfg.eval.set == "test" ? corpus->test_mixtures : corpus->validation_mixtures;
  }
  mixtures = select(std::move(mixtures), cfg.eval);
  if (mixtures.empty()) throw ConfigError("no mixtures to evaluate");
  std::vector<std::vector<Waveform>> est;
  const auto rep =
      evaluate_separation(*l.model, mixtures, cfg.eval.mode, corpus.get(), cfg.eval.write_wavs ? &est : nullptr);
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "metrics.csv", metrics_csv(rep.rows));
  if (cfg.eval.write_wavs) {
    const auto dir = fs::path(c.out) / "wav";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < mixtures.size(); ++i) {
      const std::string id = rep.rows[i].id;
      write_wav((dir / (id + "_mix.wav")).string(), mixtures[i].mixture);
      for (std::size_t j = 0; j < mixtures[i].sources.size(); ++j) {
        write_wav((dir / (id + "_ref" + std::to_string(j) + ".wav")).string(), mixtures[i].sources[j]);
      }
      for (std::size_t j = 0; j < est[i].size(); ++j) {
        write_wav((dir / (id + "_est" + std::to_string(j) + ".wav")).string(), est[i][j]);
      }
    }
  }
  echo_config(c.out, cfg);
  json s{{"mode", to_string(cfg.eval.mode)},
         {"mixtures", rep.rows.size()},
         {"si_snr", rep.si_snr},
         {"si_snri", rep.si_snri},
         {"sdri", rep.sdri}};
  write_text(fs::path(c.out) / "summary.json", s.dump(2) + "\n");
  report(out, c.json_out, s);
  return ok;
}

std::vector<SvTrial> read_trials(const std::string& path, std::size_t utterances) {
  require_file(path, "trial list");
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  if (line != "a,b,same") throw ConfigError("trial list must start with the header a,b,same");
  std::vector<SvTrial> trials;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    SvTrial t;
    char c1 = 0, c2 = 0;
    int same = 0;
    if (!(row >> t.a >> c1 >> t.b >> c2 >> same) || c1 != ',' || c2 != ',' || (same != 0 && same != 1)) {
      throw ConfigError("bad trial row: " + line);
    }
    if (t.a >= utterances || t.b >= utterances) throw ConfigError("trial index out of range: " + line);
    t.same = same == 1;
    trials.push_back(t);
  }
  return trials;
}

std::string trials_csv(const std::vector<SvTrial>& trials) {
  std::ostringstream os;
  os << "a,b,same\n";
  for (const auto& t : trials) os << t.a << ',' << t.b << ',' << (t.same ? 1 : 0) << '\n';
  return os.str();
}

int cmd_eval_sv(const Common& c, const std::string& ckpt, const std::string& trials_arg, const std::string& corpus_dir,
                bool clean, std::ostream& out) {
  const auto l = load_checkpoint(ckpt, c);
  if (!l.cfg.model.speaker_space) throw ConfigError("checkpoint has no speaker space");
  const Corpus corpus = obtain_corpus(l.cfg, corpus_dir);
  if (corpus.held_out.empty()) throw ConfigError("corpus has no held-out utterances");
  const auto& e = l.cfg.eval;
  std::vector<SvTrial> trials;
  const bool is_count = !trials_arg.empty() && trials_arg.find_first_not_of("0123456789") == std::string::npos;
  if (trials_arg.empty() || is_count) {
    const std::size_t n = is_count ? std::stoul(trials_arg) : e.sv_pairs;
    trials = build_sv_trials(corpus.held_out, n, e.sv_seed);
  } else {
    trials = read_trials(trials_arg, corpus.held_out.size());
  }
  const bool masked = e.sv_masked && !clean;
  const auto rep = evaluate_sv(*l.model, corpus.held_out, trials, masked, e.sv_seed, corpus.config.sir_min_db,
                               corpus.config.sir_max_db, e.sv_seconds);
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "roc.csv", roc_csv(rep.roc));
  write_text(fs::path(c.out) / "embeddings.csv", embeddings_csv(rep.embeddings));
  write_text(fs::path(c.out) / "trials.csv", trials_csv(trials));
  echo_config(c.out, l.cfg);
  json s{{"trials", rep.trials}, {"masked", masked}, {"auc", rep.roc.auc}, {"eer", rep.roc.eer}};
  write_text(fs::path(c.out) / "summary.json", s.dump(2) + "\n");
  report(out, c.json_out, s);
  return ok;
}

int cmd_cost(const Common& c, bool sweep, std::ostream& out) {
  const auto cfg = load_config(c.config, with_seed(c));
  std::vector<SweepRow> rows;
  if (sweep) {
    rows = window_sweep(cfg.cost.windows, cfg.cost.seconds, cfg.cost.sample_rate);
  } else {
    const auto r = cost_report(cfg.model, cfg.cost.seconds, cfg.cost.sample_rate);
    rows.push_back({"config", cfg.model.W, r.params, r.activation_memory_bytes, r.flops / 1e9});
  }
  const std::string csv = sweep_csv(rows);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "cost.csv", csv);
    echo_config(c.out, cfg);
  }
  if (c.json_out) {
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back({{"arch", r.arch},
                     {"window", r.window},
                     {"params", r.params},
                     {"memory_bytes", r.memory_bytes},
                     {"gflops", r.gflops}});
    }
    out << arr.dump(2) << "\n";
  } else {
    out << std::left << std::setw(8) << "arch" << std::setw(8) << "window" << std::setw(12) << "params"
        << std::setw(14) << "memory_MB" << "GFLOPs\n";
    for (const auto& r : rows) {
      out << std::setw(8) << r.arch << std::setw(8) << r.window << std::setw(12) << r.params << std::setw(14)
          << fixed(r.memory_bytes / 1e6, 1) << fixed(r.gflops, 2) << "\n";
    }
  }
  return ok;
}

int cmd_ablate(const Common& c, const std::string& grid, const std::string& corpus_dir, std::ostream& out) {
  const auto cfg = load_config(c.config, with_seed(c));
  if (grid != "summarizer" && grid != "table" && grid != "all") {
    throw ConfigError("--grid must be summarizer, table or all");
  }
  const Corpus corpus = obtain_corpus(cfg, corpus_dir);
  check_corpus_fits(cfg, corpus);
  AblationSpec spec;
  spec.model = cfg.model;
  spec.train = cfg.train;
  spec.eval_mixtures = cfg.eval.ablation_mixtures;
  spec.eval_seconds = cfg.eval.ablation_seconds;
  spec.summarizer = grid != "table";
  spec.table = grid != "summarizer";
  const auto rows = ablate(spec, corpus);
  fs::create_directories(c.out);
  write_text(fs::path(c.out) / "ablation.csv", ablation_csv(rows));
  echo_config(c.out, cfg);
  if (c.json_out) {
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back({{"grid", r.grid},
                     {"name", r.name},
                     {"config_hash", r.config_hash},
                     {"params", r.params},
                     {"si_snri", r.si_snri},
                     {"sdri", r.sdri},
                     {"final_train_loss", r.final_train_loss}});
    }
    out << arr.dump(2) << "\n";
  } else {
    for (const auto& r : rows) {
      out << std::left << std::setw(12) << r.grid << std::setw(26) << r.name << std::setw(10) << r.params
          << "SI-SNRi " << fixed(r.si_snri, 2) << "  SDRi " << fixed(r.sdri, 2) << "\n";
    }
  }
  return ok;
}

// Splits dotted --section.key[=value] overrides off the argument list.
std::vector<std::string> take_overrides(const std::vector<std::string>& args, Overrides& overrides) {
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a.rfind("--", 0) == 0 && a.size() > 2) {
      const auto eq = a.find('=');
      const std::string key = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
      if (key.find('.') != std::string::npos) {
        if (eq != std::string::npos) {
          overrides.emplace_back(key, a.substr(eq + 1));
        } else if (i + 1 < args.size()) {
          overrides.emplace_back(key, args[++i]);
        } else {
          throw ConfigError("override --" + key + " needs a value");
        }
        continue;
      }
    }
    rest.push_back(a);
  }
  return rest;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Common c;
  std::vector<std::string> rest;
  try {
    rest = take_overrides(args, c.overrides);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return invalid_config;
  }

  CLI::App app{"Speaker-steered speech separation workbench", rest.empty() ? "tunein" : fs::path(rest[0]).filename().string()};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");
  app.footer("Any config key can be overridden with --section.key=value, e.g. --train.lambda=10.");

  auto add_common = [&](CLI::App* sub, bool needs_out, bool config_required) {
    auto* cfg = sub->add_option("--config", c.config, "JSON run config");
    if (config_required) cfg->required();
    auto* o = sub->add_option("--out", c.out, "Output directory");
    if (needs_out) o->required();
    sub->add_flag("--json", c.json_out, "Machine-readable output");
    sub->add_option("--seed", c.seed, "Shorthand for --train.seed");
    sub->add_option("--workers", c.workers, "Worker threads (training runs on one)")->check(CLI::PositiveNumber);
  };

  std::string checkpoint, input, mode = "online", manifest, corpus_dir, trials, grid = "all";
  std::vector<std::string> enroll;
  bool resume = false, sweep = false, clean = false;
  int stop_after = 0;

  auto* synth = app.add_subcommand("synth", "Write the synthetic corpus (WAVs and manifests)");
  add_common(synth, true, false);

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoint.bin and metrics.csv");
  add_common(train, true, false);
  train->add_flag("--resume", resume, "Continue the run in --out from its checkpoint");
  train->add_option("--corpus", corpus_dir, "Saved corpus directory (default: synthesize from config)");
  train->add_option("--stop-after", stop_after, "Stop with a checkpoint after this many epochs")
      ->check(CLI::NonNegativeNumber);

  auto* separate = app.add_subcommand("separate", "Separate one mixture WAV");
  add_common(separate, true, false);
  separate->add_option("--checkpoint", checkpoint, "Training output directory")->required();
  separate->add_option("--in", input, "Mixture WAV")->required();
  separate->add_option("--mode", mode, "autopilot, online or offline");
  separate->add_option("--enroll", enroll, "Enrollment WAV per output slot (offline)");

  std::string sep_mode;
  auto* eval_sep = app.add_subcommand("eval-sep", "Separation metrics over a mixture set");
  add_common(eval_sep, true, false);
  eval_sep->add_option("--checkpoint", checkpoint, "Training output directory")->required();
  eval_sep->add_option("--manifest", manifest, "mixtures.json (default: the config's corpus)");
  eval_sep->add_option("--corpus", corpus_dir, "Saved corpus directory (offline enrollments)");
  eval_sep->add_option("--mode", sep_mode, "autopilot, online or offline (default eval.mode)");

  auto* eval_sv = app.add_subcommand("eval-sv", "Speaker verification on held-out utterances");
  add_common(eval_sv, true, false);
  eval_sv->add_option("--checkpoint", checkpoint, "Training output directory")->required();
  eval_sv->add_option("--trials", trials, "Pairs per class, or a CSV a,b,same (default eval.sv_pairs)");
  eval_sv->add_option("--corpus", corpus_dir, "Saved corpus directory");
  eval_sv->add_flag("--clean", clean, "Unmasked utterances");

  auto* cost = app.add_subcommand("cost", "Analytic parameter, memory and FLOP counts");
  add_common(cost, false, false);
  cost->add_flag("--sweep", sweep, "Window sweep of the reference models");

  auto* abl = app.add_subcommand("ablate", "Ablation grids under a micro budget");
  add_common(abl, true, false);
  abl->add_option("--grid", grid, "summarizer, table or all");
  abl->add_option("--corpus", corpus_dir, "Saved corpus directory");

  std::vector<std::string> argv_rest(rest.begin() + (rest.empty() ? 0 : 1), rest.end());
  std::reverse(argv_rest.begin(), argv_rest.end());
  try {
    app.parse(argv_rest);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? ok : invalid_config;
  }
  if (c.workers > 1) err << "note: training is sequential; --workers " << c.workers << " has no effect\n";

  try {
    if (*synth) return cmd_synth(c, out);
    if (*train) return cmd_train(c, corpus_dir, resume, stop_after, out);
    if (*separate) return cmd_separate(c, checkpoint, input, mode, enroll, out);
    if (*eval_sep) return cmd_eval_sep(c, checkpoint, manifest, corpus_dir, sep_mode, out);
    if (*eval_sv) return cmd_eval_sv(c, checkpoint, trials, corpus_dir, clean, out);
    if (*cost) return cmd_cost(c, sweep, out);
    if (*abl) return cmd_ablate(c, grid, corpus_dir, out);
  } catch (const MissingFileError& e) {
    err << "error: " << e.what() << "\n";
    return missing_file;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return missing_file;
  } catch (const AudioError& e) {
    err << "error: " << e.what() << "\n";
    return missing_file;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return numerical;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return invalid_config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return failure;
  }
  return failure;
}

}  // namespace tunein::cli
