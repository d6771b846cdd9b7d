#include "tgavc/cli.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tgavc/conversion.hpp"
#include "tgavc/data.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/eval.hpp"
#include "tgavc/synth.hpp"

extern char** environ;

namespace tgavc::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kEnvPrefix = "TGAVC_";

json defaults_document(int num_speakers) {
  return {{"model", json::parse(models::default_config(num_speakers).to_json())},
          {"train", json::parse(training::TrainConfig{}.to_json())},
          {"seed", nullptr}};
}

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;  // bare strings such as regime names
  }
}

// Sets doc[section][key] (or doc["seed"]) after checking the key exists.
void assign(json& doc, const std::string& dotted, json value, const std::string& layer, std::map<std::string, std::string>& origin) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos) {
    if (dotted != "seed") throw ConfigError(layer + ": unknown key '" + dotted + "'");
    doc["seed"] = std::move(value);
  } else {
    const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
    if ((section != "model" && section != "train") || !doc[section].contains(key))
      throw ConfigError(layer + ": unknown key '" + dotted + "'");
    doc[section][key] = std::move(value);
  }
  origin[dotted] = layer;
}

}  // namespace

std::string ResolvedConfig::to_json() const {
  json j = {{"model", json::parse(model.to_json())},
            {"train", json::parse(train.to_json())},
            {"seed", seed ? json(*seed) : json(nullptr)},
            {"origin", origin}};
  return j.dump(2);
}

std::map<std::string, std::string> project_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    env[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return env;
}

ResolvedConfig resolve_config(int num_speakers, const std::optional<fs::path>& file, const std::map<std::string, std::string>& env,
                              const std::vector<std::string>& sets) {
  json doc = defaults_document(num_speakers);
  ResolvedConfig r;
  if (file) {
    std::ifstream f(*file);
    if (!f) throw ConfigError("cannot read config file: " + file->string());
    json j;
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + file->string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [top, value] : j.items()) {
      if (top == "seed") {
        assign(doc, "seed", value, "file", r.origin);
      } else if (top == "model" || top == "train") {
        if (!value.is_object()) throw ConfigError("config file: '" + top + "' must be an object");
        for (const auto& [key, v] : value.items()) assign(doc, top + "." + key, v, "file", r.origin);
      } else {
        throw ConfigError("config file: unknown key '" + top + "'");
      }
    }
  }
  for (const auto& [name, value] : env) {
    if (name.rfind(kEnvPrefix, 0) != 0) continue;
    std::string key = name.substr(std::char_traits<char>::length(kEnvPrefix));
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto sep = key.find("__");
    if (sep != std::string::npos) key.replace(sep, 2, ".");
    assign(doc, key, parse_scalar(value), "env", r.origin);
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    assign(doc, s.substr(0, eq), parse_scalar(s.substr(eq + 1)), "flag", r.origin);
  }

  r.model = models::ModelConfig::from_json(doc["model"].dump());
  r.model.validate();
  r.train = training::TrainConfig::from_json(doc["train"].dump());
  r.train.validate();
  if (!doc["seed"].is_null()) {
    if (!doc["seed"].is_number_unsigned() && !(doc["seed"].is_number_integer() && doc["seed"].get<std::int64_t>() >= 0))
      throw ConfigError("seed must be a non-negative integer");
    r.seed = doc["seed"].get<std::uint64_t>();
  }
  return r;
}

namespace {

struct Common {
  std::optional<fs::path> config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
};

void add_common(CLI::App* app, Common& c, bool training) {
  app->add_option("--config", c.config, "JSON config document (see schema/config.schema.json)");
  app->add_option("--set", c.sets, "Override one field, e.g. train.lr_a=0.001 (repeatable)");
  if (training) {
    app->add_option("--seed", c.seed, "Random seed (required unless given by the config)");
    app->add_option("--steps", c.steps, "Shorthand for --set train.max_steps=N");
  }
}

ResolvedConfig resolve(const Common& c, int num_speakers, bool need_seed) {
  std::vector<std::string> sets = c.sets;
  if (c.steps) sets.push_back("train.max_steps=" + std::to_string(*c.steps));
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  ResolvedConfig r = resolve_config(num_speakers, c.config, project_environment(), sets);
  if (need_seed && !r.seed) throw ValidationError("a seed is required: pass --seed, TGAVC_SEED or \"seed\" in the config");
  std::cerr << "config: defaults < " << (c.config ? c.config->string() : "(no file)") << " < env < flags\n";
  for (const auto& [key, layer] : r.origin) std::cerr << "  " << key << " from " << layer << '\n';
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw FileError("cannot write " + path.string());
  f << text << '\n';
}

void snapshot(const ResolvedConfig& r, const fs::path& dir, const json& extra = json::object()) {
  json j = json::parse(r.to_json());
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_text(dir / "resolved_config.json", j.dump(2));
}

// Model config for a corpus: resolved fields plus mel statistics of the training split.
models::ModelConfig model_for(const ResolvedConfig& r, const data::Corpus& corpus) {
  models::ModelConfig m = r.model;
  if (m.num_speakers != corpus.num_speakers())
    throw ConfigError("model.num_speakers is " + std::to_string(m.num_speakers) + " but the corpus has " +
                      std::to_string(corpus.num_speakers()) + " speakers");
  const auto [mean, sd] = training::mel_statistics(corpus, corpus.indices(data::Split::train));
  m.mel_mean = mean;
  m.mel_std = sd;
  return m;
}

training::RunOptions run_options(const fs::path& out, bool fresh) {
  training::RunOptions o;
  o.metrics_log = out / "metrics.jsonl";
  o.timing_log = out / "timing.jsonl";
  if (fresh) {
    fs::remove(*o.metrics_log);
    fs::remove(*o.timing_log);
  }
  o.on_step = [](const training::TrainState& s, const objectives::LossReport& r) {
    if (s.step % 100 == 0 || s.step == 1 || s.step == s.config.max_steps)
      std::cerr << "step " << s.step << ' ' << training::report_to_json(s.step, r) << '\n';
  };
  return o;
}

json separation_json(const eval::StyleSeparation& s) {
  return {{"within", s.within ? json(*s.within) : json(nullptr)}, {"between", s.between ? json(*s.between) : json(nullptr)}};
}

std::vector<fs::path> audio_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FileError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FileError("no .wav files in " + dir.string());
  return files;
}

eval::SystemReport evaluate_system(const training::TrainState& ckpt, const data::Corpus& corpus, const eval::ProbeConfig& probe,
                                   std::vector<eval::Triptych>& triptychs) {
  eval::SystemReport r;
  r.name = std::string(training::to_string(ckpt.regime));
  const auto pairs = eval::parallel_conversions(ckpt, corpus);
  r.mcd = eval::summarize(pairs, corpus);
  int improved = 0;
  for (const auto& p : pairs) improved += p.mcd_converted < p.mcd_source;
  r.fraction_improved = static_cast<double>(improved) / static_cast<double>(pairs.size());
  if (ckpt.regime == training::Regime::tgavc || ckpt.regime == training::Regime::tgavcs)
    r.probe = eval::disentanglement_probe(ckpt, corpus, probe);
  r.style = eval::style_separation_report(conversion::style_encoder(ckpt), ckpt.model.config, corpus, corpus.indices(data::Split::test));
  r.fingerprint = json{{"model", json::parse(ckpt.model.config.to_json())},
                       {"train", json::parse(ckpt.config.to_json())},
                       {"seed", ckpt.seed},
                       {"step", ckpt.step}}
                      .dump();
  const auto& first = pairs.front();
  const auto styles = eval::speaker_styles(ckpt, corpus, 10);
  triptychs.push_back({r.name, corpus.mels[first.source_record],
                       conversion::convert(ckpt, corpus.mels[first.source_record],
                                           styles[corpus.manifest.records[first.target_record].speaker_id]),
                       corpus.mels[first.target_record]});
  return r;
}

bool is_validation(const Error& e) {
  return dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
         dynamic_cast<const ParameterError*>(&e);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Text-guided voice conversion: corpus tools, training, conversion and evaluation"};
  app.require_subcommand(1);
  app.footer("Exit status: 0 success, 1 usage or validation error, 2 runtime failure.\n"
             "Config precedence: --config file < TGAVC_* environment (TGAVC_SEED, TGAVC_TRAIN__LR_A, ...) < flags.");

  // make-toy-corpus
  auto* toy = app.add_subcommand("make-toy-corpus", "Render the synthetic parallel corpus");
  fs::path toy_out;
  int toy_speakers = 4, toy_utts = 30;
  std::uint64_t toy_seed = 7;
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--speakers", toy_speakers, "Number of speakers")->check(CLI::Range(1, 64));
  toy->add_option("--utterances", toy_utts, "Utterances per speaker")->check(CLI::Range(1, 10000));
  toy->add_option("--seed", toy_seed, "Corpus seed");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Analyse a manifest's audio into mel files");
  fs::path prep_manifest, prep_out;
  prep->add_option("--manifest", prep_manifest, "Input manifest (JSON lines)")->required();
  prep->add_option("--out", prep_out, "Output directory")->required();

  // training subcommands
  Common style_c, tts_c, train_c;
  fs::path style_corpus, style_out, tts_corpus, tts_out, train_corpus, train_out;
  std::optional<fs::path> tts_style, train_style, train_tts, train_resume;
  std::string train_regime = "tgavc";

  auto* pre = app.add_subcommand("pretrain-style", "Pretrain the style encoder with the GE2E loss");
  pre->add_option("--corpus", style_corpus, "Corpus manifest")->required();
  pre->add_option("--out", style_out, "Output directory")->required();
  add_common(pre, style_c, true);

  auto* tts = app.add_subcommand("train-tts", "Train text encoder, style encoder and decoder only");
  tts->add_option("--corpus", tts_corpus, "Corpus manifest")->required();
  tts->add_option("--out", tts_out, "Output directory")->required();
  tts->add_option("--style-ckpt", tts_style, "Pretrained style encoder checkpoint");
  add_common(tts, tts_c, true);

  auto* train = app.add_subcommand("train", "Train a conversion model");
  train->add_option("--regime", train_regime, "tgavc, tgavcs or autovc")->check(CLI::IsMember({"tgavc", "tgavcs", "autovc"}));
  train->add_option("--corpus", train_corpus, "Corpus manifest")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--style-ckpt", train_style, "Pretrained style encoder checkpoint (required for autovc)");
  train->add_option("--tts-ckpt", train_tts, "Pretrained TTS checkpoint (required for tgavcs)");
  train->add_option("--resume", train_resume, "Continue from a checkpoint of the same regime");
  add_common(train, train_c, true);

  // convert
  auto* conv = app.add_subcommand("convert", "Convert one utterance to the voice of reference recordings");
  conversion::ConversionRequest creq;
  fs::path conv_target_dir;
  conv->add_option("--source", creq.source_audio, "Source WAV")->required();
  conv->add_option("--target-dir", conv_target_dir, "Directory of target-speaker WAV files")->required();
  conv->add_option("--ckpt", creq.checkpoint, "Checkpoint")->required();
  conv->add_option("--out", creq.output, "Output WAV (a .mel sidecar is written beside it)")->required();
  conv->add_option("--griffin-lim-iters", creq.griffin_lim_iters, "Phase reconstruction iterations")->check(CLI::Range(1, 1000));

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Parallel-pair MCD, probes and style separation");
  fs::path ev_ckpt, ev_corpus, ev_out;
  std::optional<fs::path> ev_baseline;
  eval::ProbeConfig probe;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint under test")->required();
  ev->add_option("--baseline-ckpt", ev_baseline, "Second checkpoint to compare against");
  ev->add_option("--corpus", ev_corpus, "Corpus manifest")->required();
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--probe-steps", probe.steps, "Probe training steps")->check(CLI::Range(0, 1000000));
  ev->add_option("--probe-seed", probe.seed, "Probe seed");

  // plots
  auto* pl = app.add_subcommand("plots", "Loss curves from a metrics log");
  fs::path pl_metrics, pl_out;
  pl->add_option("--metrics", pl_metrics, "metrics.jsonl written by training")->required();
  pl->add_option("--out", pl_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*toy) {
      auto corpus = synth::make_synthetic_corpus(toy_speakers, toy_utts, toy_seed);
      synth::write_synthetic_corpus(corpus, toy_out);
      write_text(toy_out / "resolved_config.json",
                 json{{"speakers", toy_speakers}, {"utterances", toy_utts}, {"seed", toy_seed}}.dump(2));
      std::cout << (toy_out / "manifest.jsonl").string() << '\n';
    } else if (*prep) {
      const data::Corpus corpus = data::load_corpus(prep_manifest);
      data::prepare_corpus(corpus, prep_out);
      write_text(prep_out / "resolved_config.json", json{{"manifest", fs::absolute(prep_manifest).string()}}.dump(2));
      std::cout << (prep_out / "manifest.jsonl").string() << '\n';
    } else if (*pre) {
      const data::Corpus corpus = data::load_corpus(style_corpus);
      const ResolvedConfig r = resolve(style_c, corpus.num_speakers(), true);
      fs::create_directories(style_out);
      snapshot(r, style_out, {{"corpus", fs::absolute(style_corpus).string()}, {"model", json::parse(model_for(r, corpus).to_json())}});
      const auto s = training::pretrain_style_encoder(corpus, model_for(r, corpus), r.train, *r.seed, run_options(style_out, true));
      training::save_checkpoint(s, style_out / "style.ckpt");
      const auto sep = eval::style_separation_report(s.model.style, s.model.config, corpus, corpus.indices_not(data::Split::train));
      write_text(style_out / "style_report.json", separation_json(sep).dump(2));
      std::cout << (style_out / "style.ckpt").string() << '\n';
    } else if (*tts) {
      const data::Corpus corpus = data::load_corpus(tts_corpus);
      const ResolvedConfig r = resolve(tts_c, corpus.num_speakers(), true);
      fs::create_directories(tts_out);
      snapshot(r, tts_out, {{"corpus", fs::absolute(tts_corpus).string()}, {"model", json::parse(model_for(r, corpus).to_json())}});
      std::optional<training::TrainState> style;
      if (tts_style) style = training::load_checkpoint(*tts_style);
      const auto s = training::train_tts(corpus, model_for(r, corpus), r.train, *r.seed, style, run_options(tts_out, true));
      training::save_checkpoint(s, tts_out / "tts.ckpt");
      std::cout << (tts_out / "tts.ckpt").string() << '\n';
    } else if (*train) {
      const auto regime = training::regime_from_string(train_regime);
      if (regime == training::Regime::tgavcs && !train_tts && !train_resume)
        throw ValidationError("--regime tgavcs requires --tts-ckpt");
      if (regime == training::Regime::autovc && !train_style && !train_resume)
        throw ValidationError("--regime autovc requires --style-ckpt");
      const data::Corpus corpus = data::load_corpus(train_corpus);
      ResolvedConfig r = resolve(train_c, corpus.num_speakers(), true);
      r.train.regime = regime;
      fs::create_directories(train_out);
      snapshot(r, train_out, {{"corpus", fs::absolute(train_corpus).string()}, {"model", json::parse(model_for(r, corpus).to_json())}});
      const auto options = run_options(train_out, !train_resume);
      training::TrainState s;
      if (train_resume) {
        s = training::load_checkpoint(*train_resume);
        if (s.regime != regime) throw CheckpointError("resume checkpoint has regime " + std::string(training::to_string(s.regime)));
        s.config.max_steps = r.train.max_steps;
        training::run(s, corpus, options);
      } else if (regime == training::Regime::tgavcs) {
        const auto base = training::load_checkpoint(*train_tts);
        if (base.model.config.num_speakers != corpus.num_speakers())
          throw CheckpointError("TTS checkpoint was trained for " + std::to_string(base.model.config.num_speakers) + " speakers");
        s = training::train_tgavcs(corpus, base, r.train, *r.seed, options);
      } else if (regime == training::Regime::autovc) {
        s = training::train_autovc(corpus, model_for(r, corpus), r.train, *r.seed, training::load_checkpoint(*train_style), options);
      } else {
        std::optional<training::TrainState> style;
        if (train_style) style = training::load_checkpoint(*train_style);
        s = training::train_tgavc(corpus, model_for(r, corpus), r.train, *r.seed, style, options);
      }
      const fs::path ckpt = train_out / (std::string(training::to_string(regime)) + ".ckpt");
      training::save_checkpoint(s, ckpt);
      std::cout << ckpt.string() << '\n';
    } else if (*conv) {
      creq.target_style_audios = audio_files(conv_target_dir);
      const auto result = conversion::convert_file(creq);
      const fs::path dir = creq.output.has_parent_path() ? creq.output.parent_path() : fs::path(".");
      write_text(dir / "resolved_config.json", json{{"source", fs::absolute(creq.source_audio).string()},
                                                    {"target_dir", fs::absolute(conv_target_dir).string()},
                                                    {"checkpoint", fs::absolute(creq.checkpoint).string()},
                                                    {"griffin_lim_iters", creq.griffin_lim_iters}}
                                                   .dump(2));
      std::cout << result.wav_path.string() << '\n';
    } else if (*ev) {
      const data::Corpus corpus = data::load_corpus(ev_corpus);
      fs::create_directories(ev_out);
      std::vector<eval::SystemReport> reports;
      std::vector<eval::Triptych> triptychs;
      for (const auto& path : {std::optional<fs::path>(ev_ckpt), ev_baseline}) {
        if (!path) continue;
        const auto ckpt = training::load_checkpoint(*path);
        if (ckpt.model.config.num_speakers != corpus.num_speakers())
          throw CheckpointError(path->string() + " was trained for a different number of speakers");
        std::cerr << "evaluating " << path->string() << '\n';
        reports.push_back(evaluate_system(ckpt, corpus, probe, triptychs));
      }
      write_text(ev_out / "report.json", eval::to_json(reports));
      write_text(ev_out / "resolved_config.json",
                 json{{"ckpt", fs::absolute(ev_ckpt).string()},
                      {"baseline_ckpt", ev_baseline ? json(fs::absolute(*ev_baseline).string()) : json(nullptr)},
                      {"corpus", fs::absolute(ev_corpus).string()},
                      {"probe", {{"steps", probe.steps}, {"batch_size", probe.batch_size}, {"lr", probe.lr}, {"seed", probe.seed}}}}
                     .dump(2));
      eval::emit_plots(std::nullopt, reports, triptychs, ev_out / "plots");
      std::cout << (ev_out / "report.json").string() << '\n';
    } else if (*pl) {
      const auto result = eval::emit_plots(pl_metrics, {}, {}, pl_out);
      if (result.skipped_lines) std::cerr << "warning: skipped " << result.skipped_lines << " malformed log lines\n";
      if (result.empty_log) {
        std::cerr << "warning: no usable records in " << pl_metrics.string() << "; no images written\n";
        return kExitValidation;
      }
      write_text(pl_out / "resolved_config.json", json{{"metrics", fs::absolute(pl_metrics).string()}}.dump(2));
      for (const auto& f : result.files) std::cout << f.string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_validation(e) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace tgavc::cli
