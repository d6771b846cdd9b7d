// End-to-end acceptance run on the synthetic corpus. Prints one PASS/FAIL line
// per criterion followed by the measured values; exits non-zero on any FAIL.
//
//   acceptance [--only 1,2,9] [--out DIR]

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "unit_binaries.hpp"
#include "tgavc/conversion.hpp"
#include "tgavc/eval.hpp"
#include "tgavc/synth.hpp"
#include "tgavc/training.hpp"

using namespace tgavc;
using training::Regime;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kSpeakers = 4;
constexpr int kUtterances = 30;
constexpr std::uint64_t kCorpusSeed = 7;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path out;
  data::Corpus corpus;
  synth::SyntheticCorpus synthetic;
  models::ModelConfig model;
  json log = json::object();

  std::optional<training::TrainState> style;
  std::map<std::uint64_t, training::TrainState> tgavc;
  std::map<std::uint64_t, double> tgavc_seconds;
  std::map<std::uint64_t, std::vector<objectives::LossReport>> tgavc_history;
};

training::TrainConfig base_train(Regime r, int steps) {
  training::TrainConfig t;
  t.regime = r;
  t.max_steps = steps;
  return t;
}

const training::TrainState& style_checkpoint(Context& c, double* seconds = nullptr) {
  if (!c.style) {
    const auto t0 = Clock::now();
    c.style = training::pretrain_style_encoder(c.corpus, c.model, base_train(Regime::ge2e, 500), kSeeds[0],
                                               {c.out / "style_metrics.jsonl", std::nullopt, {}});
    if (seconds) *seconds = since(t0);
    training::save_checkpoint(*c.style, c.out / "style.ckpt");
  }
  return *c.style;
}

const training::TrainState& tgavc_checkpoint(Context& c, std::uint64_t seed) {
  auto it = c.tgavc.find(seed);
  if (it != c.tgavc.end()) return it->second;
  const auto& style = style_checkpoint(c);
  const auto t0 = Clock::now();
  std::vector<objectives::LossReport> history;
  training::RunOptions opts{c.out / ("tgavc_seed" + std::to_string(seed) + ".jsonl"), std::nullopt,
                            [&](const training::TrainState&, const objectives::LossReport& r) { history.push_back(r); }};
  auto s = training::train_tgavc(c.corpus, c.model, base_train(Regime::tgavc, 2000), seed, style, opts);
  c.tgavc_seconds[seed] = since(t0);
  c.tgavc_history[seed] = std::move(history);
  training::save_checkpoint(s, c.out / ("tgavc_seed" + std::to_string(seed) + ".ckpt"));
  return c.tgavc.emplace(seed, std::move(s)).first->second;
}

double tail_mean(const std::vector<objectives::LossReport>& h, double objectives::LossReport::*field, std::size_t n) {
  const std::size_t k = std::min(n, h.size());
  double sum = 0;
  for (std::size_t i = h.size() - k; i < h.size(); ++i) sum += h[i].*field;
  return sum / static_cast<double>(k);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// --- 1, 2: unit binaries ---------------------------------------------------------------------

std::vector<std::string> unit_binaries() {
  std::vector<std::string> out;
  std::stringstream ss(TGAVC_UNIT_BINARIES);
  std::string item;
  while (std::getline(ss, item, '|'))
    if (!item.empty()) out.push_back(item);
  return out;
}

Outcome run_units(Context& c, const std::set<std::string>& names, const std::string& key) {
  Outcome o{true, ""};
  double total = 0;
  for (const auto& path : unit_binaries()) {
    const std::string stem = fs::path(path).stem().string();
    if (!names.count(stem)) continue;
    const auto t0 = Clock::now();
    const int rc = std::system(("\"" + path + "\" > \"" + (c.out / (stem + ".log")).string() + "\" 2>&1").c_str());
    const double seconds = since(t0);
    total += seconds;
    o.pass = o.pass && rc == 0;
    o.detail += stem + (rc == 0 ? " ok " : " FAILED ") + fmt(seconds, 3) + "s; ";
    c.log[key][stem] = {{"exit", rc}, {"seconds", seconds}};
  }
  o.pass = o.pass && total < 120.0;
  o.detail += "total " + fmt(total, 3) + "s (limit 120s)";
  return o;
}

// --- 3: isolation -----------------------------------------------------------------------------

bool same(const ParamStore<float>& a, const ParamStore<float>& b) { return a == b; }

Outcome isolation(Context& c) {
  auto s = training::init_state(c.model, base_train(Regime::tgavc, 1), 11);
  data::BatchIterator it(c.corpus, c.corpus.indices(data::Split::train), {s.config.batch_size, 11, std::nullopt, false});
  const data::Batch batch = it.next();

  auto before = s.model;
  training::phase_a_step(s, batch);
  const bool a_frozen = same(s.model.content.params, before.content.params) && same(s.model.classifier.params, before.classifier.params);
  const bool a_moved = !same(s.model.decoder.params, before.decoder.params);

  before = s.model;
  training::phase_b_step(s, batch);
  const bool b_frozen = same(s.model.text.params, before.text.params) && same(s.model.style.params, before.style.params) &&
                        same(s.model.decoder.params, before.decoder.params);
  const bool b_moved = !same(s.model.content.params, before.content.params);

  const auto tts = training::train_tts(c.corpus, c.model, base_train(Regime::tts, 20), 12);
  const auto frozen = training::train_tgavcs(c.corpus, tts, base_train(Regime::tgavcs, 20), 13);
  const bool trio = same(frozen.model.text.params, tts.model.text.params) && same(frozen.model.style.params, tts.model.style.params) &&
                    same(frozen.model.decoder.params, tts.model.decoder.params);
  const bool tgavcs_moved = !same(frozen.model.content.params, tts.model.content.params);

  c.log["isolation"] = {{"phase_a_frozen", a_frozen}, {"phase_b_frozen", b_frozen}, {"tgavcs_trio_frozen", trio}};
  return {a_frozen && a_moved && b_frozen && b_moved && trio && tgavcs_moved,
          std::string("phase A {E_c,C} identical=") + (a_frozen ? "yes" : "no") + ", phase B {E_t,E_s,D} identical=" +
              (b_frozen ? "yes" : "no") + ", TGAVCs trio identical after 20 steps=" + (trio ? "yes" : "no") +
              ", trained parts moved=" + (a_moved && b_moved && tgavcs_moved ? "yes" : "no")};
}

// --- 4: style pretraining -----------------------------------------------------------------------

Outcome ge2e(Context& c) {
  double seconds = 0;
  const auto& s = style_checkpoint(c, &seconds);
  const auto sep = eval::style_separation_report(s.model.style, s.model.config, c.corpus, c.corpus.indices_not(data::Split::train));
  if (!sep.within || !sep.between) return {false, "held-out crops lack within or between pairs"};
  const double gap = *sep.within - *sep.between;
  c.log["ge2e"] = {{"within", *sep.within}, {"between", *sep.between}, {"gap", gap}, {"seconds", seconds}};
  return {gap >= 0.3 && seconds < 600, "within " + fmt(*sep.within) + " - between " + fmt(*sep.between) + " = " + fmt(gap) +
                                           " (need >= 0.3), " + fmt(seconds, 3) + "s (limit 600s)"};
}

// --- 5: overfit -----------------------------------------------------------------------------------

Outcome overfit(Context& c) {
  tgavc_checkpoint(c, kSeeds[0]);
  const auto& h = c.tgavc_history[kSeeds[0]];
  const double seconds = c.tgavc_seconds[kSeeds[0]];
  const double recon0 = h.front().recon, content0 = h.front().content;
  const double recon = tail_mean(h, &objectives::LossReport::recon, 50);
  const double content = tail_mean(h, &objectives::LossReport::content, 50);
  c.log["overfit"] = {{"recon_initial", recon0},   {"recon_final", recon}, {"content_initial", content0},
                      {"content_final", content}, {"seconds", seconds},   {"d_model", c.model.d_model}};
  const bool ok = recon < 0.1 * recon0 && content <= 0.5 * content0 && seconds < 1200;
  return {ok, "L1 " + fmt(recon0) + " -> " + fmt(recon) + " (" + fmt(100 * recon / recon0, 3) + "%, need < 10%), content " + fmt(content0) +
                  " -> " + fmt(content) + " (" + fmt(100 * (1 - content / content0), 3) + "% reduction, need >= 50%), " + fmt(seconds, 4) +
                  "s (limit 1200s); final values are means of the last 50 steps"};
}

// --- 6: probes --------------------------------------------------------------------------------------

Outcome probe(Context& c) {
  const auto& s = tgavc_checkpoint(c, kSeeds[0]);
  const auto r = eval::disentanglement_probe(s, c.corpus, {300, 16, 1e-3, 5});
  c.log["probe"] = {{"content", r.content_probe}, {"raw_mel", r.raw_mel_probe}, {"random_encoder", r.random_encoder_probe}, {"chance", r.chance}};
  const bool ok = r.raw_mel_probe >= 0.9 && r.content_probe <= r.raw_mel_probe - 0.2;
  return {ok, "content-embedding probe " + fmt(r.content_probe) + ", raw-mel probe " + fmt(r.raw_mel_probe) + " (need >= 0.9 and gap >= 0.2), random encoder " +
                  fmt(r.random_encoder_probe) + ", chance " + fmt(r.chance)};
}

// --- 7: conversion sanity ---------------------------------------------------------------------------

Outcome conversion_sanity(Context& c) {
  const auto& s = tgavc_checkpoint(c, kSeeds[0]);
  const auto pairs = eval::parallel_conversions(s, c.corpus);
  int improved = 0;
  for (const auto& p : pairs) improved += p.mcd_converted < p.mcd_source;
  const double fraction = pairs.empty() ? 0.0 : static_cast<double>(improved) / static_cast<double>(pairs.size());

  // self-conversion: the source speaker's own style against every other speaker's
  const auto styles = eval::speaker_styles(s, c.corpus, 10);
  double self_sum = 0, cross_sum = 0;
  int self_n = 0, cross_n = 0;
  for (int r : c.corpus.indices(data::Split::test)) {
    const auto& src = c.corpus.mels[r];
    const auto src_cep = dsp::mel_cepstrum(src);
    const int spk = c.corpus.manifest.records[r].speaker_id;
    for (int k = 0; k < c.corpus.num_speakers(); ++k) {
      const double d = dsp::mcd(dsp::mel_cepstrum(conversion::convert(s, src, styles[k])), src_cep);
      if (k == spk) {
        self_sum += d;
        ++self_n;
      } else {
        cross_sum += d;
        ++cross_n;
      }
    }
  }
  const double self = self_sum / std::max(1, self_n), cross = cross_sum / std::max(1, cross_n);
  c.log["conversion"] = {{"pairs", pairs.size()}, {"improved", improved}, {"fraction", fraction}, {"self_mcd", self}, {"cross_mcd", cross}};
  return {fraction >= 0.7 && self < cross && !pairs.empty(),
          std::to_string(improved) + "/" + std::to_string(pairs.size()) + " pairs improved (" + fmt(100 * fraction, 3) +
              "%, need >= 70%), self-conversion MCD " + fmt(self) + " dB vs cross-speaker " + fmt(cross) + " dB"};
}

// --- 8: ordering against the baseline ---------------------------------------------------------------

Outcome ordering(Context& c) {
  const auto& style = style_checkpoint(c);
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const auto& tg = tgavc_checkpoint(c, seed);
    const auto base = training::train_autovc(c.corpus, c.model, base_train(Regime::autovc, 2000), seed, style,
                                             {c.out / ("autovc_seed" + std::to_string(seed) + ".jsonl"), std::nullopt, {}});
    training::save_checkpoint(base, c.out / ("autovc_seed" + std::to_string(seed) + ".ckpt"));
    const auto mt = eval::summarize(eval::parallel_conversions(tg, c.corpus), c.corpus);
    const auto mb = eval::summarize(eval::parallel_conversions(base, c.corpus), c.corpus);
    wins += mt.mean < mb.mean;
    c.log["ordering"][std::to_string(seed)] = {{"tgavc_mean", mt.mean}, {"tgavc_std", mt.std}, {"autovc_mean", mb.mean}, {"autovc_std", mb.std}};
    detail += "seed " + std::to_string(seed) + ": TGAVC " + fmt(mt.mean) + "+-" + fmt(mt.std, 3) + " vs AutoVC " + fmt(mb.mean) + "+-" +
              fmt(mb.std, 3) + "; ";
  }
  return {2 * wins > static_cast<int>(kSeeds.size()), detail + "TGAVC lower in " + std::to_string(wins) + "/" + std::to_string(kSeeds.size())};
}

// --- 9: determinism and resume -------------------------------------------------------------------------

Outcome determinism(Context& c) {
  double worst_repeat = 0, worst_resume = 0;
  for (Regime r : {Regime::tgavc, Regime::autovc}) {
    auto make = [&] {
      auto s = training::init_state(c.model, base_train(r, 10), 21);
      if (r == Regime::autovc) training::adopt_style(s, style_checkpoint(c));
      return s;
    };
    auto a = make(), b = make();
    const auto ha = training::run(a, c.corpus), hb = training::run(b, c.corpus);
    for (std::size_t i = 0; i < ha.size(); ++i)
      worst_repeat = std::max({worst_repeat, std::abs(ha[i].recon - hb[i].recon), std::abs(ha[i].content - hb[i].content),
                               std::abs(ha[i].adv - hb[i].adv)});

    auto part = make();
    training::run(part, c.corpus, {}, 5);
    const fs::path ck = c.out / ("resume_" + std::string(training::to_string(r)) + ".ckpt");
    training::save_checkpoint(part, ck);
    auto resumed = training::load_checkpoint(ck, c.model);
    const auto tail = training::run(resumed, c.corpus);
    for (std::size_t i = 0; i < tail.size(); ++i)
      worst_resume = std::max({worst_resume, std::abs(tail[i].recon - ha[5 + i].recon), std::abs(tail[i].content - ha[5 + i].content)});
  }
  c.log["determinism"] = {{"max_repeat_diff", worst_repeat}, {"max_resume_diff", worst_resume}};
  return {worst_repeat <= 1e-6 && worst_resume <= 1e-5,
          "max |diff| over 10-step repeats " + fmt(worst_repeat) + " (<= 1e-6), after resume at step 5 " + fmt(worst_resume) + " (<= 1e-5)"};
}

// --- 10: zero-shot ---------------------------------------------------------------------------------------

Outcome zero_shot(Context& c) {
  const auto& s = tgavc_checkpoint(c, kSeeds[0]);
  const int unseen = kSpeakers;  // first template index beyond the corpus
  std::vector<dsp::MelSpectrogram> refs;
  for (int j = 0; j < 5; ++j) {
    const auto u = synth::render_sentence(kCorpusSeed, unseen, j, c.synthetic.sentences[j]);
    refs.push_back(dsp::mel_spectrogram({u.samples, dsp::kSampleRate}));
  }
  const auto style = conversion::compute_style_embedding(s, refs);
  const auto seen = eval::speaker_styles(s, c.corpus, 10);
  const int src = c.corpus.indices(data::Split::test).front();
  const auto out = conversion::convert(s, c.corpus.mels[src], style);
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& st : seen) {
    const auto other = conversion::convert(s, c.corpus.mels[src], st);
    margin = std::min(margin, static_cast<double>((out.values - other.values).cwiseAbs().mean()));
  }
  const bool finite = out.values.allFinite() && out.frames() == c.corpus.mels[src].frames();
  c.log["zero_shot"] = {{"min_mean_abs_diff", margin}, {"frames", out.frames()}};
  return {finite && margin > 0, "unseen-speaker output completed (" + std::to_string(out.frames()) +
                                    " frames); min mean |mel diff| vs seen-speaker styles = " + fmt(margin) + " log-mel units"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path out = fs::temp_directory_path() / "tgavc_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string n;
      while (std::getline(ss, n, ',')) only.insert(std::stoi(n));
    } else if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--out DIR]\n";
      return 2;
    }
  }
  fs::create_directories(out);

  Context c;
  c.out = out;
  c.synthetic = synth::make_synthetic_corpus(kSpeakers, kUtterances, kCorpusSeed);
  c.corpus = synth::analyse(c.synthetic);
  c.model = models::default_config(kSpeakers);
  std::tie(c.model.mel_mean, c.model.mel_std) = training::mel_statistics(c.corpus, c.corpus.indices(data::Split::train));

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria = {
      {"unit/property suite", [](Context& x) { return run_units(x, {"test_dsp", "test_data", "test_models", "test_objectives"}, "unit"); }},
      {"gradient suite", [](Context& x) { return run_units(x, {"test_gradients"}, "gradients"); }},
      {"optimizer isolation and freeze", isolation},
      {"GE2E style separation", ge2e},
      {"TGAVC overfit", overfit},
      {"disentanglement probe", probe},
      {"conversion sanity", conversion_sanity},
      {"TGAVC below AutoVC MCD", ordering},
      {"determinism and resume", determinism},
      {"zero-shot style", zero_shot},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(c);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << criteria[i].first << "): " << o.detail << " ["
              << fmt(since(t0), 4) << "s]" << std::endl;
    c.log["criteria"][std::to_string(n)] = {{"pass", o.pass}, {"detail", o.detail}};
    std::ofstream(out / "acceptance.json") << c.log.dump(2) << '\n';
  }
  return failures == 0 ? 0 : 1;
}
