#include "tgavc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tgavc/dsp.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/random.hpp"

namespace tgavc::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPeak = 0.6;

struct Formants {
  double f1, f2, f3;
};

Formants lerp(const Formants& a, const Formants& b, double u) {
  return {a.f1 + (b.f1 - a.f1) * u, a.f2 + (b.f2 - a.f2) * u, a.f3 + (b.f3 - a.f3) * u};
}

Formants vowel_formants(char v, bool front_e) {
  switch (v) {
    case 'a': return {850, 1220, 2810};
    case 'o': return {570, 840, 2410};
    case 'e': return front_e ? Formants{550, 1900, 2600} : Formants{520, 1190, 2390};
    case 'i': return {290, 2250, 2890};
    case 'u': return {330, 870, 2240};
    case 'v': return {300, 1900, 2400};
    default: return {500, 1500, 2500};
  }
}

enum class Kind { sonorant, fricative, stop, aspirated, affricate, glide };

struct InitialSpec {
  Kind kind;
  double band_hz;  // noise centre for obstruents
  Formants formants;
  double gain;
};

InitialSpec initial_spec(const std::string& s) {
  if (s == "b") return {Kind::stop, 900, {}, 0.5};
  if (s == "d") return {Kind::stop, 3800, {}, 0.5};
  if (s == "g") return {Kind::stop, 1900, {}, 0.5};
  if (s == "p") return {Kind::aspirated, 1000, {}, 0.45};
  if (s == "t") return {Kind::aspirated, 4200, {}, 0.45};
  if (s == "k") return {Kind::aspirated, 2000, {}, 0.45};
  if (s == "f") return {Kind::fricative, 6200, {}, 0.25};
  if (s == "s") return {Kind::fricative, 5600, {}, 0.45};
  if (s == "sh") return {Kind::fricative, 3100, {}, 0.45};
  if (s == "x") return {Kind::fricative, 4300, {}, 0.4};
  if (s == "h") return {Kind::fricative, 1300, {}, 0.3};
  if (s == "r") return {Kind::sonorant, 0, {420, 1300, 1700}, 0.6};
  if (s == "z") return {Kind::affricate, 5200, {}, 0.45};
  if (s == "c") return {Kind::affricate, 5000, {}, 0.5};
  if (s == "zh") return {Kind::affricate, 2900, {}, 0.45};
  if (s == "ch") return {Kind::affricate, 2800, {}, 0.5};
  if (s == "j") return {Kind::affricate, 3800, {}, 0.45};
  if (s == "q") return {Kind::affricate, 3900, {}, 0.5};
  if (s == "m") return {Kind::sonorant, 0, {250, 1000, 2200}, 0.45};
  if (s == "n") return {Kind::sonorant, 0, {250, 1600, 2600}, 0.45};
  if (s == "l") return {Kind::sonorant, 0, {360, 1300, 2900}, 0.6};
  if (s == "y") return {Kind::glide, 0, {290, 2250, 2890}, 0.6};
  if (s == "w") return {Kind::glide, 0, {330, 700, 2240}, 0.6};
  return {Kind::fricative, 3000, {}, 0.3};
}

/// Relative pitch contour of each tone, u in [0, 1].
double tone_contour(int tone, double u) {
  switch (tone) {
    case 1: return 1.15;
    case 2: return 0.95 + 0.3 * u;
    case 3: return u < 0.5 ? 0.9 - 0.3 * u : 0.75 + 0.4 * (u - 0.5);
    case 4: return 1.3 - 0.5 * u;
    default: return 1.0;
  }
}

class Biquad {
 public:
  Biquad(double center_hz, double q) {
    const double w0 = kTwoPi * std::min(center_hz, 0.45 * dsp::kSampleRate) / dsp::kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    b0_ = alpha / a0;
    b2_ = -alpha / a0;
    a1_ = -2.0 * std::cos(w0) / a0;
    a2_ = (1.0 - alpha) / a0;
  }
  double operator()(double x) {
    const double y = b0_ * x + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double b0_, b2_, a1_, a2_;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

struct Renderer {
  const SpeakerTemplate& spk;
  Eigen::VectorXd& out;
  Rng rng;
  double phase = 0.0;

  double ramp(long i, long begin, long end) const {
    constexpr long fade = 110;  // ~5 ms
    const long a = i - begin, b = end - 1 - i;
    const long d = std::min(a, b);
    if (d >= fade) return 1.0;
    return 0.5 - 0.5 * std::cos(std::numbers::pi * (d + 0.5) / fade);
  }

  double envelope(double f, const Formants& fm) const {
    const double s = spk.formant_scale;
    const double c[3] = {fm.f1 * s, fm.f2 * s, fm.f3 * s};
    const double g[3] = {1.0, 0.6, 0.35};
    const double bw[3] = {80.0 * s, 110.0 * s, 160.0 * s};
    double a = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double x = (f - c[i]) / bw[i];
      a += g[i] / (1.0 + x * x);
    }
    const double xt = (f - spk.timbre_hz) / 250.0;
    a += 0.3 / (1.0 + xt * xt);
    return a;
  }

  template <typename PitchFn, typename FormantFn>
  void voiced(long begin, long end, double gain, PitchFn pitch, FormantFn formants) {
    constexpr long block = 32;
    std::vector<double> amps;
    Biquad breath_filter(2500.0 * spk.formant_scale, 0.7);
    for (long b0 = begin; b0 < end; b0 += block) {
      const double u = static_cast<double>(b0 - begin) / std::max<long>(1, end - begin);
      const double f0 = spk.f0 * pitch(u);
      const Formants fm = formants(u);
      const int harmonics = std::max(1, static_cast<int>(7600.0 / f0));
      amps.assign(harmonics, 0.0);
      for (int h = 1; h <= harmonics; ++h) amps[h - 1] = envelope(h * f0, fm) * std::pow(h, -0.7 * spk.tilt);
      for (long i = b0; i < std::min(end, b0 + block); ++i) {
        phase += kTwoPi * f0 / dsp::kSampleRate;
        if (phase > kTwoPi) phase -= kTwoPi;
        double v = 0.0;
        for (int h = 1; h <= harmonics; ++h) v += amps[h - 1] * std::sin(h * phase);
        v += spk.breath * breath_filter(rng.normal());
        out[i] += gain * ramp(i, begin, end) * v;
      }
    }
  }

  void noise(long begin, long end, double center_hz, double q, double gain, double attack) {
    Biquad filter(center_hz * spk.formant_scale, q);
    for (long i = begin; i < end; ++i) {
      const double u = static_cast<double>(i - begin) / std::max<long>(1, end - begin);
      const double shape = attack > 0 ? std::min(1.0, u / attack) : 1.0;
      out[i] += gain * shape * ramp(i, begin, end) * filter(rng.normal());
    }
  }
};

std::vector<Formants> final_targets(const std::string& final, std::string& coda) {
  std::string core = final;
  coda.clear();
  if (core.size() > 2 && core.ends_with("ng")) {
    coda = "ng";
    core.resize(core.size() - 2);
  } else if (core.size() > 1 && core.ends_with("n")) {
    coda = "n";
    core.resize(core.size() - 1);
  }
  std::vector<Formants> targets;
  if (core == "er") return {{500, 1400, 1650}};
  for (std::size_t i = 0; i < core.size(); ++i) {
    const bool front_e = core[i] == 'e' && i > 0 && (core[i - 1] == 'i' || core[i - 1] == 'v' || core[i - 1] == 'u');
    targets.push_back(vowel_formants(core[i], front_e));
  }
  return targets;
}

}  // namespace

SpeakerTemplate speaker_template(std::uint64_t seed, int index) {
  auto frac = [](double x) { return x - std::floor(x); };
  Rng rng(derive_seed(seed, {0x5be4, static_cast<std::uint64_t>(index)}));
  auto jitter = [&rng](double scale) { return 1.0 + scale * (rng.uniform() - 0.5); };
  SpeakerTemplate t;
  t.f0 = 95.0 * std::pow(2.0, 1.3 * frac(0.6180339887 * index)) * jitter(0.04);
  t.formant_scale = (0.85 + 0.3 * frac(0.7548776662 * index + 0.35)) * jitter(0.02);
  t.tilt = (0.8 + 0.6 * frac(0.5698402910 * index + 0.2)) * jitter(0.04);
  t.timbre_hz = (2800.0 + 1600.0 * frac(0.4142135624 * index + 0.5)) * jitter(0.02);
  t.breath = 0.01 + 0.04 * frac(0.3247179572 * index + 0.1);
  return t;
}

RenderedUtterance render(const SpeakerTemplate& speaker, const data::PhonemeSequence& phonemes,
                         const data::DurationAlignment& durations, std::uint64_t noise_seed) {
  if (phonemes.size() != durations.size() || phonemes.size() == 0) throw ContractError("render: phoneme/duration mismatch");
  const int total = durations.total();
  const long hop = dsp::kHopSize;
  const long length = (total - 1) * hop + hop / 2;
  Eigen::VectorXd samples = Eigen::VectorXd::Zero(length);
  Renderer r{speaker, samples, Rng(noise_seed)};
  const auto& lex = data::PinyinLexicon::standard();

  int start = 0;
  for (std::size_t p = 0; p < phonemes.size(); ++p) {
    const int d = durations.frames_per_phoneme[p];
    const long begin = std::max<long>(0, start * hop - hop / 2);
    const long end = std::min<long>(length, (start + d) * hop - hop / 2);
    start += d;
    if (end <= begin) continue;
    const std::string& sym = phonemes.symbols[p];
    const int id = phonemes.tokens[p];
    // tone of the syllable this phoneme belongs to
    int tone = 5;
    for (std::size_t q = p; q < phonemes.size(); ++q) {
      if (!lex.is_initial(phonemes.tokens[q])) {
        tone = phonemes.symbols[q].back() - '0';
        break;
      }
    }
    if (lex.is_initial(id)) {
      const InitialSpec spec = initial_spec(sym);
      const long n = end - begin;
      switch (spec.kind) {
        case Kind::sonorant:
        case Kind::glide:
          r.voiced(begin, end, spec.gain, [tone](double) { return tone_contour(tone, 0.0); },
                   [f = spec.formants](double) { return f; });
          break;
        case Kind::fricative:
          r.noise(begin, end, spec.band_hz, 2.0, spec.gain, 0.2);
          break;
        case Kind::stop:
          r.noise(begin + n / 2, end, spec.band_hz, 1.2, spec.gain, 0.0);
          break;
        case Kind::aspirated:
          r.noise(begin + n / 4, begin + n / 2, spec.band_hz, 1.2, spec.gain, 0.0);
          r.noise(begin + n / 2, end, 1500.0, 0.8, 0.6 * spec.gain, 0.0);
          break;
        case Kind::affricate:
          r.noise(begin + n / 3, begin + n / 2, spec.band_hz, 1.5, 1.2 * spec.gain, 0.0);
          r.noise(begin + n / 2, end, spec.band_hz, 2.5, spec.gain, 0.0);
          break;
      }
      continue;
    }
    std::string coda;
    const std::string final = sym.substr(0, sym.size() - 1);
    const std::vector<Formants> targets = final_targets(final, coda);
    const double vowel_part = coda.empty() ? 1.0 : 0.7;
    const Formants nasal = coda == "ng" ? Formants{260, 1100, 2500} : Formants{260, 1700, 2600};
    r.voiced(begin, end, 1.0, [tone](double u) { return tone_contour(tone, u); },
             [&targets, vowel_part, nasal, &coda](double u) {
               if (!coda.empty() && u >= vowel_part) return lerp(targets.back(), nasal, std::min(1.0, (u - vowel_part) / 0.1));
               const double v = std::min(1.0, u / vowel_part) * (targets.size() - 1);
               const auto k = static_cast<std::size_t>(std::floor(v));
               if (k + 1 >= targets.size()) return targets.back();
               return lerp(targets[k], targets[k + 1], v - k);
             });
  }
  const double peak = samples.cwiseAbs().maxCoeff();
  if (peak > 0) samples *= kPeak / peak;
  for (Eigen::Index i = 0; i < samples.size(); ++i) samples[i] = std::round(samples[i] * 32768.0) / 32768.0;
  return {phonemes, durations, std::move(samples)};
}

std::vector<std::string> make_sentences(std::uint64_t seed, int count) {
  static const char* pool[] = {"ba",   "pa",  "ma",   "fa",  "da",  "ta",   "na",   "la",   "ga",   "ka",  "ha",
                               "ji",   "qi",  "xi",   "zhi", "chi", "shi",  "ri",   "zi",   "ci",   "si",  "bo",
                               "po",   "mo",  "de",   "te",  "ne",  "le",   "ge",   "ke",   "he",   "bu",  "pu",
                               "mu",   "fu",  "du",   "tu",  "lu",  "gu",   "ku",   "hu",   "ju",   "qu",  "xu",
                               "yi",   "wu",  "yu",   "ai",  "ao",  "ou",   "an",   "en",   "er",   "bai", "dao",
                               "hao",  "kan", "lou",  "mei", "nian", "qiang", "xue", "zhong", "shuo", "yang", "wen",
                               "tian", "guo", "jia",  "xiao", "ren", "sheng", "chuan", "dong", "feng", "liu", "zai"};
  constexpr int pool_size = sizeof(pool) / sizeof(pool[0]);
  Rng rng(derive_seed(seed, {0x5e47}));
  std::vector<std::string> out;
  for (int s = 0; s < count; ++s) {
    const int syllables = rng.uniform_int(2, 3);
    std::string sentence;
    for (int k = 0; k < syllables; ++k) {
      if (k) sentence += ' ';
      sentence += pool[rng.uniform_int(0, pool_size - 1)];
      sentence += std::to_string(rng.uniform_int(1, 4));
    }
    out.push_back(std::move(sentence));
  }
  return out;
}

data::DurationAlignment sample_durations(const data::PhonemeSequence& phonemes, std::uint64_t seed) {
  const auto& lex = data::PinyinLexicon::standard();
  Rng rng(seed);
  data::DurationAlignment d;
  for (int id : phonemes.tokens) d.frames_per_phoneme.push_back(lex.is_initial(id) ? rng.uniform_int(3, 5) : rng.uniform_int(6, 10));
  return d;
}

RenderedUtterance render_sentence(std::uint64_t seed, int speaker_index, int sentence_index, const std::string& sentence) {
  const data::PhonemeSequence phonemes = data::tokenize_pinyin(sentence);
  const auto spk = static_cast<std::uint64_t>(speaker_index);
  const auto sent = static_cast<std::uint64_t>(sentence_index);
  const data::DurationAlignment durations = sample_durations(phonemes, derive_seed(seed, {0xd0, spk, sent}));
  return render(speaker_template(seed, speaker_index), phonemes, durations, derive_seed(seed, {0xa0, spk, sent}));
}

SyntheticCorpus make_synthetic_corpus(int num_speakers, int utts_per_speaker, std::uint64_t seed) {
  if (num_speakers < 2) throw ParameterError("synthetic corpus needs at least 2 speakers");
  if (utts_per_speaker < 1) throw ParameterError("synthetic corpus needs at least 1 utterance per speaker");
  SyntheticCorpus c;
  c.seed = seed;
  c.sentences = make_sentences(seed, utts_per_speaker);
  const int n_test = std::max(1, utts_per_speaker / 10);
  const int n_val = utts_per_speaker >= 3 ? std::max(1, utts_per_speaker / 10) : 0;
  const int n_train = utts_per_speaker - n_test - n_val;
  for (int k = 0; k < num_speakers; ++k) {
    char name[16];
    std::snprintf(name, sizeof(name), "spk%02d", k);
    c.manifest.speakers.emplace_back(name);
    for (int j = 0; j < utts_per_speaker; ++j) {
      RenderedUtterance u = render_sentence(seed, k, j, c.sentences[j]);
      char id[32];
      std::snprintf(id, sizeof(id), "%s_utt%03d", name, j);
      data::UtteranceRecord r;
      r.utterance_id = id;
      r.speaker_id = k;
      r.speaker = name;
      r.audio_path = std::filesystem::path("wav") / (r.utterance_id + ".wav");
      r.alignment_path = std::filesystem::path("align") / (r.utterance_id + ".tsv");
      r.pinyin = c.sentences[j];
      r.split = j < n_train ? data::Split::train : (j < n_train + n_val ? data::Split::val : data::Split::test);
      r.phonemes = u.phonemes;
      r.durations = u.durations;
      c.manifest.records.push_back(std::move(r));
      c.waveforms.push_back(std::move(u.samples));
      c.sentence_of.push_back(j);
    }
  }
  data::validate_manifest(c.manifest);
  return c;
}

void write_synthetic_corpus(SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "wav");
  fs::create_directories(dir / "align");
  for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
    auto& r = corpus.manifest.records[i];
    r.audio_path = dir / "wav" / (r.utterance_id + ".wav");
    r.alignment_path = dir / "align" / (r.utterance_id + ".tsv");
    dsp::write_wav(r.audio_path, corpus.waveforms[i], dsp::kSampleRate);
    data::write_alignment_tsv(r.alignment_path, r.phonemes, r.durations);
  }
  data::write_manifest(dir / "manifest.jsonl", corpus.manifest);
}

data::Corpus analyse(const SyntheticCorpus& corpus) {
  data::Corpus c;
  c.manifest = corpus.manifest;
  for (std::size_t i = 0; i < corpus.waveforms.size(); ++i) {
    dsp::Waveform w{corpus.waveforms[i], dsp::kSampleRate};
    c.mels.push_back(dsp::mel_spectrogram(w));
    auto& r = c.manifest.records[i];
    std::vector<data::AlignmentRow> rows;
    for (std::size_t p = 0; p < r.phonemes.size(); ++p) rows.push_back({r.phonemes.symbols[p], r.durations.frames_per_phoneme[p]});
    r.durations = data::validate_alignment(rows, r.phonemes, static_cast<int>(c.mels.back().frames()));
  }
  return c;
}

}  // namespace tgavc::synth
