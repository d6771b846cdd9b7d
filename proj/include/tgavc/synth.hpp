// Synthetic multi-speaker corpus with exact phoneme alignments.
//
// Each speaker is a fixed pitch/formant template; each utterance renders a
// pinyin sentence phoneme by phoneme (harmonic vowels and sonorants, filtered
// noise for obstruents) with known frame durations. Every speaker renders the
// same sentence list, so the corpus is parallel by construction.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tgavc/data.hpp"

namespace tgavc::synth {

struct SpeakerTemplate {
  double f0 = 150.0;           // Hz
  double formant_scale = 1.0;  // multiplies every resonance and noise band
  double tilt = 1.0;           // spectral slope of the harmonic source
  double timbre_hz = 3500.0;   // extra speaker-specific resonance
  double breath = 0.02;        // aspiration noise mixed into voiced sounds
};

/// Template for speaker `index`; indices beyond a corpus' speaker count give
/// unseen speakers for zero-shot tests.
SpeakerTemplate speaker_template(std::uint64_t seed, int index);

struct RenderedUtterance {
  data::PhonemeSequence phonemes;
  data::DurationAlignment durations;
  Eigen::VectorXd samples;  // quantized to the 16-bit grid
};

/// Renders syllables with the given per-phoneme frame durations. The sample
/// count is chosen so the analysed mel has exactly sum(durations) frames.
RenderedUtterance render(const SpeakerTemplate& speaker, const data::PhonemeSequence& phonemes,
                         const data::DurationAlignment& durations, std::uint64_t noise_seed);

/// Deterministic sentence list (space separated toned pinyin).
std::vector<std::string> make_sentences(std::uint64_t seed, int count);

/// Random per-phoneme durations for one rendering of a sentence.
data::DurationAlignment sample_durations(const data::PhonemeSequence& phonemes, std::uint64_t seed);

/// Renders `sentence` for speaker `speaker_index` with durations and noise
/// derived from (seed, speaker_index, sentence_index).
RenderedUtterance render_sentence(std::uint64_t seed, int speaker_index, int sentence_index, const std::string& sentence);

struct SyntheticCorpus {
  data::CorpusManifest manifest;
  std::vector<Eigen::VectorXd> waveforms;
  std::vector<std::string> sentences;
  std::vector<int> sentence_of;  // record -> sentence index
  std::uint64_t seed = 0;
};

/// K speakers x utts_per_speaker utterances. Utterance j of every speaker is
/// sentence j. Splits are by sentence: the last 10% (at least one) of the
/// sentences are test, the 10% before them val.
SyntheticCorpus make_synthetic_corpus(int num_speakers, int utts_per_speaker, std::uint64_t seed);

/// Writes wav/, align/ and manifest.jsonl under `dir`; record paths are
/// updated to point at the written files.
void write_synthetic_corpus(SyntheticCorpus& corpus, const std::filesystem::path& dir);

/// In-memory analysis of a synthetic corpus (no files needed).
data::Corpus analyse(const SyntheticCorpus& corpus);

}  // namespace tgavc::synth
