// Corpus representation: pinyin tokenization, duration alignments, JSON-lines
// manifests, in-memory corpora and seeded batching.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgavc/dsp.hpp"

namespace tgavc::data {

inline constexpr int kPadId = 0;

struct PhonemeSequence {
  std::vector<int> tokens;
  std::vector<std::string> symbols;

  std::size_t size() const { return tokens.size(); }
};

/// Static initial/final(+tone) decomposition of Mandarin pinyin. Id 0 is the
/// padding symbol; initials follow, then every final in tones 1..5.
class PinyinLexicon {
 public:
  static const PinyinLexicon& standard();

  int vocab_size() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const;
  /// Throws TokenizationError for symbols outside the lexicon.
  int id(std::string_view symbol) const;
  bool is_initial(int id) const { return id >= 1 && id <= num_initials_; }

  /// Splits one syllable ("zhong1") into its initial ("zh", possibly empty)
  /// and toned final ("ong1"). A missing tone digit is read as tone 5.
  std::pair<std::string, std::string> split(std::string_view syllable) const;

  const std::vector<std::string>& initials() const { return initials_; }
  const std::vector<std::string>& finals() const { return finals_; }

 private:
  PinyinLexicon();
  std::vector<std::string> initials_;
  std::vector<std::string> finals_;
  std::vector<std::string> symbols_;
  int num_initials_ = 0;
};

PhonemeSequence tokenize_pinyin(std::string_view text);
/// Inverse of tokenize_pinyin on symbol sequences: re-joins initials with their finals.
std::string detokenize(const PhonemeSequence& seq);
PhonemeSequence from_ids(const std::vector<int>& ids);

// --- alignments --------------------------------------------------------------------

struct DurationAlignment {
  std::vector<int> frames_per_phoneme;

  int total() const;
  std::size_t size() const { return frames_per_phoneme.size(); }
};

struct AlignmentRow {
  std::string symbol;
  int frames = 0;
};

inline constexpr int kDurationTrimTolerance = 2;

std::vector<AlignmentRow> read_alignment_tsv(const std::filesystem::path& path);
void write_alignment_tsv(const std::filesystem::path& path, const PhonemeSequence& phonemes, const DurationAlignment& durations);

/// Cross-checks rows against the phoneme sequence and reconciles the total with
/// the mel frame count, trimming or padding the final phoneme by at most
/// kDurationTrimTolerance frames.
DurationAlignment validate_alignment(const std::vector<AlignmentRow>& rows, const PhonemeSequence& phonemes, int mel_frames);
DurationAlignment load_alignment(const std::filesystem::path& path, const PhonemeSequence& phonemes, int mel_frames);

// --- manifest ------------------------------------------------------------------------

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct UtteranceRecord {
  std::string utterance_id;
  int speaker_id = 0;
  std::string speaker;
  std::filesystem::path audio_path;
  std::string pinyin;
  std::filesystem::path alignment_path;
  Split split = Split::train;
  std::optional<std::filesystem::path> mel_path;

  PhonemeSequence phonemes;
  DurationAlignment durations;
};

struct CorpusManifest {
  std::vector<UtteranceRecord> records;
  std::vector<std::string> speakers;  // id -> name

  int num_speakers() const { return static_cast<int>(speakers.size()); }
};

/// Checks dense speaker ids, unique utterance ids and token validity.
void validate_manifest(const CorpusManifest& m);

/// One JSON object per line. Relative paths resolve against the manifest's
/// directory. With `check_files` every referenced audio file must exist.
CorpusManifest read_manifest(const std::filesystem::path& path, bool check_files = true);
void write_manifest(const std::filesystem::path& path, const CorpusManifest& m);
std::string manifest_to_jsonl(const CorpusManifest& m, const std::filesystem::path& base_dir);
CorpusManifest manifest_from_jsonl(std::string_view text, const std::filesystem::path& base_dir);

/// Manifest plus analysed mel spectrograms, durations reconciled.
struct Corpus {
  CorpusManifest manifest;
  std::vector<dsp::MelSpectrogram> mels;

  int num_speakers() const { return manifest.num_speakers(); }
  std::size_t size() const { return manifest.records.size(); }
  std::vector<int> indices(Split s) const;
  std::vector<int> indices_not(Split s) const;
};

/// Reads a manifest, analyses audio (or loads prepared mel files) and loads
/// alignments against the resulting frame counts.
Corpus load_corpus(const std::filesystem::path& manifest_path);

/// Writes `mels/<utterance_id>.mel` and a manifest referencing them.
void prepare_corpus(const Corpus& corpus, const std::filesystem::path& out_dir);

// --- batching ----------------------------------------------------------------------------

struct Batch {
  std::vector<int> record_indices;
  std::vector<std::string> utterance_ids;
  Eigen::VectorXi speaker_ids;
  Eigen::VectorXi mel_lengths;
  Eigen::VectorXi token_lengths;
  std::vector<Eigen::MatrixXf> mels;  // each max_frames x 80, zero padded
  Eigen::MatrixXf frame_mask;         // batch x max_frames
  Eigen::MatrixXi tokens;             // batch x max_tokens, padded with kPadId
  Eigen::MatrixXf token_mask;         // batch x max_tokens
  Eigen::MatrixXi durations;          // batch x max_tokens, padded with 0
  std::vector<Eigen::MatrixXf> style_mels;  // optional same-speaker references

  int size() const { return static_cast<int>(record_indices.size()); }
  Eigen::MatrixXf mel(int b) const { return mels[b].topRows(mel_lengths[b]); }
  std::vector<int> token_ids(int b) const;
  std::vector<int> duration_list(int b) const;
};

struct BatchOptions {
  int batch_size = 16;
  std::uint64_t seed = 0;
  std::optional<double> crop_seconds;
  bool style_references = false;
};

int crop_frames(double seconds);

/// Extracts exactly `frames` rows starting at `offset`; sequences shorter than
/// the crop are tiled cyclically.
Eigen::MatrixXf crop_mel(const Eigen::MatrixXf& mel, int frames, int offset);

/// Endless stream of batches over a record pool. Epoch e visits the pool in a
/// permutation derived from (seed, e); the final batch of an epoch may be
/// short. The stream position is a single counter, so skipping is O(1).
class BatchIterator {
 public:
  BatchIterator(const Corpus& corpus, std::vector<int> pool, BatchOptions options);

  Batch next();
  Batch at(std::int64_t index) const;
  void seek(std::int64_t index) { position_ = index; }
  std::int64_t position() const { return position_; }
  int batches_per_epoch() const;

 private:
  std::vector<int> epoch_order(std::int64_t epoch) const;

  const Corpus* corpus_;
  std::vector<int> pool_;
  BatchOptions options_;
  std::int64_t position_ = 0;
};

/// N speakers x M crops for GE2E-style training, speaker-major order.
struct SpeakerBatch {
  std::vector<Eigen::MatrixXf> crops;
  std::vector<int> speakers;
  int num_speakers = 0;
  int per_speaker = 0;
};

class SpeakerBatchSampler {
 public:
  SpeakerBatchSampler(const Corpus& corpus, const std::vector<int>& pool, int speakers_per_batch, int utterances_per_speaker,
                      int crop_frames, std::uint64_t seed);
  SpeakerBatch at(std::int64_t step) const;

 private:
  const Corpus* corpus_;
  std::vector<std::vector<int>> by_speaker_;
  std::vector<int> eligible_;
  int n_, m_, crop_;
  std::uint64_t seed_;
};

/// Fisher-Yates shuffle driven by the portable generator.
void seeded_shuffle(std::vector<int>& v, std::uint64_t seed);

}  // namespace tgavc::data
