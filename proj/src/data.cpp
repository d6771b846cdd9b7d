#include "tgavc/data.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tgavc/errors.hpp"
#include "tgavc/random.hpp"

namespace tgavc::data {
namespace fs = std::filesystem;
using nlohmann::json;

// --- lexicon -------------------------------------------------------------------------

PinyinLexicon::PinyinLexicon() {
  initials_ = {"b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j",
               "q", "x", "zh", "ch", "sh", "r", "z", "c", "s", "y", "w"};
  finals_ = {"a",  "o",   "e",   "i",   "u",    "v",   "ai",  "ei",  "ui",  "ao",   "ou",   "iu",
             "ie", "ve",  "er",  "an",  "en",   "in",  "un",  "vn",  "ang", "eng",  "ing",  "ong",
             "ia", "iao", "ian", "iang", "iong", "ua",  "uo",  "uai", "uan", "uang", "ue",   "van", "ueng"};
  symbols_.push_back("<pad>");
  for (const auto& i : initials_) symbols_.push_back(i);
  num_initials_ = static_cast<int>(initials_.size());
  for (const auto& f : finals_) {
    for (int tone = 1; tone <= 5; ++tone) symbols_.push_back(f + std::to_string(tone));
  }
}

const PinyinLexicon& PinyinLexicon::standard() {
  static const PinyinLexicon lex;
  return lex;
}

const std::string& PinyinLexicon::symbol(int id) const {
  if (id < 0 || id >= vocab_size()) throw TokenizationError("token id out of range: " + std::to_string(id));
  return symbols_[id];
}

int PinyinLexicon::id(std::string_view symbol) const {
  static const std::unordered_map<std::string, int> index = [this] {
    std::unordered_map<std::string, int> m;
    for (int i = 0; i < vocab_size(); ++i) m.emplace(symbols_[i], i);
    return m;
  }();
  auto it = index.find(std::string(symbol));
  if (it == index.end() || it->second == kPadId) throw TokenizationError("unknown phoneme symbol '" + std::string(symbol) + "'");
  return it->second;
}

std::pair<std::string, std::string> PinyinLexicon::split(std::string_view syllable) const {
  std::string s;
  for (std::size_t i = 0; i < syllable.size(); ++i) {
    // accept "ü" (UTF-8 C3 BC) and "u:" as the v spelling
    if (i + 1 < syllable.size() && static_cast<unsigned char>(syllable[i]) == 0xC3 &&
        static_cast<unsigned char>(syllable[i + 1]) == 0xBC) {
      s.push_back('v');
      ++i;
    } else if (i + 1 < syllable.size() && syllable[i] == 'u' && syllable[i + 1] == ':') {
      s.push_back('v');
      ++i;
    } else {
      s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(syllable[i]))));
    }
  }
  const std::string original(syllable);
  if (s.empty()) throw TokenizationError("empty syllable");
  int tone = 5;
  if (std::isdigit(static_cast<unsigned char>(s.back()))) {
    tone = s.back() - '0';
    s.pop_back();
    if (tone < 1 || tone > 5) throw TokenizationError("unknown syllable '" + original + "' (tone must be 1-5)");
  }
  std::string initial;
  for (const char* two : {"zh", "ch", "sh"}) {
    if (s.rfind(two, 0) == 0) initial = two;
  }
  if (initial.empty() && !s.empty()) {
    const std::string one(1, s[0]);
    if (std::find(initials_.begin(), initials_.end(), one) != initials_.end()) initial = one;
  }
  std::string final = s.substr(initial.size());
  if (final.empty() || std::find(finals_.begin(), finals_.end(), final) == finals_.end()) {
    throw TokenizationError("unknown syllable '" + original + "'");
  }
  return {initial, final + std::to_string(tone)};
}

PhonemeSequence tokenize_pinyin(std::string_view text) {
  const PinyinLexicon& lex = PinyinLexicon::standard();
  PhonemeSequence out;
  std::istringstream in{std::string(text)};
  std::string syl;
  while (in >> syl) {
    auto [initial, final] = lex.split(syl);
    if (!initial.empty()) {
      out.tokens.push_back(lex.id(initial));
      out.symbols.push_back(initial);
    }
    out.tokens.push_back(lex.id(final));
    out.symbols.push_back(final);
  }
  if (out.tokens.empty()) throw TokenizationError("empty pinyin input");
  return out;
}

std::string detokenize(const PhonemeSequence& seq) {
  std::string out;
  std::string pending;
  const PinyinLexicon& lex = PinyinLexicon::standard();
  for (std::size_t i = 0; i < seq.symbols.size(); ++i) {
    const int id = lex.id(seq.symbols[i]);
    if (lex.is_initial(id)) {
      pending += seq.symbols[i];
      continue;
    }
    if (!out.empty()) out += ' ';
    out += pending + seq.symbols[i];
    pending.clear();
  }
  if (!pending.empty()) throw TokenizationError("dangling initial '" + pending + "'");
  return out;
}

PhonemeSequence from_ids(const std::vector<int>& ids) {
  const PinyinLexicon& lex = PinyinLexicon::standard();
  PhonemeSequence out;
  for (int id : ids) {
    if (id == kPadId) throw TokenizationError("padding id inside a phoneme sequence");
    out.tokens.push_back(id);
    out.symbols.push_back(lex.symbol(id));
  }
  return out;
}

// --- alignments ----------------------------------------------------------------------------

int DurationAlignment::total() const {
  int t = 0;
  for (int d : frames_per_phoneme) t += d;
  return t;
}

std::vector<AlignmentRow> read_alignment_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open alignment file: " + path.string());
  std::vector<AlignmentRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected '<symbol>\\t<frames>'");
    }
    AlignmentRow row;
    row.symbol = line.substr(0, tab);
    try {
      std::size_t used = 0;
      const std::string count = line.substr(tab + 1);
      row.frames = std::stoi(count, &used);
      if (used != count.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": frame count is not an integer");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_alignment_tsv(const fs::path& path, const PhonemeSequence& phonemes, const DurationAlignment& durations) {
  if (phonemes.size() != durations.size()) throw ContractError("write_alignment_tsv: length mismatch");
  std::ofstream out(path);
  if (!out) throw FileError("cannot write alignment file: " + path.string());
  for (std::size_t i = 0; i < phonemes.size(); ++i) out << phonemes.symbols[i] << '\t' << durations.frames_per_phoneme[i] << '\n';
}

DurationAlignment validate_alignment(const std::vector<AlignmentRow>& rows, const PhonemeSequence& phonemes, int mel_frames) {
  if (rows.size() != phonemes.size()) {
    throw AlignmentError("alignment has " + std::to_string(rows.size()) + " rows but the transcript has " +
                         std::to_string(phonemes.size()) + " phonemes");
  }
  DurationAlignment out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].symbol != phonemes.symbols[i]) {
      throw AlignmentError("alignment row " + std::to_string(i) + " is '" + rows[i].symbol + "', transcript has '" +
                           phonemes.symbols[i] + "'");
    }
    if (rows[i].frames < 1) {
      throw ValidationError("non-positive duration for phoneme " + std::to_string(i) + " ('" + rows[i].symbol + "')");
    }
    out.frames_per_phoneme.push_back(rows[i].frames);
  }
  const int diff = mel_frames - out.total();
  if (std::abs(diff) > kDurationTrimTolerance) {
    throw ValidationError("duration sum " + std::to_string(out.total()) + " differs from " + std::to_string(mel_frames) +
                          " mel frames by more than " + std::to_string(kDurationTrimTolerance));
  }
  int& last = out.frames_per_phoneme.back();
  if (last + diff < 1) throw ValidationError("trimming the final phoneme would leave it empty");
  last += diff;
  return out;
}

DurationAlignment load_alignment(const fs::path& path, const PhonemeSequence& phonemes, int mel_frames) {
  try {
    return validate_alignment(read_alignment_tsv(path), phonemes, mel_frames);
  } catch (const AlignmentError& e) {
    throw AlignmentError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// --- manifest -----------------------------------------------------------------------------------

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

void validate_manifest(const CorpusManifest& m) {
  std::set<std::string> seen;
  std::vector<bool> used(m.speakers.size(), false);
  for (const auto& r : m.records) {
    if (!seen.insert(r.utterance_id).second) throw ValidationError("duplicate utterance_id '" + r.utterance_id + "'");
    if (r.speaker_id < 0 || r.speaker_id >= m.num_speakers()) {
      throw ValidationError("speaker id " + std::to_string(r.speaker_id) + " out of range in '" + r.utterance_id + "'");
    }
    used[r.speaker_id] = true;
    for (int t : r.phonemes.tokens) {
      if (t <= kPadId || t >= PinyinLexicon::standard().vocab_size()) throw ValidationError("token id out of range");
    }
  }
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (!used[i]) throw ValidationError("speaker ids are not dense: id " + std::to_string(i) + " has no records");
  }
}

namespace {

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (p.empty()) return "";
  if (base.empty()) return p.generic_string();
  // in-memory paths are relative to the working directory
  const fs::path abs = fs::absolute(p).lexically_normal();
  const fs::path rel = abs.lexically_relative(fs::absolute(base).lexically_normal());
  if (rel.empty() || *rel.begin() == "..") return abs.generic_string();
  return rel.generic_string();
}

fs::path resolve(const std::string& p, const fs::path& base) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

std::string manifest_to_jsonl(const CorpusManifest& m, const fs::path& base_dir) {
  std::string out;
  for (const auto& r : m.records) {
    json j;
    j["utterance_id"] = r.utterance_id;
    j["speaker"] = r.speaker;
    j["speaker_id"] = r.speaker_id;
    j["wav"] = relative_to(r.audio_path, base_dir);
    j["pinyin"] = r.pinyin;
    j["alignment"] = relative_to(r.alignment_path, base_dir);
    j["split"] = std::string(to_string(r.split));
    if (r.mel_path) j["mel"] = relative_to(*r.mel_path, base_dir);
    out += j.dump();
    out += '\n';
  }
  return out;
}

CorpusManifest manifest_from_jsonl(std::string_view text, const fs::path& base_dir) {
  static const std::set<std::string> known = {"utterance_id", "speaker", "speaker_id", "wav", "pinyin", "alignment", "split", "mel"};
  CorpusManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  std::unordered_map<std::string, int> speaker_ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ValidationError("manifest line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    UtteranceRecord r;
    try {
      r.utterance_id = j.at("utterance_id").get<std::string>();
      r.speaker = j.at("speaker").get<std::string>();
      r.audio_path = resolve(j.at("wav").get<std::string>(), base_dir);
      r.pinyin = j.at("pinyin").get<std::string>();
      r.alignment_path = resolve(j.at("alignment").get<std::string>(), base_dir);
      r.split = split_from_string(j.value("split", std::string("train")));
      if (j.contains("mel")) r.mel_path = resolve(j.at("mel").get<std::string>(), base_dir);
      if (j.contains("speaker_id")) {
        r.speaker_id = j.at("speaker_id").get<int>();
      } else {
        auto [it, inserted] = speaker_ids.emplace(r.speaker, static_cast<int>(speaker_ids.size()));
        r.speaker_id = it->second;
      }
    } catch (const json::exception& e) {
      throw ValidationError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    r.phonemes = tokenize_pinyin(r.pinyin);
    if (r.speaker_id >= static_cast<int>(m.speakers.size())) m.speakers.resize(r.speaker_id + 1);
    if (r.speaker_id >= 0) {
      auto& name = m.speakers[r.speaker_id];
      if (!name.empty() && name != r.speaker) {
        throw ValidationError("speaker id " + std::to_string(r.speaker_id) + " maps to both '" + name + "' and '" + r.speaker + "'");
      }
      name = r.speaker;
    }
    m.records.push_back(std::move(r));
  }
  validate_manifest(m);
  return m;
}

CorpusManifest read_manifest(const fs::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open manifest: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  CorpusManifest m = manifest_from_jsonl(ss.str(), path.parent_path());
  if (check_files) {
    for (const auto& r : m.records) {
      if (!fs::exists(r.audio_path)) throw FileError("audio file not found: " + r.audio_path.string());
    }
  }
  return m;
}

void write_manifest(const fs::path& path, const CorpusManifest& m) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write manifest: " + path.string());
  out << manifest_to_jsonl(m, path.parent_path());
}

std::vector<int> Corpus::indices(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> Corpus::indices_not(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].split != s) out.push_back(static_cast<int>(i));
  }
  return out;
}

Corpus load_corpus(const fs::path& manifest_path) {
  Corpus c;
  c.manifest = read_manifest(manifest_path, false);
  for (auto& r : c.manifest.records) {
    dsp::MelSpectrogram mel;
    if (r.mel_path && fs::exists(*r.mel_path)) {
      mel = dsp::load_mel(*r.mel_path);
    } else {
      if (!fs::exists(r.audio_path)) throw FileError("audio file not found: " + r.audio_path.string());
      mel = dsp::mel_spectrogram(dsp::load_waveform(r.audio_path));
    }
    r.durations = load_alignment(r.alignment_path, r.phonemes, static_cast<int>(mel.frames()));
    c.mels.push_back(std::move(mel));
  }
  return c;
}

void prepare_corpus(const Corpus& corpus, const fs::path& out_dir) {
  fs::create_directories(out_dir / "mels");
  CorpusManifest m = corpus.manifest;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    auto& r = m.records[i];
    const fs::path mel_path = out_dir / "mels" / (r.utterance_id + ".mel");
    dsp::save_mel(mel_path, corpus.mels[i]);
    r.mel_path = mel_path;
    const fs::path align_path = out_dir / "mels" / (r.utterance_id + ".tsv");
    write_alignment_tsv(align_path, r.phonemes, r.durations);
    r.alignment_path = align_path;
  }
  write_manifest(out_dir / "manifest.jsonl", m);
}

// --- batching ----------------------------------------------------------------------------------

void seeded_shuffle(std::vector<int>& v, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % i);
    std::swap(v[i - 1], v[j]);
  }
}

int crop_frames(double seconds) {
  return static_cast<int>(std::floor(seconds * dsp::kSampleRate / dsp::kHopSize));
}

Eigen::MatrixXf crop_mel(const Eigen::MatrixXf& mel, int frames, int offset) {
  const auto n = static_cast<int>(mel.rows());
  if (n < 1 || frames < 1) throw ParameterError("crop_mel: empty input or crop");
  Eigen::MatrixXf out(frames, mel.cols());
  for (int i = 0; i < frames; ++i) out.row(i) = mel.row((offset + i) % n);
  return out;
}

std::vector<int> Batch::token_ids(int b) const {
  std::vector<int> out(token_lengths[b]);
  for (int i = 0; i < token_lengths[b]; ++i) out[i] = tokens(b, i);
  return out;
}

std::vector<int> Batch::duration_list(int b) const {
  std::vector<int> out(token_lengths[b]);
  for (int i = 0; i < token_lengths[b]; ++i) out[i] = durations(b, i);
  return out;
}

BatchIterator::BatchIterator(const Corpus& corpus, std::vector<int> pool, BatchOptions options)
    : corpus_(&corpus), pool_(std::move(pool)), options_(options) {
  if (options_.batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (pool_.empty()) throw ParameterError("batch pool is empty");
  if (options_.crop_seconds && crop_frames(*options_.crop_seconds) < 1) throw ParameterError("crop_seconds shorter than one frame");
}

int BatchIterator::batches_per_epoch() const {
  return static_cast<int>((pool_.size() + options_.batch_size - 1) / options_.batch_size);
}

std::vector<int> BatchIterator::epoch_order(std::int64_t epoch) const {
  std::vector<int> order = pool_;
  seeded_shuffle(order, derive_seed(options_.seed, {0x5eed, static_cast<std::uint64_t>(epoch)}));
  return order;
}

Batch BatchIterator::next() { return at(position_++); }

Batch BatchIterator::at(std::int64_t index) const {
  const int per_epoch = batches_per_epoch();
  const std::int64_t epoch = index / per_epoch;
  const auto within = static_cast<std::size_t>(index % per_epoch);
  const std::vector<int> order = epoch_order(epoch);
  const std::size_t begin = within * options_.batch_size;
  const std::size_t end = std::min(order.size(), begin + options_.batch_size);

  Batch b;
  const int n = static_cast<int>(end - begin);
  const auto& records = corpus_->manifest.records;
  std::vector<Eigen::MatrixXf> raw(n);
  int max_frames = 0, max_tokens = 0;
  b.speaker_ids.resize(n);
  b.mel_lengths.resize(n);
  b.token_lengths.resize(n);
  for (int i = 0; i < n; ++i) {
    const int rec = order[begin + i];
    const auto& r = records[rec];
    b.record_indices.push_back(rec);
    b.utterance_ids.push_back(r.utterance_id);
    b.speaker_ids[i] = r.speaker_id;
    const Eigen::MatrixXf& mel = corpus_->mels[rec].values;
    if (options_.crop_seconds) {
      const int frames = crop_frames(*options_.crop_seconds);
      Rng rng(derive_seed(options_.seed, {0xc409, static_cast<std::uint64_t>(epoch), begin + i}));
      const int slack = std::max<int>(0, static_cast<int>(mel.rows()) - frames);
      raw[i] = crop_mel(mel, frames, rng.uniform_int(0, slack));
    } else {
      raw[i] = mel;
    }
    b.mel_lengths[i] = static_cast<int>(raw[i].rows());
    b.token_lengths[i] = static_cast<int>(r.phonemes.size());
    max_frames = std::max(max_frames, b.mel_lengths[i]);
    max_tokens = std::max(max_tokens, b.token_lengths[i]);
  }
  b.frame_mask = Eigen::MatrixXf::Zero(n, max_frames);
  b.tokens = Eigen::MatrixXi::Constant(n, max_tokens, kPadId);
  b.token_mask = Eigen::MatrixXf::Zero(n, max_tokens);
  b.durations = Eigen::MatrixXi::Zero(n, max_tokens);
  for (int i = 0; i < n; ++i) {
    const auto& r = records[b.record_indices[i]];
    Eigen::MatrixXf padded = Eigen::MatrixXf::Zero(max_frames, raw[i].cols());
    padded.topRows(raw[i].rows()) = raw[i];
    b.mels.push_back(std::move(padded));
    b.frame_mask.row(i).head(b.mel_lengths[i]).setOnes();
    for (int k = 0; k < b.token_lengths[i]; ++k) {
      b.tokens(i, k) = r.phonemes.tokens[k];
      b.token_mask(i, k) = 1.0f;
      if (!r.durations.frames_per_phoneme.empty()) b.durations(i, k) = r.durations.frames_per_phoneme[k];
    }
  }
  if (options_.style_references) {
    for (int i = 0; i < n; ++i) {
      const int rec = b.record_indices[i];
      std::vector<int> same;
      for (int p : pool_) {
        if (p != rec && records[p].speaker_id == records[rec].speaker_id) same.push_back(p);
      }
      int pick = rec;
      if (!same.empty()) {
        Rng rng(derive_seed(options_.seed, {0x57e1, static_cast<std::uint64_t>(epoch), begin + i}));
        pick = same[rng.next() % same.size()];
      }
      b.style_mels.push_back(corpus_->mels[pick].values);
    }
  }
  return b;
}

SpeakerBatchSampler::SpeakerBatchSampler(const Corpus& corpus, const std::vector<int>& pool, int speakers_per_batch,
                                         int utterances_per_speaker, int crop_frames, std::uint64_t seed)
    : corpus_(&corpus), n_(speakers_per_batch), m_(utterances_per_speaker), crop_(crop_frames), seed_(seed) {
  if (n_ < 2 || m_ < 2) throw ConfigError("speaker batches need >= 2 speakers and >= 2 utterances per speaker");
  if (crop_ < 1) throw ParameterError("crop must be at least one frame");
  by_speaker_.resize(corpus.num_speakers());
  for (int p : pool) by_speaker_[corpus.manifest.records[p].speaker_id].push_back(p);
  for (int s = 0; s < static_cast<int>(by_speaker_.size()); ++s) {
    if (static_cast<int>(by_speaker_[s].size()) >= 2) eligible_.push_back(s);
  }
  if (static_cast<int>(eligible_.size()) < n_) {
    throw ConfigError("need " + std::to_string(n_) + " speakers with >= 2 utterances, found " + std::to_string(eligible_.size()));
  }
}

SpeakerBatch SpeakerBatchSampler::at(std::int64_t step) const {
  SpeakerBatch out;
  out.num_speakers = n_;
  out.per_speaker = m_;
  std::vector<int> speakers = eligible_;
  seeded_shuffle(speakers, derive_seed(seed_, {0x9e2e, static_cast<std::uint64_t>(step)}));
  speakers.resize(n_);
  std::sort(speakers.begin(), speakers.end());
  for (int s : speakers) {
    std::vector<int> utts = by_speaker_[s];
    seeded_shuffle(utts, derive_seed(seed_, {0x9e2f, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(s)}));
    for (int k = 0; k < m_; ++k) {
      const int rec = utts[k % utts.size()];
      const Eigen::MatrixXf& mel = corpus_->mels[rec].values;
      Rng rng(derive_seed(seed_, {0x9e30, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(rec), static_cast<std::uint64_t>(k)}));
      const int slack = std::max<int>(0, static_cast<int>(mel.rows()) - crop_);
      out.crops.push_back(crop_mel(mel, crop_, rng.uniform_int(0, std::max(slack, static_cast<int>(mel.rows()) - 1))));
      out.speakers.push_back(s);
    }
  }
  return out;
}

}  // namespace tgavc::data
