#include "doctest.h"

#include <fstream>
#include <numeric>
#include <set>

#include "support.hpp"
#include "tgavc/data.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/synth.hpp"

using namespace tgavc;

TEST_CASE("pinyin splits into initial and toned final") {
  const auto seq = data::tokenize_pinyin("zhong1 guo2 ai4");
  REQUIRE(seq.symbols == std::vector<std::string>{"zh", "ong1", "g", "uo2", "ai4"});
  CHECK(data::detokenize(seq) == "zhong1 guo2 ai4");
  const auto& lex = data::PinyinLexicon::standard();
  CHECK(lex.split("a") == std::pair<std::string, std::string>{"", "a5"});
  CHECK(lex.is_initial(lex.id("zh")));
  CHECK_FALSE(lex.is_initial(lex.id("ong1")));
  CHECK(lex.symbol(data::kPadId) != lex.symbol(lex.id("a1")));
}

TEST_CASE("unknown syllables raise TokenizationError") {
  CHECK_THROWS_AS(data::tokenize_pinyin("zhong1 qqq3"), TokenizationError);
  CHECK_THROWS_AS(data::PinyinLexicon::standard().id("xyz"), TokenizationError);
}

TEST_CASE("tokenize and detokenize are inverse on generated sentences") {
  const auto sentences = synth::make_sentences(5, 40);
  for (const auto& s : sentences) {
    const auto seq = data::tokenize_pinyin(s);
    CHECK(data::detokenize(seq) == s);
    CHECK(data::from_ids(seq.tokens).symbols == seq.symbols);
  }
}

TEST_CASE("alignment reconciliation trims or pads the final phoneme") {
  const auto seq = data::tokenize_pinyin("ma1 ma2");
  std::vector<data::AlignmentRow> rows = {{"m", 3}, {"a1", 6}, {"m", 3}, {"a2", 8}};
  CHECK(data::validate_alignment(rows, seq, 20).frames_per_phoneme == std::vector<int>{3, 6, 3, 8});
  CHECK(data::validate_alignment(rows, seq, 22).frames_per_phoneme.back() == 10);
  CHECK(data::validate_alignment(rows, seq, 18).frames_per_phoneme.back() == 6);
  CHECK_THROWS_AS(data::validate_alignment(rows, seq, 23), ValidationError);
  rows[1].symbol = "a3";
  CHECK_THROWS_AS(data::validate_alignment(rows, seq, 20), AlignmentError);
  rows.pop_back();
  CHECK_THROWS_AS(data::validate_alignment(rows, seq, 20), AlignmentError);
}

TEST_CASE("a zero duration is invalid") {
  const auto seq = data::tokenize_pinyin("ma1");
  CHECK_THROWS_AS(data::validate_alignment({{"m", 0}, {"a1", 4}}, seq, 4), ValidationError);
}

TEST_CASE("alignment files round trip") {
  const auto seq = data::tokenize_pinyin("ni3 hao3");
  data::DurationAlignment d{{2, 5, 3, 7}};
  const auto path = testing::scratch_dir("align") / "a.tsv";
  data::write_alignment_tsv(path, seq, d);
  CHECK(data::load_alignment(path, seq, 17).frames_per_phoneme == d.frames_per_phoneme);
}

TEST_CASE("manifest jsonl round trip with relative paths") {
  data::CorpusManifest m;
  m.speakers = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    data::UtteranceRecord r;
    r.utterance_id = "u" + std::to_string(i);
    r.speaker_id = i % 2;
    r.speaker = m.speakers[r.speaker_id];
    r.audio_path = std::filesystem::path("base") / "wav" / (r.utterance_id + ".wav");
    r.alignment_path = std::filesystem::path("base") / "align" / (r.utterance_id + ".tsv");
    r.pinyin = "ni3 hao3";
    r.phonemes = data::tokenize_pinyin(r.pinyin);
    r.split = i == 3 ? data::Split::test : data::Split::train;
    m.records.push_back(r);
  }
  const std::string text = data::manifest_to_jsonl(m, "base");
  CHECK(text.find("\"wav/u0.wav\"") != std::string::npos);
  const auto back = data::manifest_from_jsonl(text, "base");
  REQUIRE(back.records.size() == 4);
  CHECK(back.records[2].audio_path == m.records[2].audio_path);
  CHECK(back.records[3].split == data::Split::test);
  CHECK(back.speakers == m.speakers);
}

TEST_CASE("manifest validation catches duplicates and gaps") {
  const std::string dup =
      R"({"utterance_id":"x","speaker_id":0,"speaker":"a","wav":"x.wav","pinyin":"a1","alignment":"x.tsv","split":"train"})"
      "\n"
      R"({"utterance_id":"x","speaker_id":0,"speaker":"a","wav":"y.wav","pinyin":"a1","alignment":"y.tsv","split":"train"})";
  CHECK_THROWS_AS(data::validate_manifest(data::manifest_from_jsonl(dup, "")), ValidationError);
  const std::string bad_split =
      R"({"utterance_id":"x","speaker_id":0,"speaker":"a","wav":"x.wav","pinyin":"a1","alignment":"x.tsv","split":"dev"})";
  CHECK_THROWS(data::manifest_from_jsonl(bad_split, ""));
}

TEST_CASE("crops tile short sequences cyclically") {
  Eigen::MatrixXf mel(3, 2);
  mel << 1, 1, 2, 2, 3, 3;
  const Eigen::MatrixXf c = data::crop_mel(mel, 7, 0);
  REQUIRE(c.rows() == 7);
  CHECK(c(3, 0) == 1);
  CHECK(c(6, 1) == 1);
  CHECK(data::crop_mel(mel, 2, 1)(0, 0) == 2);
  CHECK(data::crop_frames(2.0) == 172);
}

namespace {

const data::Corpus& toy() {
  static const data::Corpus c = synth::analyse(synth::make_synthetic_corpus(3, 6, 4));
  return c;
}

}  // namespace

TEST_CASE("batches are deterministic, padded and seekable") {
  const auto& corpus = toy();
  data::BatchIterator it(corpus, corpus.indices(data::Split::train), {4, 9, std::nullopt, false});
  const data::Batch a = it.next();
  it.next();
  it.next();
  const data::Batch c = it.at(2);
  data::BatchIterator again(corpus, corpus.indices(data::Split::train), {4, 9, std::nullopt, false});
  again.seek(2);
  CHECK(again.next().record_indices == c.record_indices);
  CHECK(a.record_indices == data::BatchIterator(corpus, corpus.indices(data::Split::train), {4, 9, std::nullopt, false}).next().record_indices);
  for (int b = 0; b < a.size(); ++b) {
    const int len = a.mel_lengths[b];
    CHECK(a.frame_mask.row(b).sum() == doctest::Approx(len));
    CHECK(a.mel(b).rows() == len);
    int total = 0;
    for (int d : a.duration_list(b)) total += d;
    CHECK(total == len);
    CHECK(a.token_ids(b).size() == static_cast<std::size_t>(a.token_lengths[b]));
  }
}

TEST_CASE("an epoch visits every record once") {
  const auto& corpus = toy();
  const auto pool = corpus.indices(data::Split::train);
  data::BatchIterator it(corpus, pool, {4, 1, std::nullopt, false});
  std::multiset<int> seen;
  for (int i = 0; i < it.batches_per_epoch(); ++i)
    for (int r : it.next().record_indices) seen.insert(r);
  CHECK(seen == std::multiset<int>(pool.begin(), pool.end()));
}

TEST_CASE("style references come from the same speaker") {
  const auto& corpus = toy();
  data::BatchIterator it(corpus, corpus.indices(data::Split::train), {4, 2, std::nullopt, true});
  const auto b = it.next();
  REQUIRE(b.style_mels.size() == static_cast<std::size_t>(b.size()));
}

TEST_CASE("speaker batches are speaker-major with fixed crops") {
  const auto& corpus = toy();
  data::SpeakerBatchSampler s(corpus, corpus.indices(data::Split::train), 3, 2, 20, 5);
  const auto b = s.at(0);
  CHECK(b.crops.size() == 6);
  CHECK(b.num_speakers == 3);
  CHECK(b.speakers == std::vector<int>{b.speakers[0], b.speakers[0], b.speakers[2], b.speakers[2], b.speakers[4], b.speakers[4]});
  for (const auto& c : b.crops) CHECK(c.rows() == 20);
  CHECK(s.at(0).crops[1] == b.crops[1]);
}

TEST_CASE("seeded shuffle is a deterministic permutation") {
  std::vector<int> a(50), b;
  std::iota(a.begin(), a.end(), 0);
  b = a;
  data::seeded_shuffle(a, 3);
  data::seeded_shuffle(b, 3);
  CHECK(a == b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}
