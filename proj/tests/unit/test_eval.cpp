#include "doctest.h"

#include <fstream>

#include "support.hpp"
#include "tgavc/conversion.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/eval.hpp"
#include "tgavc/synth.hpp"

using namespace tgavc;
using training::Regime;

namespace {

const data::Corpus& toy() {
  static const data::Corpus c = synth::analyse(synth::make_synthetic_corpus(3, 6, 4));
  return c;
}

training::TrainState toy_state(Regime r = Regime::tgavc) {
  auto c = testing::tiny_config(3);
  const auto [mean, sd] = training::mel_statistics(toy(), toy().indices(data::Split::train));
  c.mel_mean = mean;
  c.mel_std = sd;
  training::TrainConfig t;
  t.regime = r;
  return training::init_state(c, t, 21);
}

dsp::MelSpectrogram random_mel(Rng& rng, int frames) {
  return {testing::random_matrix(rng, frames, dsp::kMelBins, 2.0).cast<float>().array() - 5.0f};
}

}  // namespace

TEST_CASE("MCD report is invariant to pair order") {
  Rng rng(1);
  std::vector<dsp::MelSpectrogram> a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back(random_mel(rng, 10 + i));
    b.push_back(random_mel(rng, 10 + i));
  }
  const auto forward = eval::evaluate_mcd(a, b);
  std::reverse(a.begin(), a.end());
  std::reverse(b.begin(), b.end());
  const auto backward = eval::evaluate_mcd(a, b);
  CHECK(forward.mean == doctest::Approx(backward.mean).epsilon(1e-12));
  CHECK(forward.std == doctest::Approx(backward.std).epsilon(1e-9));
  CHECK(forward.pairs.size() == 5);
  CHECK(eval::evaluate_mcd(a, a).mean == 0.0);
  CHECK_THROWS_AS(eval::evaluate_mcd(a, {}), ParameterError);
  CHECK_THROWS_AS(eval::evaluate_mcd({}, {}), ParameterError);
  CHECK_THROWS_AS(eval::evaluate_mcd(a, b, {"x"}), ParameterError);
}

TEST_CASE("style separation with degenerate inputs") {
  const Eigen::RowVectorXf e = Eigen::RowVectorXf::Unit(4, 0);
  const auto single = eval::style_separation({e}, {0});
  CHECK_FALSE(single.within.has_value());
  CHECK_FALSE(single.between.has_value());
  const auto same = eval::style_separation({e, e, e, e}, {0, 0, 1, 1});
  REQUIRE(same.within.has_value());
  REQUIRE(same.between.has_value());
  CHECK(*same.within == doctest::Approx(*same.between));
  const auto apart = eval::style_separation({e, e, Eigen::RowVectorXf::Unit(4, 1), Eigen::RowVectorXf::Unit(4, 1)}, {0, 0, 1, 1});
  CHECK(*apart.within == doctest::Approx(1.0));
  CHECK(*apart.between == doctest::Approx(0.0));
}

TEST_CASE("probing does not touch the checkpoint") {
  const auto s = toy_state();
  const auto before = s.model;
  const auto r = eval::disentanglement_probe(s, toy(), {5, 4, 1e-3, 2});
  CHECK(s.model.content.params == before.content.params);
  CHECK(s.model.classifier.params == before.classifier.params);
  CHECK(r.chance == doctest::Approx(1.0 / 3.0));
  for (double acc : {r.content_probe, r.raw_mel_probe, r.random_encoder_probe}) {
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  CHECK_THROWS_AS(eval::disentanglement_probe(toy_state(Regime::ge2e), toy(), {1, 4, 1e-3, 2}), ParameterError);
}

TEST_CASE("parallel pairs share text and differ in speaker") {
  const auto s = toy_state();
  const auto pairs = eval::parallel_conversions(s, toy(), {data::Split::test, 2});
  // one test sentence per speaker, 3 speakers: 6 ordered pairs
  CHECK(pairs.size() == 6);
  for (const auto& p : pairs) {
    const auto& a = toy().manifest.records[p.source_record];
    const auto& b = toy().manifest.records[p.target_record];
    CHECK(a.pinyin == b.pinyin);
    CHECK(a.speaker_id != b.speaker_id);
    CHECK(p.mcd_source > 0);
  }
  CHECK(eval::summarize(pairs, toy()).pairs.size() == 6);
}

TEST_CASE("conversion keeps the source length") {
  const auto s = toy_state();
  const auto& src = toy().mels[0];
  const auto style = conversion::compute_style_embedding(s, {toy().mels[1]});
  CHECK(style.norm() == doctest::Approx(1.0f).epsilon(1e-5));
  const auto out = conversion::convert(s, src, style);
  CHECK(out.frames() == src.frames());
  CHECK(out.bins() == src.bins());
  const auto b = toy_state(Regime::autovc);
  CHECK(conversion::convert(b, src, style).frames() == src.frames());
}

TEST_CASE("averaged embeddings are renormalized") {
  const Eigen::RowVectorXf a = Eigen::RowVectorXf::Unit(3, 0), b = Eigen::RowVectorXf::Unit(3, 1);
  const auto m = conversion::average_embeddings({a, b});
  CHECK(m.norm() == doctest::Approx(1.0f));
  CHECK(m[0] == doctest::Approx(m[1]));
  CHECK_THROWS_AS(conversion::average_embeddings({}), ParameterError);
  CHECK(conversion::center_crop(Eigen::MatrixXf::Zero(500, 2)).rows() == conversion::style_crop_frames());
  CHECK(conversion::center_crop(Eigen::MatrixXf::Zero(20, 2)).rows() == 20);
}

TEST_CASE("file conversion names the failing stage") {
  const auto dir = testing::scratch_dir("convert");
  const auto s = toy_state();
  training::save_checkpoint(s, dir / "m.ckpt");
  conversion::ConversionRequest req{dir / "missing.wav", {dir / "missing.wav"}, dir / "m.ckpt", dir / "out.wav", 2};
  try {
    conversion::convert_file(req);
    FAIL("expected FileError");
  } catch (const FileError& e) {
    CHECK(std::string(e.what()).find("reading source audio") != std::string::npos);
  }
  req.checkpoint = dir / "none.ckpt";
  try {
    conversion::convert_file(req);
    FAIL("expected FileError");
  } catch (const FileError& e) {
    CHECK(std::string(e.what()).find("loading checkpoint") != std::string::npos);
  }
}

TEST_CASE("plots: empty and malformed logs") {
  const auto dir = testing::scratch_dir("plots");
  std::ofstream(dir / "empty.jsonl");
  const auto empty = eval::emit_plots(dir / "empty.jsonl", {}, {}, dir / "a");
  CHECK(empty.empty_log);
  CHECK(empty.files.empty());
  {
    std::ofstream f(dir / "m.jsonl");
    f << training::report_to_json(1, objectives::tgavc_report(1.0, 0.5, -1.1, 0.1)) << '\n'
      << "{not json\n"
      << training::report_to_json(2, objectives::tgavc_report(0.8, 0.4, -1.0, 0.1)) << '\n';
  }
  const auto r = eval::emit_plots(dir / "m.jsonl", {}, {}, dir / "b");
  CHECK_FALSE(r.empty_log);
  CHECK(r.skipped_lines == 1);
  CHECK(std::filesystem::exists(dir / "b" / "loss_curves.png"));
}

TEST_CASE("triptych panels are one pixel per frame") {
  Rng rng(3);
  eval::Triptych t{"x", random_mel(rng, 12), random_mel(rng, 12), random_mel(rng, 17)};
  CHECK(eval::triptych_panel_widths(t) == std::vector<int>{12, 12, 17});
  const auto dir = testing::scratch_dir("trip");
  const auto r = eval::emit_plots(std::nullopt, {}, {t}, dir);
  REQUIRE(std::filesystem::exists(dir / "triptych_x.png"));
  // PNG IHDR width, big-endian at offset 16
  std::ifstream f(dir / "triptych_x.png", std::ios::binary);
  unsigned char hdr[24];
  f.read(reinterpret_cast<char*>(hdr), 24);
  const int width = (hdr[16] << 24) | (hdr[17] << 16) | (hdr[18] << 8) | hdr[19];
  CHECK(width == 12 + 12 + 17 + 2 * 4);
  CHECK(r.files.size() >= 1);
}
