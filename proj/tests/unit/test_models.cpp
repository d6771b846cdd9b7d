#include "doctest.h"

#include <fstream>

#include "support.hpp"
#include "tgavc/checkpoint.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/models.hpp"

using namespace tgavc;
using testing::tiny_config;

TEST_CASE("length regulator repeats rows by duration") {
  Eigen::MatrixXd seq(3, 2);
  seq << 1, 10, 2, 20, 3, 30;
  const Eigen::MatrixXd out = models::length_regulate(seq, {2, 3, 1});
  Eigen::MatrixXd expected(6, 2);
  expected << 1, 10, 1, 10, 2, 20, 2, 20, 2, 20, 3, 30;
  CHECK(out == expected);
  CHECK_THROWS_AS(models::length_regulate(seq, {2, 0, 3}), ContractError);
  CHECK(models::length_regulate(seq, {1, 1, 1}) == seq);
  CHECK_THROWS_AS(models::length_regulate(seq, {1, 1}), ContractError);
  CHECK_THROWS_AS(models::length_regulate(seq, {1, -1, 1}), ContractError);
}

TEST_CASE("text encoder output has sum(durations) frames") {
  auto c = tiny_config();
  c.d_model = 64;
  const auto net = models::TextEncoder<double>::create(c, 1);
  const Eigen::MatrixXd out = models::encode_text(net, {3, 4, 5, 6, 7}, {8, 8, 8, 8, 8});
  CHECK(out.rows() == 40);
  CHECK(out.cols() == 64);
  // doubling durations repeats every pre-regulator row twice
  const Eigen::MatrixXd once = models::encode_text(net, {3, 4, 5}, {1, 1, 1});
  const Eigen::MatrixXd twice = models::encode_text(net, {3, 4, 5}, {2, 2, 2});
  for (int i = 0; i < 3; ++i) {
    CHECK(twice.row(2 * i).isApprox(once.row(i)));
    CHECK(twice.row(2 * i + 1) == twice.row(2 * i));
  }
}

TEST_CASE("length regulator gradient sums over repeats") {
  ag::Tape<double> t;
  auto x = t.variable(Eigen::MatrixXd::Ones(2, 3));
  t.backward(ag::sum(models::length_regulate(x, {3, 1})));
  CHECK(t.grad(x.id)(0, 0) == 3.0);
  CHECK(t.grad(x.id)(1, 2) == 1.0);
}

TEST_CASE("model config json round trip and validation") {
  const auto c = tiny_config(5);
  CHECK(models::ModelConfig::from_json(c.to_json()) == c);
  CHECK_THROWS_AS(models::ModelConfig::from_json(R"({"d_modle": 3})"), ConfigError);
  auto bad = c;
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.num_speakers = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("encoders keep frame alignment for random lengths") {
  const auto c = tiny_config();
  const auto m = models::TgavcModel<double>::create(c, 4);
  Rng rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = rng.uniform_int(1, 6);
    std::vector<int> tokens(n);
    for (auto& tok : tokens) tok = rng.uniform_int(1, c.vocab_size - 1);
    const auto durations = testing::random_durations(rng, n, 1, 4);
    int frames = 0;
    for (int d : durations) frames += d;
    const Eigen::MatrixXd mel = testing::random_matrix(rng, frames, c.n_mels);
    const Eigen::MatrixXd text = models::encode_text(m.text, tokens, durations);
    const Eigen::MatrixXd content = models::encode_content(m.content, mel);
    CHECK(text.rows() == frames);
    CHECK(content.rows() == frames);
    CHECK(text.cols() == c.d_model);
    CHECK(content.cols() == c.d_model);
    const Eigen::RowVectorXd style = models::encode_style(m.style, mel);
    CHECK(style.size() == c.d_style);
    CHECK(style.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(models::decode(m.decoder, content, style).rows() == frames);
    const Eigen::RowVectorXd p = models::classify(m.classifier, content);
    CHECK(p.size() == c.num_speakers);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("bottleneck codes follow the downsampling factor") {
  auto c = tiny_config();
  c.autovc_dim = 16;
  c.autovc_factor = 16;
  const auto m = models::AutoVcModel<double>::create(c, 2);
  Rng rng(1);
  const Eigen::MatrixXd mel = testing::random_matrix(rng, 96, c.n_mels);
  const Eigen::RowVectorXd style = Eigen::RowVectorXd::Ones(c.d_style).normalized();
  const auto [pred, codes] = models::autovc_forward(m, mel, style);
  CHECK(codes.rows() == 6);
  CHECK(codes.cols() == 32);
  CHECK(pred.rows() == 96);
  CHECK(pred.cols() == c.n_mels);
  const auto [short_pred, short_codes] = models::autovc_forward(m, Eigen::MatrixXd(mel.topRows(20)), style);
  CHECK(short_codes.rows() == 2);
  CHECK(short_pred.rows() == 20);
}

TEST_CASE("upsampling replicates codes") {
  ag::Tape<double> t;
  Eigen::MatrixXd codes(2, 1);
  codes << 1, 2;
  const Eigen::MatrixXd up = models::upsample_codes(t.constant(codes), 3, 5).value();
  Eigen::MatrixXd expected(5, 1);
  expected << 1, 1, 1, 2, 2;
  CHECK(up == expected);
}

TEST_CASE("creation is seeded and casting preserves values") {
  const auto c = tiny_config();
  const auto a = models::TgavcModel<float>::create(c, 3), b = models::TgavcModel<float>::create(c, 3);
  CHECK(a.decoder.params == b.decoder.params);
  CHECK_FALSE(a.decoder.params == models::TgavcModel<float>::create(c, 4).decoder.params);
  const auto back = a.cast<double>().cast<float>();
  CHECK(back.content.params == a.content.params);
}

TEST_CASE("mel normalization is invertible") {
  auto c = tiny_config();
  c.mel_mean = -4;
  c.mel_std = 2.5;
  Rng rng(2);
  const Eigen::MatrixXf mel = testing::random_matrix(rng, 5, 80).cast<float>();
  CHECK(models::denormalize_mel(c, models::normalize_mel(c, mel)).isApprox(mel, 1e-6f));
}

TEST_CASE("checkpoint archives round trip and reject corruption") {
  const auto c = tiny_config();
  const auto m = models::TgavcModel<float>::create(c, 5);
  checkpoint::Archive a;
  a.metadata = R"({"format":"test"})";
  checkpoint::put(a, "decoder", m.decoder.params);
  auto bytes = checkpoint::serialize(a);
  const auto back = checkpoint::deserialize(bytes);
  auto restored = models::TgavcModel<float>::create(c, 6);
  checkpoint::get(back, "decoder", restored.decoder.params);
  CHECK(restored.decoder.params == m.decoder.params);
  CHECK(checkpoint::has_prefix(back, "decoder"));
  CHECK_FALSE(checkpoint::has_prefix(back, "classifier"));
  CHECK_THROWS_AS(checkpoint::get(back, "classifier", restored.classifier.params), CheckpointError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(checkpoint::deserialize(truncated), CheckpointError);
  auto tagged = bytes;
  tagged[0] = 'X';
  CHECK_THROWS_AS(checkpoint::deserialize(tagged), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(checkpoint::deserialize(trailing), CheckpointError);

  auto wider = c;
  wider.d_model = 16;
  auto other = models::TgavcModel<float>::create(wider, 1);
  CHECK_THROWS_AS(checkpoint::get(back, "decoder", other.decoder.params), CheckpointError);
  CHECK_THROWS_AS(checkpoint::read(testing::scratch_dir("ck") / "missing.ckpt"), FileError);
}
