#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "tgavc/dsp.hpp"
#include "tgavc/errors.hpp"

using namespace tgavc;
using testing::random_matrix;

namespace {

dsp::MelSpectrogram random_mel(Rng& rng, int frames) {
  dsp::MelSpectrogram m;
  m.values = random_matrix(rng, frames, dsp::kMelBins).cast<float>();
  return m;
}

Eigen::VectorXd tone(int n, double hz) {
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = 0.5 * std::sin(2 * M_PI * hz * i / dsp::kSampleRate);
  return x;
}

}  // namespace

TEST_CASE("frame count is 1 + samples / hop") {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = rng.uniform_int(dsp::kHopSize, 20000);
    const auto m = dsp::mel_spectrogram({tone(n, 200 + 50 * trial), dsp::kSampleRate});
    CHECK(m.frames() == 1 + n / dsp::kHopSize);
    CHECK(m.bins() == dsp::kMelBins);
  }
  CHECK(dsp::mel_spectrogram({tone(256, 440), dsp::kSampleRate}).frames() == 2);
  CHECK(dsp::mel_spectrogram({tone(511, 440), dsp::kSampleRate}).frames() == 2);
  CHECK(dsp::mel_spectrogram({tone(512, 440), dsp::kSampleRate}).frames() == 3);
}

TEST_CASE("too short or non-finite waveforms are rejected") {
  CHECK_THROWS_AS(dsp::mel_spectrogram({Eigen::VectorXd::Zero(10), dsp::kSampleRate}), EmptyInputError);
  Eigen::VectorXd x = tone(1000, 300);
  x[5] = NAN;
  CHECK_THROWS_AS(dsp::mel_spectrogram({x, dsp::kSampleRate}), ParameterError);
}

TEST_CASE("silence sits at the log floor") {
  const auto m = dsp::mel_spectrogram({Eigen::VectorXd::Zero(4096), dsp::kSampleRate});
  CHECK(m.values.maxCoeff() == doctest::Approx(std::log(dsp::kLogFloor)).epsilon(1e-6));
}

TEST_CASE("a pure tone peaks in the filter nearest its frequency") {
  const double hz = 1000;
  const auto m = dsp::mel_spectrogram({tone(8192, hz), dsp::kSampleRate});
  Eigen::Index peak;
  m.values.row(m.frames() / 2).maxCoeff(&peak);
  const Eigen::VectorXd centres = dsp::mel_center_frequencies();
  Eigen::Index nearest;
  (centres.array() - hz).abs().minCoeff(&nearest);
  CHECK(std::abs(peak - nearest) <= 1);
}

TEST_CASE("mel centres lie in the analysis band and increase") {
  const Eigen::VectorXd c = dsp::mel_center_frequencies();
  REQUIRE(c.size() == dsp::kMelBins);
  CHECK(c[0] > dsp::kMelFmin);
  CHECK(c[dsp::kMelBins - 1] < dsp::kMelFmax);
  for (int i = 1; i < c.size(); ++i) CHECK(c[i] > c[i - 1]);
}

TEST_CASE("DCT of a constant frame has only the energy term") {
  dsp::MelSpectrogram m;
  m.values = Eigen::MatrixXf::Constant(3, dsp::kMelBins, 2.5f);
  const auto c = dsp::mel_cepstrum(m);
  CHECK(c.values.cols() == dsp::kDefaultMcdOrder + 1);
  for (Eigen::Index f = 0; f < c.frames(); ++f) {
    CHECK(c.values(f, 0) == doctest::Approx(2.5 * std::sqrt(80.0)).epsilon(1e-6));
    CHECK(c.values.row(f).tail(dsp::kDefaultMcdOrder).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("mcd identity, symmetry and DTW stretch") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = dsp::mel_cepstrum(random_mel(rng, rng.uniform_int(3, 30)));
    const auto b = dsp::mel_cepstrum(random_mel(rng, rng.uniform_int(3, 30)));
    CHECK(dsp::mcd(a, a) == 0.0);
    CHECK(dsp::mcd(a, b) == doctest::Approx(dsp::mcd(b, a)).epsilon(1e-12));
    CHECK(dsp::mcd(a, b) > 0.0);

    // repeating every frame leaves a zero-cost alignment
    dsp::MelCepstrum stretched = a;
    stretched.values.resize(2 * a.frames(), a.values.cols());
    for (Eigen::Index f = 0; f < a.frames(); ++f) stretched.values.row(2 * f) = stretched.values.row(2 * f + 1) = a.values.row(f);
    CHECK(dsp::mcd(a, stretched) == doctest::Approx(0.0).epsilon(1e-5));
  }
}

TEST_CASE("mcd ignores the energy term and is in dB") {
  dsp::MelCepstrum a, b;
  a.order = b.order = 2;
  a.values = Eigen::MatrixXd::Zero(1, 3);
  b.values = Eigen::MatrixXd::Zero(1, 3);
  b.values(0, 0) = 100;
  CHECK(dsp::mcd(a, b) == 0.0);
  b.values(0, 1) = 1;
  CHECK(dsp::mcd(a, b) == doctest::Approx(10.0 / std::log(10.0) * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("mcd rejects mismatched orders and empty input") {
  Rng rng(5);
  const auto m = random_mel(rng, 4);
  CHECK_THROWS_AS(dsp::mcd(dsp::mel_cepstrum(m, 13), dsp::mel_cepstrum(m, 12)), ParameterError);
  dsp::MelCepstrum empty;
  empty.order = 13;
  empty.values.resize(0, 14);
  CHECK_THROWS_AS(dsp::mcd(empty, dsp::mel_cepstrum(m)), ParameterError);
}

TEST_CASE("wav encode/decode round trip on the 16-bit grid") {
  Rng rng(9);
  Eigen::VectorXd x(500);
  for (auto& v : x) v = std::round(rng.uniform(-0.9, 0.9) * 32767) / 32768.0;
  const auto pcm = dsp::decode_wav(dsp::encode_wav(x, 16000));
  CHECK(pcm.sample_rate == 16000);
  REQUIRE(pcm.channels.rows() == 500);
  CHECK((pcm.channels.col(0) - x).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("corrupt wav bytes raise DecodeError") {
  std::vector<std::uint8_t> bytes = dsp::encode_wav(Eigen::VectorXd::Zero(10), 22050);
  bytes[0] = 'X';
  CHECK_THROWS_AS(dsp::decode_wav(bytes), DecodeError);
  CHECK_THROWS_AS(dsp::decode_wav({}), DecodeError);
}

TEST_CASE("resampling keeps duration") {
  const Eigen::VectorXd x = tone(16000, 440);
  const Eigen::VectorXd y = dsp::resample(x, 16000, dsp::kSampleRate);
  CHECK(std::abs(y.size() - dsp::kSampleRate) <= 1);
  CHECK(dsp::resample(x, 16000, 16000).isApprox(x));
}

TEST_CASE("griffin-lim is deterministic and length-consistent") {
  const auto m = dsp::mel_spectrogram({tone(6000, 300), dsp::kSampleRate});
  const auto a = dsp::griffin_lim(m, 4, 1), b = dsp::griffin_lim(m, 4, 1);
  CHECK(a.samples == b.samples);
  CHECK(dsp::mel_spectrogram(a).frames() == m.frames());
  CHECK_THROWS_AS(dsp::griffin_lim(m, 0), ParameterError);
}

TEST_CASE("mel files round trip") {
  Rng rng(21);
  const auto m = random_mel(rng, 17);
  const auto path = testing::scratch_dir("mel") / "x.mel";
  dsp::save_mel(path, m);
  const auto back = dsp::load_mel(path);
  CHECK(back.values == m.values);
  CHECK(back.hop == m.hop);
}
