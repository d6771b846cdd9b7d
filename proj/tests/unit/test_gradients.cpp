// Analytic tape gradients against central finite differences, in double.

#include "doctest.h"

#include "support.hpp"
#include "tgavc/models.hpp"
#include "tgavc/objectives.hpp"

using namespace tgavc;
using testing::gradient_error;
using testing::tiny_config;
namespace obj = tgavc::objectives;

namespace {

constexpr double kTolerance = 1e-3;

struct Example {
  std::vector<int> tokens;
  std::vector<int> durations;
  Eigen::MatrixXd mel;
  int speaker = 1;
};

Example make_example(const models::ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  Example e;
  for (int i = 0; i < 3; ++i) e.tokens.push_back(rng.uniform_int(1, c.vocab_size - 1));
  e.durations = testing::random_durations(rng, 3, 1, 3);
  int frames = 0;
  for (int d : e.durations) frames += d;
  e.mel = testing::random_matrix(rng, frames, c.n_mels);
  return e;
}

}  // namespace

TEST_CASE("reconstruction gradient through text encoder, style encoder and decoder") {
  const auto c = tiny_config();
  auto m = models::TgavcModel<double>::create(c, 2);
  const Example ex = make_example(c, 3);
  auto loss_on = [&](ag::Tape<double>& t) {
    auto target = t.constant(ex.mel);
    auto hc = m.text.forward(t, ex.tokens, ex.durations, true);
    auto hs = m.style.forward(t, target, true);
    return obj::recon_loss(m.decoder.forward(t, hc, hs, true), target);
  };
  ag::Tape<double> t;
  t.backward(loss_on(t));
  auto value = [&] {
    ag::Tape<double> u;
    return loss_on(u).item();
  };
  CHECK(gradient_error(m.text.params, t.gradients(m.text.params), value) < kTolerance);
  CHECK(gradient_error(m.style.params, t.gradients(m.style.params), value) < kTolerance);
  CHECK(gradient_error(m.decoder.params, t.gradients(m.decoder.params), value) < kTolerance);
}

TEST_CASE("content-match gradient into the content encoder") {
  const auto c = tiny_config();
  auto m = models::TgavcModel<double>::create(c, 4);
  const Example ex = make_example(c, 5);
  auto loss_on = [&](ag::Tape<double>& t) {
    auto desired = m.text.forward(t, ex.tokens, ex.durations, false);
    return obj::content_match_loss(desired, m.content.forward(t, t.constant(ex.mel), true));
  };
  ag::Tape<double> t;
  t.backward(loss_on(t));
  auto value = [&] {
    ag::Tape<double> u;
    return loss_on(u).item();
  };
  CHECK(gradient_error(m.content.params, t.gradients(m.content.params), value) < kTolerance);
  // the target is evaluated without gradients
  for (const auto& g : t.gradients(m.text.params)) CHECK(g.size() == 0);
}

TEST_CASE("adversarial gradient through the classifier into the content encoder") {
  const auto c = tiny_config();
  auto m = models::TgavcModel<double>::create(c, 6);
  const Example ex = make_example(c, 7);
  const double lambda = 0.1;
  // the training root: classifier descends -log p_y, the reversal flips it for the encoder
  ag::Tape<double> t;
  auto est = m.content.forward(t, t.constant(ex.mel), true);
  auto term = obj::adversarial_term(m.classifier.log_posterior(t, ag::grad_scale(est, -lambda), true), ex.speaker);
  t.backward(ag::scale(term, -1.0));
  auto log_p = [&] {
    ag::Tape<double> u;
    auto e = m.content.forward(u, u.constant(ex.mel), false);
    return obj::adversarial_term(m.classifier.log_posterior(u, e, false), ex.speaker).item();
  };
  // classifier: gradient of cross-entropy -log p_y
  CHECK(gradient_error(m.classifier.params, t.gradients(m.classifier.params), [&] { return -log_p(); }) < kTolerance);
  // encoder: -lambda times the cross-entropy gradient
  CHECK(gradient_error(m.content.params, t.gradients(m.content.params), [&] { return lambda * log_p(); }) < kTolerance);
}

TEST_CASE("lambda = 0 leaves only the content-match gradient on the encoder") {
  const auto c = tiny_config();
  auto m = models::TgavcModel<double>::create(c, 8);
  const Example ex = make_example(c, 9);
  ag::Tape<double> full;
  auto desired = m.text.forward(full, ex.tokens, ex.durations, false);
  auto est = m.content.forward(full, full.constant(ex.mel), true);
  auto match = obj::content_match_loss(desired, est);
  auto term = obj::adversarial_term(m.classifier.log_posterior(full, ag::grad_scale(est, 0.0), true), ex.speaker);
  full.backward(ag::add(match, ag::scale(term, -1.0)));

  ag::Tape<double> plain;
  auto d2 = m.text.forward(plain, ex.tokens, ex.durations, false);
  plain.backward(obj::content_match_loss(d2, m.content.forward(plain, plain.constant(ex.mel), true)));

  const auto a = full.gradients(m.content.params), b = plain.gradients(m.content.params);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  // the classifier still receives its gradient
  double norm = 0;
  for (const auto& g : full.gradients(m.classifier.params)) norm += g.size() ? g.squaredNorm() : 0.0;
  CHECK(norm > 0);
}

TEST_CASE("GE2E gradient with respect to embeddings, scale and bias") {
  Rng rng(10);
  const int n = 3, k = 3;
  ParamStore<double> p;
  const int e = p.add("e", testing::random_matrix(rng, n * k, 4));
  const int w = p.add("w", Eigen::MatrixXd::Constant(1, 1, 4.0));
  const int b = p.add("b", Eigen::MatrixXd::Constant(1, 1, -1.5));
  auto loss_on = [&](ag::Tape<double>& t) {
    return obj::ge2e_loss(t.param(p, e, true), n, k, t.param(p, w, true), t.param(p, b, true));
  };
  ag::Tape<double> t;
  t.backward(loss_on(t));
  auto value = [&] {
    ag::Tape<double> u;
    return loss_on(u).item();
  };
  CHECK(gradient_error(p, t.gradients(p), value, 40) < kTolerance);
}

TEST_CASE("GE2E gradient into the style encoder") {
  auto c = tiny_config();
  auto net = models::StyleEncoder<double>::create(c, 11);
  Rng rng(12);
  std::vector<Eigen::MatrixXd> crops;
  for (int i = 0; i < 4; ++i) crops.push_back(testing::random_matrix(rng, 5, c.n_mels));
  auto loss_on = [&](ag::Tape<double>& t) {
    std::vector<ag::Var<double>> rows;
    for (const auto& x : crops) rows.push_back(net.forward(t, t.constant(x), true));
    return obj::ge2e_loss(ag::concat_rows<double>(std::span<const ag::Var<double>>(rows)), 2, 2, t.constant(Eigen::MatrixXd::Constant(1, 1, 10.0)),
                          t.constant(Eigen::MatrixXd::Constant(1, 1, -5.0)));
  };
  ag::Tape<double> t;
  t.backward(loss_on(t));
  auto value = [&] {
    ag::Tape<double> u;
    return loss_on(u).item();
  };
  CHECK(gradient_error(net.params, t.gradients(net.params), value) < kTolerance);
}

TEST_CASE("baseline objective gradient through the bottleneck") {
  const auto c = tiny_config();
  auto m = models::AutoVcModel<double>::create(c, 13);
  Rng rng(14);
  const Eigen::MatrixXd mel = testing::random_matrix(rng, 7, c.n_mels);
  const Eigen::MatrixXd style = Eigen::RowVectorXd::Ones(c.d_style).normalized();
  auto loss_on = [&](ag::Tape<double>& t) {
    auto x = t.constant(mel);
    auto s = t.constant(style);
    auto codes = m.encoder.codes(t, x, s, true);
    auto pred = m.decoder.forward(t, models::upsample_codes(codes, c.autovc_factor, mel.rows()), s, true);
    return obj::autovc_losses(x, pred, codes, m.encoder.codes(t, pred, s, true), 1.0).total;
  };
  ag::Tape<double> t;
  t.backward(loss_on(t));
  auto value = [&] {
    ag::Tape<double> u;
    return loss_on(u).item();
  };
  CHECK(gradient_error(m.encoder.params, t.gradients(m.encoder.params), value) < kTolerance);
  CHECK(gradient_error(m.decoder.params, t.gradients(m.decoder.params), value) < kTolerance);
}

TEST_CASE("length regulator gradient on a 3x2 input") {
  Rng rng(15);
  ParamStore<double> p;
  const int x = p.add("x", testing::random_matrix(rng, 3, 2));
  const Eigen::MatrixXd weights = testing::random_matrix(rng, 6, 2);
  auto loss_on = [&](ag::Tape<double>& t) {
    return ag::sum(ag::mul(models::length_regulate(t.param(p, x, true), {2, 3, 1}), t.constant(weights)));
  };
  ag::Tape<double> t;
  t.backward(loss_on(t));
  auto value = [&] {
    ag::Tape<double> u;
    return loss_on(u).item();
  };
  CHECK(gradient_error(p, t.gradients(p), value) < 1e-8);
}
