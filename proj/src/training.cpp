#include "tgavc/training.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tgavc/checkpoint.hpp"
#include "tgavc/errors.hpp"

namespace tgavc::training {

using nlohmann::json;
using objectives::LossReport;
using Tape = ag::Tape<float>;
using Var = ag::Var<float>;

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::ge2e: return "ge2e";
    case Regime::tts: return "tts";
    case Regime::tgavc: return "tgavc";
    case Regime::tgavcs: return "tgavcs";
    case Regime::autovc: return "autovc";
  }
  return "?";
}

Regime regime_from_string(std::string_view s) {
  for (Regime r : {Regime::ge2e, Regime::tts, Regime::tgavc, Regime::tgavcs, Regime::autovc})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected ge2e, tts, tgavc, tgavcs or autovc)");
}

// --- config ----------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  check(batch_size >= 1, "batch_size must be >= 1");
  check(max_steps >= 0, "max_steps must be >= 0");
  check(lr_a > 0 && lr_content > 0 && lr_classifier > 0 && lr_style > 0, "learning rates must be > 0");
  check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "adam betas must lie in [0, 1)");
  check(eps > 0, "eps must be > 0");
  check(lambda >= 0, "lambda must be >= 0");
  check(lambda_autovc >= 0, "lambda_autovc must be >= 0");
  check(ge2e_speakers >= 2 && ge2e_utterances >= 2, "ge2e batches need >= 2 speakers x >= 2 utterances");
  check(crop_seconds > 0, "crop_seconds must be > 0");
}

std::string TrainConfig::to_json() const {
  json j = {{"batch_size", batch_size},
            {"max_steps", max_steps},
            {"lr_a", lr_a},
            {"lr_content", lr_content},
            {"lr_classifier", lr_classifier},
            {"lr_style", lr_style},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"clip_norm", clip_norm},
            {"lambda", lambda},
            {"lambda_autovc", lambda_autovc},
            {"regime", std::string(to_string(regime))},
            {"freeze_style", freeze_style},
            {"single_optimizer", single_optimizer},
            {"ge2e_speakers", ge2e_speakers},
            {"ge2e_utterances", ge2e_utterances},
            {"crop_seconds", crop_seconds}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    const json defaults = json::parse(c.to_json());
    for (const auto& [key, _] : j.items())
      if (!defaults.contains(key)) throw ConfigError("train config: unknown key '" + key + "'");
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("batch_size", c.batch_size);
    get("max_steps", c.max_steps);
    get("lr_a", c.lr_a);
    get("lr_content", c.lr_content);
    get("lr_classifier", c.lr_classifier);
    get("lr_style", c.lr_style);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("clip_norm", c.clip_norm);
    get("lambda", c.lambda);
    get("lambda_autovc", c.lambda_autovc);
    if (j.contains("regime")) c.regime = regime_from_string(j.at("regime").get<std::string>());
    get("freeze_style", c.freeze_style);
    get("single_optimizer", c.single_optimizer);
    get("ge2e_speakers", c.ge2e_speakers);
    get("ge2e_utterances", c.ge2e_utterances);
    get("crop_seconds", c.crop_seconds);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- state ------------------------------------------------------------------------------

TrainState init_state(const models::ModelConfig& model, const TrainConfig& config, std::uint64_t seed) {
  model.validate();
  config.validate();
  TrainState s;
  s.regime = config.regime;
  s.config = config;
  s.seed = seed;
  s.model = models::TgavcModel<float>::create(model, derive_seed(seed, {0x30de1}));
  if (s.regime == Regime::autovc) s.baseline = models::AutoVcModel<float>::create(model, derive_seed(seed, {0xba5e}));
  if (s.regime == Regime::ge2e) {
    s.ge2e.add("w", Eigen::MatrixXf::Constant(1, 1, 10.0f));
    s.ge2e.add("b", Eigen::MatrixXf::Constant(1, 1, -5.0f));
  }
  return s;
}

namespace {

template <typename State, typename Store>
std::vector<std::pair<std::string, Store*>> networks_of(State& s) {
  auto& m = s.model;
  switch (s.regime) {
    case Regime::ge2e: return {{"style_encoder", &m.style.params}, {"ge2e", &s.ge2e}};
    case Regime::tts: return {{"text_encoder", &m.text.params}, {"style_encoder", &m.style.params}, {"decoder", &m.decoder.params}};
    case Regime::tgavc:
    case Regime::tgavcs:
      return {{"text_encoder", &m.text.params},
              {"content_encoder", &m.content.params},
              {"style_encoder", &m.style.params},
              {"decoder", &m.decoder.params},
              {"classifier", &m.classifier.params}};
    case Regime::autovc:
      return {{"autovc_encoder", &s.baseline.encoder.params},
              {"autovc_decoder", &s.baseline.decoder.params},
              {"style_encoder", &s.baseline.style.params}};
  }
  return {};
}

}  // namespace

std::vector<std::pair<std::string, ParamStore<float>*>> networks(TrainState& s) {
  return networks_of<TrainState, ParamStore<float>>(s);
}

std::vector<std::pair<std::string, const ParamStore<float>*>> networks(const TrainState& s) {
  return networks_of<const TrainState, const ParamStore<float>>(s);
}

void clamp_ge2e_scale(ParamStore<float>& ge2e) {
  const int w = ge2e.find("w");
  if (w >= 0) ge2e.value(w) = ge2e.value(w).cwiseMax(static_cast<float>(objectives::kGe2eMinScale));
}

void adopt_style(TrainState& s, const TrainState& style) {
  const ParamStore<float>& src = style.regime == Regime::autovc ? style.baseline.style.params : style.model.style.params;
  ParamStore<float>& dst = s.regime == Regime::autovc ? s.baseline.style.params : s.model.style.params;
  if (src.size() != dst.size()) throw CheckpointError("style checkpoint does not match the model layout");
  for (int i = 0; i < src.size(); ++i) {
    if (src.name(i) != dst.name(i) || src.value(i).rows() != dst.value(i).rows() || src.value(i).cols() != dst.value(i).cols())
      throw CheckpointError("style checkpoint tensor '" + src.name(i) + "' does not match the model");
  }
  dst = src;
}

// --- steps -----------------------------------------------------------------------------------

namespace {

std::string describe(const TrainState& s, const data::Batch& batch) {
  std::ostringstream os;
  os << "step " << s.step << ", batch " << s.batch_position << " (utterances:";
  for (const auto& id : batch.utterance_ids) os << ' ' << id;
  os << ')';
  return os.str();
}

// Dropout masks depend only on (seed, step, item), so resumed runs replay them.
Rng dropout_noise(const TrainState& s, int item) {
  return Rng(derive_seed(s.seed, {0xd209, static_cast<std::uint64_t>(s.step), static_cast<std::uint64_t>(item)}));
}

void require_finite(double v, const char* what, const TrainState& s, const data::Batch& batch) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite ") + what + " at " + describe(s, batch));
}

void require_finite(const GradList<float>& g, const char* what, const TrainState& s, const data::Batch& batch) {
  if (!optim::all_finite(g)) throw NonFiniteError(std::string("non-finite gradient in ") + what + " at " + describe(s, batch));
}

Eigen::MatrixXf normalized(const TrainState& s, const Eigen::MatrixXf& mel) { return models::normalize_mel(s.model.config, mel); }

/// Per-item weight so that summing item means gives the mean over all frames.
std::vector<float> frame_weights(const data::Batch& batch) {
  double total = 0;
  for (int b = 0; b < batch.size(); ++b) total += batch.mel_lengths[b];
  std::vector<float> w(batch.size());
  for (int b = 0; b < batch.size(); ++b) w[b] = static_cast<float>(batch.mel_lengths[b] / total);
  return w;
}

struct Group {
  const char* name;
  ParamStore<float>* store;
  GradList<float> grads;
  double lr;
};

/// Clips the joint norm of the groups and applies one Adam update to each.
void apply(std::vector<Group>& groups, optim::OptimizerState<float>& opt, const TrainConfig& cfg, const TrainState& s,
           const data::Batch* batch) {
  std::vector<GradList<float>*> lists;
  for (auto& g : groups) {
    if (g.grads.empty()) g.grads.resize(g.store->size());
    if (batch) require_finite(g.grads, g.name, s, *batch);
    lists.push_back(&g.grads);
  }
  optim::clip_global_norm<float>(lists, cfg.clip_norm);
  for (auto& g : groups) {
    bool any = false;
    for (const auto& m : g.grads) any = any || m.size() > 0;
    if (any) optim::adam_step(*g.store, g.grads, opt[g.name], cfg.adam(g.lr));
  }
}

void check_alignment(const data::Batch& batch, int b, const std::vector<int>& durations) {
  int total = 0;
  for (int d : durations) total += d;
  if (total != batch.mel_lengths[b])
    throw ContractError("utterance " + batch.utterance_ids[b] + ": durations sum to " + std::to_string(total) + " but the mel has " +
                        std::to_string(batch.mel_lengths[b]) + " frames");
}

}  // namespace

LossReport phase_a_step(TrainState& s, const data::Batch& batch) {
  auto& m = s.model;
  const bool train_style = !s.config.freeze_style;
  std::vector<Group> groups = {{"text_encoder", &m.text.params, {}, s.config.lr_a},
                               {"style_encoder", &m.style.params, {}, s.config.lr_a},
                               {"decoder", &m.decoder.params, {}, s.config.lr_a}};
  const std::vector<float> weights = frame_weights(batch);
  double recon = 0;
  for (int b = 0; b < batch.size(); ++b) {
    const std::vector<int> durations = batch.duration_list(b);
    check_alignment(batch, b, durations);
    Tape t;
    const Eigen::MatrixXf mel = normalized(s, batch.mel(b));
    Var target = t.constant(mel);
    Rng noise = dropout_noise(s, b);
    Var hc = m.text.forward(t, batch.token_ids(b), durations, true, &noise);
    Var hs = m.style.forward(t, target, train_style);
    Var loss = objectives::recon_loss(m.decoder.forward(t, hc, hs, true, &noise), target);
    require_finite(loss.item(), "reconstruction loss", s, batch);
    recon += weights[b] * loss.item();
    t.backward(loss, weights[b]);
    for (auto& g : groups) optim::accumulate(g.grads, t.gradients(*g.store));
  }
  apply(groups, s.opt_a, s.config, s, &batch);
  LossReport r = objectives::tgavc_report(recon, 0.0, 0.0, s.config.lambda);
  return r;
}

LossReport phase_b_step(TrainState& s, const data::Batch& batch) {
  auto& m = s.model;
  std::vector<Group> classifier = {{"classifier", &m.classifier.params, {}, s.config.lr_classifier}};
  std::vector<Group> content = {{"content_encoder", &m.content.params, {}, s.config.lr_content}};
  const std::vector<float> weights = frame_weights(batch);
  const float per_item = 1.0f / static_cast<float>(batch.size());
  const float lambda = static_cast<float>(s.config.lambda);
  double content_loss = 0, adv = 0;
  for (int b = 0; b < batch.size(); ++b) {
    const std::vector<int> durations = batch.duration_list(b);
    check_alignment(batch, b, durations);
    Tape t;
    const Eigen::MatrixXf mel = normalized(s, batch.mel(b));
    Var desired = m.text.forward(t, batch.token_ids(b), durations, false);
    Var estimated = m.content.forward(t, t.constant(mel), true);
    Var match = objectives::content_match_loss(desired, estimated);
    Var log_p = m.classifier.log_posterior(t, grad_scale(estimated, -lambda), true);
    Var term = objectives::adversarial_term(log_p, batch.speaker_ids[b]);
    require_finite(match.item(), "content loss", s, batch);
    require_finite(term.item(), "adversarial term", s, batch);
    content_loss += weights[b] * match.item();
    adv += per_item * term.item();
    // the classifier descends -log p_y; the reversal hands the encoder +lambda log p_y
    t.backward(add(scale(match, weights[b]), scale(term, -per_item)));
    optim::accumulate(classifier[0].grads, t.gradients(*classifier[0].store));
    optim::accumulate(content[0].grads, t.gradients(*content[0].store));
  }
  apply(classifier, s.opt_b, s.config, s, &batch);
  apply(content, s.opt_b, s.config, s, &batch);
  return objectives::tgavc_report(0.0, content_loss, adv, s.config.lambda);
}

namespace {

/// Debug variant: all five networks updated from one graph and one clipped step.
LossReport joint_step(TrainState& s, const data::Batch& batch) {
  auto& m = s.model;
  std::vector<Group> groups = {{"text_encoder", &m.text.params, {}, s.config.lr_a},
                               {"style_encoder", &m.style.params, {}, s.config.lr_a},
                               {"decoder", &m.decoder.params, {}, s.config.lr_a},
                               {"content_encoder", &m.content.params, {}, s.config.lr_content},
                               {"classifier", &m.classifier.params, {}, s.config.lr_classifier}};
  const std::vector<float> weights = frame_weights(batch);
  const float per_item = 1.0f / static_cast<float>(batch.size());
  const float lambda = static_cast<float>(s.config.lambda);
  double recon = 0, content_loss = 0, adv = 0;
  for (int b = 0; b < batch.size(); ++b) {
    const std::vector<int> durations = batch.duration_list(b);
    check_alignment(batch, b, durations);
    Tape t;
    const Eigen::MatrixXf mel = normalized(s, batch.mel(b));
    Var target = t.constant(mel);
    Rng noise = dropout_noise(s, b);
    Var hc = m.text.forward(t, batch.token_ids(b), durations, true, &noise);
    Var hs = m.style.forward(t, target, !s.config.freeze_style);
    Var rec = objectives::recon_loss(m.decoder.forward(t, hc, hs, true, &noise), target);
    Var estimated = m.content.forward(t, target, true);
    Var match = objectives::content_match_loss(hc, estimated);
    Var term = objectives::adversarial_term(m.classifier.log_posterior(t, grad_scale(estimated, -lambda), true), batch.speaker_ids[b]);
    require_finite(rec.item() + match.item() + term.item(), "joint loss", s, batch);
    recon += weights[b] * rec.item();
    content_loss += weights[b] * match.item();
    adv += per_item * term.item();
    t.backward(add(scale(add(rec, match), weights[b]), scale(term, -per_item)));
    for (auto& g : groups) optim::accumulate(g.grads, t.gradients(*g.store));
  }
  apply(groups, s.opt_a, s.config, s, &batch);
  LossReport r = objectives::tgavc_report(recon, content_loss, adv, s.config.lambda);
  return r;
}

}  // namespace

LossReport tgavc_train_step(TrainState& s, const data::Batch& batch) {
  LossReport r;
  if (s.config.single_optimizer) {
    r = joint_step(s, batch);
  } else {
    const LossReport a = phase_a_step(s, batch);
    r = phase_b_step(s, batch);
    r.recon = a.recon;
    r.total_l1 = a.total_l1;
  }
  ++s.step;
  return r;
}

LossReport autovc_train_step(TrainState& s, const data::Batch& batch) {
  auto& m = s.baseline;
  if (static_cast<int>(batch.style_mels.size()) != batch.size())
    throw ContractError("autovc step: batch has no same-speaker style references");
  std::vector<Group> groups = {{"autovc_encoder", &m.encoder.params, {}, s.config.lr_a},
                               {"autovc_decoder", &m.decoder.params, {}, s.config.lr_a}};
  const std::vector<float> weights = frame_weights(batch);
  double recon = 0, content = 0;
  for (int b = 0; b < batch.size(); ++b) {
    Tape t;
    const Eigen::MatrixXf mel = normalized(s, batch.mel(b));
    Var x = t.constant(mel);
    Var style = m.style.forward(t, t.constant(normalized(s, batch.style_mels[b])), false);
    Var codes = m.encoder.codes(t, x, style, true);
    Rng noise = dropout_noise(s, b);
    Var pred = m.decoder.forward(t, models::upsample_codes(codes, m.encoder.layout.factor, mel.rows()), style, true, &noise);
    Var codes_pred = m.encoder.codes(t, pred, style, true);
    const auto terms = objectives::autovc_losses(x, pred, codes, codes_pred, s.config.lambda_autovc);
    require_finite(terms.total.item(), "autovc loss", s, batch);
    recon += weights[b] * terms.recon.item();
    content += weights[b] * terms.content.item();
    t.backward(terms.total, weights[b]);
    for (auto& g : groups) optim::accumulate(g.grads, t.gradients(*g.store));
  }
  apply(groups, s.opt_a, s.config, s, &batch);
  ++s.step;
  return objectives::autovc_report(recon, content, s.config.lambda_autovc);
}

double ge2e_train_step(TrainState& s, const data::SpeakerBatch& batch) {
  auto& style = s.model.style;
  Tape t;
  std::vector<Var> rows;
  for (const auto& crop : batch.crops) rows.push_back(style.forward(t, t.constant(normalized(s, crop)), true));
  Var e = concat_rows<float>(std::span<const Var>(rows));
  Var loss = objectives::ge2e_loss(e, batch.num_speakers, batch.per_speaker, t.param(s.ge2e, 0, true), t.param(s.ge2e, 1, true));
  const double value = loss.item();
  if (!std::isfinite(value))
    throw NonFiniteError("non-finite GE2E loss at step " + std::to_string(s.step) + ", batch " + std::to_string(s.batch_position));
  t.backward(loss);
  std::vector<Group> groups = {{"style_encoder", &style.params, t.gradients(style.params), s.config.lr_style},
                               {"ge2e", &s.ge2e, t.gradients(s.ge2e), s.config.lr_style}};
  apply(groups, s.opt_a, s.config, s, nullptr);
  clamp_ge2e_scale(s.ge2e);
  ++s.step;
  return value;
}

namespace {

std::vector<int> train_pool(const data::Corpus& corpus) {
  std::vector<int> pool = corpus.indices(data::Split::train);
  if (pool.empty()) throw ConfigError("corpus has no training utterances");
  return pool;
}

data::Batch batch_at(const TrainState& s, const data::Corpus& corpus) {
  data::BatchOptions o;
  o.batch_size = s.config.batch_size;
  o.seed = derive_seed(s.seed, {0xba7c});
  o.style_references = s.regime == Regime::autovc;
  return data::BatchIterator(corpus, train_pool(corpus), o).at(s.batch_position);
}

}  // namespace

LossReport train_step(TrainState& s, const data::Corpus& corpus) {
  LossReport r;
  if (s.regime == Regime::ge2e) {
    const data::SpeakerBatchSampler sampler(corpus, train_pool(corpus), s.config.ge2e_speakers, s.config.ge2e_utterances,
                                            data::crop_frames(s.config.crop_seconds), derive_seed(s.seed, {0x6e2e}));
    r.ge2e = ge2e_train_step(s, sampler.at(s.batch_position));
    r.total_l1 = r.ge2e;
  } else {
    const data::Batch batch = batch_at(s, corpus);
    switch (s.regime) {
      case Regime::tts:
        r = phase_a_step(s, batch);
        ++s.step;
        break;
      case Regime::tgavcs:
        r = phase_b_step(s, batch);
        ++s.step;
        break;
      case Regime::tgavc: r = tgavc_train_step(s, batch); break;
      case Regime::autovc: r = autovc_train_step(s, batch); break;
      case Regime::ge2e: break;
    }
  }
  ++s.batch_position;
  return r;
}

// --- runs ---------------------------------------------------------------------------------------

std::string report_to_json(std::int64_t step, const LossReport& r) {
  json j = {{"step", step},        {"recon", r.recon},       {"content", r.content}, {"adv", r.adv},
            {"total_l1", r.total_l1}, {"total_l2", r.total_l2}, {"ge2e", r.ge2e},       {"lambda", r.lambda},
            {"lambda_autovc", r.lambda_autovc}};
  return j.dump();
}

std::vector<LossReport> run(TrainState& s, const data::Corpus& corpus, const RunOptions& options,
                            std::optional<std::int64_t> until_step) {
  const std::int64_t until = until_step.value_or(s.config.max_steps);
  std::ofstream metrics, timing;
  auto open = [](std::ofstream& f, const std::optional<std::filesystem::path>& p) {
    if (!p) return;
    if (p->has_parent_path()) std::filesystem::create_directories(p->parent_path());
    f.open(*p, std::ios::app);
    if (!f) throw FileError("cannot open log file: " + p->string());
  };
  open(metrics, options.metrics_log);
  open(timing, options.timing_log);
  std::vector<LossReport> history;
  while (s.step < until) {
    const auto start = std::chrono::steady_clock::now();
    const LossReport r = train_step(s, corpus);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (metrics) metrics << report_to_json(s.step, r) << '\n' << std::flush;
    if (timing) timing << json{{"step", s.step}, {"wall_seconds", seconds}}.dump() << '\n';
    if (options.on_step) options.on_step(s, r);
    history.push_back(r);
  }
  return history;
}

namespace {

TrainConfig with_regime(TrainConfig c, Regime r) {
  c.regime = r;
  return c;
}

}  // namespace

TrainState pretrain_style_encoder(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config,
                                  std::uint64_t seed, const RunOptions& options) {
  std::vector<int> per_speaker(corpus.num_speakers(), 0);
  for (int i : corpus.indices(data::Split::train)) ++per_speaker[corpus.manifest.records[i].speaker_id];
  int eligible = 0;
  for (int n : per_speaker) eligible += n >= 2;
  if (eligible < 2) throw ConfigError("style pretraining needs at least 2 speakers with 2 training utterances each");
  TrainState s = init_state(model, with_regime(config, Regime::ge2e), seed);
  run(s, corpus, options);
  return s;
}

TrainState train_tts(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                     const std::optional<TrainState>& style, const RunOptions& options) {
  TrainState s = init_state(model, with_regime(config, Regime::tts), seed);
  if (style) adopt_style(s, *style);
  run(s, corpus, options);
  return s;
}

TrainState train_tgavc(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config,
                       std::uint64_t seed, const std::optional<TrainState>& style, const RunOptions& options) {
  TrainState s = init_state(model, with_regime(config, Regime::tgavc), seed);
  if (style) adopt_style(s, *style);
  run(s, corpus, options);
  return s;
}

TrainState train_tgavcs(const data::Corpus& corpus, const TrainState& tts, const TrainConfig& config, std::uint64_t seed,
                        const RunOptions& options) {
  if (tts.regime != Regime::tts && tts.regime != Regime::tgavc && tts.regime != Regime::tgavcs)
    throw CheckpointError("frozen-TTS training needs a tts checkpoint, got '" + std::string(to_string(tts.regime)) + "'");
  TrainState s = init_state(tts.model.config, with_regime(config, Regime::tgavcs), seed);
  s.model.text = tts.model.text;
  s.model.style = tts.model.style;
  s.model.decoder = tts.model.decoder;
  run(s, corpus, options);
  if (!(s.model.text.params == tts.model.text.params) || !(s.model.style.params == tts.model.style.params) ||
      !(s.model.decoder.params == tts.model.decoder.params))
    throw ContractError("frozen TTS parameters changed during training");
  return s;
}

TrainState train_autovc(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config,
                        std::uint64_t seed, const TrainState& style, const RunOptions& options) {
  TrainState s = init_state(model, with_regime(config, Regime::autovc), seed);
  adopt_style(s, style);
  run(s, corpus, options);
  return s;
}

// --- checkpoints ----------------------------------------------------------------------------------

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  checkpoint::Archive a;
  json optim_steps = json::object();
  for (const auto& [name, store] : networks(s)) {
    checkpoint::put(a, name, *store);
    for (const auto& [tag, opt] : {std::pair{"a", &s.opt_a}, std::pair{"b", &s.opt_b}}) {
      auto it = opt->find(name);
      if (it == opt->end() || it->second.m.empty()) continue;
      checkpoint::put(a, std::string("optim/") + tag + "/" + name, it->second, *store);
      optim_steps[std::string(tag) + "/" + name] = it->second.steps;
    }
  }
  json meta = {{"format", "tgavc-checkpoint"},
               {"regime", std::string(to_string(s.regime))},
               {"step", s.step},
               {"seed", s.seed},
               {"batch_position", s.batch_position},
               {"model_config", json::parse(s.model.config.to_json())},
               {"train_config", json::parse(s.config.to_json())},
               {"optim_steps", optim_steps}};
  a.metadata = meta.dump();
  checkpoint::write(path, a);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const checkpoint::Archive a = checkpoint::read(path);
  json meta;
  try {
    meta = json::parse(a.metadata);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt metadata: " + e.what());
  }
  TrainState s;
  try {
    const auto model = models::ModelConfig::from_json(meta.at("model_config").dump());
    TrainConfig config = TrainConfig::from_json(meta.at("train_config").dump());
    config.regime = regime_from_string(meta.at("regime").get<std::string>());
    s = init_state(model, config, meta.at("seed").get<std::uint64_t>());
    s.step = meta.at("step").get<std::int64_t>();
    s.batch_position = meta.at("batch_position").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": incomplete metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  const json steps = meta.value("optim_steps", json::object());
  for (auto& [name, store] : networks(s)) {
    checkpoint::get(a, name, *store);
    for (const auto& [tag, opt] : {std::pair{"a", &s.opt_a}, std::pair{"b", &s.opt_b}}) {
      const std::string key = std::string(tag) + "/" + name;
      if (!steps.contains(key)) continue;
      auto& state = (*opt)[name];
      checkpoint::get(a, std::string("optim/") + key, state, *store);
      state.steps = steps.at(key).get<std::int64_t>();
    }
  }
  return s;
}

TrainState load_checkpoint(const std::filesystem::path& path, const models::ModelConfig& expected) {
  TrainState s = load_checkpoint(path);
  const auto& got = s.model.config;
  if (got.num_speakers != expected.num_speakers)
    throw CheckpointError(path.string() + ": checkpoint has " + std::to_string(got.num_speakers) + " speakers, expected " +
                          std::to_string(expected.num_speakers));
  if (!(got == expected)) throw CheckpointError(path.string() + ": model config differs from the requested one");
  return s;
}

std::pair<double, double> mel_statistics(const data::Corpus& corpus, const std::vector<int>& records) {
  double sum = 0, sq = 0, n = 0;
  for (int i : records) {
    const auto& v = corpus.mels[i].values;
    sum += v.cast<double>().sum();
    sq += v.cast<double>().squaredNorm();
    n += static_cast<double>(v.size());
  }
  if (n == 0) throw ParameterError("mel_statistics: no frames");
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(sq / n - mean * mean, 1e-12))};
}

}  // namespace tgavc::training
