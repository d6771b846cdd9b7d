// Training regimes: style-encoder pretraining, joint two-phase training, the
// frozen-TTS variant and the bottleneck baseline, with checkpointing and a
// JSON-lines metrics log.
//
// Optimizer groups
//   a: text_encoder, style_encoder (unless frozen), decoder   -- reconstruction
//      autovc_encoder, autovc_decoder                         -- baseline
//      style_encoder, ge2e                                    -- pretraining
//   b: content_encoder, classifier                            -- content + adversary

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tgavc/data.hpp"
#include "tgavc/models.hpp"
#include "tgavc/objectives.hpp"
#include "tgavc/optim.hpp"

namespace tgavc::training {

enum class Regime { ge2e, tts, tgavc, tgavcs, autovc };

std::string_view to_string(Regime r);
Regime regime_from_string(std::string_view s);

struct TrainConfig {
  int batch_size = 16;
  int max_steps = 2000;
  double lr_a = 1e-4;
  double lr_content = 1e-3;
  double lr_classifier = 1e-4;
  double lr_style = 1e-4;  // style pretraining
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 1.0;
  double lambda = objectives::kDefaultLambda;
  double lambda_autovc = 1.0;
  Regime regime = Regime::tgavc;
  bool freeze_style = false;
  bool single_optimizer = false;  // debug: one joint update instead of two phases
  int ge2e_speakers = 4;
  int ge2e_utterances = 5;
  double crop_seconds = 2.0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  optim::AdamConfig adam(double lr) const { return {lr, beta1, beta2, eps, clip_norm}; }
};

struct TrainState {
  Regime regime = Regime::tgavc;
  TrainConfig config;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::int64_t batch_position = 0;

  models::TgavcModel<float> model;
  models::AutoVcModel<float> baseline;  // populated for the autovc regime
  ParamStore<float> ge2e;               // "w" and "b", style pretraining only
  optim::OptimizerState<float> opt_a;
  optim::OptimizerState<float> opt_b;
};

/// Fresh parameters for `config.regime` derived from `seed`.
TrainState init_state(const models::ModelConfig& model, const TrainConfig& config, std::uint64_t seed);

/// (checkpoint prefix, store) for every network the regime owns.
std::vector<std::pair<std::string, ParamStore<float>*>> networks(TrainState& s);
std::vector<std::pair<std::string, const ParamStore<float>*>> networks(const TrainState& s);

/// Clamps the GE2E scale at its lower bound.
void clamp_ge2e_scale(ParamStore<float>& ge2e);

// --- single steps -------------------------------------------------------------------

/// Reconstruction step over text encoder, style encoder and decoder.
objectives::LossReport phase_a_step(TrainState& s, const data::Batch& batch);
/// Content-match and adversarial step over content encoder and classifier.
/// The text encoder target is evaluated without gradients.
objectives::LossReport phase_b_step(TrainState& s, const data::Batch& batch);
/// Phase A then phase B on the same batch; advances the step counter.
objectives::LossReport tgavc_train_step(TrainState& s, const data::Batch& batch);
objectives::LossReport autovc_train_step(TrainState& s, const data::Batch& batch);
/// Returns the GE2E loss before the update.
double ge2e_train_step(TrainState& s, const data::SpeakerBatch& batch);

/// One step of the state's regime on the batch at its stream position.
objectives::LossReport train_step(TrainState& s, const data::Corpus& corpus);

// --- runs ------------------------------------------------------------------------------

struct RunOptions {
  std::optional<std::filesystem::path> metrics_log;  // JSON-lines, appended
  std::optional<std::filesystem::path> timing_log;   // wall time per step
  std::function<void(const TrainState&, const objectives::LossReport&)> on_step;
};

/// Runs until `s.step == until_step` (default: config.max_steps).
std::vector<objectives::LossReport> run(TrainState& s, const data::Corpus& corpus, const RunOptions& options = {},
                                        std::optional<std::int64_t> until_step = std::nullopt);

TrainState pretrain_style_encoder(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config,
                                  std::uint64_t seed, const RunOptions& options = {});
/// Reconstruction-only training of text encoder, style encoder and decoder.
TrainState train_tts(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                     const std::optional<TrainState>& style = std::nullopt, const RunOptions& options = {});
/// Content encoder and classifier against a frozen TTS checkpoint.
TrainState train_tgavcs(const data::Corpus& corpus, const TrainState& tts, const TrainConfig& config, std::uint64_t seed,
                        const RunOptions& options = {});
TrainState train_tgavc(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config, std::uint64_t seed,
                       const std::optional<TrainState>& style = std::nullopt, const RunOptions& options = {});
TrainState train_autovc(const data::Corpus& corpus, const models::ModelConfig& model, const TrainConfig& config,
                        std::uint64_t seed, const TrainState& style, const RunOptions& options = {});

/// Copies pretrained style-encoder parameters into `s`.
void adopt_style(TrainState& s, const TrainState& style);

// --- checkpoints --------------------------------------------------------------------

void save_checkpoint(const TrainState& s, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Additionally requires the stored model config to equal `expected`.
TrainState load_checkpoint(const std::filesystem::path& path, const models::ModelConfig& expected);

std::string report_to_json(std::int64_t step, const objectives::LossReport& r);

/// Mel mean and standard deviation over the given records.
std::pair<double, double> mel_statistics(const data::Corpus& corpus, const std::vector<int>& records);

}  // namespace tgavc::training
